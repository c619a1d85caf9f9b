#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sptm/corpus.hpp"
#include "sptm/lbfgs.hpp"
#include "sptm/model.hpp"
#include "sptm/rerank.hpp"

namespace sptm {

struct TrainConfig {
  std::size_t max_iterations = 100;
  double grad_tolerance = 1e-6;       // stop when ‖g‖∞ ≤ this
  double rel_loss_tolerance = 1e-9;   // ... or relative loss change over the window ≤ this
  std::size_t rel_loss_window = 3;
  std::size_t checkpoint_interval = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_path;
  std::uint64_t seed = 1;
  ModelConfig model;
  std::optional<std::filesystem::path> init_model;
  double weight_decay = 0.0;
  unsigned threads = 1;
  std::size_t history = 10;

  void validate() const;
};

struct TrainLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  double xbleu = 0.0;
  double grad_norm = 0.0;  // ‖g‖∞
  double seconds = 0.0;    // wall time since training started
};

/// Model plus everything needed to continue the optimizer bit-for-bit.
struct Checkpoint {
  Model model;
  LbfgsState state;
  std::vector<double> loss_history;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogEntry> log;
  std::string stop_reason;
  double initial_xbleu = 0.0;
  double final_xbleu = 0.0;
};

/// Initial θ: fresh random init, or from `config.init_model`. A linear model
/// used to initialize a nonlinear one contributes W1 only.
ModelParams initial_params(const Vocabulary& vocab, const TrainConfig& config);

/// L-BFGS on −mean xBleu with λ fixed. `resume` continues a checkpointed run.
TrainResult train(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, const TrainConfig& config,
                  const LambdaVector& lambda, const Checkpoint* resume = nullptr);

std::string format_checkpoint(const Checkpoint& cp);
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `iter<TAB>loss<TAB>xbleu<TAB>gradnorm<TAB>seconds` lines, with header.
/// With `with_timing == false` the seconds column is written as 0.
std::string format_train_log(const std::vector<TrainLogEntry>& log, bool with_timing = true);

struct TuneOptions {
  double lo = -5.0;
  double hi = 5.0;
  std::size_t grid_points = 41;
  std::size_t golden_iterations = 30;
  double min_improvement = 1e-6;
  std::size_t max_sweeps = 50;
};

struct TuneResult {
  LambdaVector lambda;
  double bleu = 0.0;
  double initial_bleu = 0.0;
  std::size_t sweeps = 0;
};

/// Coordinate ascent on corpus BLEU of the argmax selection. Each coordinate
/// is bracketed on a grid over [lo, hi] and refined by golden-section search.
TuneResult tune_lambda(const RerankTable& dev, const LambdaVector& init, const TuneOptions& opts = {});

}  // namespace sptm
