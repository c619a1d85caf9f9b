#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sptm/corpus.hpp"

namespace sptm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// nonlinear: y = tanh(W2^T tanh(W1^T x)). linear: y = W1^T x.
enum class Arch { nonlinear, linear };
enum class SimMode { dot, cosine };

std::string_view to_string(Arch a);
std::string_view to_string(SimMode m);
Arch parse_arch(std::string_view s);
SimMode parse_sim_mode(std::string_view s);

/// Sparse bag-of-words over the joint vocabulary; entries sorted by index.
struct WordVector {
  std::vector<std::pair<std::size_t, double>> entries;
  std::size_t dim = 0;

  double total() const;
  Vector dense() const;
  friend bool operator==(const WordVector&, const WordVector&) = default;
};

struct ModelParams {
  Matrix w1;  // d x k1
  Matrix w2;  // k1 x k2; empty for the linear arch
  Arch arch = Arch::nonlinear;
  SimMode sim = SimMode::dot;
  bool word_level = false;
  std::string bleu_smoothing;

  std::size_t d() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t k1() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t output_dim() const { return arch == Arch::linear ? k1() : static_cast<std::size_t>(w2.cols()); }
  std::size_t num_params() const { return static_cast<std::size_t>(w1.size() + w2.size()); }

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

struct ModelConfig {
  std::size_t k1 = 100;
  std::size_t k2 = 100;
  Arch arch = Arch::nonlinear;
  SimMode sim = SimMode::dot;
  bool word_level = false;
};

/// Default similarity per architecture: dot for nonlinear, cosine for linear.
SimMode default_sim_mode(Arch arch);

/// Uniform in [-r, r], r = sqrt(6 / (fan_in + fan_out)); W1 drawn before W2.
ModelParams init_params(std::size_t d, const ModelConfig& cfg, std::uint64_t seed);

/// Throws ShapeError unless the matrices fit the arch and are finite.
void check_params(const ModelParams& p);

/// Intermediate vectors of one forward pass. For the linear arch only z1 is
/// filled and y1 aliases it; z2/y2 stay empty.
struct ForwardTrace {
  Vector z1, y1, z2, y2;
  Arch arch = Arch::nonlinear;

  const Vector& output() const { return arch == Arch::linear ? y1 : y2; }
};

WordVector encode(const Tokens& phrase, const Vocabulary& vocab);
WordVector encode_ids(const std::vector<std::size_t>& ids, std::size_t dim);

ForwardTrace project(const WordVector& x, const ModelParams& p);

/// Dot product or cosine (0 when either norm is 0) of two output vectors.
double output_similarity(const Vector& a, const Vector& b, SimMode mode);

/// Per-word argmax structure of the symmetric mean-of-max aggregation.
/// `sims(i, j)` is the similarity between word i of f and word j of e.
struct WordMatch {
  std::vector<std::size_t> best_for_f;  // best e-word for each f-word
  std::vector<std::size_t> best_for_e;  // best f-word for each e-word
  double score = 0.0;
};
WordMatch word_match(const Matrix& sims);

/// sim_θ(x_f, x_e). Phrase-level unless params.word_level is set.
double similarity(const Tokens& f, const Tokens& e, const ModelParams& p, const Vocabulary& vocab);

/// Parameters plus the vocabulary that defines their rows.
struct Model {
  Vocabulary vocab;
  ModelParams params;
};

inline constexpr int kModelFormatVersion = 1;

std::string format_model(const Model& m);
/// Parses a model file; trailing sections after the matrices are returned
/// untouched via `rest` when non-null.
Model parse_model(std::string_view text, std::string_view* rest = nullptr);
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// Exact, locale-independent text encoding of a double (hex float).
std::string encode_double(double v);
double decode_double(std::string_view s);

}  // namespace sptm
