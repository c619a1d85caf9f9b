#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "sptm/bleu.hpp"
#include "sptm/corpus.hpp"
#include "sptm/model.hpp"

namespace sptm {

/// h_{M+1}(F, E, A): similarity summed over the derivation, with multiplicity.
double sptm_feature(const NBestEntry& entry, const ModelParams& params, const Vocabulary& vocab);

/// Baseline features, SPTM feature and BLEU statistics of every candidate,
/// so that selections under many λ can be scored without touching θ.
class RerankTable {
 public:
  /// `sptm[i][c]` is h_{M+1} of candidate c of sample i.
  RerankTable(const std::vector<TrainingSample>& samples, std::vector<std::vector<double>> sptm);

  /// Computes h_{M+1} once per unique phrase pair (parallel over pairs).
  static RerankTable build(const std::vector<TrainingSample>& samples, const ModelParams& params,
                           const Vocabulary& vocab, unsigned threads = 1);

  std::size_t num_samples() const { return samples_.size(); }
  std::size_t num_features() const { return m_; }
  bool has_references() const { return has_refs_; }

  double total_score(std::size_t sample, std::size_t cand, const std::vector<double>& lambda) const;
  double sptm(std::size_t sample, std::size_t cand) const { return samples_[sample].sptm[cand]; }

  /// Argmax of λ^T h + λ_{M+1} h_{M+1} per sample, lowest index on ties.
  std::vector<std::size_t> select(const std::vector<double>& lambda) const;

  /// Corpus BLEU of the chosen candidates. Requires references.
  double corpus_bleu(const std::vector<std::size_t>& choice) const;

  /// Per-sample max / min sentence-BLEU selections.
  std::vector<std::size_t> oracle_choice(bool best) const;

 private:
  struct Row {
    std::vector<std::vector<double>> features;
    std::vector<double> sptm;
    std::vector<bleu::BleuStats> stats;
    std::vector<double> sbleu;
  };
  std::size_t m_ = 0;
  bool has_refs_ = false;
  std::vector<Row> samples_;
};

struct SampleSelection {
  std::size_t chosen = 0;
  double total = 0.0;
  double sptm = 0.0;
};

struct RerankResult {
  std::vector<SampleSelection> selections;
  std::vector<std::size_t> baseline_choice;  // λ_{M+1} = 0
  std::optional<double> bleu;
  std::optional<double> baseline_bleu;
  std::optional<double> oracle_best_bleu;
  std::optional<double> oracle_worst_bleu;
};

RerankResult rerank(const RerankTable& table, const std::vector<double>& lambda);
RerankResult rerank(const std::vector<TrainingSample>& samples, const ModelParams& params, const LambdaVector& lambda,
                    const Vocabulary& vocab, unsigned threads = 1);

}  // namespace sptm
