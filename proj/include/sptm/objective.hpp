#pragma once

#include <cstddef>
#include <vector>

#include "sptm/corpus.hpp"
#include "sptm/model.hpp"

namespace sptm {

struct CandidateScore {
  double base = 0.0;   // λ^T h over the baseline features
  double sptm = 0.0;   // h_{M+1}: summed phrase-pair similarity
  double total = 0.0;  // base + λ_{M+1} · sptm
  double prob = 0.0;   // softmax over the N-best list
};

/// ∂L/∂θ with the shapes of ModelParams (dW2 empty for the linear arch).
struct GradientAccumulator {
  Matrix dw1;
  Matrix dw2;

  static GradientAccumulator zeros_like(const ModelParams& p);
  GradientAccumulator& operator+=(const GradientAccumulator& o);
  GradientAccumulator& operator*=(double s);
  double max_abs() const;
  bool all_finite() const;
};

struct ErrorTerms {
  /// δ per phrase pair, in first-occurrence order within the sample.
  std::vector<std::pair<PhrasePair, double>> delta;
  double xbleu = 0.0;
  /// U(θ, E) = sBleu(E) − xBleu per candidate.
  std::vector<double> utility;
};

/// Softmax probabilities use max-score subtraction. Throws ShapeError when λ
/// does not have M+1 entries.
std::vector<CandidateScore> score_candidates(const TrainingSample& sample, const ModelParams& params,
                                             const LambdaVector& lambda, const Vocabulary& vocab);

/// Σ_E P(E|F) · sBleu(E). Requires cached sbleu on every candidate.
double expected_bleu(const TrainingSample& sample, const ModelParams& params, const LambdaVector& lambda,
                     const Vocabulary& vocab);

/// δ_(f,e) = Σ_E U(θ,E) P(E|F) λ_{M+1} N(f,e;A) for one sample.
ErrorTerms error_terms(const TrainingSample& sample, const ModelParams& params, const LambdaVector& lambda,
                       const Vocabulary& vocab);

/// ∂sim_θ(x_f, x_e)/∂θ.
GradientAccumulator sim_gradient(const Tokens& f, const Tokens& e, const ModelParams& params, const Vocabulary& vocab);

/// Adds scale · ∂sim/∂θ for one pair of projected inputs to `acc`. Only the
/// rows of dW1 touched by xf and xe change.
void accumulate_pair_gradient(const ModelParams& params, const WordVector& xf, const ForwardTrace& tf,
                              const WordVector& xe, const ForwardTrace& te, double scale, GradientAccumulator& acc);

struct GradientResult {
  double loss = 0.0;        // −mean xBleu (+ weight decay when requested)
  double mean_xbleu = 0.0;
  GradientAccumulator grad;
  std::size_t sim_gradient_calls = 0;
  std::size_t unique_pairs = 0;
};

struct ObjectiveOptions {
  unsigned threads = 1;
  double weight_decay = 0.0;  // adds ½·wd·‖θ‖² to the loss
};

/// Indexed corpus for repeated evaluation at different θ: unique phrases,
/// unique pairs and per-candidate pair sequences are resolved once.
class Objective {
 public:
  Objective(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, LambdaVector lambda,
            ObjectiveOptions opts = {});

  /// Loss and gradient assembled in two phases: per-sample error terms merged
  /// into one δ per unique pair, then one sim-gradient per unique pair.
  GradientResult evaluate(const ModelParams& params, bool with_gradient = true) const;
  double loss(const ModelParams& params) const { return evaluate(params, false).loss; }

  /// h_{M+1} for every candidate, indexed [sample][candidate].
  std::vector<std::vector<double>> sptm_features(const ModelParams& params) const;

  std::size_t num_samples() const { return samples_.size(); }
  std::size_t num_pairs() const { return pairs_.size(); }
  const LambdaVector& lambda() const { return lambda_; }
  const std::vector<PhrasePair>& pair_keys() const { return pair_keys_; }

 private:
  struct Candidate {
    double base = 0.0;
    double sbleu = 0.0;
    std::vector<std::size_t> pairs;  // pair ids in derivation order, with repeats
  };
  struct Sample {
    std::vector<Candidate> candidates;
  };
  struct Pair {
    std::size_t f = 0, e = 0;  // phrase ids
  };
  struct Projection;

  Projection project_all(const ModelParams& params) const;
  std::vector<double> pair_similarities(const ModelParams& params, const Projection& proj) const;
  void accumulate_pair(const ModelParams& params, const Projection& proj, std::size_t pair, double scale,
                       GradientAccumulator& acc) const;

  LambdaVector lambda_;
  ObjectiveOptions opts_;
  std::size_t dim_ = 0;
  std::vector<WordVector> phrases_;
  std::vector<std::vector<std::size_t>> phrase_words_;  // unit ids per phrase (word-level)
  std::vector<std::size_t> units_;                      // vocabulary ids with a single-word projection
  std::vector<Pair> pairs_;
  std::vector<PhrasePair> pair_keys_;
  std::vector<Sample> samples_;
};

/// loss = −mean xBleu over samples, with the two-phase gradient.
GradientResult full_gradient(const std::vector<TrainingSample>& samples, const ModelParams& params,
                             const LambdaVector& lambda, const Vocabulary& vocab, unsigned threads = 1);

/// Reference assembly: one sim_gradient call per phrase-pair occurrence.
GradientResult full_gradient_per_occurrence(const std::vector<TrainingSample>& samples, const ModelParams& params,
                                            const LambdaVector& lambda, const Vocabulary& vocab);

/// Flattening between ModelParams / GradientAccumulator and a parameter vector:
/// W1 row-major, then W2 row-major.
Vector flatten(const ModelParams& p);
Vector flatten(const GradientAccumulator& g);
void unflatten(const Vector& v, ModelParams& p);

}  // namespace sptm
