#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sptm/corpus.hpp"
#include "sptm/model.hpp"

namespace sptm {

/// Small random problem for derivative checks: d ≤ 10, k1, k2 ≤ 4,
/// ≤ 4 samples with ≤ 4 candidates each.
struct ToyProblem {
  std::vector<TrainingSample> samples;
  Vocabulary vocab;
  ModelParams params;
  LambdaVector lambda;
};

struct ToyOptions {
  Arch arch = Arch::nonlinear;
  SimMode sim = SimMode::dot;
  bool word_level = false;
};

ToyProblem make_toy_problem(std::uint64_t seed, const ToyOptions& opts = {});

struct GradCheckReport {
  double max_rel_error = 0.0;  // max |analytic − fd| / max(1, |fd|)
  std::size_t worst_index = 0;
  std::size_t num_params = 0;
};

/// Compares full_gradient against central differences of the loss, entry by entry.
GradCheckReport finite_difference_check(const std::vector<TrainingSample>& samples, const ModelParams& params,
                                        const LambdaVector& lambda, const Vocabulary& vocab, double step = 1e-5);

}  // namespace sptm
