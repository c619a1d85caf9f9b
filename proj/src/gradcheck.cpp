#include "sptm/gradcheck.hpp"

#include <cmath>

#include "sptm/objective.hpp"
#include "sptm/random.hpp"

namespace sptm {

ToyProblem make_toy_problem(std::uint64_t seed, const ToyOptions& opts) {
  Rng rng(seed);
  ToyProblem t;
  const std::size_t words = 3 + rng.below(7);  // d = words + UNK ≤ 10
  for (std::size_t i = 0; i < words; ++i) t.vocab.add("w" + std::to_string(i));
  auto phrase = [&] {
    Tokens p;
    const auto len = 1 + rng.below(2);
    for (std::size_t i = 0; i < len; ++i) p.push_back("w" + std::to_string(rng.below(words)));
    return p;
  };

  const std::size_t m = 2;
  const auto num_samples = 1 + rng.below(4);
  for (std::size_t i = 0; i < num_samples; ++i) {
    TrainingSample s;
    s.id = static_cast<std::int64_t>(i);
    const auto num_cands = 2 + rng.below(3);
    for (std::size_t c = 0; c < num_cands; ++c) {
      NBestEntry e;
      const auto pairs = 1 + rng.below(3);
      for (std::size_t k = 0; k < pairs; ++k) {
        PhrasePair pp{phrase(), phrase()};
        e.tokens.insert(e.tokens.end(), pp.target.begin(), pp.target.end());
        e.derivation.push_back(std::move(pp));
      }
      for (std::size_t k = 0; k < m; ++k) e.features.push_back(rng.uniform(-1.0, 1.0));
      e.sbleu = rng.uniform();
      s.candidates.push_back(std::move(e));
    }
    s.reference = s.candidates.front().tokens;
    t.samples.push_back(std::move(s));
  }

  ModelConfig cfg;
  cfg.k1 = 1 + rng.below(4);
  cfg.k2 = 1 + rng.below(4);
  cfg.arch = opts.arch;
  cfg.sim = opts.sim;
  cfg.word_level = opts.word_level;
  t.params = init_params(t.vocab.size(), cfg, rng.next());
  // Wider than the training init so tanh layers leave their linear regime.
  t.params.w1 *= 2.0;
  t.params.w2 *= 2.0;
  t.lambda.weights = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 1.5)};
  return t;
}

GradCheckReport finite_difference_check(const std::vector<TrainingSample>& samples, const ModelParams& params,
                                        const LambdaVector& lambda, const Vocabulary& vocab, double step) {
  const Objective objective(samples, vocab, lambda);
  const Vector analytic = flatten(objective.evaluate(params).grad);
  const Vector x0 = flatten(params);
  ModelParams probe = params;
  GradCheckReport rep;
  rep.num_params = static_cast<std::size_t>(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Vector x = x0;
    x(i) = x0(i) + step;
    unflatten(x, probe);
    const double up = objective.loss(probe);
    x(i) = x0(i) - step;
    unflatten(x, probe);
    const double down = objective.loss(probe);
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(analytic(i) - fd) / std::max(1.0, std::abs(fd));
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = static_cast<std::size_t>(i);
    }
  }
  return rep;
}

}  // namespace sptm
