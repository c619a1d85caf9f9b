#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "oracles.hpp"
#include "sptm/error.hpp"
#include "sptm/gradcheck.hpp"
#include "sptm/objective.hpp"

using namespace sptm;

namespace {

Vocabulary vocab_for(const std::vector<TrainingSample>& s) { return build_vocabulary(s); }

ModelParams params_for(std::size_t d, Arch arch, SimMode sim, bool wl, std::uint64_t seed, std::size_t k = 3) {
  ModelConfig cfg;
  cfg.k1 = k;
  cfg.k2 = k;
  cfg.arch = arch;
  cfg.sim = sim;
  cfg.word_level = wl;
  auto p = init_params(d, cfg, seed);
  p.w1 *= 2.0;
  return p;
}

// A sample whose candidates carry only baseline scores: one feature equal to
// the requested total, and a derivation over a fixed pair.
TrainingSample scored_sample(const std::vector<double>& totals, const std::vector<double>& sbleu) {
  TrainingSample s;
  for (std::size_t c = 0; c < totals.size(); ++c)
    s.candidates.push_back(th::entry({th::pp("x", "y" + std::to_string(c))}, {totals[c]}, sbleu[c]));
  return s;
}

double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("score_candidates: softmax") {
  auto s = scored_sample({0.7, 0.7, 0.7, 0.7}, {0, 0, 0, 0});
  auto v = vocab_for({s});
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 1);
  LambdaVector off{{1.0, 0.0}};
  for (auto& c : score_candidates(s, p, off, v)) CHECK(c.prob == 0.25);

  auto r = scored_sample({0.3, -1.2, 2.0}, {0, 0, 0});
  auto base = score_candidates(r, p, off, v);
  auto shifted = r;
  for (auto& c : shifted.candidates) c.features[0] += 123.5;
  auto sh = score_candidates(shifted, p, off, v);
  double z = 0;
  for (double t : {0.3, -1.2, 2.0}) z += std::exp(t);
  const double want[3] = {std::exp(0.3) / z, std::exp(-1.2) / z, std::exp(2.0) / z};
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(base[c].prob - want[c]) <= 1e-12);
    CHECK(std::abs(sh[c].prob - base[c].prob) <= 1e-12);
  }

  // extreme scores stay finite thanks to max subtraction
  auto big = scored_sample({1000.0, 999.0}, {0, 0});
  auto b = score_candidates(big, p, off, v);
  CHECK(std::isfinite(b[0].prob));
  CHECK(std::abs(b[0].prob - 1.0 / (1.0 + std::exp(-1.0))) <= 1e-12);

  CHECK_THROWS_AS(score_candidates(s, p, LambdaVector{{1.0}}, v), ShapeError);
}

TEST_CASE("score_candidates: similarity feature sums with multiplicity") {
  TrainingSample s;
  s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("a", "b"), th::pp("c", "d")}, {0.5}, 0.3));
  auto v = vocab_for({s});
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 2);
  auto sc = score_candidates(s, p, LambdaVector{{2.0, 0.5}}, v);
  const double h = 2 * similarity({"a"}, {"b"}, p, v) + similarity({"c"}, {"d"}, p, v);
  CHECK(sc[0].sptm == doctest::Approx(h).epsilon(1e-14));
  CHECK(sc[0].total == doctest::Approx(1.0 + 0.5 * h).epsilon(1e-14));
  CHECK(sc[0].prob == 1.0);
}

TEST_CASE("expected_bleu") {
  auto v = vocab_for({scored_sample({0, 0, 0}, {0, 0, 0})});
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 3);
  SUBCASE("single candidate") {
    auto s = scored_sample({4.2}, {0.37});
    CHECK(expected_bleu(s, p, LambdaVector{{1.0, 1.0}}, v) == 0.37);
  }
  SUBCASE("constant sbleu") {
    auto s = scored_sample({0.1, 5.0, -3.0}, {0.6, 0.6, 0.6});
    CHECK(std::abs(expected_bleu(s, p, LambdaVector{{0.7, 2.0}}, v) - 0.6) <= 1e-15);
  }
  SUBCASE("three candidates against a dot-product oracle") {
    // totals chosen so the probabilities are 1/2, 1/3, 1/6
    auto s = scored_sample({std::log(3.0), std::log(2.0), 0.0}, {0.9, 0.3, 0.6});
    const double want = 0.9 / 2 + 0.3 / 3 + 0.6 / 6;
    CHECK(std::abs(expected_bleu(s, p, LambdaVector{{1.0, 0.0}}, v) - want) <= 1e-12);
  }
  SUBCASE("missing sbleu") {
    auto s = scored_sample({0.0}, {0.0});
    s.candidates[0].sbleu.reset();
    CHECK_THROWS_AS(expected_bleu(s, p, LambdaVector{{1.0, 1.0}}, v), Error);
  }
}

TEST_CASE("error_terms") {
  SUBCASE("single candidate gives zero deltas") {
    TrainingSample s;
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("c", "d")}, {0.2}, 0.4));
    auto v = vocab_for({s});
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 4);
    auto et = error_terms(s, p, LambdaVector{{1.0, 1.3}}, v);
    REQUIRE(et.delta.size() == 2);
    for (auto& [k, d] : et.delta) CHECK(d == 0.0);
    CHECK(et.utility[0] == 0.0);
  }
  SUBCASE("pair shared once by every candidate gives delta 0") {
    TrainingSample s;
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("c", "d")}, {0.2}, 0.4));
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("c", "e")}, {-0.5}, 0.9));
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("f", "e")}, {1.5}, 0.1));
    auto v = vocab_for({s});
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 5);
    auto et = error_terms(s, p, LambdaVector{{1.0, 1.7}}, v);
    CHECK(et.delta[0].first == th::pp("a", "b"));
    CHECK(std::abs(et.delta[0].second) <= 1e-12);
  }
  SUBCASE("two candidates, term-by-term oracle") {
    TrainingSample s;
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("c", "d")}, {0.2}, 0.8));
    s.candidates.push_back(th::entry({th::pp("a", "b"), th::pp("c", "e"), th::pp("c", "e")}, {-0.4}, 0.2));
    auto v = vocab_for({s});
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 6);
    const double lam = 0.8;
    LambdaVector l{{1.0, lam}};
    auto net = oracle::from_params(p);
    double sc[2];
    for (int c = 0; c < 2; ++c) {
      sc[c] = s.candidates[c].features[0];
      for (auto& q : s.candidates[c].derivation) sc[c] += lam * oracle::phrase_sim(q.source, q.target, v, net);
    }
    const double p0 = std::exp(sc[0]) / (std::exp(sc[0]) + std::exp(sc[1])), p1 = 1 - p0;
    const double xb = p0 * 0.8 + p1 * 0.2;
    const double u0 = 0.8 - xb, u1 = 0.2 - xb;
    std::map<PhrasePair, double> want{{th::pp("a", "b"), u0 * p0 * lam * 1 + u1 * p1 * lam * 1},
                                      {th::pp("c", "d"), u0 * p0 * lam * 1},
                                      {th::pp("c", "e"), u1 * p1 * lam * 2}};
    auto et = error_terms(s, p, l, v);
    CHECK(std::abs(et.xbleu - xb) <= 1e-12);
    REQUIRE(et.delta.size() == 3);
    for (auto& [k, d] : et.delta) CHECK(std::abs(d - want.at(k)) <= 1e-12);
  }
}

TEST_CASE("sim_gradient") {
  Vocabulary v(std::vector<std::string>{"<unk>", "a", "b", "c", "d", "e", "f", "g"});
  SUBCASE("f = e doubles the one-sided term") {
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 7);
    auto f = th::toks("a b");
    auto g = sim_gradient(f, f, p, v);
    auto xf = encode(f, v);
    auto tf = project(xf, p);
    // one-sided term: treat e's output as a constant
    Vector a = tf.y2;
    Vector g2 = a.cwiseProduct((1.0 - tf.y2.array().square()).matrix());
    Matrix dw2 = tf.y1 * g2.transpose();
    CHECK((g.dw2 - 2.0 * dw2).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("zero W1 gives dW2 = 0") {
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 8);
    p.w1.setZero();
    CHECK(sim_gradient(th::toks("a b"), th::toks("c"), p, v).dw2.isZero(0));
  }
  SUBCASE("central differences, every variant") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed)
      for (auto arch : {Arch::nonlinear, Arch::linear})
        for (auto sim : {SimMode::dot, SimMode::cosine})
          for (bool wl : {false, true}) {
            auto p = params_for(v.size(), arch, sim, wl, seed, 4);
            auto f = th::toks(seed % 2 ? "a b c" : "a a d"), e = th::toks("e f");
            auto an = flatten(sim_gradient(f, e, p, v));
            auto net = oracle::from_params(p);
            Vector fd(an.size());
            Eigen::Index idx = 0;
            const double h = 1e-5;
            for (auto* m : {&net.w1, &net.w2})
              for (auto& row : *m)
                for (auto& x : row) {
                  const double o = x;
                  x = o + h;
                  const double up = oracle::phrase_sim(f, e, v, net);
                  x = o - h;
                  const double dn = oracle::phrase_sim(f, e, v, net);
                  x = o;
                  fd(idx++) = (up - dn) / (2 * h);
                }
            REQUIRE(idx == an.size());
            double worst = 0;
            for (Eigen::Index i = 0; i < an.size(); ++i)
              worst = std::max(worst, std::abs(an(i) - fd(i)) / std::max(1.0, std::abs(fd(i))));
            CHECK_MESSAGE(worst <= 1e-6, "seed ", seed, " arch ", to_string(arch), " sim ", to_string(sim), " wl ", wl);
          }
  }
  SUBCASE("dW1 rows are nonzero only at tokens of f and e") {
    auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 9);
    auto g = sim_gradient(th::toks("a"), th::toks("c"), p, v);
    for (Eigen::Index r = 0; r < g.dw1.rows(); ++r)
      if (r != 1 && r != 3) CHECK(g.dw1.row(r).isZero(0));
  }
}

TEST_CASE("full_gradient: zero cases") {
  Rng rng(10);
  auto c = th::random_corpus(rng, 4, 4, 2);
  auto v = vocab_for(c);
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 10);

  auto single = c;
  for (auto& s : single) s.candidates.resize(1);
  auto r = full_gradient(single, p, LambdaVector{{0.5, -0.5, 1.0}}, v);
  CHECK(r.grad.max_abs() == 0.0);

  auto off = full_gradient(c, p, LambdaVector{{0.5, -0.5, 0.0}}, v);
  CHECK(off.grad.max_abs() == 0.0);
}

TEST_CASE("full_gradient: loss and gradient against the oracle") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const ToyOptions variants[] = {{Arch::nonlinear, SimMode::dot, false},
                                   {Arch::linear, SimMode::cosine, false},
                                   {Arch::nonlinear, SimMode::dot, true},
                                   {Arch::nonlinear, SimMode::cosine, false}};
    const auto& opt = variants[seed % 4];
    auto toy = make_toy_problem(seed, opt);
    auto res = full_gradient(toy.samples, toy.params, toy.lambda, toy.vocab);
    auto net = oracle::from_params(toy.params);
    CHECK(std::abs(res.loss - oracle::loss(toy.samples, toy.vocab, net, toy.lambda.weights)) <= 1e-12);
    CHECK(std::abs(res.loss + res.mean_xbleu) <= 1e-15);
    auto fd = oracle::fd_gradient(toy.samples, toy.vocab, net, toy.lambda.weights);
    auto an = flatten(res.grad);
    REQUIRE(static_cast<std::size_t>(an.size()) == fd.size());
    double worst = 0;
    for (std::size_t i = 0; i < fd.size(); ++i)
      worst = std::max(worst, std::abs(an(static_cast<Eigen::Index>(i)) - fd[i]) / std::max(1.0, std::abs(fd[i])));
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("full_gradient: two-phase assembly equals per-occurrence summation") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto c = th::random_corpus(rng, 6, 4, 2, 5);
    auto v = vocab_for(c);
    for (bool wl : {false, true}) {
      auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, wl, seed);
      LambdaVector l{{0.3, -0.8, 1.1}};
      auto two = full_gradient(c, p, l, v);
      auto naive = full_gradient_per_occurrence(c, p, l, v);
      CHECK(std::abs(two.loss - naive.loss) <= 1e-12);
      CHECK(max_abs_diff(flatten(two.grad), flatten(naive.grad)) <= 1e-12);
      CHECK(two.sim_gradient_calls == collect_phrase_pairs(c).size());
      CHECK(two.unique_pairs == collect_phrase_pairs(c).size());
      std::size_t occ = 0;
      for (auto& s : c)
        for (auto& cand : s.candidates) occ += cand.derivation.size();
      CHECK(naive.sim_gradient_calls == occ);
    }
  }
}

TEST_CASE("full_gradient: independent of thread count") {
  Rng rng(11);
  auto c = th::random_corpus(rng, 40, 5, 2, 12);
  auto v = vocab_for(c);
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 11, 5);
  LambdaVector l{{0.3, -0.8, 1.1}};
  auto one = full_gradient(c, p, l, v, 1);
  for (unsigned t : {2u, 3u, 8u}) {
    auto many = full_gradient(c, p, l, v, t);
    CHECK(many.loss == one.loss);
    CHECK(flatten(many.grad) == flatten(one.grad));
  }
}

TEST_CASE("full_gradient: shift invariance of xBleu and delta") {
  Rng rng(12);
  auto c = th::random_corpus(rng, 3, 4, 2);
  auto v = vocab_for(c);
  auto p = params_for(v.size(), Arch::nonlinear, SimMode::dot, false, 12);
  LambdaVector l{{1.0, 0.0, 0.9}};
  auto shifted = c;
  for (auto& s : shifted)
    for (auto& cand : s.candidates) cand.features[0] += 7.25;
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto a = error_terms(c[i], p, l, v), b = error_terms(shifted[i], p, l, v);
    CHECK(std::abs(a.xbleu - b.xbleu) <= 1e-12);
    for (std::size_t k = 0; k < a.delta.size(); ++k) CHECK(std::abs(a.delta[k].second - b.delta[k].second) <= 1e-12);
  }
}

TEST_CASE("Objective: validation") {
  Rng rng(13);
  auto c = th::random_corpus(rng, 2, 3, 2);
  auto v = vocab_for(c);
  CHECK_THROWS_AS(Objective(c, v, LambdaVector{{1.0, 1.0}}), ShapeError);
  CHECK_THROWS_AS(Objective({}, v, LambdaVector{{1.0, 1.0, 1.0}}), Error);
  auto nosb = c;
  nosb[0].candidates[0].sbleu.reset();
  CHECK_THROWS_AS(Objective(nosb, v, LambdaVector{{1.0, 1.0, 1.0}}), Error);
  Objective obj(c, v, LambdaVector{{1.0, 1.0, 1.0}});
  auto p = params_for(v.size() + 1, Arch::nonlinear, SimMode::dot, false, 1);
  CHECK_THROWS_AS(obj.evaluate(p), ShapeError);
}

TEST_CASE("flatten / unflatten round trip") {
  auto p = params_for(5, Arch::nonlinear, SimMode::dot, false, 14);
  auto q = p;
  q.w1.setZero();
  q.w2.setZero();
  unflatten(flatten(p), q);
  CHECK(q == p);
  CHECK_THROWS_AS(unflatten(Vector::Zero(3), q), ShapeError);
}

TEST_CASE("gradcheck helper agrees") {
  auto toy = make_toy_problem(21);
  CHECK(finite_difference_check(toy.samples, toy.params, toy.lambda, toy.vocab).max_rel_error <= 1e-5);
}
