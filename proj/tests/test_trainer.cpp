#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sptm/error.hpp"
#include "sptm/objective.hpp"
#include "sptm/rerank.hpp"
#include "sptm/synth.hpp"
#include "sptm/trainer.hpp"

using namespace sptm;

namespace {

SynthData small_task(std::uint64_t seed, std::size_t sentences = 40) {
  SynthSpec spec;
  spec.sentences = sentences;
  spec.seed = seed;
  return synthesize(spec);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.model.k1 = 6;
  cfg.model.k2 = 6;
  cfg.max_iterations = 15;
  cfg.seed = 3;
  return cfg;
}

LambdaVector with_sptm(LambdaVector l) {
  l.sptm_weight() = 1.0;
  return l;
}

}  // namespace

TEST_CASE("train: zero iterations returns the initial parameters") {
  auto data = small_task(1, 10);
  auto v = build_vocabulary(data.samples);
  auto cfg = small_config();
  cfg.max_iterations = 0;
  auto r = train(data.samples, v, cfg, with_sptm(data.lambda));
  CHECK(r.params == initial_params(v, cfg));
  CHECK(r.log.size() == 1);
  CHECK(r.stop_reason == "max_iterations");
}

TEST_CASE("train: single-candidate corpus stops on a zero gradient") {
  auto data = small_task(2, 10);
  for (auto& s : data.samples) s.candidates.resize(1);
  auto v = build_vocabulary(data.samples);
  auto cfg = small_config();
  auto r = train(data.samples, v, cfg, with_sptm(data.lambda));
  CHECK(r.stop_reason == "gradient_tolerance");
  CHECK(r.params == initial_params(v, cfg));
  CHECK(r.log.back().grad_norm == 0.0);
  CHECK(r.final_xbleu == r.initial_xbleu);
}

TEST_CASE("train: planted corpus improves xBleu with a non-increasing loss") {
  auto data = small_task(3);
  auto v = build_vocabulary(data.samples);
  auto r = train(data.samples, v, small_config(), with_sptm(data.lambda));
  CHECK(r.final_xbleu > r.initial_xbleu);
  for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].loss <= r.log[i - 1].loss);
  for (std::size_t i = 0; i < r.log.size(); ++i) CHECK(r.log[i].iteration == i);
}

TEST_CASE("train: identical runs and thread counts give identical parameters") {
  auto data = small_task(4, 30);
  auto v = build_vocabulary(data.samples);
  auto cfg = small_config();
  cfg.max_iterations = 6;
  auto a = train(data.samples, v, cfg, with_sptm(data.lambda));
  cfg.threads = 4;
  auto b = train(data.samples, v, cfg, with_sptm(data.lambda));
  CHECK(a.params == b.params);
  CHECK(format_train_log(a.log, false) == format_train_log(b.log, false));
}

TEST_CASE("train: checkpoint resume reproduces the trajectory") {
  auto data = small_task(5, 30);
  auto v = build_vocabulary(data.samples);
  auto dir = th::scratch("ckpt");
  auto cfg = small_config();
  cfg.max_iterations = 8;
  cfg.rel_loss_tolerance = 0;
  cfg.grad_tolerance = 1e-300;
  auto full = train(data.samples, v, cfg, with_sptm(data.lambda));
  REQUIRE(full.log.size() == 9);

  auto cp_cfg = cfg;
  cp_cfg.max_iterations = 3;
  cp_cfg.checkpoint_interval = 3;
  cp_cfg.checkpoint_path = dir / "ck";
  auto partial = train(data.samples, v, cp_cfg, with_sptm(data.lambda));
  auto cp = load_checkpoint(dir / "ck");
  CHECK(cp.state.iteration == 3);

  // reloaded iteration-3 parameters give the same xBleu as the live run
  Objective obj(data.samples, v, with_sptm(data.lambda));
  CHECK(obj.evaluate(cp.model.params, false).mean_xbleu == partial.final_xbleu);
  CHECK(obj.evaluate(cp.model.params, false).mean_xbleu == full.log[3].xbleu);

  auto resumed = train(data.samples, v, cfg, with_sptm(data.lambda), &cp);
  REQUIRE(resumed.log.size() == 6);
  for (std::size_t i = 0; i < resumed.log.size(); ++i) {
    CHECK(resumed.log[i].iteration == full.log[i + 3].iteration);
    CHECK(std::abs(resumed.log[i].loss - full.log[i + 3].loss) <= 1e-10);
  }
  CHECK(resumed.params == full.params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint text round trip") {
  auto data = small_task(6, 10);
  auto v = build_vocabulary(data.samples);
  auto dir = th::scratch("ckpt2");
  auto cfg = small_config();
  cfg.max_iterations = 4;
  cfg.checkpoint_interval = 2;
  cfg.checkpoint_path = dir / "ck";
  train(data.samples, v, cfg, with_sptm(data.lambda));
  const auto text = read_file(dir / "ck");
  auto cp = parse_checkpoint(text);
  CHECK(cp.state.iteration == 4);
  CHECK(format_checkpoint(cp) == text);
  CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() - 10)), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  cfg.grad_tolerance = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.checkpoint_interval = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("initial_params: pre-trained linear model seeds W1 by token") {
  auto data = small_task(7, 10);
  auto v = build_vocabulary(data.samples);
  auto dir = th::scratch("init");
  auto cfg = small_config();
  cfg.model.arch = Arch::linear;
  cfg.model.sim = SimMode::cosine;
  cfg.max_iterations = 3;
  auto lin = train(data.samples, v, cfg, with_sptm(data.lambda));
  save_model({v, lin.params}, dir / "lin");

  auto nl = small_config();
  nl.init_model = dir / "lin";
  auto p = initial_params(v, nl);
  CHECK(p.w1 == lin.params.w1);
  CHECK(p.arch == Arch::nonlinear);
  nl.model.k1 = 7;
  CHECK_THROWS_AS(initial_params(v, nl), ShapeError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("format_train_log") {
  std::vector<TrainLogEntry> log{{0, -0.5, 0.5, 0.25, 1.234}, {1, -0.75, 0.75, 0.125, 2.5}};
  CHECK(format_train_log(log, false) ==
        "iter\tloss\txbleu\tgradnorm\tseconds\n0\t-0.5\t0.5\t0.25\t0.000\n1\t-0.75\t0.75\t0.125\t0.000\n");
  CHECK(format_train_log(log, true).find("1.234") != std::string::npos);
}

// ---- tune_lambda ------------------------------------------------------------

namespace {

std::vector<TrainingSample> two_feature_dev(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (int i = 0; i < 12; ++i) {
    TrainingSample s;
    s.id = i;
    s.reference = {"a", "b", "c", "d", "e"};
    const std::vector<Tokens> pool{{"a", "b", "c", "d", "e"}, {"a", "b", "x", "d", "e"}, {"a", "y", "c"},
                                   {"z", "b", "c", "d"},      {"a", "b", "c", "q", "e"}};
    for (std::size_t c = 0; c < pool.size(); ++c) {
      NBestEntry e;
      e.tokens = pool[c];
      e.derivation = {{{"s"}, pool[c]}};
      e.features = {rng.uniform(-1, 1)};
      e.sbleu = bleu::sentence_bleu(s.reference, e.tokens);
      s.candidates.push_back(e);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("tune_lambda: flat objective returns the initial weights after one sweep") {
  auto dev = two_feature_dev(1);
  for (auto& s : dev) s.candidates.resize(1);
  RerankTable t(dev, std::vector<std::vector<double>>(dev.size(), std::vector<double>{0.3}));
  LambdaVector init{{0.7, 0.2}};
  auto r = tune_lambda(t, init);
  CHECK(r.lambda == init);
  CHECK(r.sweeps == 1);
  CHECK(r.bleu == r.initial_bleu);
}

TEST_CASE("tune_lambda: positive scaling leaves selections and BLEU unchanged") {
  auto dev = two_feature_dev(2);
  Rng rng(2);
  std::vector<std::vector<double>> h;
  for (auto& s : dev) {
    h.emplace_back();
    for (std::size_t c = 0; c < s.candidates.size(); ++c) h.back().push_back(rng.uniform(-1, 1));
  }
  RerankTable t(dev, h);
  std::vector<double> l{0.4, -1.3};
  for (double c : {0.01, 0.5, 3.0, 250.0}) {
    std::vector<double> s{l[0] * c, l[1] * c};
    CHECK(t.select(s) == t.select(l));
    CHECK(t.corpus_bleu(t.select(s)) == t.corpus_bleu(t.select(l)));
  }
}

TEST_CASE("tune_lambda: matches an exhaustive 100x100 grid and never loses") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto dev = two_feature_dev(seed);
    Rng rng(seed + 100);
    std::vector<std::vector<double>> h;
    for (auto& s : dev) {
      h.emplace_back();
      for (auto& c : s.candidates) h.back().push_back(*c.sbleu + rng.uniform(-0.6, 0.6));
    }
    RerankTable t(dev, h);
    double grid_best = 0;
    for (int i = 0; i < 100; ++i)
      for (int j = 0; j < 100; ++j) {
        std::vector<double> w{-5 + 10.0 * i / 99, -5 + 10.0 * j / 99};
        grid_best = std::max(grid_best, t.corpus_bleu(t.select(w)));
      }
    LambdaVector init{{1.0, 0.0}};
    auto r = tune_lambda(t, init);
    CHECK(r.bleu >= r.initial_bleu);
    CHECK(r.bleu == t.corpus_bleu(t.select(r.lambda.weights)));
    CHECK_MESSAGE(r.bleu >= grid_best - 1e-9, "seed ", seed, " tuned ", r.bleu, " grid ", grid_best);
  }
}

TEST_CASE("tune_lambda: shape and interval errors") {
  auto dev = two_feature_dev(3);
  RerankTable t(dev, std::vector<std::vector<double>>(dev.size(), std::vector<double>(5, 0.0)));
  CHECK_THROWS_AS(tune_lambda(t, LambdaVector{{1.0}}), ShapeError);
  TuneOptions bad;
  bad.hi = bad.lo;
  CHECK_THROWS_AS(tune_lambda(t, LambdaVector{{1.0, 0.0}}, bad), Error);
}
