#include "sptm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "sptm/error.hpp"
#include "sptm/objective.hpp"

namespace sptm {

void TrainConfig::validate() const {
  if (!(grad_tolerance > 0.0)) throw Error("train: gradient tolerance must be positive");
  if (!(rel_loss_tolerance >= 0.0)) throw Error("train: relative loss tolerance must be non-negative");
  if (rel_loss_window == 0) throw Error("train: relative loss window must be at least 1");
  if (history == 0) throw Error("train: L-BFGS history must be at least 1");
  if (checkpoint_interval > 0 && checkpoint_path.empty()) throw Error("train: checkpoint interval set without a path");
  if (model.k1 == 0 || (model.arch == Arch::nonlinear && model.k2 == 0)) throw Error("train: layer sizes must be positive");
}

ModelParams initial_params(const Vocabulary& vocab, const TrainConfig& config) {
  auto params = init_params(vocab.size(), config.model, config.seed);
  if (!config.init_model) return params;

  const auto init = load_model(*config.init_model);
  if (init.params.k1() != config.model.k1)
    throw ShapeError("initial model has k1 = " + std::to_string(init.params.k1()) + ", expected " +
                     std::to_string(config.model.k1));
  // Rows are matched by token so a model trained on a different corpus can
  // seed this one; unseen tokens keep their random rows.
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (init.vocab.contains(vocab.token(i)))
      params.w1.row(static_cast<Eigen::Index>(i)) =
          init.params.w1.row(static_cast<Eigen::Index>(init.vocab.index(vocab.token(i))));
  if (init.params.arch == Arch::nonlinear && config.model.arch == Arch::nonlinear) {
    if (init.params.w2.cols() != params.w2.cols()) throw ShapeError("initial model has a different k2");
    params.w2 = init.params.w2;
  }
  return params;
}

namespace {

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

bool loss_stalled(const std::vector<double>& hist, const TrainConfig& cfg) {
  if (hist.size() <= cfg.rel_loss_window) return false;
  const double now = hist.back();
  const double then = hist[hist.size() - 1 - cfg.rel_loss_window];
  return std::abs(then - now) <= cfg.rel_loss_tolerance * std::max(std::abs(now), 1e-12);
}

}  // namespace

TrainResult train(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, const TrainConfig& config,
                  const LambdaVector& lambda, const Checkpoint* resume) {
  config.validate();
  const Objective objective(samples, vocab, lambda, {.threads = config.threads, .weight_decay = config.weight_decay});
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  ModelParams params;
  if (resume) {
    if (!(resume->model.vocab == vocab)) throw Error("train: checkpoint vocabulary differs from the corpus vocabulary");
    params = resume->model.params;
  } else {
    params = initial_params(vocab, config);
  }
  ModelParams scratch = params;

  const LossFn fn = [&](const Vector& x, Vector& grad) {
    unflatten(x, scratch);
    const auto r = objective.evaluate(scratch);
    grad = flatten(r.grad);
    return r.loss;
  };
  auto xbleu_at = [&](const Vector& x) {
    unflatten(x, scratch);
    return objective.evaluate(scratch, false).mean_xbleu;
  };

  LbfgsState state;
  std::vector<double> history;
  if (resume) {
    state = resume->state;
    state.opts.history = config.history;
    history = resume->loss_history;
  } else {
    state.opts.history = config.history;
    lbfgs_init(state, flatten(params), fn);
    history.push_back(state.f);
  }

  TrainResult res;
  double xbleu = xbleu_at(state.x);
  res.initial_xbleu = xbleu;
  res.log.push_back({state.iteration, state.f, xbleu, inf_norm(state.g), elapsed()});

  while (true) {
    if (state.iteration >= config.max_iterations) {
      res.stop_reason = "max_iterations";
      break;
    }
    if (inf_norm(state.g) <= config.grad_tolerance) {
      res.stop_reason = "gradient_tolerance";
      break;
    }
    if (loss_stalled(history, config)) {
      res.stop_reason = "relative_loss_change";
      break;
    }
    const auto step = lbfgs_step(state, fn);
    if (step.status == StepStatus::stationary) {
      res.stop_reason = "gradient_tolerance";
      break;
    }
    if (step.status == StepStatus::line_search_failed) {
      res.stop_reason = "line_search_failed";
      break;
    }
    history.push_back(state.f);
    xbleu = xbleu_at(state.x);
    res.log.push_back({state.iteration, state.f, xbleu, inf_norm(state.g), elapsed()});

    if (config.checkpoint_interval > 0 && state.iteration % config.checkpoint_interval == 0) {
      Checkpoint cp{{vocab, params}, state, history};
      unflatten(state.x, cp.model.params);
      save_checkpoint(cp, config.checkpoint_path);
    }
  }

  unflatten(state.x, params);
  res.params = std::move(params);
  res.final_xbleu = xbleu;
  return res;
}

namespace {

void write_vector(std::string& out, std::string_view name, const Vector& v) {
  out += std::string(name) + " " + std::to_string(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out += " " + encode_double(v(i));
  out += "\n";
}

std::vector<std::string_view> split_spaces(std::string_view l) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < l.size()) {
    while (i < l.size() && l[i] == ' ') ++i;
    std::size_t j = i;
    while (j < l.size() && l[j] != ' ') ++j;
    if (j > i) out.push_back(l.substr(i, j - i));
    i = j;
  }
  return out;
}

class Lines {
 public:
  explicit Lines(std::string_view t) : text_(t) {}
  std::vector<std::string_view> next(std::string_view key) {
    if (pos_ >= text_.size()) throw FormatError("checkpoint truncated before '" + std::string(key) + "'");
    auto nl = text_.find('\n', pos_);
    auto l = text_.substr(pos_, nl == std::string_view::npos ? std::string_view::npos : nl - pos_);
    pos_ = nl == std::string_view::npos ? text_.size() : nl + 1;
    auto f = split_spaces(l);
    if (f.empty() || f[0] != key) throw FormatError("checkpoint: expected '" + std::string(key) + "'");
    return f;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

std::size_t parse_count(std::string_view s) {
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw FormatError("checkpoint: bad count '" + std::string(s) + "'");
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

Vector read_vector(Lines& in, std::string_view name, std::optional<std::size_t> expect = std::nullopt) {
  auto f = in.next(name);
  if (f.size() < 2) throw FormatError("checkpoint: missing length for '" + std::string(name) + "'");
  const auto n = parse_count(f[1]);
  if (f.size() != n + 2) throw ShapeError("checkpoint: '" + std::string(name) + "' length mismatch");
  if (expect && n != *expect) throw ShapeError("checkpoint: '" + std::string(name) + "' does not match the model size");
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = decode_double(f[i + 2]);
  return v;
}

}  // namespace

std::string format_checkpoint(const Checkpoint& cp) {
  std::string out = format_model(cp.model);
  const auto& st = cp.state;
  out += "lbfgs\n";
  out += "iteration " + std::to_string(st.iteration) + "\n";
  out += "f " + encode_double(st.f) + "\n";
  write_vector(out, "g", st.g);
  out += "pairs " + std::to_string(st.s.size()) + "\n";
  for (std::size_t i = 0; i < st.s.size(); ++i) {
    write_vector(out, "s", st.s[i]);
    write_vector(out, "y", st.y[i]);
  }
  write_vector(out, "loss_history",
               Eigen::Map<const Vector>(cp.loss_history.data(), static_cast<Eigen::Index>(cp.loss_history.size())));
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  std::string_view rest;
  Checkpoint cp;
  cp.model = parse_model(text, &rest);
  Lines in(rest);
  in.next("lbfgs");
  auto& st = cp.state;
  const std::size_t n = cp.model.params.num_params();
  st.iteration = parse_count(in.next("iteration").at(1));
  st.f = decode_double(in.next("f").at(1));
  st.x = flatten(cp.model.params);
  st.g = read_vector(in, "g", n);
  const auto pairs = parse_count(in.next("pairs").at(1));
  for (std::size_t i = 0; i < pairs; ++i) {
    st.s.push_back(read_vector(in, "s", n));
    st.y.push_back(read_vector(in, "y", n));
  }
  const auto hist = read_vector(in, "loss_history");
  cp.loss_history.assign(hist.data(), hist.data() + hist.size());
  in.next("end");
  st.initialized = true;
  return cp;
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  write_file_atomic(path, format_checkpoint(cp));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

std::string format_train_log(const std::vector<TrainLogEntry>& log, bool with_timing) {
  std::string out = "iter\tloss\txbleu\tgradnorm\tseconds\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.12g\t%.12g\t%.12g\t%.3f\n", e.iteration, e.loss, e.xbleu, e.grad_norm,
                  with_timing ? e.seconds : 0.0);
    out += buf;
  }
  return out;
}

TuneResult tune_lambda(const RerankTable& dev, const LambdaVector& init, const TuneOptions& opts) {
  if (init.weights.size() != dev.num_features() + 1) throw ShapeError("tune_lambda: lambda must have M+1 weights");
  if (!(opts.hi > opts.lo) || opts.grid_points < 2) throw Error("tune_lambda: bad search interval");
  auto score = [&](const std::vector<double>& w) { return dev.corpus_bleu(dev.select(w)); };

  TuneResult res;
  res.lambda = init;
  auto& w = res.lambda.weights;
  res.initial_bleu = res.bleu = score(w);
  const double spacing = (opts.hi - opts.lo) / static_cast<double>(opts.grid_points - 1);
  constexpr double kInvPhi = 0.6180339887498949;

  for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    ++res.sweeps;
    bool improved = false;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double current = w[k];
      double best_v = current, best_b = res.bleu;
      auto probe = [&](double v) {
        w[k] = v;
        const double b = score(w);
        if (b > best_b) {
          best_b = b;
          best_v = v;
        }
        return b;
      };
      for (std::size_t g = 0; g < opts.grid_points; ++g) probe(opts.lo + spacing * static_cast<double>(g));

      // Golden-section refinement inside the grid cell pair around the best point.
      double a = std::max(opts.lo, best_v - spacing), b = std::min(opts.hi, best_v + spacing);
      double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
      double fc = probe(c), fd = probe(d);
      for (std::size_t it = 0; it < opts.golden_iterations; ++it) {
        if (fc >= fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - kInvPhi * (b - a);
          fc = probe(c);
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + kInvPhi * (b - a);
          fd = probe(d);
        }
      }

      if (best_b > res.bleu + opts.min_improvement) {
        w[k] = best_v;
        res.bleu = best_b;
        improved = true;
      } else {
        w[k] = current;
      }
    }
    if (!improved) break;
  }
  return res;
}

}  // namespace sptm
