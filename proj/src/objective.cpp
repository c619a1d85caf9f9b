#include "sptm/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sptm/error.hpp"
#include "sptm/parallel.hpp"

namespace sptm {

GradientAccumulator GradientAccumulator::zeros_like(const ModelParams& p) {
  GradientAccumulator g;
  g.dw1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
  g.dw2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
  return g;
}

GradientAccumulator& GradientAccumulator::operator+=(const GradientAccumulator& o) {
  dw1 += o.dw1;
  dw2 += o.dw2;
  return *this;
}

GradientAccumulator& GradientAccumulator::operator*=(double s) {
  dw1 *= s;
  dw2 *= s;
  return *this;
}

double GradientAccumulator::max_abs() const {
  double m = 0.0;
  if (dw1.size()) m = std::max(m, dw1.cwiseAbs().maxCoeff());
  if (dw2.size()) m = std::max(m, dw2.cwiseAbs().maxCoeff());
  return m;
}

bool GradientAccumulator::all_finite() const { return dw1.allFinite() && dw2.allFinite(); }

namespace {

/// ∂sim/∂y for each side of a pair of output vectors.
void output_gradients(const Vector& yf, const Vector& ye, SimMode mode, Vector& af, Vector& ae) {
  if (mode == SimMode::dot) {
    af = ye;
    ae = yf;
    return;
  }
  const double nf = yf.norm(), ne = ye.norm();
  if (nf == 0.0 || ne == 0.0) {
    af = Vector::Zero(yf.size());
    ae = Vector::Zero(ye.size());
    return;
  }
  const double s = yf.dot(ye) / (nf * ne);
  af = ye / (nf * ne) - (s / (nf * nf)) * yf;
  ae = yf / (nf * ne) - (s / (ne * ne)) * ye;
}

/// Pushes ∂sim/∂y = a back through one projection and adds scale·∂sim/∂θ.
void backprop(const ModelParams& p, const WordVector& x, const ForwardTrace& t, const Vector& a, double scale,
              GradientAccumulator& acc) {
  if (p.arch == Arch::linear) {
    for (const auto& [i, c] : x.entries) acc.dw1.row(static_cast<Eigen::Index>(i)) += (scale * c) * a.transpose();
    return;
  }
  const Vector g2 = a.cwiseProduct((1.0 - t.y2.array().square()).matrix());
  acc.dw2.noalias() += scale * t.y1 * g2.transpose();
  const Vector g1 = (p.w2 * g2).cwiseProduct((1.0 - t.y1.array().square()).matrix());
  for (const auto& [i, c] : x.entries) acc.dw1.row(static_cast<Eigen::Index>(i)) += (scale * c) * g1.transpose();
}

Matrix word_sims(const std::vector<const ForwardTrace*>& f, const std::vector<const ForwardTrace*>& e, SimMode mode) {
  Matrix s(static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(e.size()));
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j)
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          output_similarity(f[i]->output(), e[j]->output(), mode);
  return s;
}

/// Subgradient of the mean-of-max aggregation: each word routes its share
/// through its argmax partner only.
void word_level_gradient(const ModelParams& p, const std::vector<const WordVector*>& fx,
                         const std::vector<const ForwardTrace*>& ft, const std::vector<const WordVector*>& ex,
                         const std::vector<const ForwardTrace*>& et, double scale, GradientAccumulator& acc) {
  const auto match = word_match(word_sims(ft, et, p.sim));
  const double wf = 0.5 * scale / static_cast<double>(fx.size());
  const double we = 0.5 * scale / static_cast<double>(ex.size());
  for (std::size_t i = 0; i < fx.size(); ++i) {
    const auto j = match.best_for_f[i];
    accumulate_pair_gradient(p, *fx[i], *ft[i], *ex[j], *et[j], wf, acc);
  }
  for (std::size_t j = 0; j < ex.size(); ++j) {
    const auto i = match.best_for_e[j];
    accumulate_pair_gradient(p, *fx[i], *ft[i], *ex[j], *et[j], we, acc);
  }
}

// Phase-2 work is split into a fixed number of chunks so the reduction order
// does not depend on the worker count.
constexpr std::size_t kPhase2Chunks = 16;

}  // namespace

void accumulate_pair_gradient(const ModelParams& params, const WordVector& xf, const ForwardTrace& tf,
                              const WordVector& xe, const ForwardTrace& te, double scale, GradientAccumulator& acc) {
  Vector af, ae;
  output_gradients(tf.output(), te.output(), params.sim, af, ae);
  backprop(params, xf, tf, af, scale, acc);
  backprop(params, xe, te, ae, scale, acc);
}

GradientAccumulator sim_gradient(const Tokens& f, const Tokens& e, const ModelParams& params, const Vocabulary& vocab) {
  if (f.empty() || e.empty()) throw Error("sim_gradient: empty phrase");
  auto acc = GradientAccumulator::zeros_like(params);
  if (!params.word_level) {
    const auto xf = encode(f, vocab), xe = encode(e, vocab);
    accumulate_pair_gradient(params, xf, project(xf, params), xe, project(xe, params), 1.0, acc);
    return acc;
  }
  std::vector<WordVector> fx, ex;
  std::vector<ForwardTrace> ft, et;
  for (const auto& t : f) fx.push_back(encode({t}, vocab));
  for (const auto& t : e) ex.push_back(encode({t}, vocab));
  for (const auto& x : fx) ft.push_back(project(x, params));
  for (const auto& x : ex) et.push_back(project(x, params));
  auto ptrs = [](const auto& v) {
    std::vector<const typename std::decay_t<decltype(v)>::value_type*> out;
    for (const auto& x : v) out.push_back(&x);
    return out;
  };
  word_level_gradient(params, ptrs(fx), ptrs(ft), ptrs(ex), ptrs(et), 1.0, acc);
  return acc;
}

struct Objective::Projection {
  std::vector<WordVector> inputs;  // word-level only; phrase-level reuses phrases_
  std::vector<ForwardTrace> traces;
};

Objective::Objective(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, LambdaVector lambda,
                     ObjectiveOptions opts)
    : lambda_(std::move(lambda)), opts_(opts), dim_(vocab.size()) {
  if (samples.empty()) throw Error("objective: no training samples");
  const std::size_t m = samples.front().num_features();
  if (lambda_.weights.size() != m + 1)
    throw ShapeError("lambda has " + std::to_string(lambda_.weights.size()) + " weights but the corpus has " +
                     std::to_string(m) + " baseline features (expected M+1)");

  std::map<Tokens, std::size_t> phrase_slot;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_slot;
  std::map<std::size_t, std::size_t> unit_slot;
  auto intern_phrase = [&](const Tokens& toks) {
    auto [it, inserted] = phrase_slot.try_emplace(toks, phrases_.size());
    if (inserted) {
      phrases_.push_back(encode(toks, vocab));
      std::vector<std::size_t> words;
      for (const auto& t : toks) {
        auto [u, fresh] = unit_slot.try_emplace(vocab.index(t), units_.size());
        if (fresh) units_.push_back(vocab.index(t));
        words.push_back(u->second);
      }
      phrase_words_.push_back(std::move(words));
    }
    return it->second;
  };

  samples_.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.candidates.empty()) throw Error("objective: sample " + std::to_string(s.id) + " has no candidates");
    Sample out;
    for (const auto& c : s.candidates) {
      if (c.features.size() != m)
        throw ShapeError("candidate in sample " + std::to_string(s.id) + " has " + std::to_string(c.features.size()) +
                         " features, expected " + std::to_string(m));
      if (!c.sbleu) throw Error("objective: sample " + std::to_string(s.id) + " has a candidate without sentence BLEU");
      Candidate pc;
      for (std::size_t k = 0; k < m; ++k) pc.base += lambda_.weights[k] * c.features[k];
      pc.sbleu = *c.sbleu;
      for (const auto& pp : c.derivation) {
        const auto f = intern_phrase(pp.source), e = intern_phrase(pp.target);
        auto [it, inserted] = pair_slot.try_emplace({f, e}, pairs_.size());
        if (inserted) {
          pairs_.push_back({f, e});
          pair_keys_.push_back(pp);
        }
        pc.pairs.push_back(it->second);
      }
      out.candidates.push_back(std::move(pc));
    }
    samples_.push_back(std::move(out));
  }
}

Objective::Projection Objective::project_all(const ModelParams& params) const {
  if (params.d() != dim_)
    throw ShapeError("model has " + std::to_string(params.d()) + " input rows but the vocabulary has " +
                     std::to_string(dim_) + " tokens");
  Projection proj;
  const std::vector<WordVector>* inputs = &phrases_;
  if (params.word_level) {
    for (auto u : units_) proj.inputs.push_back(encode_ids({u}, dim_));
    inputs = &proj.inputs;
  }
  proj.traces.resize(inputs->size());
  parallel_for(inputs->size(), opts_.threads, [&](std::size_t i) { proj.traces[i] = project((*inputs)[i], params); });
  return proj;
}

std::vector<double> Objective::pair_similarities(const ModelParams& params, const Projection& proj) const {
  std::vector<double> sims(pairs_.size());
  parallel_for(pairs_.size(), opts_.threads, [&](std::size_t p) {
    const auto& pr = pairs_[p];
    if (!params.word_level) {
      sims[p] = output_similarity(proj.traces[pr.f].output(), proj.traces[pr.e].output(), params.sim);
      return;
    }
    std::vector<const ForwardTrace*> ft, et;
    for (auto u : phrase_words_[pr.f]) ft.push_back(&proj.traces[u]);
    for (auto u : phrase_words_[pr.e]) et.push_back(&proj.traces[u]);
    sims[p] = word_match(word_sims(ft, et, params.sim)).score;
  });
  return sims;
}

void Objective::accumulate_pair(const ModelParams& params, const Projection& proj, std::size_t pair, double scale,
                                GradientAccumulator& acc) const {
  const auto& pr = pairs_[pair];
  if (!params.word_level) {
    accumulate_pair_gradient(params, phrases_[pr.f], proj.traces[pr.f], phrases_[pr.e], proj.traces[pr.e], scale, acc);
    return;
  }
  std::vector<const WordVector*> fx, ex;
  std::vector<const ForwardTrace*> ft, et;
  for (auto u : phrase_words_[pr.f]) {
    fx.push_back(&proj.inputs[u]);
    ft.push_back(&proj.traces[u]);
  }
  for (auto u : phrase_words_[pr.e]) {
    ex.push_back(&proj.inputs[u]);
    et.push_back(&proj.traces[u]);
  }
  word_level_gradient(params, fx, ft, ex, et, scale, acc);
}

namespace {

struct SampleEval {
  std::vector<CandidateScore> scores;
  double xbleu = 0.0;
  std::vector<std::pair<std::size_t, double>> delta;  // ascending pair id
};

}  // namespace

std::vector<std::vector<double>> Objective::sptm_features(const ModelParams& params) const {
  const auto proj = project_all(params);
  const auto sims = pair_similarities(params, proj);
  std::vector<std::vector<double>> out(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i)
    for (const auto& c : samples_[i].candidates) {
      double h = 0.0;
      for (auto p : c.pairs) h += sims[p];
      out[i].push_back(h);
    }
  return out;
}

GradientResult Objective::evaluate(const ModelParams& params, bool with_gradient) const {
  check_params(params);
  const auto proj = project_all(params);
  const auto sims = pair_similarities(params, proj);
  const double lam = lambda_.sptm_weight();

  // Phase 1: per-sample probabilities, xBleu and error terms.
  std::vector<SampleEval> evals(samples_.size());
  parallel_for(samples_.size(), opts_.threads, [&](std::size_t i) {
    const auto& s = samples_[i];
    auto& ev = evals[i];
    ev.scores.resize(s.candidates.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      auto& sc = ev.scores[c];
      sc.base = s.candidates[c].base;
      for (auto p : s.candidates[c].pairs) sc.sptm += sims[p];
      sc.total = sc.base + lam * sc.sptm;
      top = std::max(top, sc.total);
    }
    CompensatedSum z;
    for (auto& sc : ev.scores) {
      sc.prob = std::exp(sc.total - top);
      z.add(sc.prob);
    }
    const double norm = z.value();
    CompensatedSum xb;
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      ev.scores[c].prob /= norm;
      xb.add(ev.scores[c].prob * s.candidates[c].sbleu);
    }
    ev.xbleu = xb.value();
    if (!with_gradient) return;
    std::map<std::size_t, double> delta;
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      const double w = (s.candidates[c].sbleu - ev.xbleu) * ev.scores[c].prob * lam;
      for (auto p : s.candidates[c].pairs) delta[p] += w;
    }
    ev.delta.assign(delta.begin(), delta.end());
  });

  GradientResult res;
  res.unique_pairs = pairs_.size();
  const double inv_n = 1.0 / static_cast<double>(samples_.size());
  CompensatedSum total_xbleu;
  for (const auto& ev : evals) total_xbleu.add(ev.xbleu);
  res.mean_xbleu = total_xbleu.value() * inv_n;
  res.loss = -res.mean_xbleu;
  if (opts_.weight_decay > 0.0)
    res.loss += 0.5 * opts_.weight_decay * (params.w1.squaredNorm() + params.w2.squaredNorm());
  if (!with_gradient) return res;

  // Merge in sample order, then canonical pair order within each sample.
  std::vector<double> delta(pairs_.size(), 0.0);
  for (const auto& ev : evals)
    for (const auto& [p, v] : ev.delta) delta[p] += v;

  // Phase 2: one sim-gradient per unique pair, scaled by −δ/N.
  const std::size_t chunks = std::min(kPhase2Chunks, std::max<std::size_t>(1, pairs_.size()));
  std::vector<GradientAccumulator> partial(chunks);
  std::vector<std::size_t> calls(chunks, 0);
  parallel_for(chunks, opts_.threads, [&](std::size_t c) {
    partial[c] = GradientAccumulator::zeros_like(params);
    const std::size_t lo = pairs_.size() * c / chunks, hi = pairs_.size() * (c + 1) / chunks;
    for (std::size_t p = lo; p < hi; ++p) {
      accumulate_pair(params, proj, p, -delta[p] * inv_n, partial[c]);
      ++calls[c];
    }
  });
  res.grad = GradientAccumulator::zeros_like(params);
  for (std::size_t c = 0; c < chunks; ++c) {
    res.grad += partial[c];
    res.sim_gradient_calls += calls[c];
  }
  if (opts_.weight_decay > 0.0) {
    res.grad.dw1 += opts_.weight_decay * params.w1;
    res.grad.dw2 += opts_.weight_decay * params.w2;
  }
  return res;
}

std::vector<CandidateScore> score_candidates(const TrainingSample& sample, const ModelParams& params,
                                             const LambdaVector& lambda, const Vocabulary& vocab) {
  const std::size_t m = sample.num_features();
  if (lambda.weights.size() != m + 1) throw ShapeError("lambda must have M+1 weights");
  std::vector<CandidateScore> scores(sample.candidates.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < sample.candidates.size(); ++c) {
    const auto& cand = sample.candidates[c];
    if (cand.features.size() != m) throw ShapeError("candidate feature count differs within the sample");
    auto& sc = scores[c];
    for (std::size_t k = 0; k < m; ++k) sc.base += lambda.weights[k] * cand.features[k];
    for (const auto& pp : cand.derivation) sc.sptm += similarity(pp.source, pp.target, params, vocab);
    sc.total = sc.base + lambda.sptm_weight() * sc.sptm;
    top = std::max(top, sc.total);
  }
  CompensatedSum z;
  for (auto& sc : scores) {
    sc.prob = std::exp(sc.total - top);
    z.add(sc.prob);
  }
  const double norm = z.value();
  for (auto& sc : scores) sc.prob /= norm;
  return scores;
}

double expected_bleu(const TrainingSample& sample, const ModelParams& params, const LambdaVector& lambda,
                     const Vocabulary& vocab) {
  const auto scores = score_candidates(sample, params, lambda, vocab);
  CompensatedSum xb;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto& sb = sample.candidates[c].sbleu;
    if (!sb) throw Error("expected_bleu: candidate without cached sentence BLEU");
    xb.add(scores[c].prob * *sb);
  }
  return xb.value();
}

ErrorTerms error_terms(const TrainingSample& sample, const ModelParams& params, const LambdaVector& lambda,
                       const Vocabulary& vocab) {
  const auto scores = score_candidates(sample, params, lambda, vocab);
  ErrorTerms out;
  CompensatedSum xb;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto& sb = sample.candidates[c].sbleu;
    if (!sb) throw Error("error_terms: candidate without cached sentence BLEU");
    xb.add(scores[c].prob * *sb);
  }
  out.xbleu = xb.value();
  std::map<PhrasePair, std::size_t> slot;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double u = *sample.candidates[c].sbleu - out.xbleu;
    out.utility.push_back(u);
    const double w = u * scores[c].prob * lambda.sptm_weight();
    for (const auto& pp : sample.candidates[c].derivation) {
      auto [it, inserted] = slot.try_emplace(pp, out.delta.size());
      if (inserted) out.delta.emplace_back(pp, 0.0);
      out.delta[it->second].second += w;
    }
  }
  return out;
}

GradientResult full_gradient(const std::vector<TrainingSample>& samples, const ModelParams& params,
                             const LambdaVector& lambda, const Vocabulary& vocab, unsigned threads) {
  return Objective(samples, vocab, lambda, {.threads = threads}).evaluate(params);
}

GradientResult full_gradient_per_occurrence(const std::vector<TrainingSample>& samples, const ModelParams& params,
                                            const LambdaVector& lambda, const Vocabulary& vocab) {
  if (samples.empty()) throw Error("full_gradient: no training samples");
  GradientResult res;
  res.grad = GradientAccumulator::zeros_like(params);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  CompensatedSum total;
  std::map<PhrasePair, int> seen;
  for (const auto& s : samples) {
    const auto scores = score_candidates(s, params, lambda, vocab);
    CompensatedSum xb;
    for (std::size_t c = 0; c < scores.size(); ++c) xb.add(scores[c].prob * s.candidates[c].sbleu.value());
    const double xbleu = xb.value();
    total.add(xbleu);
    for (std::size_t c = 0; c < scores.size(); ++c) {
      const double w = (s.candidates[c].sbleu.value() - xbleu) * scores[c].prob * lambda.sptm_weight();
      for (const auto& pp : s.candidates[c].derivation) {
        auto g = sim_gradient(pp.source, pp.target, params, vocab);
        g *= -w * inv_n;
        res.grad += g;
        ++res.sim_gradient_calls;
        seen[pp] = 1;
      }
    }
  }
  res.unique_pairs = seen.size();
  res.mean_xbleu = total.value() * inv_n;
  res.loss = -res.mean_xbleu;
  return res;
}

Vector flatten(const ModelParams& p) {
  Vector v(p.w1.size() + p.w2.size());
  std::copy(p.w1.data(), p.w1.data() + p.w1.size(), v.data());
  std::copy(p.w2.data(), p.w2.data() + p.w2.size(), v.data() + p.w1.size());
  return v;
}

Vector flatten(const GradientAccumulator& g) {
  Vector v(g.dw1.size() + g.dw2.size());
  std::copy(g.dw1.data(), g.dw1.data() + g.dw1.size(), v.data());
  std::copy(g.dw2.data(), g.dw2.data() + g.dw2.size(), v.data() + g.dw1.size());
  return v;
}

void unflatten(const Vector& v, ModelParams& p) {
  if (v.size() != p.w1.size() + p.w2.size()) throw ShapeError("parameter vector size mismatch");
  std::copy(v.data(), v.data() + p.w1.size(), p.w1.data());
  std::copy(v.data() + p.w1.size(), v.data() + v.size(), p.w2.data());
}

}  // namespace sptm
