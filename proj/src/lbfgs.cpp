#include "sptm/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sptm/error.hpp"

namespace sptm {

std::string_view to_string(StepStatus s) {
  switch (s) {
    case StepStatus::ok: return "ok";
    case StepStatus::stationary: return "stationary";
    case StepStatus::line_search_failed: return "line_search_failed";
  }
  return "?";
}

void lbfgs_init(LbfgsState& state, Vector x0, const LossFn& fn) {
  state.x = std::move(x0);
  state.g = Vector::Zero(state.x.size());
  state.f = fn(state.x, state.g);
  if (!std::isfinite(state.f) || !state.g.allFinite()) throw Error("lbfgs: initial loss or gradient is not finite");
  state.s.clear();
  state.y.clear();
  state.iteration = 0;
  state.initialized = true;
}

Vector lbfgs_direction(const LbfgsState& state) {
  const auto m = state.s.size();
  if (m == 0) {
    const double n = state.g.norm();
    return n > 0.0 ? Vector(-state.g / n) : Vector(Vector::Zero(state.g.size()));
  }
  Vector q = state.g;
  std::vector<double> alpha(m), rho(m);
  for (std::size_t k = m; k-- > 0;) {
    rho[k] = 1.0 / state.y[k].dot(state.s[k]);
    alpha[k] = rho[k] * state.s[k].dot(q);
    q -= alpha[k] * state.y[k];
  }
  const double gamma = state.s.back().dot(state.y.back()) / state.y.back().squaredNorm();
  Vector r = gamma * q;
  for (std::size_t k = 0; k < m; ++k) {
    const double beta = rho[k] * state.y[k].dot(r);
    r += state.s[k] * (alpha[k] - beta);
  }
  return -r;
}

namespace {

struct Trial {
  double a = 0.0;
  double f = 0.0;
  double dg = 0.0;  // directional derivative
  Vector g;
};

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), safeguarded
/// to the interior of [lo, hi].
double interpolate(const Trial& u, const Trial& v) {
  const double lo = std::min(u.a, v.a), hi = std::max(u.a, v.a);
  const double margin = 0.1 * (hi - lo);
  double t = 0.5 * (lo + hi);
  if (std::isfinite(u.f) && std::isfinite(v.f)) {
    const double d1 = u.dg + v.dg - 3.0 * (u.f - v.f) / (u.a - v.a);
    const double disc = d1 * d1 - u.dg * v.dg;
    if (disc >= 0.0) {
      const double d2 = std::copysign(std::sqrt(disc), v.a - u.a);
      const double denom = v.dg - u.dg + 2.0 * d2;
      if (denom != 0.0) {
        const double c = v.a - (v.a - u.a) * (v.dg + d2 - d1) / denom;
        if (std::isfinite(c)) t = c;
      }
    }
  }
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace

StepResult lbfgs_step(LbfgsState& state, const LossFn& fn) {
  if (!state.initialized) throw Error("lbfgs_step: state not initialized");
  StepResult res;
  if (state.g.lpNorm<Eigen::Infinity>() == 0.0) {
    res.status = StepStatus::stationary;
    return res;
  }

  Vector d = lbfgs_direction(state);
  double dg0 = state.g.dot(d);
  if (!(dg0 < 0.0)) {
    // History produced an ascent direction; restart from steepest descent.
    state.s.clear();
    state.y.clear();
    d = lbfgs_direction(state);
    dg0 = state.g.dot(d);
  }

  const double f0 = state.f, c1 = state.opts.c1, c2 = state.opts.c2;
  auto evaluate = [&](double a) {
    Trial t;
    t.a = a;
    t.g = Vector::Zero(state.x.size());
    t.f = fn(state.x + a * d, t.g);
    if (!std::isfinite(t.f) || !t.g.allFinite()) t.f = std::numeric_limits<double>::infinity();
    t.dg = std::isfinite(t.f) ? t.g.dot(d) : 0.0;
    ++res.evaluations;
    return t;
  };
  auto armijo = [&](const Trial& t) { return std::isfinite(t.f) && t.f <= f0 + c1 * t.a * dg0 && t.f < f0; };
  auto curvature = [&](const Trial& t) { return std::abs(t.dg) <= -c2 * dg0; };

  std::optional<Trial> accepted, fallback;
  auto note = [&](const Trial& t) {
    if (armijo(t) && (!fallback || t.f < fallback->f)) fallback = t;
  };

  Trial prev{0.0, f0, dg0, state.g};
  double a = 1.0;
  bool zoom = false;
  Trial lo, hi;
  while (res.evaluations < state.opts.max_evaluations && !accepted && !zoom) {
    Trial t = evaluate(a);
    note(t);
    if (!armijo(t) || (res.evaluations > 1 && t.f >= prev.f)) {
      lo = prev;
      hi = t;
      zoom = true;
    } else if (curvature(t)) {
      accepted = t;
    } else if (t.dg >= 0.0) {
      lo = t;
      hi = prev;
      zoom = true;
    } else {
      prev = t;
      a *= 2.0;
    }
  }
  while (zoom && !accepted && res.evaluations < state.opts.max_evaluations) {
    const double at = std::isfinite(hi.f) ? interpolate(lo, hi) : 0.5 * (lo.a + hi.a);
    Trial t = evaluate(at);
    note(t);
    if (!armijo(t) || t.f >= lo.f) {
      hi = t;
    } else {
      if (curvature(t)) {
        accepted = t;
        break;
      }
      if (t.dg * (hi.a - lo.a) >= 0.0) hi = lo;
      lo = t;
    }
    if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
  }

  if (accepted) {
    res.strong_wolfe = true;
  } else if (fallback) {
    accepted = fallback;
  } else {
    res.status = StepStatus::line_search_failed;
    return res;
  }

  Vector s = accepted->a * d;
  Vector y = accepted->g - state.g;
  state.x += s;
  state.g = accepted->g;
  state.f = accepted->f;
  ++state.iteration;
  res.step = accepted->a;
  const double sy = s.dot(y);
  if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
    state.s.push_back(std::move(s));
    state.y.push_back(std::move(y));
    while (state.s.size() > state.opts.history) {
      state.s.pop_front();
      state.y.pop_front();
    }
  }
  return res;
}

}  // namespace sptm
