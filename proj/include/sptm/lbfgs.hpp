#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>

#include "sptm/model.hpp"

namespace sptm {

struct LbfgsOptions {
  std::size_t history = 10;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
  int max_evaluations = 30;
};

/// Iterate, its loss/gradient and the (s, y) curvature pairs, newest last.
struct LbfgsState {
  LbfgsOptions opts;
  Vector x;
  Vector g;
  double f = 0.0;
  std::deque<Vector> s;
  std::deque<Vector> y;
  std::size_t iteration = 0;
  bool initialized = false;
};

/// Returns the loss at x and writes the gradient into `grad`.
using LossFn = std::function<double(const Vector& x, Vector& grad)>;

enum class StepStatus { ok, stationary, line_search_failed };
std::string_view to_string(StepStatus s);

struct StepResult {
  StepStatus status = StepStatus::ok;
  double step = 0.0;
  int evaluations = 0;
  bool strong_wolfe = false;  // false when the Armijo-only fallback was taken
};

/// Evaluates the loss at x0 and resets the history.
void lbfgs_init(LbfgsState& state, Vector x0, const LossFn& fn);

/// Search direction from the two-loop recursion. With empty history this is
/// steepest descent scaled to unit length.
Vector lbfgs_direction(const LbfgsState& state);

/// One iteration: direction, strong-Wolfe line search, history update.
/// Non-finite trial losses count as failed trials. On line-search failure the
/// state is left at the last accepted iterate.
StepResult lbfgs_step(LbfgsState& state, const LossFn& fn);

}  // namespace sptm
