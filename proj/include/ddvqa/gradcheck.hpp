#pragma once

// Central finite-difference check of autodiff gradients.

#include <functional>
#include <string>
#include <vector>

#include "ddvqa/tensor.hpp"

namespace ddvqa {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<name>[index]" of the worst element
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// `loss` must rebuild the graph from the current leaf values on every call.
/// Gradients of `leaves` are zeroed, filled by one backward pass, then
/// compared element by element against (f(x+h) - f(x-h)) / 2h.
GradCheckResult check_gradients(const std::function<Tensor()>& loss,
                                std::vector<Tensor> leaves,
                                const std::vector<std::string>& names = {},
                                double h = 1e-5, double floor = 1e-6);

}  // namespace ddvqa
