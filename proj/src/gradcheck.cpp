#include "ddvqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ddvqa {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                                const std::vector<std::string>& names, double h, double floor) {
  for (auto& t : leaves) t.zero_grad();
  loss().backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& t : leaves) {
    const auto g = t.grad();
    if (g.empty())
      analytic.emplace_back(t.numel(), 0.0);
    else
      analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = relative_error(analytic[li][i], numeric, floor);
      const double abs_err = std::abs(analytic[li][i] - numeric);
      ++result.checked;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = (li < names.size() ? names[li] : "leaf" + std::to_string(li)) + "[" +
                       std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace ddvqa
