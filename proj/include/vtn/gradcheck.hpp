#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

struct NonDifferentiableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "leaf_index[flat_element]"
};

// Compares the tape's analytic gradient with central finite differences for
// every element of every leaf. Needs 64-bit scalars; a float instantiation
// would drown the signal in rounding noise. The one-sided slopes are also
// compared so a kink that central differences cancel (|x| at 0) is reported
// instead of silently passing.
//
// f must rebuild the same scalar loss on each call from the current leaf
// values (re-seed any rng it uses internally).
inline GradCheckResult gradcheck(const std::function<Tensor<double>()>& f,
                                 std::vector<Tensor<double>> leaves,
                                 double step = 1e-6, double kink_tol = 1e-3) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  double f0;
  {
    Tape<double> tape;
    Tensor<double> loss = f();
    if (loss.numel() != 1)
      throw std::invalid_argument("gradcheck: f must be scalar-valued");
    f0 = loss.item();
    tape.backward(loss.node());
  }

  auto eval = [&f]() {
    Tensor<double> loss = f();
    if (loss.numel() != 1)
      throw std::invalid_argument("gradcheck: f must be scalar-valued");
    return loss.item();
  };

  GradCheckResult result;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const std::vector<double> analytic =
        leaf.grad().empty() ? std::vector<double>(leaf.numel(), 0.0) : leaf.grad();
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + step;
      const double fp = eval();
      leaf.data()[i] = saved - step;
      const double fm = eval();
      leaf.data()[i] = saved;

      const double central = (fp - fm) / (2.0 * step);
      const double right = (fp - f0) / step;
      const double left = (f0 - fm) / step;
      if (std::abs(right - left) >
          kink_tol * std::max({1.0, std::abs(right), std::abs(left)}))
        throw NonDifferentiableError(
            "gradcheck: non-differentiable point at leaf " + std::to_string(li) +
            " element " + std::to_string(i) + " (one-sided slopes " +
            std::to_string(left) + " vs " + std::to_string(right) + ")");

      const double denom = std::max({1.0, std::abs(central), std::abs(analytic[i])});
      const double rel = std::abs(central - analytic[i]) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst =
            "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace vtn
