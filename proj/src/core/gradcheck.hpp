#ifndef CONVITAC_CORE_GRADCHECK_HPP
#define CONVITAC_CORE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "core/tensor.hpp"

namespace convitac {

// Compares reverse-mode gradients against central finite differences.
// The analytic side runs the 32-bit implementation; the numeric side
// re-evaluates the same computation in 64-bit so the difference quotient
// is trustworthy at eps = 1e-3. Returns the max over checked elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
//
// leaves32 and leaves64 are the perturbed inputs, aligned index-by-index;
// loss32 must build its graph from leaves32, loss64 must read leaves64.
template <class Loss32, class Loss64>
double grad_check_pair(Loss32&& loss32, Loss64&& loss64, std::vector<TensorT<float>> leaves32,
                       std::vector<TensorT<double>> leaves64, double eps) {
  if (eps <= 0) throw ValidationError("grad_check: eps must be positive");
  if (leaves32.size() != leaves64.size()) {
    throw ContractError("grad_check: leaf lists differ in length");
  }
  for (auto& l : leaves32) {
    l.set_requires_grad(true);
    l.zero_grad();
  }

  TapeT<float> tape;
  TensorT<float> loss = loss32(&tape);
  if (loss.size() != 1) throw ContractError("grad_check: function is not scalar-valued");
  tape.backward(loss);

  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves32.size(); ++li) {
    auto& l64 = leaves64[li];
    if (l64.size() != leaves32[li].size()) {
      throw ContractError("grad_check: leaf " + std::to_string(li) + " size mismatch");
    }
    for (std::size_t i = 0; i < l64.size(); ++i) {
      const double saved = l64.data()[i];
      l64.data()[i] = saved + eps;
      const double fp = loss64();
      l64.data()[i] = saved - eps;
      const double fm = loss64();
      l64.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = static_cast<double>(leaves32[li].grad_at(i));
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

// Convenience form: f is a generic callable usable at both precisions,
// f(tape_ptr, inputs) -> scalar tensor. Inputs are cloned so callers keep
// their originals untouched.
template <class F>
double grad_check(F&& f, const std::vector<TensorT<float>>& inputs, double eps = 1e-3) {
  std::vector<TensorT<float>> in32;
  std::vector<TensorT<double>> in64;
  in32.reserve(inputs.size());
  in64.reserve(inputs.size());
  for (const auto& t : inputs) {
    in32.push_back(t.clone());
    in64.push_back(t.template cast<double>());
  }
  auto loss32 = [&](TapeT<float>* tape) { return f(tape, in32); };
  auto loss64 = [&]() {
    TapeT<double>* no_tape = nullptr;
    return f(no_tape, in64).item();
  };
  return grad_check_pair(loss32, loss64, in32, in64, eps);
}

}  // namespace convitac

#endif
