#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "npgrow/autodiff.hpp"
#include "npgrow/rng.hpp"

namespace npgrow::testing {

// Builds the graph twice per perturbed coordinate and compares central
// finite differences against backprop. build receives leaves in input order
// and must return a scalar loss.
inline double max_rel_grad_error(
    std::vector<Tensor>& inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build, double h = 1e-5,
    double floor = 1e-6) {
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
    return build(tape, leaves)->val[0];
  };

  // Analytic gradients.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    for (Var l : leaves)
      analytic.push_back(l->grad.defined() ? l->grad.clone() : Tensor::zeros(l->val.shape()));
  }

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i][k];
      inputs[i][k] = orig + h;
      const double fp = eval();
      inputs[i][k] = orig - h;
      const double fm = eval();
      inputs[i][k] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][k];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  rng.fill_normal(t, 0.0, scale);
  return t;
}

}  // namespace npgrow::testing
