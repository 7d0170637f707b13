#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <vector>

#include "scv/autodiff.hpp"

namespace scv {

class NondeterminismError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

template <class T>
struct GradCheckReport {
  T max_relative_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  T analytic = 0;
  T numeric = 0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `f` against central differences for
/// every coordinate of every input. Error per coordinate is
/// |a - n| / max(1e-8, |a| + |n|).
template <class T>
GradCheckReport<T> grad_check_report(const ScalarFn<T>& f, const std::vector<Tensor<T>>& inputs,
                                     T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");

  auto evaluate = [&](const std::vector<Tensor<T>>& xs) {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(make_constant(x));
    const Var<T> out = f(tape, vars);
    if (out.value().size() != 1) throw TapeError("grad_check: function must return a scalar");
    return out.value()[0];
  };

  const T first = evaluate(inputs);
  const T second = evaluate(inputs);
  if (std::memcmp(&first, &second, sizeof(T)) != 0)
    throw NondeterminismError("grad_check: two identical evaluations disagree");

  std::vector<Var<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(make_leaf(x, true));
  {
    Tape<T> tape;
    const Var<T> loss = f(tape, leaves);
    tape.backward(loss);
  }

  GradCheckReport<T> rep;
  std::vector<Tensor<T>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<T> analytic = leaves[i].grad();
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const T orig = probe[i][j];
      probe[i][j] = orig + eps;
      const T fp = evaluate(probe);
      probe[i][j] = orig - eps;
      const T fm = evaluate(probe);
      probe[i][j] = orig;
      const T num = (fp - fm) / (T(2) * eps);
      const T a = analytic[j];
      const T err = std::abs(a - num) / std::max(T(1e-8), std::abs(a) + std::abs(num));
      ++rep.coordinates;
      if (err > rep.max_relative_error || rep.coordinates == 1) {
        rep.max_relative_error = err;
        rep.worst_input = i;
        rep.worst_index = j;
        rep.analytic = a;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

template <class T>
T grad_check(const ScalarFn<T>& f, const std::vector<Tensor<T>>& inputs, T eps) {
  return grad_check_report(f, inputs, eps).max_relative_error;
}

}  // namespace scv
