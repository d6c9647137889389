#pragma once

// Central-difference gradient checking.

#include <functional>
#include <string>
#include <vector>

#include "catr/tensor.hpp"

namespace catr {

// max over coordinates of |analytic - numeric| / max(1, |numeric|), where the
// analytic gradient comes from one backward pass of f and the numeric one from
// (f(x + eps) - f(x - eps)) / (2 eps). f must return a single-element tensor
// and is re-evaluated in place after each coordinate perturbation.
double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double eps = 1e-5);
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

struct GradcheckCase {
  std::string name;
  // Builds fresh inputs and returns the worst relative error.
  std::function<double(double eps)> run;
};

// Every differentiable op and module at fixed tiny shapes.
const std::vector<GradcheckCase>& gradcheck_registry();

struct GradcheckEntry {
  std::string name;
  double error = 0.0;
  bool passed = false;
};

std::vector<GradcheckEntry> gradcheck_all(double eps = 1e-5, double tolerance = 1e-4);

}  // namespace catr
