#include "catr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace catr {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const Tensor y = f();
  if (y.numel() != 1) throw DimensionError("gradcheck: function must return one element, got " + shape_str(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
  return v;
}

}  // namespace

double gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double eps) {
  for (Tensor x : inputs) {
    if (!x.requires_grad()) throw ConfigError("gradcheck: every input must require a gradient");
    x.zero_grad();
  }
  const Tensor y = f();
  if (y.numel() != 1) throw DimensionError("gradcheck: function must return one element, got " + shape_str(y.shape()));
  if (!std::isfinite(y.item())) throw NumericError("gradcheck: non-finite function value");
  y.backward();

  double worst = 0.0;
  for (const auto& input : inputs) {
    Tensor x = input;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    for (double a : analytic) {
      if (!std::isfinite(a)) throw NumericError("gradcheck: non-finite analytic gradient");
    }
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = evaluate(f);
      values[i] = saved - eps;
      const double minus = evaluate(f);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  return gradcheck([&] { return f(x); }, std::vector<Tensor>{x}, eps);
}

std::vector<GradcheckEntry> gradcheck_all(double eps, double tolerance) {
  std::vector<GradcheckEntry> out;
  for (const auto& c : gradcheck_registry()) {
    GradcheckEntry e;
    e.name = c.name;
    e.error = c.run(eps);
    e.passed = e.error < tolerance;
    out.push_back(e);
  }
  return out;
}

}  // namespace catr
