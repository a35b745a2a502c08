#include "roie/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace roie {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double worst = 0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.passed ? "ok   " : "FAIL ") << e.name << " n=" << e.elements
       << " max_rel=" << e.max_rel_error << " max_abs=" << e.max_abs_error << "\n";
  }
  return os.str();
}

double gradient_error(double analytic, double numeric, double abs_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss_fn,
                           const std::vector<NamedTensor<T>>& wrt,
                           const GradCheckOptions& options) {
  for (const auto& nt : wrt) {
    auto t = nt.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());

  GradCheckReport report;
  for (const auto& nt : wrt) {
    Tensor<T> t = nt.tensor;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (options.analytic_hook) options.analytic_hook(nt.name, analytic);

    GradCheckEntry entry;
    entry.name = nt.name;
    entry.elements = t.numel();
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = static_cast<T>(original + options.step);
        plus = static_cast<double>(loss_fn().item());
        values[i] = static_cast<T>(original - options.step);
        minus = static_cast<double>(loss_fn().item());
        values[i] = original;
      }
      const double numeric = (plus - minus) / (2 * options.step);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic[i] - numeric));
      entry.max_rel_error =
          std::max(entry.max_rel_error, gradient_error(analytic[i], numeric, options.abs_floor));
    }
    entry.passed = entry.max_rel_error <= options.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport grad_check(const std::function<Tensor<float>()>&,
                                    const std::vector<NamedTensor<float>>&,
                                    const GradCheckOptions&);
template GradCheckReport grad_check(const std::function<Tensor<double>()>&,
                                    const std::vector<NamedTensor<double>>&,
                                    const GradCheckOptions&);

}  // namespace roie
