#pragma once

#include <functional>
#include <string>
#include <vector>

#include "roie/tensor.hpp"

namespace roie {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Entries whose analytic/numeric discrepancy is below this are accepted
  // regardless of relative error.
  double abs_floor = 1e-7;
  // Applied to each analytic gradient before comparison. Only used to build
  // negative controls.
  std::function<void(const std::string& name, std::vector<double>& grad)> analytic_hook;
};

struct GradCheckEntry {
  std::string name;
  int64_t elements = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
  std::string summary() const;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Compares backward() gradients of `loss_fn` against central differences for
// every element of every listed tensor. loss_fn must rebuild the graph from
// the current tensor values on every call. Failures are reported, not thrown.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss_fn,
                           const std::vector<NamedTensor<T>>& wrt,
                           const GradCheckOptions& options = {});

// Relative error with the absolute floor applied; 0 when within the floor.
double gradient_error(double analytic, double numeric, double abs_floor);

}  // namespace roie
