#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hgru/autodiff.hpp"

namespace hgru {

/// Builds a scalar on the given tape from leaf handles (one per input, same order).
using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;     // elements whose +-eps probe switched a ReLU side or max-pool winner
  std::size_t over_1e4 = 0;  // checked elements with relative error >= 1e-4
};

/// Which side of every ReLU hinge and which max-pool winner a recorded forward pass took.
std::vector<std::uint32_t> branch_pattern(const Tape<double>& tape);

/// Compares tape gradients against central differences over every element of every input.
/// Relative error per element is |a - n| / max(|a|, |n|, 1e-8). An element whose +-eps probe
/// changes the ReLU/max-pool branch pattern has no valid central difference; it is counted in
/// `kinks` and left out of the maximum.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps = 1e-5);

}  // namespace hgru
