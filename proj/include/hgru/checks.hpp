#pragma once

// Finite-difference gradient suites shared by the CLI and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include "hgru/grad_check.hpp"
#include "hgru/random.hpp"
#include "hgru/recurrent.hpp"

namespace hgru {

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};

struct GradCheckCase {
  std::string name;
  ScalarFn f;
  std::vector<Tensor<double>> inputs;
};

/// Module names: "ops", "convgru", "coordconvgru", "network", or "all".
std::vector<GradCheckCase> grad_check_cases(const std::string& module, std::uint64_t seed);

/// Module names: "ops", "convgru", "coordconvgru", "network", or "all".
std::vector<NamedGradCheck> grad_check_suite(const std::string& module, std::uint64_t seed, double eps = 1e-5);

/// Random tensor with entries uniform in [lo, hi).
Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0);

/// Random cell weights, entries uniform in [-scale, scale).
GruParams<double> random_gru(Rng& rng, std::size_t channels, std::size_t kernel = 3, double scale = 0.3);
CoordGruParams<double> random_coord_gru(Rng& rng, std::size_t channels, std::size_t kernel = 3, double scale = 0.3);

}  // namespace hgru
