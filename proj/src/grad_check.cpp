#include "hgru/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace hgru {

std::vector<std::uint32_t> branch_pattern(const Tape<double>& tape) {
  std::vector<std::uint32_t> out;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto& node = tape.node(id);
    if (node.kind == OpKind::relu) {
      for (double v : tape.value(node.inputs[0]).data()) out.push_back(v > 0 ? 1 : 0);
    } else if (node.kind == OpKind::maxpool2) {
      const Tensor<double>& x = tape.value(node.inputs[0]);
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; y += 2) {
          for (std::size_t xx = 0; xx < w; xx += 2) {
            std::uint32_t best = 0;
            double bv = x.at(ch, y, xx);
            for (std::uint32_t j = 1; j < 4; ++j) {
              const double v = x.at(ch, y + j / 2, xx + j % 2);
              if (v > bv) {
                bv = v;
                best = j;
              }
            }
            out.push_back(best);
          }
        }
      }
    }
  }
  return out;
}

namespace {

struct Probe {
  double value;
  std::vector<std::uint32_t> pattern;
};

Probe evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  Var<double> out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  return Probe{out.value()[0], branch_pattern(tape)};
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");

  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var<double> out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must be scalar-valued, got shape " + shape_str(out.shape()));
  }
  const Gradients<double> grads = tape.backward(out);
  const std::vector<std::uint32_t> base = branch_pattern(tape);

  GradCheckResult result;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = grads.of(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + eps;
      const Probe fp = evaluate(f, probe);
      probe[k][i] = orig - eps;
      const Probe fm = evaluate(f, probe);
      probe[k][i] = orig;
      if (fp.pattern != base || fm.pattern != base) {
        ++result.kinks;
        continue;
      }
      const double numeric = (fp.value - fm.value) / (2 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (err >= 1e-4) ++result.over_1e4;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace hgru
