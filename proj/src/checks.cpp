#include "hgru/checks.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "hgru/hourglass.hpp"

namespace hgru {

Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

namespace {

template <typename P>
void fill_random(P& p, Rng& rng, double scale) {
  for (Tensor<double>* t : {&p.w_hz, &p.w_xz, &p.w_hr, &p.w_xr, &p.w_h, &p.w_x, &p.b_z, &p.b_r, &p.b}) {
    for (auto& v : t->data()) v = rng.uniform(-scale, scale);
  }
}

std::vector<Tensor<double>> gru_tensors(const GruWeights<double>& p) {
  return {p.w_hz, p.w_xz, p.w_hr, p.w_xr, p.w_h, p.w_x, p.b_z, p.b_r, p.b};
}

// Weighted sum with a fixed random mask so every output element gets a distinct sensitivity.
Var<double> project(Var<double> v, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(v, v.tape->constant(random_tensor(rng, v.shape()))));
}

using Unary = std::function<Var<double>(Var<double>)>;

void op_cases(std::vector<GradCheckCase>& out, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<Shape> shapes{{1, 2, 2}, {2, 4, 6}, {3, 6, 4}};
  auto check = [&](const std::string& name, const ScalarFn& f, std::vector<Tensor<double>> inputs) {
    out.push_back({name, f, std::move(inputs)});
  };
  const std::vector<std::pair<std::string, Unary>> unary{
      {"maxpool2", [](Var<double> x) { return maxpool2(x); }},
      {"upsample2", [](Var<double> x) { return upsample2(x); }},
      {"sigmoid", [](Var<double> x) { return sigmoid(x); }},
      {"tanh", [](Var<double> x) { return hgru::tanh(x); }},
      {"relu", [](Var<double> x) { return relu(x); }},
      {"one_minus", [](Var<double> x) { return one_minus(x); }},
      {"slice_channels", [](Var<double> x) { return slice_channels(x, 0, (x.shape()[0] + 1) / 2); }},
      {"scale", [](Var<double> x) { return scale(x, -1.7); }},
  };
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    const Shape& s = shapes[si];
    const std::string tag = "[" + shape_str(s) + "]";
    const std::uint64_t mask = derive_seed(seed, 100 + si);
    for (const auto& [name, fn] : unary) {
      check(name + tag, [fn, mask](Tape<double>&, std::span<const Var<double>> v) { return project(fn(v[0]), mask); },
            {random_tensor(rng, s)});
    }
    check("sum" + tag, [](Tape<double>&, std::span<const Var<double>> v) { return sum(v[0]); }, {random_tensor(rng, s)});
    for (const auto& [name, bin] : std::vector<std::pair<std::string, std::function<Var<double>(Var<double>, Var<double>)>>>{
             {"add", [](Var<double> a, Var<double> b) { return add(a, b); }},
             {"sub", [](Var<double> a, Var<double> b) { return sub(a, b); }},
             {"mul", [](Var<double> a, Var<double> b) { return mul(a, b); }}}) {
      check(name + tag,
            [bin, mask](Tape<double>&, std::span<const Var<double>> v) { return project(bin(v[0], v[1]), mask); },
            {random_tensor(rng, s), random_tensor(rng, s)});
    }
    Shape other = s;
    other[0] = si + 2;
    check("concat_channels" + tag,
          [mask](Tape<double>&, std::span<const Var<double>> v) { return project(concat_channels(v[0], v[1]), mask); },
          {random_tensor(rng, s), random_tensor(rng, other)});
    const std::size_t k = 2 * si + 1;
    const std::size_t cout = si + 1;
    check("conv2d_k" + std::to_string(k) + tag,
          [mask](Tape<double>&, std::span<const Var<double>> v) { return project(conv2d(v[0], v[1], v[2]), mask); },
          {random_tensor(rng, s), random_tensor(rng, {cout, s[0], k, k}), random_tensor(rng, {cout})});
    Tensor<double> z = random_tensor(rng, s, 0.0, 1.0);
    check("sigmoid_ce_mean" + tag,
          [z](Tape<double>&, std::span<const Var<double>> v) { return sigmoid_ce_mean(v[0], z); },
          {random_tensor(rng, s, -4.0, 4.0)});
  }
  // Composed conv -> sigmoid -> sum.
  check("conv_sigmoid_sum",
        [](Tape<double>&, std::span<const Var<double>> v) { return sum(sigmoid(conv2d(v[0], v[1], v[2]))); },
        {random_tensor(rng, {2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
}

template <typename P>
void cell_case(std::vector<GradCheckCase>& out, const std::string& name, bool coords, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t c = 3;
  P p = P::zeros(c, 3);
  fill_random(p, rng, 0.3);
  std::vector<Tensor<double>> inputs = gru_tensors(p);
  inputs.push_back(random_tensor(rng, {c, 6, 5}));
  inputs.push_back(random_tensor(rng, {c, 6, 5}));
  const std::uint64_t m1 = derive_seed(seed, 1), m2 = derive_seed(seed, 2), m3 = derive_seed(seed, 3);
  const ScalarFn f = [=](Tape<double>&, std::span<const Var<double>> v) {
    const GruVars<double> g{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    const auto step = gru_step(g, v[9], v[10], coords);
    return add(add(project(step.h, m1), project(step.z, m2)), project(step.r, m3));
  };
  out.push_back({name, f, std::move(inputs)});
}

void network_case(std::vector<GradCheckCase>& out, CellKind cell, std::uint64_t seed) {
  NetConfig cfg;
  cfg.image_channels = 1;
  cfg.channels = 4;
  cfg.keypoints = 2;
  cfg.kernel = 3;
  cfg.stacks = 2;
  cfg.cell = cell;
  HourglassWeights<double> w = HourglassWeights<double>::xavier(cfg, seed);
  Rng rng(derive_seed(seed, 1));
  // He gain
  for (std::size_t i = 0; i < w.count(); ++i) {
    if (w.tensor(i).rank() == 1) {
      for (auto& v : w.tensor(i).data()) v = rng.uniform(-0.1, 0.1);
    } else {
      for (auto& v : w.tensor(i).data()) v *= std::sqrt(2.0);
    }
  }
  const std::size_t frames = 2, h = 16;
  std::vector<Tensor<double>> images;
  for (std::size_t t = 0; t < frames; ++t) images.push_back(random_tensor(rng, {1, h, h}, 0.0, 1.0));
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < w.count(); ++i) inputs.push_back(w.tensor(i));
  const std::uint64_t mask = rng.next();
  const ScalarFn f = [=](Tape<double>&, std::span<const Var<double>> v) {
    const NetVars<double> net = bind_vars(w, std::vector<Var<double>>(v.begin(), v.end()));
    const auto heatmaps = sequence_forward(*v[0].tape, net, std::span<const Tensor<double>>(images));
    Var<double> out = project(heatmaps[0], mask);
    for (std::size_t i = 1; i < heatmaps.size(); ++i) out = add(out, project(heatmaps[i], derive_seed(mask, i)));
    return out;
  };
  out.push_back({"network_" + std::string(to_string(cell)), f, std::move(inputs)});
}

}  // namespace

template <typename P>
static P random_cell(Rng& rng, std::size_t channels, std::size_t kernel, double scale) {
  P p = P::zeros(channels, kernel);
  fill_random(p, rng, scale);
  return p;
}

GruParams<double> random_gru(Rng& rng, std::size_t channels, std::size_t kernel, double scale) {
  return random_cell<GruParams<double>>(rng, channels, kernel, scale);
}

CoordGruParams<double> random_coord_gru(Rng& rng, std::size_t channels, std::size_t kernel, double scale) {
  return random_cell<CoordGruParams<double>>(rng, channels, kernel, scale);
}

std::vector<GradCheckCase> grad_check_cases(const std::string& module, std::uint64_t seed) {
  const bool all = module == "all";
  if (!all && module != "ops" && module != "convgru" && module != "coordconvgru" && module != "network") {
    throw std::invalid_argument("unknown grad-check module '" + module +
                                "' (expected ops, convgru, coordconvgru, network or all)");
  }
  std::vector<GradCheckCase> out;
  if (all || module == "ops") op_cases(out, derive_seed(seed, 1));
  if (all || module == "convgru") cell_case<GruParams<double>>(out, "convgru_step", false, derive_seed(seed, 2));
  if (all || module == "coordconvgru") {
    cell_case<CoordGruParams<double>>(out, "coordconvgru_step", true, derive_seed(seed, 3));
  }
  if (all || module == "network") {
    for (CellKind c : {CellKind::none, CellKind::convgru, CellKind::coordconvgru}) {
      network_case(out, c, derive_seed(seed, 4));
    }
  }
  return out;
}

std::vector<NamedGradCheck> grad_check_suite(const std::string& module, std::uint64_t seed, double eps) {
  std::vector<NamedGradCheck> out;
  for (const auto& c : grad_check_cases(module, seed)) out.push_back({c.name, grad_check(c.f, c.inputs, eps)});
  return out;
}

}  // namespace hgru
