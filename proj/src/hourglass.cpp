#include "hgru/hourglass.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "hgru/binary_io.hpp"
#include "hgru/random.hpp"

namespace hgru {

void NetConfig::validate() const {
  if (image_channels == 0 || channels == 0 || keypoints == 0 || stacks == 0) {
    throw std::invalid_argument("network config: channel, keypoint and stack counts must be positive");
  }
  if (kernel % 2 == 0) throw std::invalid_argument("network config: kernel must be odd");
}

namespace {

std::string stack_prefix(std::size_t s) { return "hg" + std::to_string(s) + "."; }
std::string level_name(const char* what, std::size_t level) { return what + std::to_string(level); }

const char* const kGruNames[9] = {"w_hz", "w_xz", "w_hr", "w_xr", "w_h", "w_x", "b_z", "b_r", "b"};

std::vector<std::pair<std::string, Shape>> param_layout(const NetConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, k = cfg.kernel;
  std::vector<std::pair<std::string, Shape>> out;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t kk) {
    out.emplace_back(name + ".w", Shape{cout, cin, kk, kk});
    out.emplace_back(name + ".b", Shape{cout});
  };
  conv("pre", c, cfg.image_channels, k);
  for (std::size_t s = 0; s < cfg.stacks; ++s) {
    const std::string p = stack_prefix(s);
    for (std::size_t l = 1; l <= kLevels; ++l) conv(p + level_name("enc", l), c, c, k);
    conv(p + "mid", c, c, k);
    for (std::size_t l = 1; l <= kLevels; ++l) {
      const std::string skip = p + level_name("skip", l);
      if (cfg.cell == CellKind::none) {
        conv(skip, c, c, k);
      } else {
        const std::size_t cin = c + (cfg.cell == CellKind::coordconvgru ? kCoordChannels : 0);
        for (int i = 0; i < 6; ++i) out.emplace_back(skip + "." + kGruNames[i], Shape{c, cin, k, k});
        for (int i = 6; i < 9; ++i) out.emplace_back(skip + "." + kGruNames[i], Shape{c});
      }
    }
    for (std::size_t l = 1; l <= kLevels; ++l) conv(p + level_name("dec", l), c, c, k);
    conv(p + "head", cfg.keypoints, c, 1);
  }
  for (std::size_t s = 0; s + 1 < cfg.stacks; ++s) conv("remap" + std::to_string(s), c, cfg.keypoints, 1);
  return out;
}

template <typename T>
void require_even_levels(const Shape& s, const char* what) {
  if (s.size() != 3 || s[1] % kSpatialMultiple != 0 || s[2] % kSpatialMultiple != 0) {
    throw ShapeError(std::string(what) + ": spatial dims must be divisible by " + std::to_string(kSpatialMultiple) +
                     ", got " + shape_str(s));
  }
}

template <typename T>
Var<T> conv_relu(Var<T> x, const ConvVars<T>& c) {
  return relu(conv2d(x, c.w, c.b));
}

}  // namespace

template <typename T>
HourglassWeights<T>::HourglassWeights(NetConfig cfg) : cfg_(cfg) {
  for (auto& [name, shape] : param_layout(cfg_)) add(name, Tensor<T>(shape));
}

template <typename T>
HourglassWeights<T> HourglassWeights<T>::zeros(const NetConfig& cfg) {
  return HourglassWeights(cfg);
}

template <typename T>
HourglassWeights<T> HourglassWeights<T>::xavier(const NetConfig& cfg, std::uint64_t seed) {
  HourglassWeights w(cfg);
  Rng rng(seed);
  for (std::size_t i = 0; i < w.count(); ++i) {
    Tensor<T>& t = w.tensor(i);
    if (t.rank() != 4) continue;
    const double area = static_cast<double>(t.dim(2) * t.dim(3));
    const double limit = std::sqrt(6.0 / ((static_cast<double>(t.dim(0)) + static_cast<double>(t.dim(1))) * area));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  return w;
}

template <typename T>
void HourglassWeights<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

template <typename T>
Tensor<T>& HourglassWeights<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& HourglassWeights<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
std::size_t param_count(const HourglassWeights<T>& w) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < w.count(); ++i) n += w.tensor(i).size();
  return n;
}

template <typename T>
HiddenStates<T> HiddenStates<T>::zeros(const NetConfig& cfg, std::size_t height, std::size_t width) {
  if (height % kSpatialMultiple || width % kSpatialMultiple) {
    throw ShapeError("hidden states: spatial dims must be divisible by " + std::to_string(kSpatialMultiple));
  }
  HiddenStates out;
  for (std::size_t s = 0; s < cfg.stacks; ++s) {
    for (std::size_t l = 1; l <= kLevels; ++l) {
      out.tensors.push_back(init_hidden<T>(cfg.channels, height >> l, width >> l));
    }
  }
  return out;
}

template <typename T>
NetVars<T> bind_leaves(Tape<T>& tape, const HourglassWeights<T>& w) {
  std::vector<Var<T>> params;
  for (std::size_t i = 0; i < w.count(); ++i) params.push_back(tape.leaf(w.tensor(i)));
  return bind_vars(w, std::move(params));
}

template <typename T>
NetVars<T> bind_vars(const HourglassWeights<T>& w, std::vector<Var<T>> params) {
  if (params.size() != w.count()) {
    throw std::invalid_argument("bind_vars: " + std::to_string(params.size()) + " handles for " +
                                std::to_string(w.count()) + " parameters");
  }
  NetVars<T> net;
  net.cfg = w.config();
  net.params = std::move(params);
  std::unordered_map<std::string, Var<T>> by_name;
  for (std::size_t i = 0; i < w.count(); ++i) {
    if (net.params[i].shape() != w.tensor(i).shape()) {
      throw ShapeError("bind_vars: handle for '" + w.name(i) + "' has shape " + shape_str(net.params[i].shape()));
    }
    by_name.emplace(w.name(i), net.params[i]);
  }
  auto get = [&](const std::string& n) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw std::invalid_argument("weights are missing parameter '" + n + "'");
    return it->second;
  };
  auto conv = [&](const std::string& n) { return ConvVars<T>{get(n + ".w"), get(n + ".b")}; };

  net.pre = conv("pre");
  for (std::size_t s = 0; s < net.cfg.stacks; ++s) {
    const std::string p = stack_prefix(s);
    StackVars<T> sv;
    for (std::size_t l = 1; l <= kLevels; ++l) {
      sv.enc[l - 1] = conv(p + level_name("enc", l));
      sv.dec[l - 1] = conv(p + level_name("dec", l));
      const std::string skip = p + level_name("skip", l);
      if (net.cfg.cell == CellKind::none) {
        sv.skip[l - 1] = conv(skip);
      } else {
        auto g = [&](int i) { return get(skip + "." + kGruNames[i]); };
        sv.cell[l - 1] = GruVars<T>{g(0), g(1), g(2), g(3), g(4), g(5), g(6), g(7), g(8)};
      }
    }
    sv.mid = conv(p + "mid");
    sv.head = conv(p + "head");
    net.stacks.push_back(sv);
  }
  for (std::size_t s = 0; s + 1 < net.cfg.stacks; ++s) net.remap.push_back(conv("remap" + std::to_string(s)));
  return net;
}

template <typename T>
HourglassOutput<T> hourglass_forward(const StackVars<T>& w, Var<T> x, std::span<const Var<T>> states_in,
                                     CellKind cell) {
  require_even_levels<T>(x.shape(), "hourglass_forward");
  const std::size_t h = x.shape()[1], wd = x.shape()[2];
  if (cell != CellKind::none) {
    if (states_in.size() != kLevels) {
      throw ShapeError("hourglass_forward: expected " + std::to_string(kLevels) + " states, got " +
                       std::to_string(states_in.size()));
    }
    for (std::size_t l = 1; l <= kLevels; ++l) {
      const Shape expect{x.shape()[0], h >> l, wd >> l};
      if (states_in[l - 1].shape() != expect) {
        throw ShapeError("hourglass_forward: level " + std::to_string(l) + " state has shape " +
                         shape_str(states_in[l - 1].shape()) + ", expected " + shape_str(expect));
      }
    }
  }

  HourglassOutput<T> out;
  std::array<Var<T>, kLevels> skips;
  Var<T> f = x;
  for (std::size_t l = 0; l < kLevels; ++l) {
    f = maxpool2(conv_relu(f, w.enc[l]));
    if (cell == CellKind::none) {
      skips[l] = conv_relu(f, w.skip[l]);
      if (states_in.size() == kLevels) out.states[l] = states_in[l];
    } else {
      const auto step = gru_step(w.cell[l], states_in[l], f, cell == CellKind::coordconvgru);
      skips[l] = step.h;
      out.states[l] = step.h;
    }
  }
  Var<T> d = conv_relu(f, w.mid);
  for (std::size_t l = kLevels; l-- > 0;) {
    d = conv_relu(upsample2(add(d, skips[l])), w.dec[l]);
  }
  out.features = d;
  out.heatmaps = conv2d(d, w.head.w, w.head.b);
  return out;
}

template <typename T>
StackedOutput<T> stacked_forward(const NetVars<T>& net, Var<T> image, std::span<const Var<T>> states_in) {
  const NetConfig& cfg = net.cfg;
  require_even_levels<T>(image.shape(), "stacked_forward");
  if (image.shape()[0] != cfg.image_channels) {
    throw ShapeError("stacked_forward: image has " + std::to_string(image.shape()[0]) + " channels, network expects " +
                     std::to_string(cfg.image_channels));
  }
  if (states_in.size() != cfg.stacks * kLevels) {
    throw ShapeError("stacked_forward: expected " + std::to_string(cfg.stacks * kLevels) + " states, got " +
                     std::to_string(states_in.size()));
  }
  StackedOutput<T> out;
  Var<T> x = conv_relu(image, net.pre);
  for (std::size_t s = 0; s < cfg.stacks; ++s) {
    const auto r = hourglass_forward(net.stacks[s], x, states_in.subspan(s * kLevels, kLevels), cfg.cell);
    out.heatmaps.push_back(r.heatmaps);
    out.states.insert(out.states.end(), r.states.begin(), r.states.end());
    if (s + 1 < cfg.stacks) x = add(r.features, conv2d(r.heatmaps, net.remap[s].w, net.remap[s].b));
  }
  return out;
}

template <typename T>
std::vector<Var<T>> sequence_forward(Tape<T>& tape, const NetVars<T>& net, std::span<const Tensor<T>> frames) {
  if (frames.empty()) throw std::invalid_argument("sequence_forward: empty sequence");
  for (const auto& f : frames) {
    if (f.shape() != frames[0].shape()) throw ShapeError("sequence_forward: frames must share one shape");
  }
  require_even_levels<T>(frames[0].shape(), "sequence_forward");
  const HiddenStates<T> zero = HiddenStates<T>::zeros(net.cfg, frames[0].dim(1), frames[0].dim(2));
  std::vector<Var<T>> states;
  for (const auto& t : zero.tensors) states.push_back(tape.constant(t));
  std::vector<Var<T>> heatmaps;
  for (const auto& frame : frames) {
    auto r = stacked_forward(net, tape.constant(frame), std::span<const Var<T>>(states));
    heatmaps.insert(heatmaps.end(), r.heatmaps.begin(), r.heatmaps.end());
    states = std::move(r.states);
  }
  return heatmaps;
}

template <typename T>
StackedResult<T> stacked_forward(const HourglassWeights<T>& w, const Tensor<T>& image,
                                 const HiddenStates<T>& states_in) {
  Tape<T> tape;
  const NetVars<T> net = bind_leaves(tape, w);
  std::vector<Var<T>> states;
  for (const auto& t : states_in.tensors) states.push_back(tape.constant(t));
  const auto r = stacked_forward(net, tape.constant(image), std::span<const Var<T>>(states));
  StackedResult<T> out;
  for (auto v : r.heatmaps) out.heatmaps.push_back(v.value());
  for (auto v : r.states) out.states.tensors.push_back(v.value());
  return out;
}

template <typename T>
std::vector<Tensor<T>> sequence_forward(const HourglassWeights<T>& w, std::span<const Tensor<T>> frames) {
  Tape<T> tape;
  const NetVars<T> net = bind_leaves(tape, w);
  std::vector<Tensor<T>> out;
  for (auto v : sequence_forward(tape, net, frames)) out.push_back(v.value());
  return out;
}

// ---- checkpoints ----------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const HourglassWeights<T>& w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  io::put_bytes(os, "HGCK");
  io::put_u32(os, kCheckpointVersion);
  for (std::size_t i = 0; i < w.count(); ++i) {
    const Tensor<T>& t = w.tensor(i);
    io::put_u32(os, static_cast<std::uint32_t>(w.name(i).size()));
    io::put_bytes(os, w.name(i));
    io::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::put_u32(os, static_cast<std::uint32_t>(d));
    for (auto v : t.data()) io::put_f32(os, static_cast<float>(v));
  }
  os.flush();
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

HourglassWeights<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  if (io::get_bytes(is, 4) != "HGCK") throw FormatError("not a checkpoint (bad magic): " + path.string());
  const std::uint32_t version = io::get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  HourglassWeights<float> w;
  std::uint32_t name_len = 0;
  while (io::try_get_u32(is, name_len)) {
    if (name_len == 0 || name_len > 4096) throw FormatError("corrupt checkpoint: bad name length");
    std::string name = io::get_bytes(is, name_len);
    const std::uint32_t rank = io::get_u32(is);
    if (rank > 8) throw FormatError("corrupt checkpoint: rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = io::get_u32(is);
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = io::get_f32(is);
    w.add(std::move(name), std::move(t));
  }
  w.set_config(infer_config(w));
  return w;
}

NetConfig infer_config(const HourglassWeights<float>& w) {
  if (!w.contains("pre.w") || !w.contains("hg0.head.w")) {
    throw FormatError("checkpoint is missing the pre/head parameters");
  }
  const Tensor<float>& pre = w.get("pre.w");
  const Tensor<float>& head = w.get("hg0.head.w");
  if (pre.rank() != 4 || head.rank() != 4) throw FormatError("checkpoint has malformed conv weights");
  NetConfig cfg;
  cfg.channels = pre.dim(0);
  cfg.image_channels = pre.dim(1);
  cfg.kernel = pre.dim(2);
  cfg.keypoints = head.dim(0);
  cfg.stacks = 0;
  while (w.contains(stack_prefix(cfg.stacks) + "head.w")) ++cfg.stacks;
  if (w.contains("hg0.skip1.w_hz")) {
    cfg.cell = w.get("hg0.skip1.w_hz").dim(1) == cfg.channels + kCoordChannels ? CellKind::coordconvgru
                                                                               : CellKind::convgru;
  } else {
    cfg.cell = CellKind::none;
  }
  const auto layout = param_layout(cfg);
  if (layout.size() != w.count()) {
    throw FormatError("checkpoint has " + std::to_string(w.count()) + " tensors, configuration expects " +
                      std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    if (!w.contains(name) || w.get(name).shape() != shape) {
      throw FormatError("checkpoint parameter '" + name + "' missing or misshaped");
    }
  }
  return cfg;
}

#define HGRU_HOURGLASS(T)                                                                                     \
  template class HourglassWeights<T>;                                                                         \
  template std::size_t param_count<T>(const HourglassWeights<T>&);                                            \
  template struct HiddenStates<T>;                                                                            \
  template NetVars<T> bind_leaves<T>(Tape<T>&, const HourglassWeights<T>&);                                   \
  template NetVars<T> bind_vars<T>(const HourglassWeights<T>&, std::vector<Var<T>>);                          \
  template HourglassOutput<T> hourglass_forward<T>(const StackVars<T>&, Var<T>, std::span<const Var<T>>,      \
                                                   CellKind);                                                 \
  template StackedOutput<T> stacked_forward<T>(const NetVars<T>&, Var<T>, std::span<const Var<T>>);           \
  template std::vector<Var<T>> sequence_forward<T>(Tape<T>&, const NetVars<T>&, std::span<const Tensor<T>>); \
  template StackedResult<T> stacked_forward<T>(const HourglassWeights<T>&, const Tensor<T>&,                  \
                                               const HiddenStates<T>&);                                       \
  template std::vector<Tensor<T>> sequence_forward<T>(const HourglassWeights<T>&, std::span<const Tensor<T>>); \
  template void save_checkpoint<T>(const std::filesystem::path&, const HourglassWeights<T>&);

HGRU_HOURGLASS(float)
HGRU_HOURGLASS(double)

}  // namespace hgru
