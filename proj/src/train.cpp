#include "hgru/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>

#include "hgru/binary_io.hpp"
#include "hgru/random.hpp"

namespace hgru {

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw std::invalid_argument("train config: base_lr must be positive");
  if (!(decay_factor > 0 && decay_factor < 1)) throw std::invalid_argument("train config: decay_factor must lie in (0,1)");
  if (decay_every == 0) throw std::invalid_argument("train config: decay_every must be positive");
  if (!(rho >= 0 && rho < 1)) throw std::invalid_argument("train config: rho must lie in [0,1)");
  if (!(epsilon > 0)) throw std::invalid_argument("train config: epsilon must be positive");
  if (phase1_batch == 0 || phase2_batch == 0) throw std::invalid_argument("train config: batch sizes must be positive");
  if (sequence_length == 0) throw std::invalid_argument("train config: sequence_length must be positive");
  if (plateau_switch && plateau_window == 0) throw std::invalid_argument("train config: plateau_window must be positive");
  if (channels == 0 || stacks == 0 || kernel % 2 == 0) {
    throw std::invalid_argument("train config: channels/stacks must be positive and the kernel odd");
  }
  if (!(heatmap_sigma > 0)) throw std::invalid_argument("train config: heatmap_sigma must be positive");
}

NetConfig TrainConfig::net_config(std::size_t image_channels, std::size_t keypoints) const {
  NetConfig n;
  n.image_channels = image_channels;
  n.channels = channels;
  n.keypoints = keypoints;
  n.kernel = kernel;
  n.stacks = stacks;
  n.cell = cell;
  n.validate();
  return n;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  auto count = [&](const char* key, std::size_t fallback, bool allow_zero = false) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0 || (v == 0 && !allow_zero)) {
      throw std::invalid_argument(std::string("config key '") + key + "' must be " +
                                  (allow_zero ? "non-negative" : "positive"));
    }
    return static_cast<std::size_t>(v);
  };
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.decay_factor = kv.get_double("decay_factor", c.decay_factor);
  c.decay_every = count("decay_every", c.decay_every);
  c.rho = kv.get_double("rho", c.rho);
  c.epsilon = kv.get_double("epsilon", c.epsilon);
  c.phase1_batch = count("phase1_batch", c.phase1_batch);
  c.phase1_steps = count("phase1_steps", c.phase1_steps, true);
  c.phase2_batch = count("phase2_batch", c.phase2_batch);
  c.phase2_steps = count("phase2_steps", c.phase2_steps, true);
  c.sequence_length = count("sequence_length", c.sequence_length);
  c.plateau_switch = kv.get_bool("plateau_switch", c.plateau_switch);
  c.plateau_window = count("plateau_window", c.plateau_window);
  c.plateau_rel = kv.get_double("plateau_rel", c.plateau_rel);
  c.channels = count("channels", c.channels);
  c.stacks = count("stacks", c.stacks);
  c.kernel = count("kernel", c.kernel);
  if (auto cell = kv.get("cell")) c.cell = parse_cell_kind(*cell);
  c.heatmap_sigma = kv.get_double("heatmap_sigma", c.heatmap_sigma);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.checkpoint_every = count("checkpoint_every", c.checkpoint_every, true);
  c.validate();
  return c;
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  return cfg.base_lr * std::pow(cfg.decay_factor, static_cast<double>(step / cfg.decay_every));
}

template <typename T>
OptimState<T> OptimState<T>::zeros_like(const HourglassWeights<T>& w, double rho, double epsilon) {
  OptimState s;
  s.rho = rho;
  s.epsilon = epsilon;
  for (std::size_t i = 0; i < w.count(); ++i) s.acc.emplace_back(w.tensor(i).shape());
  return s;
}

template <typename T>
void rmsprop_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& acc, double rho, double epsilon, double lr) {
  require_same_shape(param, grad, "rmsprop_step grad");
  require_same_shape(param, acc, "rmsprop_step accumulator");
  auto p = param.data();
  auto g = grad.data();
  auto a = acc.data();
  const T r = static_cast<T>(rho), one_r = static_cast<T>(1.0 - rho), e = static_cast<T>(epsilon),
          step = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    a[i] = r * a[i] + one_r * g[i] * g[i];
    p[i] -= step * g[i] / (std::sqrt(a[i]) + e);
  }
}

template <typename T>
void rmsprop_step(HourglassWeights<T>& w, std::span<const Tensor<T>> grads, OptimState<T>& state, double lr) {
  if (grads.size() != w.count() || state.acc.size() != w.count()) {
    throw ShapeError("rmsprop_step: " + std::to_string(w.count()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.acc.size()) + " accumulators");
  }
  for (std::size_t i = 0; i < w.count(); ++i) {
    rmsprop_step(w.tensor(i), grads[i], state.acc[i], state.rho, state.epsilon, lr);
  }
  ++state.step;
}

namespace {
constexpr std::uint32_t kOptimVersion = 1;
}

void save_optim_state(const std::filesystem::path& path, const OptimState<float>& s) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open optimizer state for writing: " + path.string());
  io::put_bytes(os, "HGOS");
  io::put_u32(os, kOptimVersion);
  io::put_u32(os, static_cast<std::uint32_t>(s.step));
  io::put_u32(os, static_cast<std::uint32_t>(static_cast<std::uint64_t>(s.step) >> 32));
  io::put_f64(os, s.rho);
  io::put_f64(os, s.epsilon);
  for (const auto& a : s.acc) {
    for (float v : a.data()) io::put_f32(os, v);
  }
  if (!os.flush()) throw IoError("failed writing optimizer state: " + path.string());
}

OptimState<float> load_optim_state(const std::filesystem::path& path, const HourglassWeights<float>& like) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open optimizer state: " + path.string());
  if (io::get_bytes(is, 4) != "HGOS") throw FormatError("not an optimizer state file: " + path.string());
  if (io::get_u32(is) != kOptimVersion) throw FormatError("unsupported optimizer state version");
  const std::uint64_t lo = io::get_u32(is), hi = io::get_u32(is);
  const double rho = io::get_f64(is), eps = io::get_f64(is);
  OptimState<float> s = OptimState<float>::zeros_like(like, rho, eps);
  s.step = static_cast<std::size_t>(lo | hi << 32);
  for (auto& a : s.acc) {
    for (float& v : a.data()) v = io::get_f32(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in optimizer state");
  return s;
}

std::string format_trace_line(const TraceEntry& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "step=%zu lr=%.9g loss=%.9g", e.step, e.lr, e.loss);
  return buf;
}

SampleGrad sample_gradient(const HourglassWeights<float>& w, std::span<const Tensor<float>> frames,
                           std::span<const Tensor<float>> targets) {
  if (frames.size() != targets.size()) throw ShapeError("sample_gradient: one target stack per frame required");
  Tape<float> tape;
  const NetVars<float> net = bind_leaves(tape, w);
  const auto heatmaps = sequence_forward(tape, net, frames);
  const std::size_t stacks = w.config().stacks;
  Var<float> loss = sigmoid_ce_mean(heatmaps[0], targets[0]);
  for (std::size_t i = 1; i < heatmaps.size(); ++i) loss = add(loss, sigmoid_ce_mean(heatmaps[i], targets[i / stacks]));
  Gradients<float> g = tape.backward(loss);
  SampleGrad out;
  out.loss = loss.value().item();
  for (auto p : net.params) out.grads.push_back(g.take(p));
  return out;
}

namespace {

std::vector<std::vector<Tensor<float>>> render_targets(const Dataset& data, double sigma) {
  std::vector<std::vector<Tensor<float>>> out(data.sequences.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const auto& s = data.sequences[i];
    for (std::size_t t = 0; t < s.length(); ++t) {
      out[i].push_back(render_heatmap<float>(s.labels[t], data.manifest.height, data.manifest.width, sigma));
    }
  }
  return out;
}

struct Pick {
  std::size_t seq, first, len;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  cfg.validate();
  if (data.sequences.empty()) throw std::invalid_argument("train: dataset has no sequences");
  const auto& m = data.manifest;
  const NetConfig net = cfg.net_config(m.image_channels, m.keypoints);
  if (m.height % kSpatialMultiple != 0 || m.width % kSpatialMultiple != 0) {
    throw ShapeError("train: image size " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                     " is not divisible by " + std::to_string(kSpatialMultiple));
  }
  if (cfg.sequence_length > m.frames) {
    throw std::invalid_argument("train: sequence_length " + std::to_string(cfg.sequence_length) +
                                " exceeds the dataset's " + std::to_string(m.frames) + " frames");
  }

  TrainResult r;
  if (opts.initial) {
    if (!(opts.initial->config() == net)) throw std::invalid_argument("train: resume checkpoint does not match the config");
    r.weights = *opts.initial;
  } else {
    r.weights = HourglassWeights<float>::xavier(net, derive_seed(cfg.seed, 0));
  }
  r.optim = opts.initial_optim ? *opts.initial_optim : OptimState<float>::zeros_like(r.weights, cfg.rho, cfg.epsilon);
  if (r.optim.acc.size() != r.weights.count()) throw std::invalid_argument("train: optimizer state does not match weights");

  const auto targets = render_targets(data, cfg.heatmap_sigma);
  auto save = [&]() {
    if (!opts.checkpoint) return;
    save_checkpoint(*opts.checkpoint, r.weights);
    save_optim_state(opts.checkpoint->string() + ".opt", r.optim);
  };

  std::size_t phase1_end = cfg.phase1_steps;
  std::size_t total = cfg.total_steps();
  std::vector<double> phase1_losses;
  std::vector<Tensor<float>> grad_sum;
  for (std::size_t step = r.optim.step; step < total; ++step) {
    const bool phase1 = step < phase1_end;
    const std::size_t batch = phase1 ? cfg.phase1_batch : cfg.phase2_batch;
    Rng rng(derive_seed(derive_seed(cfg.seed, 10), step));
    std::vector<Pick> picks(batch);
    for (auto& p : picks) {
      p.seq = static_cast<std::size_t>(rng.index(data.sequences.size()));
      if (phase1) {
        p.first = static_cast<std::size_t>(rng.index(m.frames));
        p.len = 1;
      } else {
        p.first = static_cast<std::size_t>(rng.index(m.frames - cfg.sequence_length + 1));
        p.len = cfg.sequence_length;
      }
    }

    std::vector<SampleGrad> parts(batch);
    std::vector<std::exception_ptr> errors(batch);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t b = 0; b < batch; ++b) {
      try {
        const auto& s = data.sequences[picks[b].seq];
        parts[b] = sample_gradient(r.weights, std::span(s.frames).subspan(picks[b].first, picks[b].len),
                                   std::span(targets[picks[b].seq]).subspan(picks[b].first, picks[b].len));
      } catch (...) {
        errors[b] = std::current_exception();
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    // fixed-order reduction
    double loss = 0;
    grad_sum = std::move(parts[0].grads);
    loss += parts[0].loss;
    for (std::size_t b = 1; b < batch; ++b) {
      loss += parts[b].loss;
      for (std::size_t i = 0; i < grad_sum.size(); ++i) {
        auto dst = grad_sum[i].data();
        auto src = parts[b].grads[i].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    const float inv = 1.0f / static_cast<float>(batch);
    for (auto& g : grad_sum) {
      for (auto& v : g.data()) v *= inv;
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw DivergenceError(step, "training diverged: loss is " + std::to_string(loss) + " at step " + std::to_string(step));
    }

    const double lr = lr_schedule(step, cfg);
    rmsprop_step(r.weights, std::span<const Tensor<float>>(grad_sum), r.optim, lr);
    const TraceEntry entry{step, lr, loss, phase1 ? std::size_t{1} : std::size_t{2}};
    r.trace.push_back(entry);
    if (opts.trace_sink) *opts.trace_sink << format_trace_line(entry) << '\n';
    if (phase1) {
      r.phase1_steps = step + 1;
      phase1_losses.push_back(loss);
      const std::size_t win = cfg.plateau_window;
      if (cfg.plateau_switch && phase1_losses.size() >= 2 * win) {
        const auto end = phase1_losses.end();
        const double prev = std::accumulate(end - 2 * static_cast<long>(win), end - static_cast<long>(win), 0.0);
        const double last = std::accumulate(end - static_cast<long>(win), end, 0.0);
        if ((prev - last) < cfg.plateau_rel * prev) {
          total -= phase1_end - (step + 1);
          phase1_end = step + 1;
        }
      }
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0) save();
  }
  save();
  return r;
}

PckReport evaluate(const HourglassWeights<float>& w, const Dataset& data, std::span<const double> alphas) {
  const auto& m = data.manifest;
  const NetConfig& net = w.config();
  if (net.keypoints != m.keypoints) {
    throw std::invalid_argument("evaluate: checkpoint predicts " + std::to_string(net.keypoints) +
                                " keypoints, dataset has " + std::to_string(m.keypoints));
  }
  if (net.image_channels != m.image_channels) {
    throw std::invalid_argument("evaluate: checkpoint expects " + std::to_string(net.image_channels) +
                                " image channels, dataset has " + std::to_string(m.image_channels));
  }
  for (double a : alphas) {
    if (!(a > 0 && a <= 1)) throw std::invalid_argument("evaluate: alpha must lie in (0,1]");
  }
  const double length = static_cast<double>(std::max(m.height, m.width));
  std::vector<std::vector<PckTally>> per_seq(data.sequences.size());
  std::vector<std::exception_ptr> errors(data.sequences.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    try {
      const auto& s = data.sequences[i];
      const auto heatmaps = sequence_forward(w, std::span<const Tensor<float>>(s.frames));
      for (double a : alphas) per_seq[i].push_back(PckTally{a});
      for (std::size_t t = 0; t < s.length(); ++t) {
        const auto pred = decode_keypoints(heatmaps[t * net.stacks + net.stacks - 1]);
        for (auto& tally : per_seq[i]) tally.add(pred, s.labels[t], length);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  PckReport report;
  for (double a : alphas) report.rows.push_back(PckTally{a});
  for (const auto& seq : per_seq) {
    for (std::size_t j = 0; j < seq.size(); ++j) {
      report.rows[j].correct += seq[j].correct;
      report.rows[j].visible += seq[j].visible;
    }
  }
  return report;
}

BenchResult bench_forward(const HourglassWeights<float>& w, std::size_t height, std::size_t width, std::size_t frames,
                          std::size_t warmup, std::uint64_t seed) {
  if (frames == 0) throw std::invalid_argument("bench: frame count must be positive");
  const NetConfig& cfg = w.config();
  Rng rng(seed);
  std::vector<Tensor<float>> inputs;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<float> img(Shape{cfg.image_channels, height, width});
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    inputs.push_back(std::move(img));
  }
  HiddenStates<float> states = HiddenStates<float>::zeros(cfg, height, width);
  BenchResult r;
  r.cell = cfg.cell;
  for (std::size_t i = 0; i < warmup + frames; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = stacked_forward(w, inputs[i % inputs.size()], states);
    const auto t1 = std::chrono::steady_clock::now();
    states = std::move(out.states);
    if (i >= warmup) r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = r.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return r;
}

template struct OptimState<float>;
template struct OptimState<double>;
template void rmsprop_step<float>(Tensor<float>&, const Tensor<float>&, Tensor<float>&, double, double, double);
template void rmsprop_step<double>(Tensor<double>&, const Tensor<double>&, Tensor<double>&, double, double, double);
template void rmsprop_step<float>(HourglassWeights<float>&, std::span<const Tensor<float>>, OptimState<float>&, double);
template void rmsprop_step<double>(HourglassWeights<double>&, std::span<const Tensor<double>>, OptimState<double>&,
                                   double);

}  // namespace hgru
