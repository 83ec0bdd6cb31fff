// Acceptance runner: one PASS/FAIL line per criterion, followed by a summary.
// Exit status is 0 once every criterion has been evaluated (1 with --strict if any failed).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "hgru/checks.hpp"
#include "hgru/config.hpp"
#include "hgru/dataset.hpp"
#include "hgru/hourglass.hpp"
#include "hgru/metrics.hpp"
#include "hgru/train.hpp"
#include "oracles.hpp"

using namespace hgru;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::directory_iterator(a)) fa.push_back(e.path().filename());
  for (const auto& e : fs::directory_iterator(b)) fb.push_back(e.path().filename());
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  for (const auto& n : fa)
    if (file_bytes(a / n) != file_bytes(b / n)) return false;
  return true;
}

// ---- 1 -----------------------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto results = grad_check_suite("all", 1, 1e-5);
  const double secs = seconds_since(t0);
  std::size_t failed = 0;
  std::string worst;
  double worst_rel = 0;
  for (const auto& r : results) {
    if (r.result.max_rel_error >= 1e-4) {
      ++failed;
      std::printf("    grad-check %-26s max_rel=%.3e over_1e-4=%zu of %zu kinks=%zu\n", r.name.c_str(),
                  r.result.max_rel_error, r.result.over_1e4, r.result.checked, r.result.kinks);
    }
    if (r.result.max_rel_error > worst_rel) {
      worst_rel = r.result.max_rel_error;
      worst = r.name;
    }
  }
  return {failed == 0,
          fmt("%zu/%zu checks below 1e-4, worst %s %.2e, %.1f s (expected < 60 s)", results.size() - failed, results.size(),
              worst.c_str(), worst_rel, secs)};
}

// ---- 2 -----------------------------------------------------------------------------------------

HourglassWeights<double> lift_to_coord(const HourglassWeights<double>& w) {
  NetConfig cfg = w.config();
  cfg.cell = CellKind::coordconvgru;
  auto cw = HourglassWeights<double>::zeros(cfg);
  for (std::size_t i = 0; i < cw.count(); ++i) {
    const auto& src = w.get(cw.name(i));
    auto& dst = cw.tensor(i);
    if (src.shape() == dst.shape()) {
      dst = src;
      continue;
    }
    const std::size_t co = dst.dim(0), ci = src.dim(1), cd = dst.dim(1), kk = dst.dim(2) * dst.dim(3);
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t j = 0; j < kk; ++j) dst[(o * cd + c) * kk + j] = src[(o * ci + c) * kk + j];
  }
  return cw;
}

Outcome reduction() {
  Rng rng(2);
  double cell_err = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 1 + rng.index(4), h = 3 + rng.index(6), w = 3 + rng.index(6);
    const auto p = random_gru(rng, c, 3, rng.uniform(0.1, 1.0));
    const auto q = with_zero_coord_weights(p);
    const auto hp = random_tensor(rng, {c, h, w});
    const auto x = random_tensor(rng, {c, h, w}, -2, 2);
    const auto a = conv_gru_step(p, hp, x), b = coord_conv_gru_step(q, hp, x);
    cell_err = std::max(cell_err, max_abs_diff(a.h, b.h));
  }
  NetConfig cfg;
  cfg.channels = 4;
  cfg.keypoints = 2;
  cfg.cell = CellKind::convgru;
  auto w = HourglassWeights<double>::xavier(cfg, 3);
  for (std::size_t i = 0; i < w.count(); ++i)
    if (w.tensor(i).rank() == 1)
      for (auto& v : w.tensor(i).data()) v = rng.uniform(-0.2, 0.2);
  const auto cw = lift_to_coord(w);
  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_tensor(rng, {1, 16, 16}));
  const auto a = sequence_forward(w, std::span<const Tensor<double>>(frames));
  const auto b = sequence_forward(cw, std::span<const Tensor<double>>(frames));
  double net_err = 0;
  for (std::size_t i = 0; i < a.size(); ++i) net_err = std::max(net_err, max_abs_diff(a[i], b[i]));
  return {cell_err < 1e-12 && net_err < 1e-12,
          fmt("100 cells max diff %.1e, network (T=3) max diff %.1e", cell_err, net_err)};
}

// ---- 3 -----------------------------------------------------------------------------------------

Outcome loss_fidelity() {
  Rng rng(3);
  double loss_err = 0, grad_err = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t k = 1 + rng.index(4), h = 2 + rng.index(6), w = 2 + rng.index(6);
    Tensor<double> x({k, h, w}), z({k, h, w});
    long double naive = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.uniform(-20, 20);
      z[i] = rng.uniform();
      naive += x[i] - x[i] * z[i] + std::log(1 + std::exp(-x[i]));
    }
    loss_err = std::max(loss_err, std::abs(sigmoid_ce_loss(x, z) - static_cast<double>(naive / x.size())));
    Tape<double> tape;
    auto v = tape.leaf(x);
    auto g = tape.backward(sigmoid_ce_mean(v, z));
    const auto& gx = g.of(v);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double expect = 1 / (1 + std::exp(-x[i])) - z[i];
      grad_err = std::max(grad_err, std::abs(gx[i] * x.size() - expect));
    }
  }
  return {loss_err < 1e-9 && grad_err < 1e-9,
          fmt("100 stacks, loss diff %.1e, gradient diff %.1e (per element)", loss_err, grad_err)};
}

// ---- 4 -----------------------------------------------------------------------------------------

Outcome gate_invariants() {
  Rng rng(4);
  std::size_t bad = 0, checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const bool coord = i % 2;
    const std::size_t c = 1 + rng.index(4), h = 3 + rng.index(6), w = 3 + rng.index(6);
    const double s = rng.uniform(0.1, 1.0);
    const auto hp = random_tensor(rng, {c, h, w});
    const auto x = random_tensor(rng, {c, h, w}, -2, 2);
    const GruStepTrace<double> tr =
        coord ? coord_conv_gru_step(random_coord_gru(rng, c, 3, s), hp, x) : conv_gru_step(random_gru(rng, c, 3, s), hp, x);
    for (std::size_t k = 0; k < hp.size(); ++k) {
      ++checked;
      const double lo = std::min(hp[k], tr.h_hat[k]), hi = std::max(hp[k], tr.h_hat[k]);
      const double comb = (1 - tr.z[k]) * hp[k] + tr.z[k] * tr.h_hat[k];
      const bool ok = tr.z[k] > 0 && tr.z[k] < 1 && tr.r[k] > 0 && tr.r[k] < 1 && tr.h_hat[k] > -1 &&
                      tr.h_hat[k] < 1 && tr.h[k] >= lo - 1e-15 && tr.h[k] <= hi + 1e-15 &&
                      std::abs(tr.h[k] - comb) < 1e-15;
      bad += !ok;
    }
  }
  return {bad == 0, fmt("1000 cells, %zu elements, %zu violations", checked, bad)};
}

// ---- 5 -----------------------------------------------------------------------------------------

std::optional<double> naive_pck(const std::vector<Point2>& pred, const KeypointSet& gt, double alpha, double L) {
  int n = 0, ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!gt.visible[i]) continue;
    ++n;
    const double du = pred[i].u - gt.points[i].u, dv = pred[i].v - gt.points[i].v;
    if (std::sqrt(du * du + dv * dv) <= alpha * L) ++ok;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(ok) / n;
}

Outcome pck_oracle() {
  Rng rng(5);
  std::size_t mismatch = 0, nonmono = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    KeypointSet gt;
    std::vector<Point2> pred;
    const std::size_t k = 1 + rng.index(12);
    const double L = rng.uniform(16, 128);
    for (std::size_t i = 0; i < k; ++i) {
      gt.points.push_back({rng.uniform(0, L), rng.uniform(0, L)});
      gt.visible.push_back(rng.uniform() < 0.7);
      pred.push_back({gt.points.back().u + rng.uniform(-0.3, 0.3) * L, gt.points.back().v + rng.uniform(-0.3, 0.3) * L});
    }
    const double a = rng.uniform(0.01, 0.3);
    mismatch += pck(pred, gt, {a, L}) != naive_pck(pred, gt, a, L);
    const auto lo = pck(pred, gt, {a, L}), hi = pck(pred, gt, {a * rng.uniform(1.0, 2.0), L});
    if (lo && !(*lo <= *hi)) ++nonmono;
  }
  return {mismatch == 0 && nonmono == 0, fmt("1000 instances, %zu mismatches, %zu monotonicity violations", mismatch, nonmono)};
}

// ---- 6 -----------------------------------------------------------------------------------------

Outcome visibility_oracle() {
  Rng rng(6);
  std::size_t agree = 0, agree_depth = 0, total = 0;
  for (int s = 0; s < 100; ++s) {
    const auto m = oracle::random_cuboid_scene(rng);
    const auto pose = oracle::random_pose(rng, 128);
    const auto proj = project_keypoints(m, pose, 128, 128);
    const double tol = 1e-3 * m.scale();
    const auto v = visibility(proj, render_surface(m, pose, 128, 128), tol);
    const auto vd = visibility(proj, render_depth(m, pose, 128, 128), tol);
    const auto o = oracle::ray_cast_visibility(m, pose, proj, 128, 128);
    for (std::size_t k = 0; k < v.size(); ++k) {
      agree += v[k] == o[k];
      agree_depth += vd[k] == o[k];
    }
    total += v.size();
  }
  const double frac = static_cast<double>(agree) / total;
  return {frac >= 0.99, fmt("100 scenes, %zu keypoints, agreement %.4f (plain depth-pixel rule %.4f)", total, frac,
                            static_cast<double>(agree_depth) / total)};
}

// ---- 7 -----------------------------------------------------------------------------------------

struct ToyRun {
  double pck05 = 0, pck10 = 0, secs = 0;
  std::size_t steps = 0;
};

ToyRun toy_run(TrainConfig cfg, CellKind cell, std::uint64_t seed, const Dataset& train_set, const Dataset& test_set) {
  cfg.cell = cell;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  const auto r = train(cfg, train_set);
  ToyRun out;
  out.secs = seconds_since(t0);
  out.steps = r.optim.step;
  const std::vector<double> alphas{0.05, 0.1};
  const auto rep = evaluate(r.weights, test_set, alphas);
  out.pck05 = rep.rows[0].value().value_or(0);
  out.pck10 = rep.rows[1].value().value_or(0);
  return out;
}

Outcome desk_learning(const fs::path& configs, const fs::path& work, std::size_t seeds) {
  const fs::path train_dir = work / "toy_train", test_dir = work / "toy_test";
  generate_dataset(SynthConfig::from_config(KeyValueConfig::load(configs / "toy_data.cfg")), 1, train_dir);
  generate_dataset(SynthConfig::from_config(KeyValueConfig::load(configs / "toy_test.cfg")), 2, test_dir);
  const Dataset train_set = load_dataset(train_dir), test_set = load_dataset(test_dir);
  std::size_t vis = 0, kps = 0;
  for (const auto& s : test_set.sequences)
    for (const auto& l : s.labels) {
      kps += l.size();
      vis += static_cast<std::size_t>(std::count(l.visible.begin(), l.visible.end(), true));
    }
  std::printf("    toy data: %zu train / %zu test sequences, test visible fraction %.3f\n", train_set.sequences.size(),
              test_set.sequences.size(), static_cast<double>(vis) / kps);

  const TrainConfig cfg = TrainConfig::from_config(KeyValueConfig::load(configs / "toy_train.cfg"));
  bool base_ok = false;
  std::size_t ordered = 0;
  std::string base_line;
  for (std::size_t s = 1; s <= seeds; ++s) {
    const ToyRun b = toy_run(cfg, CellKind::none, s, train_set, test_set);
    const ToyRun g = toy_run(cfg, CellKind::convgru, s, train_set, test_set);
    const ToyRun c = toy_run(cfg, CellKind::coordconvgru, s, train_set, test_set);
    const bool order = c.pck10 >= g.pck10 && g.pck10 >= b.pck10;
    ordered += order;
    std::printf("    seed %zu PCK@0.1 none=%.4f convgru=%.4f coordconvgru=%.4f  (PCK@0.05 %.4f %.4f %.4f)  %s  "
                "[%.0f s %.0f s %.0f s]\n",
                s, b.pck10, g.pck10, c.pck10, b.pck05, g.pck05, c.pck05, order ? "ordered" : "not ordered", b.secs,
                g.secs, c.secs);
    std::fflush(stdout);
    if (s == 1) {
      base_ok = b.pck10 >= 0.85 && b.steps <= 5000 && b.secs < 1800;
      base_line = fmt("baseline PCK@0.1 %.4f after %zu steps in %.0f s", b.pck10, b.steps, b.secs);
    }
  }
  const std::size_t need = (seeds * 3 + 4) / 5;
  return {base_ok && ordered >= need,
          base_line + fmt("; ordering held for %zu/%zu seeds (need %zu)", ordered, seeds, need)};
}

// ---- 8 -----------------------------------------------------------------------------------------

Outcome runtime_order() {
  double ms[3];
  std::size_t i = 0;
  for (auto cell : {CellKind::none, CellKind::convgru, CellKind::coordconvgru}) {
    NetConfig cfg;
    cfg.channels = 36;
    cfg.keypoints = 36;
    cfg.cell = cell;
    const auto w = HourglassWeights<float>::xavier(cfg, 8);
    ms[i++] = bench_forward(w, 64, 64, 30, 3, 8).median_ms;
  }
  return {ms[0] < ms[1] && ms[1] < ms[2],
          fmt("median per-frame ms none=%.2f convgru=%.2f coordconvgru=%.2f", ms[0], ms[1], ms[2])};
}

// ---- 9 -----------------------------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  SynthConfig sc;
  sc.models = 2;
  sc.seqs_per_model = 6;
  sc.occluder_prob = 0.5;
  sc.noise = 0.02;
  const fs::path a = work / "det_a", b = work / "det_b";
  generate_dataset(sc, 9, a);
  generate_dataset(sc, 9, b);
  const bool data_ok = same_tree(a, b);

  const Dataset ds = load_dataset(a);
  TrainConfig tc;
  tc.base_lr = 3e-3;
  tc.channels = 8;
  tc.phase1_batch = 4;
  tc.phase1_steps = 30;
  tc.phase2_batch = 2;
  tc.phase2_steps = 20;
  tc.cell = CellKind::coordconvgru;
  tc.seed = 9;
  std::ostringstream ta, tb;
  TrainOptions oa, ob;
  oa.checkpoint = work / "det_a.ckpt";
  ob.checkpoint = work / "det_b.ckpt";
  oa.trace_sink = &ta;
  ob.trace_sink = &tb;
  train(tc, ds, oa);
  train(tc, ds, ob);
  const bool trace_ok = ta.str() == tb.str() && !ta.str().empty();
  const bool ckpt_ok = file_bytes(*oa.checkpoint) == file_bytes(*ob.checkpoint) &&
                       file_bytes(oa.checkpoint->string() + ".opt") == file_bytes(ob.checkpoint->string() + ".opt");
  return {data_ok && trace_ok && ckpt_ok, fmt("datasets %s, 50-step traces %s, checkpoints %s", data_ok ? "identical" : "differ",
                                              trace_ok ? "identical" : "differ", ckpt_ok ? "identical" : "differ")};
}

// ---- 10 ----------------------------------------------------------------------------------------

Outcome schedule() {
  const TrainConfig cfg;
  const double a = lr_schedule(0, cfg), b = lr_schedule(20000, cfg);
  return {a == 2.5e-4 && b == 2.4e-4, fmt("lr(0)=%.17g lr(20000)=%.17g", a, b)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_work", configs = HGRU_CONFIG_DIR;
  std::size_t seeds = 5;
  bool strict = false;
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--configs", configs, "directory holding toy_data.cfg, toy_test.cfg, toy_train.cfg");
  app.add_option("--seeds", seeds, "training seeds per cell for the learning criterion");
  app.add_option("--only", only, "run only these criteria");
  app.add_flag("--strict", strict, "exit 1 if any criterion fails");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient checks", gradients},
      {"coordinate reduction", reduction},
      {"loss fidelity", loss_fidelity},
      {"gate and bound invariants", gate_invariants},
      {"pck oracle", pck_oracle},
      {"visibility oracle", visibility_oracle},
      {"desk-scale learning", [&] { return desk_learning(configs, work, seeds); }},
      {"run-time ordering", runtime_order},
      {"determinism", [&] { return determinism(work); }},
      {"schedule", schedule},
  };

  std::ofstream report(fs::path(work) / "acceptance_report.txt");
  std::size_t passed = 0, run = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    passed += o.pass;
    const std::string line = fmt("criterion %2d %s  %s: ", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str()) + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n' << std::flush;
  }
  std::printf("acceptance: %zu/%zu criteria passed\n", passed, run);
  report << fmt("acceptance: %zu/%zu criteria passed\n", passed, run);
  return strict && passed != run ? 1 : 0;
}
