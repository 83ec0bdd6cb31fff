// hgru command line: gen-data, train, eval, grad-check, bench.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hgru/checks.hpp"
#include "hgru/config.hpp"
#include "hgru/dataset.hpp"
#include "hgru/hourglass.hpp"
#include "hgru/train.hpp"

namespace fs = std::filesystem;
using namespace hgru;

namespace {

// single line: error kind=<k> message="<text>"
int fail(const std::string& kind, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::replace(message.begin(), message.end(), '"', '\'');
  std::cerr << "error kind=" << kind << " message=\"" << message << "\"\n";
  return 1;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double a = std::stod(item, &used);
    if (used != item.size() || !(a > 0)) throw std::invalid_argument("bad alpha '" + item + "'");
    out.push_back(a);
  }
  if (out.empty()) throw std::invalid_argument("empty alpha list");
  return out;
}

int run_gen_data(const std::string& config, const std::string& out, std::uint64_t seed) {
  const SynthConfig cfg = SynthConfig::from_config(KeyValueConfig::load(config));
  const DatasetManifest m = generate_dataset(cfg, seed, out);
  std::cout << "wrote " << m.count << " sequences T=" << m.frames << " K=" << m.keypoints << " H=" << m.height
            << " W=" << m.width << " to " << out << "\n";
  return 0;
}

int run_train(const std::string& config, const std::string& data, const std::string& out,
              const std::string& resume) {
  const TrainConfig cfg = TrainConfig::from_config(KeyValueConfig::load(config));
  const Dataset ds = load_dataset(data);
  TrainOptions opts;
  opts.checkpoint = fs::path(out);
  opts.trace_sink = &std::cout;
  HourglassWeights<float> initial;
  OptimState<float> optim;
  if (!resume.empty()) {
    initial = load_checkpoint(resume);
    const fs::path side = resume + ".opt";
    if (!fs::exists(side)) throw std::runtime_error("missing optimizer state " + side.string());
    optim = load_optim_state(side, initial);
    opts.initial = &initial;
    opts.initial_optim = &optim;
  }
  const TrainResult r = train(cfg, ds, opts);
  std::cerr << "done steps=" << r.optim.step << " phase1_steps=" << r.phase1_steps << " ckpt=" << out << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& alphas) {
  const std::vector<double> a = parse_alphas(alphas);
  const HourglassWeights<float> w = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const PckReport rep = evaluate(w, ds, a);
  std::cout << rep.table() << rep.lines();
  return 0;
}

int run_grad_check(const std::string& module, std::uint64_t seed, double eps) {
  const std::vector<NamedGradCheck> results = grad_check_suite(module, seed, eps);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.result.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%s %-28s max_rel=%.3e checked=%zu kinks=%zu\n", pass ? "PASS" : "FAIL", r.name.c_str(),
                r.result.max_rel_error, r.result.checked, r.result.kinks);
  }
  if (!ok) return fail("grad_check", "relative error above 1e-4");
  return 0;
}

int run_bench(const std::string& ckpt, const std::string& cell, std::size_t height, std::size_t width,
              std::size_t frames, std::size_t warmup) {
  const CellKind kind = parse_cell_kind(cell);
  const HourglassWeights<float> w = load_checkpoint(ckpt);
  if (w.config().cell != kind) {
    throw std::invalid_argument("checkpoint holds cell " + std::string(to_string(w.config().cell)) + ", not " +
                                cell);
  }
  const BenchResult r = bench_forward(w, height, width, frames, warmup, 0);
  std::printf("bench cell=%s H=%zu W=%zu C=%zu K=%zu frames=%zu median_ms=%.4f\n", cell.c_str(), height, width,
              w.config().channels, w.config().keypoints, frames, r.median_ms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hourglass keypoint network with recurrent skip connections"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, resume, alphas = "0.05,0.1", module = "all", cell;
  std::uint64_t seed = 0;
  double eps = 1e-5;
  std::size_t height = 64, width = 64, frames = 50, warmup = 5;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic sequence dataset");
  gen->add_option("--config", config, "key = value file")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "dataset seed")->required();

  auto* tr = app.add_subcommand("train", "train and write a checkpoint");
  tr->add_option("--config", config, "key = value file")->required();
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--resume", resume, "checkpoint to continue from (needs <ckpt>.opt)");

  auto* ev = app.add_subcommand("eval", "PCK of a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--alpha", alphas, "comma separated thresholds");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  gc->add_option("--module", module, "ops|convgru|coordconvgru|network|all");
  gc->add_option("--seed", seed);
  gc->add_option("--eps", eps);

  auto* be = app.add_subcommand("bench", "median per-frame forward time");
  be->add_option("--ckpt", ckpt)->required();
  be->add_option("--cell", cell)->required()->check(CLI::IsMember({"none", "convgru", "coordconvgru"}));
  be->add_option("--height", height);
  be->add_option("--width", width);
  be->add_option("--frames", frames);
  be->add_option("--warmup", warmup);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) return run_gen_data(config, out, seed);
    if (*tr) return run_train(config, data, out, resume);
    if (*ev) return run_eval(ckpt, data, alphas);
    if (*gc) return run_grad_check(module, seed, eps);
    if (*be) return run_bench(ckpt, cell, height, width, frames, warmup);
  } catch (const DivergenceError& e) {
    return fail("diverged", std::string(e.what()) + " at step " + std::to_string(e.step()));
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
