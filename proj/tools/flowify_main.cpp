// flowify: train, evaluate, sample and verify flowified networks.
//
// Exit codes: 0 success, 1 failed verification, 2 bad input (config, data,
// paths, shapes, suite names), 3 non-finite likelihood during training.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "flowify/checkpoint.hpp"
#include "flowify/config.hpp"
#include "flowify/errors.hpp"
#include "flowify/image_io.hpp"
#include "flowify/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowify;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitNonFinite = 3;

struct Args {
  std::string config;
  std::string out = "runs/latest";
  std::string checkpoint;
  std::string mode = "mean";
  std::vector<std::string> suites;
  std::optional<std::uint64_t> seed;
  std::size_t n = 16;
  std::size_t trials = 1000;
  bool quiet = false;
};

Shape input_shape_for(const Split& split) { return split.train.sample_shape; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

int cmd_train(const Args& a) {
  std::vector<std::string> warnings;
  RunConfig cfg = load_run_config(a.config, &warnings);
  if (a.seed) cfg.train.seed = *a.seed;
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  const Split split = load_dataset(cfg.dataset, cfg.train.seed);
  FlowModel model = build_model(cfg.layers, input_shape_for(split), cfg.train.seed);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Error("cannot create output directory " + a.out + ": " + ec.message());
  const json effective = cfg.to_json();
  write_text(fs::path(a.out) / "config.json", effective.dump(2) + "\n");

  std::ofstream metrics(fs::path(a.out) / "metrics.ndjson", std::ios::trunc);
  if (!metrics) throw Error("cannot write metrics in " + a.out);

  Trainer trainer(model, cfg.train);
  if (!a.quiet) {
    std::cerr << "training " << cfg.name << ": " << model.size() << " layers, "
              << split.train.count << " train / " << split.test.count << " test rows\n";
  }
  try {
    trainer.train(split.train, split.test, [&](const EpochMetrics& m, Trainer& t) {
      metrics << m.to_json().dump() << "\n" << std::flush;
      save_checkpoint((fs::path(a.out) / ("epoch_" + std::to_string(m.epoch) + ".ckpt")).string(),
                      effective, t.model(), &t);
      save_checkpoint((fs::path(a.out) / "last.ckpt").string(), effective, t.model(), &t);
      if (!a.quiet) {
        std::cerr << "epoch " << m.epoch << "  train_nll " << m.train_nll << "  test_nll "
                  << m.test_nll;
        if (m.bpd) std::cerr << "  bpd " << *m.bpd;
        std::cerr << "  (" << std::fixed << std::setprecision(0) << m.wall_ms << " ms)\n"
                  << std::defaultfloat << std::setprecision(6);
      }
    });
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << " [layer "
              << (e.layer_index() < 0 ? std::string("base/loss") : std::to_string(e.layer_index()))
              << "], step " << trainer.global_step() << "\n";
    return kExitNonFinite;
  }
  return 0;
}

struct Loaded {
  Checkpoint ckpt;
  RunConfig cfg;
};

Loaded open_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  Loaded l{load_checkpoint(path), {}};
  l.cfg = RunConfig::from_json(l.ckpt.config());
  return l;
}

FlowModel restore_model(const Loaded& l, const Shape& input_shape) {
  const Shape stored = l.ckpt.manifest.at("model").at("input_shape").get<Shape>();
  if (stored != input_shape) {
    throw DimensionError("checkpoint model expects samples " + shape_string(stored) +
                         " but the dataset provides " + shape_string(input_shape));
  }
  FlowModel model = build_model(l.cfg.layers, stored, l.cfg.train.seed);
  restore_parameters(l.ckpt, model);
  return model;
}

int cmd_eval(const Args& a) {
  const Loaded l = open_checkpoint(a.checkpoint);
  DatasetSpec spec = l.cfg.dataset;
  if (!a.config.empty()) spec = load_run_config(a.config).dataset;
  const Split split = load_dataset(spec, l.cfg.train.seed);
  const FlowModel model = restore_model(l, input_shape_for(split));
  const EvalResult r = evaluate(model, split.test, mix_seed(a.seed.value_or(0), 0xe7a1ULL));
  json out = {{"count", r.count}, {"test_nll", r.nll}};
  out["bpd"] = r.bpd ? json(*r.bpd) : json(nullptr);
  std::cout << std::setprecision(17) << out.dump() << "\n";
  return 0;
}

int cmd_sample(const Args& a) {
  const Loaded l = open_checkpoint(a.checkpoint);
  const Shape shape = l.ckpt.manifest.at("model").at("input_shape").get<Shape>();
  FlowModel model = restore_model(l, shape);
  if (a.mode != "mean" && a.mode != "stochastic") throw ConfigError("--mode must be mean or stochastic");
  const InverseMode mode = a.mode == "mean" ? InverseMode::mean : InverseMode::stochastic;
  Rng rng(mix_seed(a.seed.value_or(0), 0x5a3eULL));
  Context ctx(nullptr, rng);
  const DiffArray x = model.sample(a.n, ctx, mode);

  if (shape.size() == 3 && (shape[0] == 1 || shape[0] == 3)) {
    write_pnm(a.out, tile_grid(x));
  } else {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw Error("cannot write samples to " + a.out);
    const std::size_t d = numel(shape);
    f << std::setprecision(17);
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < d; ++j) f << (j ? "," : "") << x[i * d + j];
      f << "\n";
    }
    if (!f) throw Error("cannot write samples to " + a.out);
  }
  return 0;
}

int cmd_verify(const Args& a) {
  if (a.suites.empty()) {
    std::cerr << "error: no suite selected (available: all";
    for (const auto& s : verify_suite_names()) std::cerr << ", " << s;
    std::cerr << ")\n";
    return kExitBadInput;
  }
  std::vector<std::string> suites;
  for (const auto& s : a.suites) {
    if (s == "all") {
      for (const auto& n : verify_suite_names()) suites.push_back(n);
    } else {
      const auto names = verify_suite_names();
      if (std::find(names.begin(), names.end(), s) == names.end()) {
        throw ConfigError("unknown verify suite \"" + s + "\"");
      }
      suites.push_back(s);
    }
  }
  VerifyOptions opt{a.seed.value_or(0), a.trials};
  bool ok = true;
  for (const auto& s : suites) {
    for (const auto& c : run_verify_suite(s, opt)) {
      ok = ok && c.passed;
      std::cout << (c.passed ? "PASS " : "FAIL ") << c.suite << ": " << c.name << "  measured "
                << std::scientific << std::setprecision(3) << c.measured << " <= " << c.tolerance
                << std::defaultfloat;
      if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
      std::cout << "\n";
    }
  }
  return ok ? 0 : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowify: flowified linear and convolutional density models"};
  app.require_subcommand(1);
  Args a;
  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) { return sub->add_option("--seed", seed, "Run seed"); };

  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", a.config, "Run config (JSON)")->required();
  train->add_option("--out", a.out, "Output directory for metrics and checkpoints");
  train->add_flag("--quiet", a.quiet, "No progress output");
  auto* train_seed = add_seed(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  eval->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", a.config, "Take the dataset section from this config instead");
  auto* eval_seed = add_seed(eval);

  auto* sample = app.add_subcommand("sample", "Draw samples and write a PGM/PPM grid (CSV for vectors)");
  sample->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  sample->add_option("--n", a.n, "Number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--mode", a.mode, "Inverse mode")->check(CLI::IsMember({"mean", "stochastic"}));
  sample->add_option("--out", a.out, "Output path")->required();
  auto* sample_seed = add_seed(sample);

  auto* verify = app.add_subcommand("verify", "Run self-check suites");
  verify->add_option("--suite", a.suites, "Suite name (repeatable) or 'all'");
  verify->add_option("--n", a.trials, "Random instances per check")->check(CLI::PositiveNumber);
  auto* verify_seed = add_seed(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadInput;
  }
  for (auto* opt : {train_seed, eval_seed, sample_seed, verify_seed}) {
    if (opt->count()) a.seed = seed;
  }

  try {
    if (train->parsed()) return cmd_train(a);
    if (eval->parsed()) return cmd_eval(a);
    if (sample->parsed()) return cmd_sample(a);
    if (verify->parsed()) return cmd_verify(a);
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadInput;
  }
  return kExitBadInput;
}
