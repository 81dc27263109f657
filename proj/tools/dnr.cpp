// SPDX-License-Identifier: Apache-2.0
//
// dnr <synth|divide|refine|eval|ablate|pid|export-embeddings>
//     --config <path> [--seed N] [--out DIR] [--force]
//
// Outputs under --out (default "runs"):
//   manifest.json              written before any other file of a run
//   dataset/                   synth
//   divide.ckpt, backbone.ckpt divide, refine
//   logs/<run-id>/*.csv        per-epoch training logs
//   eval.csv, metrics.csv      eval, ablate
//   embeddings.csv             export-embeddings
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dnr/config.hpp"
#include "dnr/experiment.hpp"
#include "dnr/params.hpp"
#include "dnr/pid.hpp"
#include "dnr/pipeline.hpp"

namespace {

using namespace dnr;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool force = false;
  std::string joint;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  std::optional<std::uint64_t> seed = o.seed;
  if (!seed) {
    if (const char* env = std::getenv("DNR_SEED")) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      require(end != env && *end == '\0', "DNR_SEED must be a non-negative integer, got '" + std::string(env) + "'");
      seed = v;
    }
  }
  if (seed) cfg.experiment.seeds = {*seed};
  cfg.validate();
  return cfg;
}

struct Run {
  ExperimentConfig cfg;
  fs::path out;
  std::string id;
  std::uint64_t seed;
};

Run begin(const Options& o, const std::string& command, const std::vector<std::string>& outputs) {
  Run r{load(o), o.out, "", 0};
  r.seed = r.cfg.experiment.seeds.front();
  r.id = make_run_id(r.cfg, static_cast<std::int64_t>(std::time(nullptr)));
  fs::create_directories(r.out);
  check_manifest(r.out, r.cfg, o.force);
  write_manifest(r.out, r.cfg, command, r.id, r.seed, outputs, o.force);
  return r;
}

fs::path require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw contract_violation("missing checkpoint: expected " + p.string() + " (run `dnr " + producer +
                             "` with the same --config and --out first)");
  return p;
}

DivideModel load_divide(const Run& r) {
  DivideModel model(divide_shape(r.cfg.synth, r.cfg.model), RngStream(0));
  load_checkpoint(model.params(), require_file(r.out / "divide.ckpt", "divide"));
  freeze(model);
  return model;
}

Backbone load_backbone(const Run& r) {
  Backbone bb(backbone_shape(r.cfg.model, r.cfg.synth.modalities.size(), 3 * r.cfg.model.stream_width,
                             r.cfg.synth.num_classes),
              RngStream(0));
  load_checkpoint(bb.params(), require_file(r.out / "backbone.ckpt", "refine"));
  return bb;
}

void log_progress(const std::string& msg) { std::fprintf(stderr, "[dnr] %s\n", msg.c_str()); }

int cmd_synth(const Options& o) {
  const Run r = begin(o, "synth", {"dataset/spec.toml", "dataset/train.csv", "dataset/val.csv", "dataset/test.csv"});
  write_dataset(r.out / "dataset", generate(r.cfg.synth, r.seed));
  std::printf("%s\n", (r.out / "dataset").string().c_str());
  return 0;
}

int cmd_divide(const Options& o) {
  const Run r = begin(o, "divide", {"divide.ckpt", "logs/<run-id>/divide.csv"});
  const Dataset ds = generate(r.cfg.synth, r.seed);
  DivideResult dv = train_divide(ds, r.cfg.objective, r.cfg.model, r.cfg.schedule, RngStream(r.seed).fork("divide"));
  write_text(r.out / "logs" / r.id / "divide.csv", epoch_log_csv(dv.log));
  save_checkpoint(dv.model.params(), r.out / "divide.ckpt");
  const auto preds = argmax_rows(divide_logits(dv.model, ds.test.features));
  std::printf("divide: %zu epochs, test accuracy %.4f, weighted F1 %.4f\n", dv.log.size(),
              accuracy(preds, ds.test.labels), weighted_f1(preds, ds.test.labels, r.cfg.synth.num_classes));
  return 0;
}

int cmd_refine(const Options& o) {
  require_file(fs::path(o.out) / "divide.ckpt", "divide");
  const Run r = begin(o, "refine", {"backbone.ckpt", "logs/<run-id>/refine.csv"});
  DivideModel model = load_divide(r);
  const Dataset ds = generate(r.cfg.synth, r.seed);
  RefineResult rr = train_refine(model, ds, r.cfg.objective, r.cfg.model, r.cfg.schedule,
                                 RngStream(r.seed).fork("backbone"));
  write_text(r.out / "logs" / r.id / "refine.csv", epoch_log_csv(rr.log));
  save_checkpoint(rr.backbone.params(), r.out / "backbone.ckpt");
  std::printf("refine: %zu epochs, best val weighted F1 %.4f, frozen hash %016llx unchanged\n", rr.log.size(),
              rr.state.best_metric, static_cast<unsigned long long>(rr.frozen_hash_after));
  return 0;
}

int cmd_eval(const Options& o) {
  require_file(fs::path(o.out) / "divide.ckpt", "divide");
  require_file(fs::path(o.out) / "backbone.ckpt", "refine");
  const Run r = begin(o, "eval", {"eval.csv"});
  const DivideModel model = load_divide(r);
  const Backbone bb = load_backbone(r);
  const Dataset ds = generate(r.cfg.synth, r.seed);
  const SlotData test = decomposed_slots(model, ds.test);
  MetricsRow base = diagnostics_row(
      stream_diagnostics(test.slots, r.cfg.model.stream_width, ds.test.labels, r.cfg.experiment.pid_bins));
  base.arm = to_string(Arm::divide_refine);
  base.seed = r.seed;
  const auto rows = evaluate_masks(bb, test, ds.test, r.cfg.synth.modalities, r.cfg.experiment.masks,
                                   r.cfg.synth.num_classes, base);
  const std::string csv = metrics_csv(rows);
  write_text(r.out / "eval.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int cmd_ablate(const Options& o) {
  const Run r = begin(o, "ablate", {"metrics.csv", "logs/<run-id>/<arm>-<seed>-{divide,refine}.csv"});
  const AblationResult res = run_ablation(r.cfg, log_progress);
  for (const ArmRecord& rec : res.records) {
    std::string arm = to_string(rec.arm);
    for (char& c : arm)
      if (c == '+') c = '_';
    const fs::path dir = r.out / "logs" / r.id;
    const std::string stem = arm + "-" + std::to_string(rec.seed);
    if (!rec.divide_log.empty()) write_text(dir / (stem + "-divide.csv"), epoch_log_csv(rec.divide_log));
    write_text(dir / (stem + "-refine.csv"), epoch_log_csv(rec.refine_log));
  }
  write_text(r.out / "metrics.csv", metrics_csv(res.rows));
  std::printf("%s\n", (r.out / "metrics.csv").string().c_str());
  return 0;
}

int cmd_pid(const Options& o) {
  if (!o.joint.empty()) {
    std::printf("%s\n", format_atoms(pid_decompose(JointDist::from_csv(o.joint))).c_str());
    return 0;
  }
  require_file(fs::path(o.out) / "divide.ckpt", "divide");
  const Run r = begin(o, "pid", {});
  const DivideModel model = load_divide(r);
  require(model.modalities().size() >= 2, "pid: checkpoint streams need at least two modalities");
  const Dataset ds = generate(r.cfg.synth, r.seed);
  const auto trunks = decompose_split(model, ds.test);
  const auto a = discretize(trunks[0], r.cfg.experiment.pid_bins);
  const auto b = discretize(trunks[1], r.cfg.experiment.pid_bins);
  std::printf("%s\n", format_atoms(pid_decompose(JointDist::from_samples(ds.test.labels, a, b))).c_str());
  return 0;
}

int cmd_export(const Options& o) {
  require_file(fs::path(o.out) / "divide.ckpt", "divide");
  const Run r = begin(o, "export-embeddings", {"embeddings.csv"});
  const DivideModel model = load_divide(r);
  const Dataset ds = generate(r.cfg.synth, r.seed);
  const auto trunks = decompose_split(model, ds.test);
  const std::size_t d = r.cfg.model.stream_width;
  std::string out = "sample_id,label,modality";
  for (const char* stream : {"u", "r", "s"})
    for (std::size_t j = 0; j < d; ++j) out += "," + std::string(stream) + "_" + std::to_string(j);
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.test.size(); ++i)
    for (std::size_t m = 0; m < trunks.size(); ++m) {
      out += std::to_string(ds.test.ids[i]) + "," + std::to_string(ds.test.labels[i]) + "," +
             std::string(1, model.modalities()[m]);
      for (std::size_t c = 0; c < 3 * d; ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", trunks[m](i, c));
        out += buf;
      }
      out += "\n";
    }
  write_text(r.out / "embeddings.csv", out);
  std::printf("%s\n", (r.out / "embeddings.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-refine multimodal representation learning"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (TOML)");
    sub->add_option("--seed", o.seed, "seed; overrides DNR_SEED and the config seeds");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_flag("--force", o.force, "overwrite outputs of a different config");
  };
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Cmd cmds[] = {
      {"synth", "generate the synthetic dataset", cmd_synth},
      {"divide", "Phase I: train encoders and decomposition heads", cmd_divide},
      {"refine", "Phase II: train the backbone on frozen streams", cmd_refine},
      {"eval", "metrics of the refined model over modality masks", cmd_eval},
      {"ablate", "all configured arms x seeds -> metrics.csv", cmd_ablate},
      {"pid", "PID atoms of a joint CSV (--joint) or of checkpoint streams", cmd_pid},
      {"export-embeddings", "per-sample u/r/s stream vectors of the test split", cmd_export},
  };
  int (*selected)(const Options&) = nullptr;
  for (const Cmd& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    if (std::string(c.name) == "pid") sub->add_option("--joint", o.joint, "joint distribution CSV rows y,a,b,p");
    sub->callback([&selected, fn = c.fn] { selected = fn; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return selected(o);
  } catch (const contract_violation& e) {
    std::fprintf(stderr, "dnr: error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dnr: fatal: %s\n", e.what());
    return 1;
  }
}
