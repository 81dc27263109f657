// SPDX-License-Identifier: Apache-2.0
//
// Ablation runner, stream diagnostics, dataset files and run manifests.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnr/config.hpp"
#include "dnr/metrics.hpp"
#include "dnr/pid.hpp"
#include "dnr/pipeline.hpp"
#include "dnr/synth.hpp"

#define DNR_VERSION "0.1.0"

namespace dnr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot open " + path.string() + " for writing");
  f << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string split_csv(const SynthSpec& spec, const Split& split) {
  std::string out = "sample_id,label";
  for (char m : spec.modalities)
    for (std::size_t c = 0; c < spec.width(m); ++c) out += "," + std::string(1, m) + "_" + std::to_string(c);
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < split.size(); ++i) {
    out += std::to_string(split.ids[i]) + "," + std::to_string(split.labels[i]);
    for (const Tensor& f : split.features)
      for (std::size_t c = 0; c < f.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", f(i, c));
        out += buf;
      }
    out += "\n";
  }
  return out;
}

/// Features and labels of a split CSV written by split_csv.
inline Split parse_split_csv(const SynthSpec& spec, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "dataset: empty split file");
  std::vector<std::vector<double>> rows;
  Split s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    s.ids.push_back(std::stoull(cell));
    std::getline(ls, cell, ',');
    s.labels.push_back(std::stoi(cell));
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(vals));
  }
  std::size_t offset = 0;
  for (char m : spec.modalities) {
    const std::size_t w = spec.width(m);
    Tensor t({rows.size(), w});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r].size() >= offset + w, "dataset: row " + std::to_string(r) + " is too short");
      for (std::size_t c = 0; c < w; ++c) t(r, c) = rows[r][offset + c];
    }
    s.features.push_back(std::move(t));
    offset += w;
  }
  return s;
}

/// spec.toml plus train.csv, val.csv and test.csv.
inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  write_text(dir / "spec.toml", synth_to_toml(ds.spec));
  write_text(dir / "train.csv", split_csv(ds.spec, ds.train));
  write_text(dir / "val.csv", split_csv(ds.spec, ds.val));
  write_text(dir / "test.csv", split_csv(ds.spec, ds.test));
}

// ---------------------------------------------------------------------------
// Diagnostics on the decomposed streams of a split.

struct StreamDiagnostics {
  double mean_abs_corr_u_r = 0.0;
  double mean_cross_corr_r = 0.0;
  double mean_kl_u_r = 0.0;
  PIDAtoms pid;
};

inline double corr_value(const Tensor& a, const Tensor& b) {
  Tape tape;
  return pearson_corr(tape.constant(a), tape.constant(b)).value().item();
}

/// trunks[m] is the [N, 3d] trunk output of modality m.
inline StreamDiagnostics stream_diagnostics(const std::vector<Tensor>& trunks, std::size_t d,
                                            const std::vector<int>& labels, std::size_t bins) {
  StreamDiagnostics out;
  const std::size_t M = trunks.size();
  std::vector<Tensor> u, r;
  for (const Tensor& t : trunks) {
    u.push_back(t.col_range(0, d));
    r.push_back(t.col_range(d, 2 * d));
  }
  for (std::size_t m = 0; m < M; ++m) out.mean_abs_corr_u_r += std::abs(corr_value(u[m], r[m])) / static_cast<double>(M);
  if (M >= 2) {
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < M; ++s)
        if (m != s) total += corr_value(r[m], r[s]);
    out.mean_cross_corr_r = total / static_cast<double>(M * (M - 1));
  }
  double kl = 0.0;
  const std::size_t n = trunks.front().rows();
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor ui = u[m].row(i), ri = r[m].row(i);
      kl += kl_simplex(ui.data(), ri.data());
    }
  out.mean_kl_u_r = kl / static_cast<double>(M * n);
  if (M >= 2) {
    const auto a = discretize(trunks[0], bins);
    const auto b = discretize(trunks[1], bins);
    out.pid = pid_decompose(JointDist::from_samples(labels, a, b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct MetricsRow {
  std::string arm;
  std::string modality_mask;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double mean_abs_corr_u_r = 0.0;
  double mean_cross_corr_r = 0.0;
  double mean_kl_u_r = 0.0;
  double pid_r = 0.0;
  double pid_s = 0.0;
  double pid_u = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "arm,modality_mask,seed,accuracy,weighted_f1,mean_abs_corr_u_r,mean_cross_corr_r,mean_kl_u_r,pid_r,pid_s,pid_u\n";

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  char buf[512];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.arm.c_str(),
                  r.modality_mask.c_str(), static_cast<unsigned long long>(r.seed), r.accuracy, r.weighted_f1,
                  r.mean_abs_corr_u_r + 0.0, r.mean_cross_corr_r + 0.0, r.mean_kl_u_r + 0.0, r.pid_r + 0.0,
                  r.pid_s + 0.0, r.pid_u + 0.0);
    out += buf;
  }
  return out;
}

inline void check_row(const MetricsRow& r) {
  for (double v : {r.accuracy, r.weighted_f1, r.mean_abs_corr_u_r, r.mean_cross_corr_r, r.mean_kl_u_r, r.pid_r,
                   r.pid_s, r.pid_u})
    if (!std::isfinite(v)) throw numeric_fault("metrics row for arm " + r.arm + " has a non-finite field");
  require(r.accuracy >= 0.0 && r.accuracy <= 1.0 && r.weighted_f1 >= 0.0 && r.weighted_f1 <= 1.0,
          "metrics row: accuracy and weighted F1 must lie in [0, 1]");
}

/// Per-(arm, seed) training logs and checks, for callers that want more
/// than the metrics table.
struct ArmRecord {
  Arm arm;
  std::uint64_t seed;
  std::vector<EpochLog> divide_log;
  std::vector<EpochLog> refine_log;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

struct AblationResult {
  std::vector<MetricsRow> rows;
  std::vector<ArmRecord> records;
};

inline std::vector<MetricsRow> evaluate_masks(const Backbone& bb, const SlotData& test, const Split& split,
                                              const ModalitySet& modalities, const std::vector<ModalitySet>& masks,
                                              std::size_t num_classes, const MetricsRow& base) {
  std::vector<MetricsRow> rows;
  for (const ModalitySet& mask : masks) {
    const auto preds = argmax_rows(backbone_logits(bb, test.slots, modalities, mask));
    MetricsRow row = base;
    row.modality_mask = mask.str();
    row.accuracy = accuracy(preds, split.labels);
    row.weighted_f1 = weighted_f1(preds, split.labels, num_classes);
    check_row(row);
    rows.push_back(row);
  }
  return rows;
}

inline MetricsRow diagnostics_row(const StreamDiagnostics& d) {
  MetricsRow row;
  row.mean_abs_corr_u_r = d.mean_abs_corr_u_r;
  row.mean_cross_corr_r = d.mean_cross_corr_r;
  row.mean_kl_u_r = d.mean_kl_u_r;
  row.pid_r = d.pid.r;
  row.pid_s = d.pid.s;
  row.pid_u = d.pid.u1 + d.pid.u2;
  return row;
}

using ProgressFn = std::function<void(const std::string&)>;

/// Every configured arm x seed, evaluated on the test split under every
/// mask. Arms sharing a seed share its dataset and its Divide model.
inline AblationResult run_ablation(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  AblationResult result;
  const std::size_t C = cfg.synth.num_classes;
  for (std::uint64_t seed : cfg.experiment.seeds) {
    const Dataset ds = generate(cfg.synth, seed);
    const RngStream root(seed);
    bool need_divide = false;
    for (Arm a : cfg.experiment.arms) need_divide = need_divide || a == Arm::divide || a == Arm::divide_refine;

    std::optional<DivideResult> dv;
    MetricsRow diag;
    SlotData dtrain, dval, dtest;
    if (need_divide) {
      if (progress) progress("seed " + std::to_string(seed) + ": divide");
      dv.emplace(train_divide(ds, cfg.objective, cfg.model, cfg.schedule, root.fork("divide")));
      freeze(dv->model, &dv->state);
      dtrain = decomposed_slots(dv->model, ds.train);
      dval = decomposed_slots(dv->model, ds.val);
      dtest = decomposed_slots(dv->model, ds.test);
      diag = diagnostics_row(
          stream_diagnostics(dtest.slots, cfg.model.stream_width, ds.test.labels, cfg.experiment.pid_bins));
    }
    const SlotData rtrain = raw_slots(ds.train), rval = raw_slots(ds.val), rtest = raw_slots(ds.test);

    for (Arm arm : cfg.experiment.arms) {
      if (progress) progress("seed " + std::to_string(seed) + ": " + to_string(arm));
      ArmRecord rec{arm, seed, {}, {}, 0, 0};
      const bool decomposed = arm == Arm::divide || arm == Arm::divide_refine;
      const bool contrastive = arm == Arm::refine || arm == Arm::divide_refine;
      if (decomposed) {
        rec.divide_log = dv->log;
        rec.frozen_hash_before = dv->model.params().hash();
      }
      const SlotData& tr = decomposed ? dtrain : rtrain;
      const SlotData& va = decomposed ? dval : rval;
      const SlotData& te = decomposed ? dtest : rtest;
      BackboneResult br = train_backbone(tr, ds.train.labels, va, ds.val.labels, C, cfg.objective, cfg.model,
                                         cfg.schedule, contrastive, root.fork("backbone"));
      if (decomposed) {
        rec.frozen_hash_after = dv->model.params().hash();
        if (rec.frozen_hash_after != rec.frozen_hash_before)
          throw std::logic_error("ablation: frozen Phase-I parameters changed during " + to_string(arm));
      }
      rec.refine_log = br.log;
      MetricsRow base = decomposed ? diag : MetricsRow{};
      base.arm = to_string(arm);
      base.seed = seed;
      for (MetricsRow& row : evaluate_masks(br.backbone, te, ds.test, cfg.synth.modalities, cfg.experiment.masks, C, base))
        result.rows.push_back(std::move(row));
      result.records.push_back(std::move(rec));
    }
  }
  return result;
}

/// Mean weighted F1 of one (arm, mask) cell over all seeds.
inline double mean_wf1(const std::vector<MetricsRow>& rows, const std::string& arm, const std::string& mask) {
  double total = 0.0;
  std::size_t n = 0;
  for (const MetricsRow& r : rows)
    if (r.arm == arm && r.modality_mask == mask) {
      total += r.weighted_f1;
      ++n;
    }
  require(n > 0, "mean_wf1: no rows for arm " + arm + " mask " + mask);
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Manifests

inline std::string make_run_id(const ExperimentConfig& cfg, std::int64_t unix_time) {
  return std::to_string(unix_time) + "-" + cfg.hash_hex().substr(0, 8);
}

inline nlohmann::json versions() {
  return {{"dnr", DNR_VERSION},
          {"compiler", __VERSION__},
          {"toml++", std::to_string(TOML_LIB_MAJOR) + "." + std::to_string(TOML_LIB_MINOR) + "." +
                         std::to_string(TOML_LIB_PATCH)}};
}

/// Throws unless `dir` is empty of outputs or its manifest records the
/// same config hash. `force` skips the check.
inline void check_manifest(const fs::path& dir, const ExperimentConfig& cfg, bool force) {
  const fs::path path = dir / "manifest.json";
  if (force || !fs::exists(path)) return;
  const auto j = nlohmann::json::parse(read_text(path), nullptr, false);
  const std::string recorded = j.is_object() && j.contains("config_hash") ? j["config_hash"].get<std::string>() : "";
  if (recorded != cfg.hash_hex())
    throw contract_violation("output directory " + dir.string() + " holds results of config " +
                             (recorded.empty() ? "<unreadable>" : recorded) + ", current config is " +
                             cfg.hash_hex() + "; pass --force to overwrite");
}

/// Writes (or extends) dir/manifest.json before any output of the run.
inline void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& command,
                           const std::string& run_id, std::uint64_t seed, const std::vector<std::string>& outputs,
                           bool force) {
  const fs::path path = dir / "manifest.json";
  nlohmann::json j;
  if (!force && fs::exists(path)) {
    j = nlohmann::json::parse(read_text(path), nullptr, false);
    if (!j.is_object()) j = nlohmann::json::object();
  }
  j["config_hash"] = cfg.hash_hex();
  j["versions"] = versions();
  if (!j.contains("runs")) j["runs"] = nlohmann::json::array();
  j["runs"].push_back({{"command", command}, {"run_id", run_id}, {"seed", seed}, {"outputs", outputs}});
  write_text(path, j.dump(2) + "\n");
}

}  // namespace dnr
