// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, read from TOML. Every omitted field takes its
// default; unknown tables or keys are rejected.
//
//   [synth]      num_classes, modalities, bits_unique, bits_redundant,
//                bits_synergy, feature_width, noise_std, n_train, n_val, n_test
//   [objective]  lambda_uncor, lambda_corr, alpha, lambda1, lambda2, tau, sigma, K
//   [model]      stream_width, hidden, backbone, backbone_hidden, fused_width
//   [schedule]   divide_epochs, refine_epochs, batch_size, lr, weight_decay, patience
//   [experiment] seeds, arms, modality_masks, pid_bins
//
// bits_unique and feature_width accept either one integer for every
// modality or a table keyed by modality, e.g. { a = 1, t = 0, v = 2 }.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "dnr/error.hpp"
#include "dnr/model.hpp"
#include "dnr/objectives.hpp"
#include "dnr/pipeline.hpp"
#include "dnr/rng.hpp"
#include "dnr/synth.hpp"

namespace dnr {

enum class Arm { baseline, divide, refine, divide_refine };

inline std::string to_string(Arm a) {
  switch (a) {
    case Arm::baseline: return "baseline";
    case Arm::divide: return "divide";
    case Arm::refine: return "refine";
    case Arm::divide_refine: return "divide+refine";
  }
  return "?";
}

inline Arm parse_arm(std::string_view s) {
  if (s == "baseline") return Arm::baseline;
  if (s == "divide") return Arm::divide;
  if (s == "refine") return Arm::refine;
  if (s == "divide+refine") return Arm::divide_refine;
  throw contract_violation("experiment.arms: unknown arm '" + std::string(s) +
                           "' (expected baseline, divide, refine or divide+refine)");
}

struct ExperimentSettings {
  std::vector<std::uint64_t> seeds{0};
  std::vector<Arm> arms{Arm::baseline, Arm::divide, Arm::refine, Arm::divide_refine};
  std::vector<ModalitySet> masks{ModalitySet::parse("atv"), ModalitySet::parse("av"), ModalitySet::parse("at"),
                                 ModalitySet::parse("tv")};
  std::size_t pid_bins = 4;
};

struct ExperimentConfig {
  SynthSpec synth;
  ObjectiveConfig objective;
  ModelConfig model;
  ScheduleConfig schedule;
  ExperimentSettings experiment;

  void validate() const {
    synth.validate();
    objective.validate();
    model.validate();
    schedule.validate();
    require(!experiment.seeds.empty(), "experiment.seeds must be non-empty");
    require(!experiment.arms.empty(), "experiment.arms must be non-empty");
    require(!experiment.masks.empty(), "experiment.modality_masks must be non-empty");
    for (const ModalitySet& m : experiment.masks)
      require(m.subset_of(synth.modalities), "experiment.modality_masks: mask '" + m.str() +
                                                 "' is not a subset of synth.modalities '" +
                                                 synth.modalities.str() + "'");
    require(experiment.pid_bins >= 2 && experiment.pid_bins <= 64, "experiment.pid_bins must lie in [2, 64]");
  }

  /// Every field in a fixed order; the basis of the config hash.
  std::string canonical() const {
    std::string out;
    char buf[128];
    auto num = [&](const char* key, double v) {
      std::snprintf(buf, sizeof buf, "%s=%.17g\n", key, v);
      out += buf;
    };
    auto str = [&](const char* key, const std::string& v) { out += std::string(key) + "=" + v + "\n"; };
    num("synth.num_classes", static_cast<double>(synth.num_classes));
    str("synth.modalities", synth.modalities.str());
    for (char m : synth.modalities) {
      num(("synth.bits_unique." + std::string(1, m)).c_str(), static_cast<double>(synth.unique_bits(m)));
      num(("synth.feature_width." + std::string(1, m)).c_str(), static_cast<double>(synth.width(m)));
    }
    num("synth.bits_redundant", static_cast<double>(synth.bits_redundant));
    num("synth.bits_synergy", static_cast<double>(synth.bits_synergy));
    num("synth.noise_std", synth.noise_std);
    num("synth.n_train", static_cast<double>(synth.n_train));
    num("synth.n_val", static_cast<double>(synth.n_val));
    num("synth.n_test", static_cast<double>(synth.n_test));
    num("objective.lambda_uncor", objective.lambda_uncor);
    num("objective.lambda_corr", objective.lambda_corr);
    num("objective.alpha", objective.alpha);
    num("objective.lambda1", objective.lambda1);
    num("objective.lambda2", objective.lambda2);
    num("objective.tau", objective.tau);
    num("objective.sigma", objective.sigma);
    num("objective.K", static_cast<double>(objective.K));
    num("model.stream_width", static_cast<double>(model.stream_width));
    num("model.hidden", static_cast<double>(model.hidden));
    str("model.backbone", to_string(model.backbone));
    num("model.backbone_hidden", static_cast<double>(model.backbone_hidden));
    num("model.fused_width", static_cast<double>(model.fused_width));
    num("schedule.divide_epochs", static_cast<double>(schedule.divide_epochs));
    num("schedule.refine_epochs", static_cast<double>(schedule.refine_epochs));
    num("schedule.batch_size", static_cast<double>(schedule.batch_size));
    num("schedule.lr", schedule.lr);
    num("schedule.weight_decay", schedule.weight_decay);
    num("schedule.patience", static_cast<double>(schedule.patience));
    for (std::uint64_t s : experiment.seeds) str("experiment.seed", std::to_string(s));
    for (Arm a : experiment.arms) str("experiment.arm", to_string(a));
    for (const ModalitySet& m : experiment.masks) str("experiment.mask", m.str());
    num("experiment.pid_bins", static_cast<double>(experiment.pid_bins));
    return out;
  }

  std::uint64_t hash() const { return detail::fnv1a(canonical()); }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }
};

namespace detail {

inline void check_keys(const toml::table& t, const std::string& section, std::initializer_list<std::string_view> keys) {
  for (const auto& [k, _] : t) {
    bool known = false;
    for (std::string_view allowed : keys) known = known || k.str() == allowed;
    require(known, "config: unknown field '" + (section.empty() ? "" : section + ".") + std::string(k.str()) + "'");
  }
}

inline double get_real(const toml::table& t, const std::string& section, std::string_view key, double def) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return def;
  if (auto v = n->value<double>()) return *v;
  throw contract_violation("config: field '" + section + "." + std::string(key) + "' must be a number");
}

inline std::size_t get_count(const toml::table& t, const std::string& section, std::string_view key,
                             std::size_t def) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return def;
  const auto v = n->value_exact<std::int64_t>();
  require(v.has_value(), "config: field '" + section + "." + std::string(key) + "' must be an integer");
  require(*v >= 0, "config: field '" + section + "." + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(*v);
}

inline std::string get_string(const toml::table& t, const std::string& section, std::string_view key,
                              const std::string& def) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return def;
  const auto v = n->value_exact<std::string>();
  require(v.has_value(), "config: field '" + section + "." + std::string(key) + "' must be a string");
  return *v;
}

inline std::map<char, std::size_t> get_per_modality(const toml::table& t, const std::string& field,
                                                    std::string_view key, const ModalitySet& mods,
                                                    std::size_t def) {
  std::map<char, std::size_t> out;
  const toml::node* n = t.get(key);
  if (n == nullptr || n->is_integer()) {
    const std::size_t v = n == nullptr ? def : get_count(t, "synth", key, def);
    for (char m : mods) out[m] = v;
    return out;
  }
  const toml::table* per = n->as_table();
  require(per != nullptr, "config: field '" + field + "' must be an integer or a table keyed by modality");
  for (const auto& [k, v] : *per) {
    const std::string name(k.str());
    require(name.size() == 1 && mods.contains(name[0]),
            "config: field '" + field + "." + name + "' names a modality outside synth.modalities");
    const auto x = v.value_exact<std::int64_t>();
    require(x.has_value() && *x >= 0, "config: field '" + field + "." + name + "' must be a non-negative integer");
    out[name[0]] = static_cast<std::size_t>(*x);
  }
  for (char m : mods)
    if (!out.contains(m)) out[m] = def;
  return out;
}

inline const toml::table* section(const toml::table& root, std::string_view name) {
  const toml::node* n = root.get(name);
  if (n == nullptr) return nullptr;
  const toml::table* t = n->as_table();
  require(t != nullptr, "config: '" + std::string(name) + "' must be a table");
  return t;
}

}  // namespace detail

inline ExperimentConfig parse_config(const toml::table& root) {
  using namespace detail;
  check_keys(root, "", {"synth", "objective", "model", "schedule", "experiment"});
  ExperimentConfig cfg;
  const toml::table empty;

  const toml::table& sy = section(root, "synth") ? *section(root, "synth") : empty;
  check_keys(sy, "synth", {"num_classes", "modalities", "bits_unique", "bits_redundant", "bits_synergy",
                           "feature_width", "noise_std", "n_train", "n_val", "n_test"});
  SynthSpec& s = cfg.synth;
  s.num_classes = get_count(sy, "synth", "num_classes", s.num_classes);
  s.modalities = ModalitySet::parse(get_string(sy, "synth", "modalities", s.modalities.str()));
  s.bits_unique = get_per_modality(sy, "synth.bits_unique", "bits_unique", s.modalities, 1);
  s.bits_redundant = get_count(sy, "synth", "bits_redundant", s.bits_redundant);
  s.bits_synergy = get_count(sy, "synth", "bits_synergy", s.bits_synergy);
  s.feature_width = get_per_modality(sy, "synth.feature_width", "feature_width", s.modalities, 16);
  s.noise_std = get_real(sy, "synth", "noise_std", s.noise_std);
  s.n_train = get_count(sy, "synth", "n_train", s.n_train);
  s.n_val = get_count(sy, "synth", "n_val", s.n_val);
  s.n_test = get_count(sy, "synth", "n_test", s.n_test);

  const toml::table& ob = section(root, "objective") ? *section(root, "objective") : empty;
  check_keys(ob, "objective", {"lambda_uncor", "lambda_corr", "alpha", "lambda1", "lambda2", "tau", "sigma", "K"});
  ObjectiveConfig& o = cfg.objective;
  o.lambda_uncor = get_real(ob, "objective", "lambda_uncor", o.lambda_uncor);
  o.lambda_corr = get_real(ob, "objective", "lambda_corr", o.lambda_corr);
  o.alpha = get_real(ob, "objective", "alpha", o.alpha);
  o.lambda1 = get_real(ob, "objective", "lambda1", o.lambda1);
  o.lambda2 = get_real(ob, "objective", "lambda2", o.lambda2);
  o.tau = get_real(ob, "objective", "tau", o.tau);
  o.sigma = get_real(ob, "objective", "sigma", o.sigma);
  o.K = get_count(ob, "objective", "K", o.K);

  const toml::table& mo = section(root, "model") ? *section(root, "model") : empty;
  check_keys(mo, "model", {"stream_width", "hidden", "backbone", "backbone_hidden", "fused_width"});
  ModelConfig& m = cfg.model;
  m.stream_width = get_count(mo, "model", "stream_width", m.stream_width);
  m.hidden = get_count(mo, "model", "hidden", m.hidden);
  m.backbone = parse_backbone_kind(get_string(mo, "model", "backbone", to_string(m.backbone)));
  m.backbone_hidden = get_count(mo, "model", "backbone_hidden", m.backbone_hidden);
  m.fused_width = get_count(mo, "model", "fused_width", m.fused_width);

  const toml::table& sc = section(root, "schedule") ? *section(root, "schedule") : empty;
  check_keys(sc, "schedule", {"divide_epochs", "refine_epochs", "batch_size", "lr", "weight_decay", "patience"});
  ScheduleConfig& h = cfg.schedule;
  h.divide_epochs = get_count(sc, "schedule", "divide_epochs", h.divide_epochs);
  h.refine_epochs = get_count(sc, "schedule", "refine_epochs", h.refine_epochs);
  h.batch_size = get_count(sc, "schedule", "batch_size", h.batch_size);
  h.lr = get_real(sc, "schedule", "lr", h.lr);
  h.weight_decay = get_real(sc, "schedule", "weight_decay", h.weight_decay);
  h.patience = get_count(sc, "schedule", "patience", h.patience);

  const toml::table& ex = section(root, "experiment") ? *section(root, "experiment") : empty;
  check_keys(ex, "experiment", {"seeds", "arms", "modality_masks", "pid_bins"});
  ExperimentSettings& e = cfg.experiment;
  if (const toml::node* n = ex.get("seeds")) {
    const toml::array* a = n->as_array();
    require(a != nullptr, "config: field 'experiment.seeds' must be an array of integers");
    e.seeds.clear();
    for (const auto& v : *a) {
      const auto x = v.value_exact<std::int64_t>();
      require(x.has_value() && *x >= 0, "config: field 'experiment.seeds' must hold non-negative integers");
      e.seeds.push_back(static_cast<std::uint64_t>(*x));
    }
  }
  auto strings = [&](std::string_view key) {
    std::vector<std::string> out;
    const toml::array* a = ex.get(key)->as_array();
    require(a != nullptr, "config: field 'experiment." + std::string(key) + "' must be an array of strings");
    for (const auto& v : *a) {
      const auto x = v.value_exact<std::string>();
      require(x.has_value(), "config: field 'experiment." + std::string(key) + "' must hold strings");
      out.push_back(*x);
    }
    return out;
  };
  if (ex.contains("arms")) {
    e.arms.clear();
    std::set<std::string> seen;
    for (const auto& a : strings("arms")) {
      require(seen.insert(a).second, "config: field 'experiment.arms' lists '" + a + "' twice");
      e.arms.push_back(parse_arm(a));
    }
  }
  if (ex.contains("modality_masks")) {
    e.masks.clear();
    for (const auto& m : strings("modality_masks")) e.masks.push_back(ModalitySet::parse(m));
  }
  e.pid_bins = get_count(ex, "experiment", "pid_bins", e.pid_bins);

  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_string(std::string_view text, std::string_view source = "<string>") {
  try {
    return parse_config(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    throw contract_violation("config: " + std::string(e.description()) + " (" + std::string(source) + ")");
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), "config: file not found: " + path.string());
  try {
    return parse_config(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    throw contract_violation("config: " + std::string(e.description()) + " (" + path.string() + ")");
  }
}

/// TOML text of a SynthSpec, readable back through the [synth] section.
inline std::string synth_to_toml(const SynthSpec& s) {
  std::string out = "[synth]\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "num_classes = %zu\n", s.num_classes);
  out += buf;
  out += "modalities = \"" + s.modalities.str() + "\"\n";
  auto per = [&](const char* key, auto get) {
    out += std::string(key) + " = { ";
    bool first = true;
    for (char m : s.modalities) {
      std::snprintf(buf, sizeof buf, "%s%c = %zu", first ? "" : ", ", m, get(m));
      out += buf;
      first = false;
    }
    out += " }\n";
  };
  per("bits_unique", [&](char m) { return s.unique_bits(m); });
  std::snprintf(buf, sizeof buf, "bits_redundant = %zu\nbits_synergy = %zu\n", s.bits_redundant, s.bits_synergy);
  out += buf;
  per("feature_width", [&](char m) { return s.width(m); });
  std::snprintf(buf, sizeof buf, "noise_std = %.17g\nn_train = %zu\nn_val = %zu\nn_test = %zu\n", s.noise_std,
                s.n_train, s.n_val, s.n_test);
  out += buf;
  return out;
}

}  // namespace dnr
