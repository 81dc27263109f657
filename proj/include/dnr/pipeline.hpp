// SPDX-License-Identifier: Apache-2.0
//
// Two-phase training.
//
//   Divide: encoders + shared predictor trained on
//           CE(sum of g over streams) + lambda_uncor L_uncor + lambda_corr L_corr.
//   freeze: every Divide parameter becomes a constant.
//   Refine: the frozen streams of each modality are concatenated (u|r|s)
//           into a bundle slot; the backbone is trained on the full bundle
//           with CE plus InfoNCE between redundancy-augmented views and
//           between augmented views and single-modality (masked) bundles.
//
// The backbone trainer also runs on raw features, which gives the
// baseline and refine-only ablation arms.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnr/adamw.hpp"
#include "dnr/autograd.hpp"
#include "dnr/error.hpp"
#include "dnr/metrics.hpp"
#include "dnr/model.hpp"
#include "dnr/objectives.hpp"
#include "dnr/params.hpp"
#include "dnr/random.hpp"
#include "dnr/rng.hpp"
#include "dnr/synth.hpp"

namespace dnr {

struct ModelConfig {
  std::size_t stream_width = 32;
  std::size_t hidden = 64;
  BackboneKind backbone = BackboneKind::concat_mlp;
  std::size_t backbone_hidden = 64;
  std::size_t fused_width = 32;

  void validate() const {
    require(stream_width > 0, "model.stream_width must be positive");
    require(hidden > 0, "model.hidden must be positive");
    require(backbone_hidden > 0, "model.backbone_hidden must be positive");
    require(fused_width > 0, "model.fused_width must be positive");
  }
};

struct ScheduleConfig {
  std::size_t divide_epochs = 50;
  std::size_t refine_epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t patience = 10;

  void validate() const {
    require(batch_size >= 2, "schedule.batch_size must be at least 2");
    require(lr > 0.0, "schedule.lr must be positive");
    require(weight_decay >= 0.0, "schedule.weight_decay must be non-negative");
    require(patience >= 1, "schedule.patience must be at least 1");
  }
};

enum class Phase { divide, refine };

struct PhaseState {
  Phase phase = Phase::divide;
  std::set<std::string> frozen_manifest;
  std::size_t epoch = 0;
  double best_metric = -1.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double uncor_loss = 0.0;
  double corr_loss = 0.0;
  double aug_intra = 0.0;
  double aug_mask = 0.0;
  double total = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_wf1 = 0.0;
};

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,task_loss,uncor_loss,corr_loss,aug_intra,aug_mask,total,train_acc,val_acc,val_wf1\n";
  char buf[512];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch,
                  e.task_loss, e.uncor_loss, e.corr_loss, e.aug_intra, e.aug_mask, e.total, e.train_acc,
                  e.val_acc, e.val_wf1);
    out += buf;
  }
  return out;
}

/// Row argmax, lowest index on ties.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

/// Minibatches of a shuffled order; a trailing batch of one sample is
/// dropped because the correlation and contrastive losses need N >= 2.
inline std::vector<std::vector<std::size_t>> minibatches(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch) {
    const std::size_t e = std::min(order.size(), b + batch);
    if (e - b < 2) continue;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

namespace detail {
inline std::string coords(const char* phase, std::size_t epoch, std::size_t batch) {
  return std::string(phase) + " epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": ";
}

inline void restore(ParameterStore& store, const std::map<std::string, Tensor>& snapshot) {
  for (const auto& [name, t] : snapshot) store.assign(name, t);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Phase I

inline DivideModelShape divide_shape(const SynthSpec& spec, const ModelConfig& mc) {
  DivideModelShape s;
  s.modalities = spec.modalities;
  for (char m : spec.modalities) s.input_widths[m] = spec.width(m);
  s.hidden = mc.hidden;
  s.stream_width = mc.stream_width;
  s.num_classes = spec.num_classes;
  return s;
}

/// Per-modality trunk outputs [N, 3d] (u|r|s) with no tape bookkeeping.
inline std::vector<Tensor> decompose_split(const DivideModel& model, const Split& split) {
  Tape tape;
  const Binding p = bind_constants(tape, model.params());
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < model.modalities().size(); ++i)
    out.push_back(model.encoder(model.modalities()[i]).trunk(p, tape.constant(split.features.at(i))).value());
  return out;
}

/// Class logits of the additive predictor over a whole split.
inline Tensor divide_logits(const DivideModel& model, const std::vector<Tensor>& features) {
  Tape tape;
  const Binding p = bind_constants(tape, model.params());
  std::vector<Var> inputs;
  for (const Tensor& f : features) inputs.push_back(tape.constant(f));
  return aggregate_logits(p, model.decompose(p, inputs), model.head()).value();
}

struct DivideResult {
  DivideModel model;
  std::vector<EpochLog> log;
  PhaseState state;
};

inline DivideResult train_divide(const Dataset& data, const ObjectiveConfig& obj, const ModelConfig& mc,
                                 const ScheduleConfig& sched, RngStream rng) {
  obj.validate();
  mc.validate();
  sched.validate();
  require(data.train.size() >= 2, "train_divide: training split needs at least 2 samples");
  DivideModel model(divide_shape(data.spec, mc), rng.fork("divide.init"));
  DivideResult result{model, {}, {}};
  DivideModel& m = result.model;
  AdamW opt({sched.lr, 0.9, 0.999, 1e-8, sched.weight_decay});
  const std::size_t M = m.modalities().size();
  const std::size_t C = data.spec.num_classes;

  std::map<std::string, Tensor> best = m.params().all();
  std::size_t since_best = 0;
  const RngStream shuffle = rng.fork("divide.shuffle");

  for (std::size_t epoch = 1; epoch <= sched.divide_epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    const auto batches = minibatches(shuffled_indices(data.train.size(), shuffle.fork(epoch)), sched.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      try {
        Tape tape;
        const Binding p = bind(tape, m.params());
        std::vector<Var> inputs;
        for (std::size_t i = 0; i < M; ++i) inputs.push_back(tape.constant(data.train.features[i].gather_rows(idx)));
        const DecomposedBatch reps = m.decompose(p, inputs);
        const auto labels = gather_labels(data.train.labels, idx);
        const Var task = cross_entropy(aggregate_logits(p, reps, m.head()), labels);
        const Var uncor = loss_uncor(reps);
        const Var corr = M >= 2 ? loss_corr(reps, obj.alpha) : tape.constant(Tensor::scalar(0.0));
        const Var total = divide_objective(task, uncor, corr, obj);
        row.task_loss += task.value().item();
        row.uncor_loss += uncor.value().item();
        row.corr_loss += corr.value().item();
        row.total += total.value().item();
        opt.step(m.params(), tape.backward(total));
      } catch (const numeric_fault& e) {
        throw numeric_fault(detail::coords("divide", epoch, bi) + e.what());
      }
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    row.task_loss /= nb;
    row.uncor_loss /= nb;
    row.corr_loss /= nb;
    row.total /= nb;

    const auto train_pred = argmax_rows(divide_logits(m, data.train.features));
    const auto val_pred = argmax_rows(divide_logits(m, data.val.features));
    row.train_acc = accuracy(train_pred, data.train.labels);
    row.val_acc = accuracy(val_pred, data.val.labels);
    row.val_wf1 = weighted_f1(val_pred, data.val.labels, C);
    result.log.push_back(row);
    result.state.epoch = epoch;

    // Ties count as improvement: later epochs of equal validation F1 have
    // further optimised the decomposition terms.
    if (row.val_wf1 >= result.state.best_metric) {
      result.state.best_metric = row.val_wf1;
      best = m.params().all();
      since_best = 0;
    } else if (++since_best >= sched.patience) {
      break;
    }
  }
  detail::restore(m.params(), best);
  return result;
}

/// Marks every Phase-I parameter non-trainable. Idempotent.
inline void freeze(DivideModel& model, PhaseState* state = nullptr) {
  model.params().freeze_all();
  if (state != nullptr) {
    state->phase = Phase::refine;
    state->frozen_manifest = model.params().frozen_manifest();
  }
}

inline bool is_frozen(const DivideModel& model) {
  for (const auto& name : model.params().names())
    if (!model.params().frozen(name)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Bundles

/// Column range of a slot that augmentation perturbs.
struct AugRange {
  std::size_t offset = 0;
  std::size_t width = 0;
};

/// Per-modality backbone inputs for a whole split, plus the column range
/// that augmentation targets (the redundancy stream, or the whole raw
/// vector for the refine-only arm).
struct SlotData {
  std::vector<Tensor> slots;  // per modality, [N, slot_width]
  AugRange aug;

  std::size_t size() const { return slots.empty() ? 0 : slots.front().rows(); }
  std::size_t slot_width() const { return slots.empty() ? 0 : slots.front().cols(); }
};

inline SlotData decomposed_slots(const DivideModel& model, const Split& split) {
  const std::size_t d = model.stream_width();
  return {decompose_split(model, split), {d, d}};
}

/// Raw features, zero-padded to a common width.
inline SlotData raw_slots(const Split& split) {
  std::size_t w = 0;
  for (const Tensor& f : split.features) w = std::max(w, f.cols());
  SlotData out;
  for (const Tensor& f : split.features) {
    Tensor s({f.rows(), w});
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < f.cols(); ++c) s(r, c) = f(r, c);
    out.slots.push_back(std::move(s));
  }
  out.aug = {0, w};
  return out;
}

/// r + eps with eps ~ Normal(0, (sigma * s_j)^2), s_j the batch standard
/// deviation of column j. sigma = 0 returns r unchanged.
inline Tensor augment_redundancy(const Tensor& r, double sigma, RngStream& rng) {
  require(sigma >= 0.0, "augment_redundancy: sigma must be non-negative");
  const std::size_t n = r.rows(), d = r.cols();
  std::vector<double> sd(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += r(i, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (r(i, c) - mu) * (r(i, c) - mu);
    sd[c] = std::sqrt(var / static_cast<double>(n));
  }
  Tensor out = r;
  const Tensor eps = gaussian_sample(rng, r.shape(), 0.0, 1.0);
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out(i, c) += sigma * sd[c] * eps(i, c);
  return out;
}

struct BundleSet {
  std::vector<Tensor> full;                     // per modality
  std::vector<std::vector<Tensor>> masked;      // [m][slot]
  std::vector<std::vector<Tensor>> augmented;   // [k][slot]

  std::size_t view_count() const noexcept { return 1 + masked.size() + augmented.size(); }
};

inline BundleSet build_bundles(std::span<const Tensor> slots, AugRange aug, std::size_t K, double sigma,
                               RngStream& rng) {
  require(K >= 1, "build_bundles: K must be at least 1");
  require(!slots.empty(), "build_bundles: empty modality set");
  BundleSet b;
  b.full.assign(slots.begin(), slots.end());
  for (std::size_t m = 0; m < slots.size(); ++m) {
    std::vector<Tensor> bundle;
    for (std::size_t s = 0; s < slots.size(); ++s) bundle.push_back(s == m ? slots[s] : Tensor(slots[s].shape()));
    b.masked.push_back(std::move(bundle));
  }
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<Tensor> bundle;
    for (const Tensor& slot : slots) {
      require(aug.offset + aug.width <= slot.cols(), "build_bundles: augmentation range outside the slot");
      const Tensor noisy = augment_redundancy(slot.col_range(aug.offset, aug.offset + aug.width), sigma, rng);
      Tensor view = slot;
      for (std::size_t r = 0; r < view.rows(); ++r)
        for (std::size_t c = 0; c < aug.width; ++c) view(r, aug.offset + c) = noisy(r, c);
      bundle.push_back(std::move(view));
    }
    b.augmented.push_back(std::move(bundle));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Phase II

inline BackboneShape backbone_shape(const ModelConfig& mc, std::size_t num_slots, std::size_t slot_width,
                                    std::size_t num_classes) {
  return {mc.backbone, num_slots, slot_width, mc.backbone_hidden, mc.fused_width, num_classes};
}

/// Backbone logits with the modalities outside `mask` fed as zero slots.
inline Tensor backbone_logits(const Backbone& bb, const std::vector<Tensor>& slots, const ModalitySet& modalities,
                              const ModalitySet& mask) {
  require(!mask.empty(), "predict: empty modality mask");
  require(mask.subset_of(modalities), "predict: mask {" + mask.str() + "} is not a subset of {" + modalities.str() + "}");
  Tape tape;
  const Binding p = bind_constants(tape, bb.params());
  std::vector<Var> in;
  for (std::size_t i = 0; i < slots.size(); ++i)
    in.push_back(tape.constant(mask.contains(modalities[i]) ? slots[i] : Tensor(slots[i].shape())));
  return bb.forward(p, in).logits.value();
}

struct BackboneResult {
  Backbone backbone;
  std::vector<EpochLog> log;
  PhaseState state;
};

/// Trains a fresh backbone on fixed slot features. With `contrastive` the
/// loss is the full refine objective; otherwise plain cross-entropy on the
/// full bundle. Contrastive terms are skipped when both weights are zero.
inline BackboneResult train_backbone(const SlotData& train, const std::vector<int>& train_labels, const SlotData& val,
                                     const std::vector<int>& val_labels, std::size_t num_classes,
                                     const ObjectiveConfig& obj, const ModelConfig& mc, const ScheduleConfig& sched,
                                     bool contrastive, RngStream rng) {
  obj.validate();
  mc.validate();
  sched.validate();
  require(train.size() >= 2, "train_refine: training split needs at least 2 samples");
  const std::size_t M = train.slots.size();
  BackboneResult result{Backbone(backbone_shape(mc, M, train.slot_width(), num_classes), rng.fork("backbone.init")),
                        {}, {}};
  result.state.phase = Phase::refine;
  Backbone& bb = result.backbone;
  AdamW opt({sched.lr, 0.9, 0.999, 1e-8, sched.weight_decay});
  const bool use_aux = contrastive && (obj.lambda1 != 0.0 || obj.lambda2 != 0.0);
  const RngStream shuffle = rng.fork("refine.shuffle");
  const RngStream augment = rng.fork("refine.augment");

  std::map<std::string, Tensor> best = bb.params().all();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= sched.refine_epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    const auto batches = minibatches(shuffled_indices(train.size(), shuffle.fork(epoch)), sched.batch_size);
    RngStream aug_rng = augment.fork(epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      try {
        std::vector<Tensor> slots;
        for (const Tensor& s : train.slots) slots.push_back(s.gather_rows(idx));
        const auto labels = gather_labels(train_labels, idx);

        Tape tape;
        const Binding p = bind(tape, bb.params());
        auto forward = [&](const std::vector<Tensor>& bundle) {
          std::vector<Var> in;
          for (const Tensor& t : bundle) in.push_back(tape.constant(t));
          return bb.forward(p, in);
        };
        Var total;
        if (use_aux) {
          const BundleSet bundles = build_bundles(slots, train.aug, obj.K, obj.sigma, aug_rng);
          const Var task = cross_entropy(forward(bundles.full).logits, labels);
          std::vector<Var> z_masked, z_aug;
          for (const auto& b : bundles.masked) z_masked.push_back(forward(b).fused);
          for (const auto& b : bundles.augmented) z_aug.push_back(forward(b).fused);
          const Var intra = loss_aug_intra(z_aug, obj.tau);
          const Var mask = loss_aug_mask(z_aug, z_masked, obj.tau);
          total = refine_objective(task, intra, mask, obj);
          row.task_loss += task.value().item();
          row.aug_intra += intra.value().item();
          row.aug_mask += mask.value().item();
        } else {
          total = cross_entropy(forward(slots).logits, labels);
          row.task_loss += total.value().item();
        }
        row.total += total.value().item();
        opt.step(bb.params(), tape.backward(total));
      } catch (const numeric_fault& e) {
        throw numeric_fault(detail::coords("refine", epoch, bi) + e.what());
      }
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    row.task_loss /= nb;
    row.aug_intra /= nb;
    row.aug_mask /= nb;
    row.total /= nb;

    ModalitySet all;
    {
      std::string names;
      for (std::size_t i = 0; i < M; ++i) names.push_back("atv"[i]);
      all = ModalitySet::parse(names);
    }
    const auto train_pred = argmax_rows(backbone_logits(bb, train.slots, all, all));
    const auto val_pred = argmax_rows(backbone_logits(bb, val.slots, all, all));
    row.train_acc = accuracy(train_pred, train_labels);
    row.val_acc = accuracy(val_pred, val_labels);
    row.val_wf1 = weighted_f1(val_pred, val_labels, num_classes);
    result.log.push_back(row);
    result.state.epoch = epoch;

    if (row.val_wf1 >= result.state.best_metric) {
      result.state.best_metric = row.val_wf1;
      best = bb.params().all();
      since_best = 0;
    } else if (++since_best >= sched.patience) {
      break;
    }
  }
  detail::restore(bb.params(), best);
  return result;
}

struct RefineResult {
  Backbone backbone;
  std::vector<EpochLog> log;
  PhaseState state;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Phase II on a frozen Divide model.
inline RefineResult train_refine(const DivideModel& frozen, const Dataset& data, const ObjectiveConfig& obj,
                                 const ModelConfig& mc, const ScheduleConfig& sched, RngStream rng,
                                 bool contrastive = true) {
  require(is_frozen(frozen), "train_refine: the Divide model must be frozen first");
  const std::uint64_t before = frozen.params().hash();
  const SlotData train = decomposed_slots(frozen, data.train);
  const SlotData val = decomposed_slots(frozen, data.val);
  BackboneResult br = train_backbone(train, data.train.labels, val, data.val.labels, data.spec.num_classes, obj, mc,
                                     sched, contrastive, rng);
  const std::uint64_t after = frozen.params().hash();
  if (before != after) throw std::logic_error("train_refine: frozen Phase-I parameters changed during refinement");
  br.state.frozen_manifest = frozen.params().frozen_manifest();
  return {std::move(br.backbone), std::move(br.log), std::move(br.state), before, after};
}

// ---------------------------------------------------------------------------
// Inference

/// One utterance: a rank-1 feature vector per modality of the model.
using UtteranceFeatures = std::map<char, Tensor>;

struct Prediction {
  int label = 0;
  Tensor logits;
};

inline Prediction predict(const DivideModel& model, const Backbone& bb, const UtteranceFeatures& utt,
                          const ModalitySet& mask) {
  require(!mask.empty(), "predict: empty modality mask");
  std::vector<Tensor> slots;
  {
    Tape tape;
    const Binding p = bind_constants(tape, model.params());
    for (char m : model.modalities()) {
      auto it = utt.find(m);
      require(it != utt.end(), "predict: utterance lacks modality " + std::string(1, m));
      const Tensor& x = it->second;
      const Tensor row({1, x.size()}, std::vector<double>(x.data().begin(), x.data().end()));
      slots.push_back(model.encoder(m).trunk(p, tape.constant(row)).value());
    }
  }
  Tensor logits = backbone_logits(bb, slots, model.modalities(), mask);
  const int label = argmax_rows(logits).front();
  return {label, logits.row(0)};
}

}  // namespace dnr
