// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dnr/autograd.hpp"
#include "dnr/error.hpp"
#include "dnr/params.hpp"
#include "dnr/rng.hpp"

namespace dnr {

/// Non-empty subset of {a, t, v}, always held in canonical a, t, v order.
class ModalitySet {
 public:
  ModalitySet() = default;

  static ModalitySet parse(std::string_view s) {
    ModalitySet m;
    for (char c : s) {
      require(c == 'a' || c == 't' || c == 'v',
              "ModalitySet: unknown modality '" + std::string(1, c) + "' (expected a, t or v)");
      require(m.names_.find(c) == std::string::npos,
              "ModalitySet: modality '" + std::string(1, c) + "' listed twice");
      m.names_.push_back(c);
    }
    require(!m.names_.empty(), "ModalitySet: empty modality set");
    std::string ordered;
    for (char c : std::string_view("atv"))
      if (m.names_.find(c) != std::string::npos) ordered.push_back(c);
    m.names_ = ordered;
    return m;
  }

  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }
  bool contains(char c) const noexcept { return names_.find(c) != std::string::npos; }
  char operator[](std::size_t i) const { return names_.at(i); }
  std::size_t index_of(char c) const {
    const auto p = names_.find(c);
    require(p != std::string::npos, "ModalitySet: modality '" + std::string(1, c) + "' not in {" + names_ + "}");
    return p;
  }
  bool subset_of(const ModalitySet& other) const {
    return std::all_of(names_.begin(), names_.end(), [&](char c) { return other.contains(c); });
  }
  const std::string& str() const noexcept { return names_; }
  auto begin() const noexcept { return names_.begin(); }
  auto end() const noexcept { return names_.end(); }

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

 private:
  std::string names_;
};

/// The unique / redundant / synergy streams of one modality for a batch.
struct StreamTriple {
  Var unique;
  Var redundant;
  Var synergy;
};

/// One StreamTriple per modality, in ModalitySet order.
using DecomposedBatch = std::vector<StreamTriple>;

struct EncoderShape {
  std::size_t input_width = 16;
  std::size_t hidden = 64;
  std::size_t stream_width = 32;
};

/// Two-layer tanh MLP whose 3d-wide output is read positionally as
/// (unique, redundant, synergy).
class ModalityEncoder {
 public:
  ModalityEncoder(std::string prefix, EncoderShape shape, ParameterStore& store, RngStream rng)
      : prefix_(std::move(prefix)), shape_(shape) {
    require(shape.input_width > 0 && shape.hidden > 0 && shape.stream_width > 0,
            "ModalityEncoder: widths must be positive");
    const std::size_t out = 3 * shape.stream_width;
    store.add(prefix_ + ".w1", xavier_uniform(shape.input_width, shape.hidden, rng));
    store.add(prefix_ + ".b1", Tensor({shape.hidden}));
    store.add(prefix_ + ".w2", xavier_uniform(shape.hidden, out, rng));
    store.add(prefix_ + ".b2", Tensor({out}));
  }

  const EncoderShape& shape() const noexcept { return shape_; }
  const std::string& prefix() const noexcept { return prefix_; }
  std::string final_weight() const { return prefix_ + ".w2"; }
  std::string final_bias() const { return prefix_ + ".b2"; }

  /// Raw trunk output, shape [N, 3d].
  Var trunk(const Binding& p, const Var& x) const {
    require(x.value().cols() == shape_.input_width,
            "encode: input width " + std::to_string(x.value().cols()) + " does not match encoder " +
                prefix_ + " width " + std::to_string(shape_.input_width));
    const Var h = tanh(matmul(x, p[prefix_ + ".w1"]) + p[prefix_ + ".b1"]);
    return matmul(h, p[prefix_ + ".w2"]) + p[prefix_ + ".b2"];
  }

  StreamTriple decompose(const Binding& p, const Var& x) const {
    const Var h = trunk(p, x);
    const std::size_t d = shape_.stream_width;
    const std::size_t axis = h.value().rank() == 2 ? 1 : 0;
    return {slice(h, axis, 0, d), slice(h, axis, d, 2 * d), slice(h, axis, 2 * d, 3 * d)};
  }

 private:
  std::string prefix_;
  EncoderShape shape_;
};

/// Shared affine map d -> |C| applied to every stream.
class PredictorHead {
 public:
  PredictorHead(std::string prefix, std::size_t stream_width, std::size_t num_classes,
                ParameterStore& store, RngStream rng)
      : prefix_(std::move(prefix)), width_(stream_width), classes_(num_classes) {
    require(num_classes >= 2, "PredictorHead: need at least two classes");
    store.add(prefix_ + ".w", xavier_uniform(stream_width, num_classes, rng));
    store.add(prefix_ + ".b", Tensor({num_classes}));
  }

  std::size_t input_width() const noexcept { return width_; }
  std::size_t num_classes() const noexcept { return classes_; }

  Var operator()(const Binding& p, const Var& stream) const {
    require(stream.value().cols() == width_, "PredictorHead: stream width " +
                                                 std::to_string(stream.value().cols()) +
                                                 " does not match head width " + std::to_string(width_));
    return matmul(stream, p[prefix_ + ".w"]) + p[prefix_ + ".b"];
  }

 private:
  std::string prefix_;
  std::size_t width_;
  std::size_t classes_;
};

/// Sum of g over every stream of every modality.
inline Var aggregate_logits(const Binding& p, const DecomposedBatch& reps, const PredictorHead& head) {
  require(!reps.empty(), "aggregate_logits: empty modality set");
  Var total;
  for (const StreamTriple& t : reps) {
    for (const Var* s : {&t.unique, &t.redundant, &t.synergy}) {
      const Var g = head(p, *s);
      total = total.valid() ? total + g : g;
    }
  }
  return total;
}

struct DivideModelShape {
  ModalitySet modalities;
  std::map<char, std::size_t> input_widths;
  std::size_t hidden = 64;
  std::size_t stream_width = 32;
  std::size_t num_classes = 2;
};

/// Phase-I model: one encoder per modality plus the shared predictor.
class DivideModel {
 public:
  DivideModel(const DivideModelShape& shape, RngStream rng) : shape_(shape) {
    require(!shape.modalities.empty(), "DivideModel: empty modality set");
    for (char m : shape.modalities) {
      auto w = shape.input_widths.find(m);
      require(w != shape.input_widths.end(), "DivideModel: no input width for modality " + std::string(1, m));
      encoders_.emplace_back("enc." + std::string(1, m),
                             EncoderShape{w->second, shape.hidden, shape.stream_width}, params_,
                             rng.fork("encoder." + std::string(1, m)));
    }
    head_.emplace("head", shape.stream_width, shape.num_classes, params_, rng.fork("head"));
  }

  const DivideModelShape& shape() const noexcept { return shape_; }
  const ModalitySet& modalities() const noexcept { return shape_.modalities; }
  std::size_t stream_width() const noexcept { return shape_.stream_width; }
  const ModalityEncoder& encoder(char m) const { return encoders_.at(shape_.modalities.index_of(m)); }
  const PredictorHead& head() const { return *head_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  /// inputs[i] is the [N, width] feature batch of modality i.
  DecomposedBatch decompose(const Binding& p, std::span<const Var> inputs) const {
    require(inputs.size() == encoders_.size(), "DivideModel: expected " + std::to_string(encoders_.size()) +
                                                   " modality inputs, got " + std::to_string(inputs.size()));
    DecomposedBatch out;
    for (std::size_t i = 0; i < encoders_.size(); ++i) out.push_back(encoders_[i].decompose(p, inputs[i]));
    return out;
  }

 private:
  DivideModelShape shape_;
  ParameterStore params_;
  std::vector<ModalityEncoder> encoders_;
  std::optional<PredictorHead> head_;
};

// ---------------------------------------------------------------------------
// Fusion backbones.

enum class BackboneKind { concat_mlp, attention_lite };

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::concat_mlp ? "concat-mlp" : "attention-lite";
}

inline BackboneKind parse_backbone_kind(std::string_view s) {
  if (s == "concat-mlp") return BackboneKind::concat_mlp;
  if (s == "attention-lite") return BackboneKind::attention_lite;
  throw contract_violation("backbone kind must be 'concat-mlp' or 'attention-lite', got '" + std::string(s) + "'");
}

struct BackboneShape {
  BackboneKind kind = BackboneKind::concat_mlp;
  std::size_t num_slots = 3;
  std::size_t slot_width = 96;
  std::size_t hidden = 64;
  std::size_t fused_width = 32;
  std::size_t num_classes = 2;
};

struct FusionOutput {
  Var fused;   // Z, [N, fused_width]
  Var logits;  // [N, num_classes]
};

/// concat-mlp:     Z = W2 tanh(W1 [x_1 ; ... ; x_M] + b1) + b2
/// attention-lite: h_m = tanh(W x_m + b), a = softmax_m(h_m . q), Z = sum_m a_m h_m
/// Both classify with logits = Wc Z + bc.
class Backbone {
 public:
  Backbone(BackboneShape shape, RngStream rng) : shape_(shape) {
    require(shape.num_slots > 0 && shape.slot_width > 0 && shape.fused_width > 0,
            "Backbone: sizes must be positive");
    if (shape.kind == BackboneKind::concat_mlp) {
      params_.add("bb.w1", xavier_uniform(shape.num_slots * shape.slot_width, shape.hidden, rng));
      params_.add("bb.b1", Tensor({shape.hidden}));
      params_.add("bb.w2", xavier_uniform(shape.hidden, shape.fused_width, rng));
      params_.add("bb.b2", Tensor({shape.fused_width}));
    } else {
      params_.add("bb.wt", xavier_uniform(shape.slot_width, shape.fused_width, rng));
      params_.add("bb.bt", Tensor({shape.fused_width}));
      params_.add("bb.q", xavier_uniform(shape.fused_width, 1, rng));
    }
    params_.add("bb.wc", xavier_uniform(shape.fused_width, shape.num_classes, rng));
    params_.add("bb.bc", Tensor({shape.num_classes}));
  }

  const BackboneShape& shape() const noexcept { return shape_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  /// slots[m] is the [N, slot_width] input of modality slot m. Zero rows are
  /// legal (masked modalities).
  FusionOutput forward(const Binding& p, std::span<const Var> slots) const {
    require(slots.size() == shape_.num_slots, "fuse_backbone: expected " + std::to_string(shape_.num_slots) +
                                                  " modality slots, got " + std::to_string(slots.size()));
    for (const Var& s : slots)
      require(s.valid() && s.value().cols() == shape_.slot_width,
              "fuse_backbone: slot width must be " + std::to_string(shape_.slot_width));
    Var z;
    if (shape_.kind == BackboneKind::concat_mlp) {
      const Var x = slots.size() == 1 ? slots[0] : concat(std::vector<Var>(slots.begin(), slots.end()), 1);
      z = matmul(tanh(matmul(x, p["bb.w1"]) + p["bb.b1"]), p["bb.w2"]) + p["bb.b2"];
    } else {
      std::vector<Var> hs, scores;
      for (const Var& s : slots) {
        hs.push_back(tanh(matmul(s, p["bb.wt"]) + p["bb.bt"]));
        scores.push_back(matmul(hs.back(), p["bb.q"]));
      }
      const Var attn = softmax(scores.size() == 1 ? scores[0] : concat(scores, 1));
      for (std::size_t m = 0; m < hs.size(); ++m) {
        const Var term = slice(attn, 1, m, m + 1) * hs[m];
        z = z.valid() ? z + term : term;
      }
    }
    return {z, matmul(z, p["bb.wc"]) + p["bb.bc"]};
  }

 private:
  BackboneShape shape_;
  ParameterStore params_;
};

}  // namespace dnr
