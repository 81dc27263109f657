// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multimodal classification data with a known split of label
// information into unique, redundant and synergistic latent bits.
//
// Each latent bit is embedded as +-1 along a fixed orthonormal direction of
// the feature space of every modality that observes it:
//   unique bits of m   -> only modality m
//   redundant bits     -> every modality
//   synergy pair j     -> first bit in modality (j mod M), second bit in
//                         modality (j + 1 mod M); the label sees only their XOR
// Isotropic Gaussian noise is added on top.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dnr/error.hpp"
#include "dnr/model.hpp"
#include "dnr/objectives.hpp"
#include "dnr/rng.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

struct SynthSpec {
  std::size_t num_classes = 2;
  ModalitySet modalities = ModalitySet::parse("atv");
  std::map<char, std::size_t> bits_unique{{'a', 1}, {'t', 1}, {'v', 1}};
  std::size_t bits_redundant = 1;
  std::size_t bits_synergy = 1;  // number of XOR pairs
  std::map<char, std::size_t> feature_width{{'a', 16}, {'t', 16}, {'v', 16}};
  double noise_std = 0.3;
  std::size_t n_train = 2000;
  std::size_t n_val = 400;
  std::size_t n_test = 400;

  std::size_t unique_bits(char m) const {
    auto it = bits_unique.find(m);
    return it == bits_unique.end() ? 0 : it->second;
  }

  std::size_t width(char m) const {
    auto it = feature_width.find(m);
    require(it != feature_width.end(), "synth.feature_width: missing width for modality " + std::string(1, m));
    return it->second;
  }

  /// (pair index, half) placements observed by modality m.
  std::vector<std::pair<std::size_t, std::size_t>> synergy_halves(char m) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t M = modalities.size(), i = modalities.index_of(m);
    for (std::size_t j = 0; j < bits_synergy; ++j) {
      if (j % M == i) out.emplace_back(j, 0);
      if ((j + 1) % M == i) out.emplace_back(j, 1);
    }
    return out;
  }

  std::size_t embedded_bits(char m) const {
    return unique_bits(m) + bits_redundant + synergy_halves(m).size();
  }

  std::size_t total_label_bits() const {
    std::size_t n = bits_redundant + bits_synergy;
    for (char m : modalities) n += unique_bits(m);
    return n;
  }

  void validate() const {
    require(num_classes >= 2, "synth.num_classes must be at least 2");
    require(!modalities.empty(), "synth.modalities must be non-empty");
    for (const auto& [m, _] : bits_unique)
      require(modalities.contains(m), "synth.bits_unique: modality " + std::string(1, m) + " is not active");
    require(bits_synergy == 0 || modalities.size() >= 2, "synth.bits_synergy needs at least two modalities");
    require(noise_std >= 0.0, "synth.noise_std must be non-negative");
    require(n_train >= 2 && n_val >= 1 && n_test >= 1, "synth: split sizes too small");
    const std::size_t bits = total_label_bits();
    require(bits < 63 && (std::uint64_t{1} << bits) >= num_classes,
            "synth: label bits (" + std::to_string(bits) + ") cannot cover " + std::to_string(num_classes) +
                " classes");
    for (char m : modalities)
      require(width(m) >= embedded_bits(m), "synth.feature_width of modality " + std::string(1, m) +
                                                " is smaller than its " + std::to_string(embedded_bits(m)) +
                                                " embedded bits");
  }

  /// 2 classes, 1 unique bit per modality, 1 redundant, 1 synergy pair,
  /// width 16, noise 0.3, 2000/400/400.
  static SynthSpec reference() { return SynthSpec{}; }
};

struct Latents {
  std::vector<std::vector<std::uint8_t>> unique;    // per modality, ModalitySet order
  std::vector<std::uint8_t> redundant;
  std::vector<std::array<std::uint8_t, 2>> synergy;  // XOR pairs
};

/// Label bits in order (unique bits by modality, redundant bits, XOR of each
/// synergy pair) read as a little-endian binary integer, modulo num_classes.
inline int bayes_label(const Latents& z, std::size_t num_classes) {
  require(num_classes >= 2, "bayes_label: need at least two classes");
  std::vector<std::uint8_t> bits;
  for (const auto& u : z.unique) bits.insert(bits.end(), u.begin(), u.end());
  bits.insert(bits.end(), z.redundant.begin(), z.redundant.end());
  for (const auto& pair : z.synergy) bits.push_back(static_cast<std::uint8_t>(pair[0] ^ pair[1]));
  std::uint64_t value = 0, weight = 1 % num_classes;
  for (std::uint8_t b : bits) {
    value = (value + (b ? weight : 0)) % num_classes;
    weight = (weight * 2) % num_classes;
  }
  return static_cast<int>(value);
}

struct Split {
  std::vector<std::size_t> ids;
  std::vector<int> labels;
  std::vector<Tensor> features;  // per modality, [N, width]
  std::vector<Latents> latents;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
  SynthSpec spec;
  Split train, val, test;
};

namespace detail {

/// k orthonormal columns of a width x k matrix from Gaussian draws.
inline Eigen::MatrixXd random_orthonormal(std::size_t width, std::size_t k, RngStream rng) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(std::max<std::size_t>(k, 1)));
  for (Eigen::Index c = 0; c < g.cols(); ++c)
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  return q.leftCols(static_cast<Eigen::Index>(k));
}

}  // namespace detail

inline Dataset generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const RngStream root(seed);
  const std::size_t M = spec.modalities.size();

  std::vector<Eigen::MatrixXd> directions;
  for (char m : spec.modalities)
    directions.push_back(detail::random_orthonormal(spec.width(m), spec.embedded_bits(m),
                                                    root.fork("projection").fork(std::string(1, m))));

  const std::size_t total = spec.n_train + spec.n_val + spec.n_test;
  Dataset ds;
  ds.spec = spec;
  auto init = [&](Split& s, std::size_t n) {
    for (char m : spec.modalities) s.features.emplace_back(Shape{n, spec.width(m)});
    s.ids.reserve(n);
  };
  init(ds.train, spec.n_train);
  init(ds.val, spec.n_val);
  init(ds.test, spec.n_test);

  const RngStream samples = root.fork("sample");
  for (std::size_t id = 0; id < total; ++id) {
    RngStream rng = samples.fork(static_cast<std::uint64_t>(id));
    Latents z;
    for (char m : spec.modalities) {
      std::vector<std::uint8_t> u(spec.unique_bits(m));
      for (auto& b : u) b = static_cast<std::uint8_t>(rng.next_u64() & 1U);
      z.unique.push_back(std::move(u));
    }
    z.redundant.resize(spec.bits_redundant);
    for (auto& b : z.redundant) b = static_cast<std::uint8_t>(rng.next_u64() & 1U);
    z.synergy.resize(spec.bits_synergy);
    for (auto& pair : z.synergy)
      for (auto& b : pair) b = static_cast<std::uint8_t>(rng.next_u64() & 1U);

    Split& split = id < spec.n_train ? ds.train : (id < spec.n_train + spec.n_val ? ds.val : ds.test);
    const std::size_t row = split.ids.size();
    for (std::size_t mi = 0; mi < M; ++mi) {
      const char m = spec.modalities[mi];
      std::vector<std::uint8_t> bits = z.unique[mi];
      bits.insert(bits.end(), z.redundant.begin(), z.redundant.end());
      for (auto [pair, half] : spec.synergy_halves(m)) bits.push_back(z.synergy[pair][half]);
      Tensor& f = split.features[mi];
      for (std::size_t c = 0; c < f.cols(); ++c) {
        double v = 0.0;
        for (std::size_t j = 0; j < bits.size(); ++j)
          v += (bits[j] ? 1.0 : -1.0) * directions[mi](static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
        f(row, c) = v + spec.noise_std * rng.normal();
      }
    }
    split.ids.push_back(id);
    split.labels.push_back(bayes_label(z, spec.num_classes));
    split.latents.push_back(std::move(z));
  }
  return ds;
}

/// Projects each row onto the first principal direction of the batch and
/// quantises the projections into `bins` equal-frequency bins (ties broken
/// by row index). Returns one symbol in [0, bins) per row.
inline std::vector<int> discretize(const Tensor& vectors, std::size_t bins) {
  require(bins >= 2, "discretize: bins must be at least 2");
  const std::size_t n = vectors.rows(), w = vectors.cols();
  require(n >= bins, "discretize: batch of " + std::to_string(n) + " is smaller than " + std::to_string(bins) + " bins");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(w));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < w; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vectors(r, c);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  require(cov.trace() >= kMinVariance, "discretize: batch has zero variance");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd dir = eig.eigenvectors().col(eig.eigenvectors().cols() - 1);
  Eigen::Index lead = 0;
  dir.cwiseAbs().maxCoeff(&lead);
  if (dir(lead) < 0) dir = -dir;
  const Eigen::VectorXd proj = x * dir;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return proj(static_cast<Eigen::Index>(i)) < proj(static_cast<Eigen::Index>(j));
  });
  std::vector<int> out(n);
  for (std::size_t rank = 0; rank < n; ++rank) out[order[rank]] = static_cast<int>(rank * bins / n);
  return out;
}

}  // namespace dnr
