// SPDX-License-Identifier: Apache-2.0
//
// Exact two-source Partial Information Decomposition on small discrete
// joint distributions p(y, a, b), using the Williams-Beer I_min redundancy:
//
//   I_spec(y; S) = sum_s p(s|y) [log2 p(y|s) - log2 p(y)]
//   R            = sum_y p(y) min(I_spec(y; A), I_spec(y; B))
//   U_A = I(Y;A) - R,  U_B = I(Y;B) - R,  S = I(Y;A,B) - U_A - U_B - R
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dnr/error.hpp"

namespace dnr {

enum class Source { A, B, AB };

class JointDist {
 public:
  static constexpr std::size_t kMaxAlphabet = 64;
  static constexpr double kMassTolerance = 1e-12;

  /// p is indexed [(y * na + a) * nb + b].
  JointDist(std::size_t ny, std::size_t na, std::size_t nb, std::vector<double> p)
      : ny_(ny), na_(na), nb_(nb), p_(std::move(p)) {
    require(ny >= 1 && na >= 1 && nb >= 1, "JointDist: alphabets must be non-empty");
    require(ny <= kMaxAlphabet && na <= kMaxAlphabet && nb <= kMaxAlphabet,
            "JointDist: alphabets are limited to 64 symbols");
    require(p_.size() == ny * na * nb, "JointDist: table size does not match alphabets");
    double mass = 0.0;
    for (double v : p_) {
      require(std::isfinite(v) && v >= 0.0, "JointDist: probabilities must be finite and non-negative");
      mass += v;
    }
    require(std::abs(mass - 1.0) <= kMassTolerance,
            "JointDist: total mass " + std::to_string(mass) + " differs from 1");
  }

  /// Empirical joint from paired samples; alphabets are max symbol + 1.
  static JointDist from_samples(std::span<const int> y, std::span<const int> a, std::span<const int> b) {
    require(y.size() == a.size() && y.size() == b.size() && !y.empty(),
            "JointDist::from_samples: sequences must be non-empty and of equal length");
    auto alphabet = [](std::span<const int> s) {
      int mx = 0;
      for (int v : s) {
        require(v >= 0, "JointDist::from_samples: negative symbol");
        mx = std::max(mx, v);
      }
      return static_cast<std::size_t>(mx) + 1;
    };
    const std::size_t ny = alphabet(y), na = alphabet(a), nb = alphabet(b);
    require(ny <= kMaxAlphabet && na <= kMaxAlphabet && nb <= kMaxAlphabet,
            "JointDist::from_samples: alphabets are limited to 64 symbols");
    std::vector<double> counts(ny * na * nb, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i)
      counts[(static_cast<std::size_t>(y[i]) * na + static_cast<std::size_t>(a[i])) * nb +
             static_cast<std::size_t>(b[i])] += 1.0;
    const double n = static_cast<double>(y.size());
    for (double& c : counts) c /= n;
    return JointDist(ny, na, nb, std::move(counts));
  }

  /// Reads rows "y,a,b,p". A non-numeric first line is taken as a header.
  /// Unlisted cells have probability 0.
  static JointDist from_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    require(f.good(), "pid: cannot open joint distribution " + path.string());
    struct Row {
      long y, a, b;
      double p;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      Row r{};
      if (!(ss >> r.y >> r.a >> r.b >> r.p)) {
        require(lineno == 1, "pid: malformed row " + std::to_string(lineno) + " in " + path.string());
        continue;
      }
      require(r.y >= 0 && r.a >= 0 && r.b >= 0, "pid: negative symbol on row " + std::to_string(lineno));
      rows.push_back(r);
    }
    require(!rows.empty(), "pid: no rows in " + path.string());
    long my = 0, ma = 0, mb = 0;
    for (const Row& r : rows) {
      my = std::max(my, r.y);
      ma = std::max(ma, r.a);
      mb = std::max(mb, r.b);
    }
    const auto ny = static_cast<std::size_t>(my) + 1, na = static_cast<std::size_t>(ma) + 1,
               nb = static_cast<std::size_t>(mb) + 1;
    require(ny <= kMaxAlphabet && na <= kMaxAlphabet && nb <= kMaxAlphabet,
            "pid: alphabets are limited to 64 symbols");
    std::vector<double> p(ny * na * nb, 0.0);
    for (const Row& r : rows)
      p[(static_cast<std::size_t>(r.y) * na + static_cast<std::size_t>(r.a)) * nb + static_cast<std::size_t>(r.b)] += r.p;
    return JointDist(ny, na, nb, std::move(p));
  }

  std::size_t ny() const noexcept { return ny_; }
  std::size_t na() const noexcept { return na_; }
  std::size_t nb() const noexcept { return nb_; }
  double operator()(std::size_t y, std::size_t a, std::size_t b) const { return p_[(y * na_ + a) * nb_ + b]; }

  /// Number of symbols of a source (A, B, or the pair AB flattened a*nb+b).
  std::size_t source_size(Source s) const {
    return s == Source::A ? na_ : (s == Source::B ? nb_ : na_ * nb_);
  }

  /// p(y, s) as a ny x |S| table.
  std::vector<double> y_source(Source s) const {
    const std::size_t ns = source_size(s);
    std::vector<double> out(ny_ * ns, 0.0);
    for (std::size_t y = 0; y < ny_; ++y)
      for (std::size_t a = 0; a < na_; ++a)
        for (std::size_t b = 0; b < nb_; ++b) {
          const std::size_t s_idx = s == Source::A ? a : (s == Source::B ? b : a * nb_ + b);
          out[y * ns + s_idx] += (*this)(y, a, b);
        }
    return out;
  }

  std::vector<double> py() const {
    std::vector<double> out(ny_, 0.0);
    for (std::size_t y = 0; y < ny_; ++y)
      for (std::size_t i = 0; i < na_ * nb_; ++i) out[y] += p_[y * na_ * nb_ + i];
    return out;
  }

 private:
  std::size_t ny_, na_, nb_;
  std::vector<double> p_;
};

/// Shannon entropy in bits, 0 log 0 = 0.
inline double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

/// I(Y; sources) in bits.
inline double mutual_info(const JointDist& joint, Source sources) {
  const std::size_t ns = joint.source_size(sources);
  const auto pys = joint.y_source(sources);
  const auto py = joint.py();
  std::vector<double> ps(ns, 0.0);
  for (std::size_t y = 0; y < joint.ny(); ++y)
    for (std::size_t s = 0; s < ns; ++s) ps[s] += pys[y * ns + s];
  double mi = 0.0;
  for (std::size_t y = 0; y < joint.ny(); ++y)
    for (std::size_t s = 0; s < ns; ++s) {
      const double pj = pys[y * ns + s];
      if (pj > 0.0) mi += pj * std::log2(pj / (py[y] * ps[s]));
    }
  return mi;
}

/// Specific information I_spec(y; source) in bits, source is A or B.
inline double specific_info(const JointDist& joint, std::size_t y, Source source) {
  require(source != Source::AB, "specific_info: source must be A or B");
  require(y < joint.ny(), "specific_info: outcome out of range");
  const std::size_t ns = joint.source_size(source);
  const auto pys = joint.y_source(source);
  const double py = joint.py()[y];
  require(py > 0.0, "specific_info: p(y) = 0 for outcome " + std::to_string(y));
  double total = 0.0;
  for (std::size_t s = 0; s < ns; ++s) {
    const double pj = pys[y * ns + s];
    if (pj <= 0.0) continue;
    double ps = 0.0;
    for (std::size_t yy = 0; yy < joint.ny(); ++yy) ps += pys[yy * ns + s];
    total += (pj / py) * (std::log2(pj / ps) - std::log2(py));
  }
  return total;
}

/// Williams-Beer I_min redundancy in bits.
inline double imin_redundancy(const JointDist& joint) {
  const auto py = joint.py();
  double r = 0.0;
  for (std::size_t y = 0; y < joint.ny(); ++y) {
    if (py[y] <= 0.0) continue;
    r += py[y] * std::min(specific_info(joint, y, Source::A), specific_info(joint, y, Source::B));
  }
  return std::max(r, 0.0);
}

struct PIDAtoms {
  double u1 = 0.0;
  double u2 = 0.0;
  double r = 0.0;
  double s = 0.0;
};

/// Atoms more negative than this indicate a bug, not rounding.
inline constexpr double kAtomClampLimit = 1e-9;

inline PIDAtoms pid_decompose(const JointDist& joint) {
  const double ia = mutual_info(joint, Source::A);
  const double ib = mutual_info(joint, Source::B);
  const double iab = mutual_info(joint, Source::AB);
  PIDAtoms at;
  at.r = imin_redundancy(joint);
  at.u1 = ia - at.r;
  at.u2 = ib - at.r;
  at.s = iab - at.u1 - at.u2 - at.r;
  for (double* v : {&at.u1, &at.u2, &at.r, &at.s}) {
    if (*v < -kAtomClampLimit) throw numeric_fault("pid_decompose: atom below zero by more than 1e-9 bits");
    if (*v < 0.0) *v = 0.0;
  }
  return at;
}

/// "u1,u2,r,s" with 6 decimals.
inline std::string format_atoms(const PIDAtoms& a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", a.u1 + 0.0, a.u2 + 0.0, a.r + 0.0, a.s + 0.0);
  return buf;
}

/// Both vectors are mapped to the simplex by softmax, then D_KL(p || q) in nats.
inline double kl_simplex(std::span<const double> p_vec, std::span<const double> q_vec) {
  require(p_vec.size() == q_vec.size() && p_vec.size() >= 2, "kl_simplex: need equal widths >= 2");
  for (std::size_t i = 0; i < p_vec.size(); ++i)
    require(std::isfinite(p_vec[i]) && std::isfinite(q_vec[i]), "kl_simplex: non-finite input");
  auto log_softmax = [](std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
  };
  const auto lp = log_softmax(p_vec);
  const auto lq = log_softmax(q_vec);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, 0.0);
}

}  // namespace dnr
