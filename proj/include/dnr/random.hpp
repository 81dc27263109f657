// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dnr/error.hpp"
#include "dnr/rng.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

/// i.i.d. Normal(mean, std^2) tensor. std == 0 yields the constant tensor
/// but still advances the stream by the same number of draws, so the
/// stream position never depends on std.
inline Tensor gaussian_sample(RngStream& rng, const Shape& shape, double mean, double std) {
  require(std >= 0.0, "gaussian_sample: std must be non-negative");
  Tensor out(shape);
  for (double& v : out.data()) v = mean + std * rng.normal();
  return out;
}

}  // namespace dnr
