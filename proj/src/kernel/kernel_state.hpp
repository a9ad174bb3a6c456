#pragma once

#include <utility>

#include "common/linalg.hpp"
#include "kernel/geometry.hpp"

namespace iak {

// NNGP and NTK covariance over spatial positions for one ordered input pair.
struct KernelBlock {
  Matrix nngp;
  Matrix ntk;
};

// Final-layer (or intermediate) kernel state of an ordered pair (x, x').
// The cross block is d_s(x) x d_s(x'); the two same-input blocks are kept
// because attention layers need them.
struct KernelPairState {
  KernelBlock cross;
  KernelBlock diag_x;
  KernelBlock diag_xp;
  SpatialGeometry geom_x;
  SpatialGeometry geom_xp;
  bool post_nonlinearity = false;
  bool self_pair = false;
};

// Read-only view of the three blocks a layer transform needs to produce a new
// cross block. For a same-input block every reference aliases the same block
// and `self` is set.
struct PairBlocks {
  const KernelBlock& xx;
  const KernelBlock& xpxp;
  const KernelBlock& cross;
  const SpatialGeometry& geom_x;
  const SpatialGeometry& geom_xp;
  bool self;

  static PairBlocks diagonal(const KernelBlock& b, const SpatialGeometry& g) { return {b, b, b, g, g, true}; }
};

// Applies a cross-block transform to every block of a pair state. `fn` maps a
// PairBlocks view to the new block; geometries are updated by `geom_fn`.
template <typename Fn, typename GeomFn>
KernelPairState apply_to_state(const KernelPairState& s, Fn&& fn, GeomFn&& geom_fn, bool post_nonlinearity) {
  KernelPairState out;
  out.diag_x = fn(PairBlocks::diagonal(s.diag_x, s.geom_x));
  out.diag_xp = s.self_pair ? out.diag_x : fn(PairBlocks::diagonal(s.diag_xp, s.geom_xp));
  out.cross = s.self_pair ? out.diag_x
                          : fn(PairBlocks{s.diag_x, s.diag_xp, s.cross, s.geom_x, s.geom_xp, false});
  out.geom_x = geom_fn(s.geom_x);
  out.geom_xp = geom_fn(s.geom_xp);
  out.post_nonlinearity = post_nonlinearity;
  out.self_pair = s.self_pair;
  return out;
}

}  // namespace iak
