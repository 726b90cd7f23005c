#pragma once

#include "starvae/imaging.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace starvae::patching {

struct PatchOrigin {
  int x0 = 0;
  int y0 = 0;
};

/// Overlapping square patches of one scale. Column i of `patches` is the
/// row-major flattening of the patch whose top-left pixel is geometry[i].
struct PatchDataset {
  int patch_size = 0;
  int stride = 0;
  Eigen::MatrixXd patches;
  std::vector<PatchOrigin> geometry;
  int source_width = 0;
  int source_height = 0;

  int dim() const { return patch_size * patch_size; }
  std::size_t size() const { return geometry.size(); }
};

/// Patches fitting along one axis: floor((dim - size) / stride) + 1.
int patches_per_axis(int dim, int patch_size, int stride);

/// Row-major enumeration of top-left corners {0, stride, ...}; trailing
/// pixels that cannot hold a full patch are dropped.
PatchDataset extract_patches(const imaging::Image& img, int patch_size, int stride);

/// Stride giving 50% overlap.
inline int half_overlap_stride(int patch_size) { return std::max(1, patch_size / 2); }

/// Percentile with linear interpolation between order statistics:
/// rank = p/100 * (n-1).
double percentile(std::span<const double> values, double pct);

/// v' = clamp((v - min) / (P_pct - min), 0, 1); a degenerate range yields zeros.
imaging::Image normalize(const imaging::Image& img, double clip_percentile = 99.5);

}  // namespace starvae::patching
