#include "starvae/patching.hpp"

#include "starvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace starvae::patching {

int patches_per_axis(int dim, int patch_size, int stride) {
  if (patch_size > dim || stride < 1 || patch_size < 1) return 0;
  return (dim - patch_size) / stride + 1;
}

PatchDataset extract_patches(const imaging::Image& img, int patch_size, int stride) {
  if (patch_size < 1 || stride < 1)
    throw Error(ErrorCode::PatchTooLarge, "patch size and stride must be >= 1");
  if (patch_size > std::min(img.width, img.height))
    throw Error(ErrorCode::PatchTooLarge, "patch size " + std::to_string(patch_size) + " exceeds image dimension " +
                                              std::to_string(std::min(img.width, img.height)));
  const int nx = patches_per_axis(img.width, patch_size, stride);
  const int ny = patches_per_axis(img.height, patch_size, stride);

  PatchDataset ds;
  ds.patch_size = patch_size;
  ds.stride = stride;
  ds.source_width = img.width;
  ds.source_height = img.height;
  ds.patches.resize(patch_size * patch_size, static_cast<Eigen::Index>(nx) * ny);
  ds.geometry.reserve(static_cast<std::size_t>(nx) * ny);
  Eigen::Index col = 0;
  for (int py = 0; py < ny; ++py) {
    for (int px = 0; px < nx; ++px, ++col) {
      const int x0 = px * stride;
      const int y0 = py * stride;
      ds.geometry.push_back({x0, y0});
      for (int dy = 0; dy < patch_size; ++dy)
        for (int dx = 0; dx < patch_size; ++dx) ds.patches(dy * patch_size + dx, col) = img.at(x0 + dx, y0 + dy);
    }
  }
  return ds;
}

double percentile(std::span<const double> values, double pct) {
  if (values.empty()) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

imaging::Image normalize(const imaging::Image& img, double clip_percentile) {
  if (!(clip_percentile > 0.0 && clip_percentile <= 100.0))
    throw Error(ErrorCode::InvalidSpec, "clip percentile must lie in (0, 100]");
  imaging::Image out = img;
  if (img.data.empty()) return out;
  const double low = *std::min_element(img.data.begin(), img.data.end());
  const double high = percentile(img.data, clip_percentile);
  if (!(high > low)) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    return out;
  }
  const double range = high - low;
  for (auto& v : out.data) v = std::clamp((v - low) / range, 0.0, 1.0);
  return out;
}

}  // namespace starvae::patching
