#include "starvae/detection.hpp"

#include "starvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

namespace starvae::detection {

namespace {

/// Linear index of the pixel a sub-pixel position rounds to, if in frame.
std::optional<std::size_t> rounded_index(const imaging::Image& img, const imaging::Source& s, int width, int height) {
  const auto p = imaging::sky_to_pixel(img, s.ra_deg, s.dec_deg);
  const double rx = std::floor(p.x + 0.5);
  const double ry = std::floor(p.y + 0.5);
  if (rx < 0.0 || ry < 0.0 || rx >= width || ry >= height) return std::nullopt;
  return static_cast<std::size_t>(ry) * width + static_cast<std::size_t>(rx);
}

bool contains_index(const Region& r, std::size_t idx) {
  return std::binary_search(r.pixels.begin(), r.pixels.end(), idx);
}

}  // namespace

double Heatmap::max() const { return votes.empty() ? 0.0 : *std::max_element(votes.begin(), votes.end()); }

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(on.begin(), on.end(), std::uint8_t{1})); }

bool Region::contains(int x, int y) const {
  if (x < 0 || y < 0 || x >= width || y >= height) return false;
  return contains_index(*this, static_cast<std::size_t>(y) * width + x);
}

Region make_region(int width, int height, std::vector<std::size_t> pixels) {
  Region r;
  r.width = width;
  r.height = height;
  std::sort(pixels.begin(), pixels.end());
  pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
  r.pixels = std::move(pixels);
  if (!r.pixels.empty()) {
    r.bbox = {width, height, -1, -1};
    for (auto idx : r.pixels) {
      const int x = static_cast<int>(idx % width);
      const int y = static_cast<int>(idx / width);
      r.bbox.x0 = std::min(r.bbox.x0, x);
      r.bbox.y0 = std::min(r.bbox.y0, y);
      r.bbox.x1 = std::max(r.bbox.x1, x);
      r.bbox.y1 = std::max(r.bbox.y1, y);
    }
  }
  return r;
}

ComponentSelection select_cluster_component(std::span<const int> labels, const patching::PatchDataset& dataset) {
  if (labels.size() != dataset.size())
    throw Error(ErrorCode::ShapeMismatch, "label count does not match the patch count");
  ComponentSelection sel;
  std::array<double, 2> sums{0.0, 0.0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c != 0 && c != 1) throw Error(ErrorCode::ShapeMismatch, "labels must be 0 or 1");
    sums[c] += dataset.patches.col(static_cast<Eigen::Index>(i)).mean();
    ++sel.class_sizes[c];
  }
  if (sel.class_sizes[0] == 0 || sel.class_sizes[1] == 0)
    throw Error(ErrorCode::EmptyClass, "one GMM class received no patches");
  for (int c = 0; c < 2; ++c) sel.mean_intensity[c] = sums[c] / static_cast<double>(sel.class_sizes[c]);
  sel.tie = sel.mean_intensity[0] == sel.mean_intensity[1];
  sel.positive_class = sel.mean_intensity[1] > sel.mean_intensity[0] ? 1 : 0;
  sel.margin = std::abs(sel.mean_intensity[1] - sel.mean_intensity[0]);
  return sel;
}

std::vector<patching::PatchOrigin> positive_geometry(std::span<const int> labels,
                                                     std::span<const patching::PatchOrigin> geometry,
                                                     int positive_class) {
  if (labels.size() != geometry.size()) throw Error(ErrorCode::ShapeMismatch, "label count != geometry count");
  std::vector<patching::PatchOrigin> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == positive_class) out.push_back(geometry[i]);
  return out;
}

Heatmap build_heatmap(std::span<const patching::PatchOrigin> positives, int patch_size, int width, int height) {
  Heatmap map(width, height);
  for (const auto& g : positives) {
    if (g.x0 < 0 || g.y0 < 0 || g.x0 + patch_size > width || g.y0 + patch_size > height)
      throw Error(ErrorCode::DimMismatch, "patch lies outside the heatmap frame");
    for (int y = g.y0; y < g.y0 + patch_size; ++y)
      for (int x = g.x0; x < g.x0 + patch_size; ++x) map.at(x, y) += 1.0;
  }
  return map;
}

Heatmap ensemble(std::span<const Heatmap> heatmaps) {
  if (heatmaps.empty()) throw Error(ErrorCode::DimMismatch, "nothing to ensemble");
  Heatmap out(heatmaps.front().width, heatmaps.front().height);
  for (const auto& h : heatmaps) {
    if (h.width != out.width || h.height != out.height)
      throw Error(ErrorCode::DimMismatch, "heatmap dimensions differ");
    const double mx = h.max();
    if (mx <= 0.0) continue;
    for (std::size_t i = 0; i < out.votes.size(); ++i) out.votes[i] += h.votes[i] / mx;
  }
  return out;
}

Mask threshold_map(const Heatmap& heatmap) {
  Mask mask{heatmap.width, heatmap.height, std::vector<std::uint8_t>(heatmap.votes.size(), 0)};
  const double mx = heatmap.max();
  if (mx <= 0.0) return mask;
  const double cut = threshold_value(mx);
  for (std::size_t i = 0; i < heatmap.votes.size(); ++i) mask.on[i] = heatmap.votes[i] >= cut ? 1 : 0;
  return mask;
}

Region largest_region(const Mask& mask) {
  const int w = mask.width;
  const int h = mask.height;
  std::vector<int> label(mask.on.size(), -1);
  std::vector<std::vector<std::size_t>> components;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.on.size(); ++start) {
    if (!mask.on[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(components.size());
    components.emplace_back();
    auto& members = components.back();
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      members.push_back(idx);
      const int x = static_cast<int>(idx % w);
      const int y = static_cast<int>(idx / w);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
          if (mask.on[n] && label[n] < 0) {
            label[n] = id;
            stack.push_back(n);
          }
        }
      }
    }
  }
  if (components.empty()) throw Error(ErrorCode::EmptyMask, "threshold mask has no pixels");

  std::optional<Region> best;
  for (auto& members : components) {
    Region r = make_region(w, h, std::move(members));
    if (!best || r.size() > best->size() ||
        (r.size() == best->size() && std::tie(r.bbox.y0, r.bbox.x0) < std::tie(best->bbox.y0, best->bbox.x0)))
      best = std::move(r);
  }
  return *best;
}

Region disk_region(imaging::PixelCoord center, double radius_px, int width, int height) {
  std::vector<std::size_t> pixels;
  const int x0 = std::max(0, static_cast<int>(std::floor(center.x - radius_px)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(center.x + radius_px)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center.y - radius_px)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(center.y + radius_px)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - center.x;
      const double dy = y - center.y;
      if (dx * dx + dy * dy <= radius_px * radius_px) pixels.push_back(static_cast<std::size_t>(y) * width + x);
    }
  return make_region(width, height, std::move(pixels));
}

imaging::PixelCoord cluster_center(const Region& region, const imaging::Image& weights_image) {
  if (region.empty()) throw Error(ErrorCode::EmptyRegion, "cannot centre an empty region");
  if (region.width != weights_image.width || region.height != weights_image.height)
    throw Error(ErrorCode::DimMismatch, "region and image frames differ");
  double sw = 0.0, sx = 0.0, sy = 0.0, ux = 0.0, uy = 0.0;
  for (auto idx : region.pixels) {
    const double x = static_cast<double>(idx % region.width);
    const double y = static_cast<double>(idx / region.width);
    const double wgt = std::max(0.0, weights_image.data[idx]);
    sw += wgt;
    sx += wgt * x;
    sy += wgt * y;
    ux += x;
    uy += y;
  }
  if (sw > 0.0) return {sx / sw, sy / sw};
  const double n = static_cast<double>(region.size());
  return {ux / n, uy / n};
}

double radius_from_area(std::size_t n_pixels, double pixel_scale_arcsec) {
  return pixel_scale_arcsec * std::sqrt(static_cast<double>(n_pixels) / std::numbers::pi);
}

double cluster_radius(const Region& region, double pixel_scale_arcsec) {
  if (region.empty()) throw Error(ErrorCode::EmptyRegion, "cannot measure an empty region");
  return radius_from_area(region.size(), pixel_scale_arcsec);
}

std::size_t count_members(const Region& region, const imaging::Catalogue& catalogue, const imaging::Image& img) {
  std::size_t n = 0;
  for (const auto& s : catalogue.sources) {
    const auto idx = rounded_index(img, s, region.width, region.height);
    if (idx && contains_index(region, *idx)) ++n;
  }
  return n;
}

double iou(const Region& a, const Region& b, const imaging::Catalogue& catalogue, const imaging::Image& img) {
  if (a.width != b.width || a.height != b.height) throw Error(ErrorCode::DimMismatch, "region frames differ");
  std::size_t inter = 0, uni = 0;
  for (const auto& s : catalogue.sources) {
    const auto idx = rounded_index(img, s, a.width, a.height);
    if (!idx) continue;
    const bool in_a = contains_index(a, *idx);
    const bool in_b = contains_index(b, *idx);
    inter += (in_a && in_b) ? 1 : 0;
    uni += (in_a || in_b) ? 1 : 0;
  }
  if (uni == 0) throw Error(ErrorCode::EmptyUnion, "no sources fall in either region");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace starvae::detection
