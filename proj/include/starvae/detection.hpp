#pragma once

#include "starvae/imaging.hpp"
#include "starvae/patching.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace starvae::detection {

/// Fraction of the heatmap maximum a pixel must reach to be kept.
inline constexpr double kThresholdFraction = 0.7;

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> votes;

  Heatmap() = default;
  Heatmap(int w, int h) : width(w), height(h), votes(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int x, int y) { return votes[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return votes[static_cast<std::size_t>(y) * width + x]; }
  double max() const;
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> on;

  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;
};

/// Pixel set over a frame of the given size; `pixels` holds sorted
/// row-major linear indices.
struct Region {
  int width = 0;
  int height = 0;
  std::vector<std::size_t> pixels;
  BoundingBox bbox;

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  bool contains(int x, int y) const;
};

Region make_region(int width, int height, std::vector<std::size_t> pixels);

struct ComponentSelection {
  int positive_class = 0;
  double margin = 0.0;
  bool tie = false;
  std::array<double, 2> mean_intensity{0.0, 0.0};
  std::array<std::size_t, 2> class_sizes{0, 0};
};

/// Declares the class whose patches are brighter on average to be the
/// cluster. Throws EmptyClass when either class has no patches.
ComponentSelection select_cluster_component(std::span<const int> labels, const patching::PatchDataset& dataset);

std::vector<patching::PatchOrigin> positive_geometry(std::span<const int> labels,
                                                     std::span<const patching::PatchOrigin> geometry,
                                                     int positive_class);

/// Each positive patch adds one vote to every pixel it covers.
Heatmap build_heatmap(std::span<const patching::PatchOrigin> positives, int patch_size, int width, int height);

/// Sum of the maps after dividing each by its own maximum (zero maps stay zero).
Heatmap ensemble(std::span<const Heatmap> heatmaps);

inline double threshold_value(double max_vote) { return kThresholdFraction * max_vote; }

/// Keeps pixels with vote >= 0.7 * max; an all-zero map gives an empty mask.
Mask threshold_map(const Heatmap& heatmap);

/// Largest 8-connected component; ties go to the smaller (y0, x0)
/// bounding-box corner.
Region largest_region(const Mask& mask);

/// Frame pixels within `radius_px` of `center`.
Region disk_region(imaging::PixelCoord center, double radius_px, int width, int height);

/// Intensity-weighted centroid using `weights_image` (normalised
/// intensities); falls back to the plain centroid when the weights vanish.
imaging::PixelCoord cluster_center(const Region& region, const imaging::Image& weights_image);

/// pixel_scale * sqrt(N / pi).
double cluster_radius(const Region& region, double pixel_scale_arcsec);
double radius_from_area(std::size_t n_pixels, double pixel_scale_arcsec);

/// Sources whose rounded pixel position falls inside the region.
std::size_t count_members(const Region& region, const imaging::Catalogue& catalogue, const imaging::Image& img);

/// Source-count intersection over union.
double iou(const Region& a, const Region& b, const imaging::Catalogue& catalogue, const imaging::Image& img);

struct ScaleSummary {
  int patch_size = 0;
  std::size_t n_patches = 0;
  std::size_t positive_patches = 0;
  int cluster_component = 0;
  double intensity_margin = 0.0;
  bool tie = false;
  bool degenerate = false;
  bool gmm_converged = false;
  int gmm_reinits = 0;
  double final_loss = 0.0;
};

struct DetectionReport {
  bool detected = false;
  imaging::PixelCoord center_px;
  imaging::SkyCoord center_sky;
  double radius_arcsec = 0.0;
  std::size_t region_pixels = 0;
  std::size_t members = 0;
  std::optional<double> iou;
  std::vector<ScaleSummary> scales;
  std::string diagnostic;
};

}  // namespace starvae::detection
