#pragma once

#include "starvae/imaging.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace starvae::synthfield {

struct FieldSpec {
  int width = 512;
  int height = 512;
  int n_cluster = 150;
  int n_background = 500;
  imaging::PixelCoord cluster_center_px{256.0, 256.0};
  double cluster_sigma_px = 20.0;
  double psf_sigma_px = 1.5;
  double mag_bright = 12.0;
  double mag_faint = 16.0;
  double noise_sigma = 0.0;
  double pixel_scale_arcsec = 1.03;
  imaging::SkyCoord origin_sky{92.0, 20.5};
  /// ADU per unit flux; a star at mag_bright carries this total.
  double flux_scale = 20000.0;
  /// Round final pixels to whole ADU so the image survives int16 FITS exactly.
  bool quantize = true;
  imaging::Survey survey = imaging::Survey::TwoMass;
  std::uint64_t seed = 1;

  void validate() const;
};

struct GroundTruth {
  std::vector<bool> cluster_member_flags;
  imaging::PixelCoord true_center_px;
  double true_radius_px = 0.0;

  std::size_t member_count() const;
};

struct Field {
  imaging::Image image;
  imaging::Catalogue catalogue;
  GroundTruth truth;
  /// Pixel positions and fluxes (ADU) in catalogue order.
  std::vector<imaging::PixelCoord> positions;
  std::vector<double> fluxes;
};

/// Relative flux of a star: 10^(-0.4 (mag - mag_bright)).
double relative_flux(double mag, double mag_bright);

/// Peak pixel value of an isolated mag_bright star.
double peak_star_value(const FieldSpec& spec);

/// Random draws are consumed in a fixed order: cluster positions (x then
/// y per star, normal), background positions (x then y, uniform over
/// [-0.5, dim - 0.5)), magnitudes (uniform, cluster stars first), then
/// per-pixel noise in row-major order. Noise draws are skipped entirely
/// when noise_sigma is zero.
Field generate_field(const FieldSpec& spec);

/// key=value text. Reference quantities are given both in pixels and on the sky.
std::string write_ground_truth(const GroundTruth& truth, const FieldSpec& spec, const imaging::Image& img);

struct ParsedGroundTruth {
  imaging::PixelCoord center_px;
  imaging::SkyCoord center_sky;
  double radius_px = 0.0;
  double radius_arcsec = 0.0;
  std::size_t members = 0;
};

ParsedGroundTruth parse_ground_truth(std::string_view text);

}  // namespace starvae::synthfield
