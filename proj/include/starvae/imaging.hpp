#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace starvae::imaging {

struct SkyCoord {
  double ra_deg = 0.0;
  double dec_deg = 0.0;
};

struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

/// Linear intensity scaling between raw int16 FITS values and physical
/// values: physical = bzero + bscale * raw.
struct FitsScaling {
  double bzero = 0.0;
  double bscale = 1.0;
};

/// Row-major intensity grid. Pixel (x, y) has its centre at integer
/// coordinates (x, y); x runs along a row (NAXIS1).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;
  double pixel_scale_arcsec = 1.0;
  SkyCoord origin_sky;
  FitsScaling scaling;

  Image() = default;
  Image(int w, int h, double scale_arcsec = 1.0);

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }

  /// Throws InvalidSpec if dimensions, scale or intensities break the invariants.
  void validate() const;
};

enum class Survey { Ukidss, TwoMass };

std::string_view survey_name(Survey survey);
/// Accepts "ukidss", "2mass" or "twomass" (case-insensitive).
Survey parse_survey(std::string_view text);

/// True for UKIDSS mergedClass -1/-2 (stars, probable stars) and
/// 2MASS read-flag 1..6.
bool passes_survey_filter(Survey survey, int flag);
/// The flag value synthetic stars carry so they pass the filter.
int canonical_star_flag(Survey survey);

struct Source {
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  double mag = 0.0;
  int class_flag = 0;
};

struct Catalogue {
  std::vector<Source> sources;
  std::size_t size() const { return sources.size(); }
};

// ---------------------------------------------------------------- FITS

struct FitsReadOptions {
  /// Used when the header carries no CDELT card.
  double fallback_pixel_scale_arcsec = 1.0;
};

Image read_fits(std::span<const std::uint8_t> bytes, const FitsReadOptions& options = {});

struct FitsWriteResult {
  std::vector<std::uint8_t> bytes;
  /// Pixels whose raw value fell outside int16 and were saturated.
  std::size_t clipped = 0;
};

/// Raw values are round(( v - bzero) / bscale) taken from img.scaling.
FitsWriteResult write_fits(const Image& img);

// ----------------------------------------------------------- Catalogue

struct SkippedRow {
  std::size_t line = 0;
  std::string reason;
};

struct CatalogueParseResult {
  Catalogue catalogue;
  std::vector<SkippedRow> skipped;
  /// Well-formed rows dropped because their flag failed the survey filter.
  std::size_t filtered = 0;
};

/// Delimiter-separated text with a header row naming at least ra, dec,
/// mag and flag. Comma, tab and plain whitespace delimiters are detected
/// from the header line. Lines starting with '#' are comments.
CatalogueParseResult parse_catalogue(std::string_view text, Survey survey);

/// Keeps sources whose flag passes the survey filter, in order.
Catalogue filter_catalogue(const Catalogue& catalogue, Survey survey);

std::string write_catalogue(const Catalogue& catalogue);

// --------------------------------------------------------- Coordinates

/// Declination of the frame centre; its cosine scales RA offsets.
double reference_dec_deg(const Image& img);

/// x = dRA cos(dec_c) / scale, y = dDEC / scale, with dRA wrapped into
/// (-180, 180] and the scale in degrees per pixel.
PixelCoord sky_to_pixel(const Image& img, double ra_deg, double dec_deg);
SkyCoord pixel_to_sky(const Image& img, double x, double y);

}  // namespace starvae::imaging
