#include "starvae/synthfield.hpp"

#include "starvae/config.hpp"
#include "starvae/error.hpp"
#include "starvae/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

namespace starvae::synthfield {

namespace {

constexpr double kPsfTruncation = 5.0;

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void render_star(imaging::Image& img, imaging::PixelCoord p, double flux, double sigma) {
  const double reach = kPsfTruncation * sigma;
  const int x0 = std::max(0, static_cast<int>(std::ceil(p.x - reach)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::floor(p.x + reach)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(p.y - reach)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::floor(p.y + reach)));
  const double norm = flux / (2.0 * std::numbers::pi * sigma * sigma);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double r2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
      if (r2 > reach * reach) continue;
      img.at(x, y) += norm * std::exp(-r2 * inv_two_var);
    }
  }
}

}  // namespace

void FieldSpec::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
  if (width < 1 || height < 1) fail("field dimensions must be >= 1");
  if (n_cluster < 0 || n_background < 0) fail("star counts must be >= 0");
  if (!(cluster_center_px.x >= 0.0 && cluster_center_px.x <= width - 1 && cluster_center_px.y >= 0.0 &&
        cluster_center_px.y <= height - 1))
    fail("cluster centre lies outside the frame");
  if (!(cluster_sigma_px > 0.0)) fail("cluster_sigma_px must be > 0");
  if (!(psf_sigma_px > 0.0)) fail("psf_sigma_px must be > 0");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(pixel_scale_arcsec > 0.0)) fail("pixel_scale_arcsec must be > 0");
  if (!(flux_scale > 0.0)) fail("flux_scale must be > 0");
  if (!(mag_bright <= mag_faint)) fail("mag range must satisfy bright <= faint");
  if (!(origin_sky.dec_deg >= -90.0 && origin_sky.dec_deg <= 90.0)) fail("origin declination out of range");
}

std::size_t GroundTruth::member_count() const {
  return static_cast<std::size_t>(std::count(cluster_member_flags.begin(), cluster_member_flags.end(), true));
}

double relative_flux(double mag, double mag_bright) { return std::pow(10.0, -0.4 * (mag - mag_bright)); }

double peak_star_value(const FieldSpec& spec) {
  return spec.flux_scale / (2.0 * std::numbers::pi * spec.psf_sigma_px * spec.psf_sigma_px);
}

Field generate_field(const FieldSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Field field;
  auto& img = field.image;
  img = imaging::Image(spec.width, spec.height, spec.pixel_scale_arcsec);
  img.origin_sky = spec.origin_sky;

  const std::size_t total = static_cast<std::size_t>(spec.n_cluster) + spec.n_background;
  field.positions.reserve(total);
  for (int i = 0; i < spec.n_cluster; ++i) {
    const double x = spec.cluster_center_px.x + spec.cluster_sigma_px * rng.normal();
    const double y = spec.cluster_center_px.y + spec.cluster_sigma_px * rng.normal();
    field.positions.push_back({x, y});
  }
  for (int i = 0; i < spec.n_background; ++i) {
    const double x = rng.uniform(-0.5, spec.width - 0.5);
    const double y = rng.uniform(-0.5, spec.height - 0.5);
    field.positions.push_back({x, y});
  }
  std::vector<double> mags(total);
  for (auto& m : mags) m = rng.uniform(spec.mag_bright, spec.mag_faint);

  field.fluxes.resize(total);
  field.catalogue.sources.reserve(total);
  const int flag = imaging::canonical_star_flag(spec.survey);
  for (std::size_t i = 0; i < total; ++i) {
    field.fluxes[i] = spec.flux_scale * relative_flux(mags[i], spec.mag_bright);
    render_star(img, field.positions[i], field.fluxes[i], spec.psf_sigma_px);
    const auto sky = imaging::pixel_to_sky(img, field.positions[i].x, field.positions[i].y);
    field.catalogue.sources.push_back({sky.ra_deg, sky.dec_deg, mags[i], flag});
  }

  if (spec.noise_sigma > 0.0)
    for (auto& v : img.data) v += spec.noise_sigma * rng.normal();
  if (spec.quantize)
    for (auto& v : img.data) v = std::nearbyint(v);

  field.truth.cluster_member_flags.assign(total, false);
  std::fill_n(field.truth.cluster_member_flags.begin(), spec.n_cluster, true);
  field.truth.true_center_px = spec.cluster_center_px;
  field.truth.true_radius_px = 2.0 * spec.cluster_sigma_px;
  return field;
}

std::string write_ground_truth(const GroundTruth& truth, const FieldSpec& spec, const imaging::Image& img) {
  const auto sky = imaging::pixel_to_sky(img, truth.true_center_px.x, truth.true_center_px.y);
  std::string flags;
  flags.reserve(truth.cluster_member_flags.size());
  for (bool b : truth.cluster_member_flags) flags += b ? '1' : '0';
  std::string out;
  out += "center_x_px=" + fmt(truth.true_center_px.x) + "\n";
  out += "center_y_px=" + fmt(truth.true_center_px.y) + "\n";
  out += "center_ra_deg=" + fmt(sky.ra_deg) + "\n";
  out += "center_dec_deg=" + fmt(sky.dec_deg) + "\n";
  out += "radius_px=" + fmt(truth.true_radius_px) + "\n";
  out += "radius_arcsec=" + fmt(truth.true_radius_px * img.pixel_scale_arcsec) + "\n";
  out += "cluster_sigma_px=" + fmt(spec.cluster_sigma_px) + "\n";
  out += "members=" + std::to_string(truth.member_count()) + "\n";
  out += "n_background=" + std::to_string(spec.n_background) + "\n";
  out += "seed=" + std::to_string(spec.seed) + "\n";
  out += "member_flags=" + flags + "\n";
  return out;
}

ParsedGroundTruth parse_ground_truth(std::string_view text) {
  const auto kv = config::KeyValues::parse(text);
  for (const char* key : {"center_x_px", "center_y_px", "center_ra_deg", "center_dec_deg", "radius_px",
                          "radius_arcsec", "members"})
    if (!kv.contains(key)) throw Error(ErrorCode::BadConfig, std::string("ground truth lacks key '") + key + "'");
  ParsedGroundTruth gt;
  gt.center_px = {kv.get_double("center_x_px", 0.0), kv.get_double("center_y_px", 0.0)};
  gt.center_sky = {kv.get_double("center_ra_deg", 0.0), kv.get_double("center_dec_deg", 0.0)};
  gt.radius_px = kv.get_double("radius_px", 0.0);
  gt.radius_arcsec = kv.get_double("radius_arcsec", 0.0);
  gt.members = static_cast<std::size_t>(kv.get_int("members", 0));
  return gt;
}

}  // namespace starvae::synthfield
