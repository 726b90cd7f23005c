#include "starvae/pipeline.hpp"

#include "starvae/error.hpp"
#include "starvae/patching.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace starvae::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_train_keys(const config::KeyValues& kv, const std::string& prefix, vae::TrainConfig& t) {
  t.epochs = static_cast<int>(kv.get_int(prefix + "epochs", t.epochs));
  t.batch_size = static_cast<int>(kv.get_int(prefix + "batch_size", t.batch_size));
  t.learning_rate = kv.get_double(prefix + "learning_rate", t.learning_rate);
  t.mc_samples = static_cast<int>(kv.get_int(prefix + "mc_samples", t.mc_samples));
  t.latent_dim = static_cast<int>(kv.get_int(prefix + "latent_dim", t.latent_dim));
  t.hidden = kv.get_int_list(prefix + "hidden", t.hidden);
  const auto prior = kv.get_string(prefix + "prior", t.prior.kind == vae::PriorKind::Mixture ? "mixture" : "standard");
  if (prior == "standard") {
    t.prior.kind = vae::PriorKind::StandardNormal;
  } else if (prior == "mixture") {
    t.prior.kind = vae::PriorKind::Mixture;
  } else {
    throw Error(ErrorCode::BadConfig, "key '" + prefix + "prior': expected standard or mixture");
  }
  if (t.prior.kind == vae::PriorKind::Mixture) {
    const double offset = kv.get_double(prefix + "prior_offset", 2.0);
    const double variance = kv.get_double(prefix + "prior_variance", 1.0);
    if (!(variance > 0.0)) throw Error(ErrorCode::BadConfig, "prior_variance must be > 0");
    t.prior.mixture = vae::MixturePrior::symmetric_pair(t.latent_dim, offset, variance);
  }
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
}

std::string fmt_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

json scale_to_json(const detection::ScaleSummary& s) {
  return json{{"patch_size", s.patch_size},
              {"n_patches", s.n_patches},
              {"positive_patches", s.positive_patches},
              {"cluster_component", s.cluster_component},
              {"intensity_margin", s.intensity_margin},
              {"tie", s.tie},
              {"degenerate", s.degenerate},
              {"gmm_converged", s.gmm_converged},
              {"gmm_reinits", s.gmm_reinits},
              {"final_loss", s.final_loss}};
}

ScaleResult run_scale(const imaging::Image& normalized, const RunConfig& cfg, std::size_t index) {
  ScaleResult out;
  const int size = cfg.patch_sizes[index];
  out.patch_size = size;
  const auto dataset = patching::extract_patches(normalized, size, patching::half_overlap_stride(size));
  out.training = vae::train(dataset, cfg.train_for(index));
  out.latents = vae::latent_stats(out.training.params, dataset);
  out.heatmap = detection::Heatmap(normalized.width, normalized.height);

  auto& summary = out.summary;
  summary.patch_size = size;
  summary.n_patches = dataset.size();
  summary.final_loss = out.training.loss_trace.back();
  const auto features = out.latents.features();
  try {
    out.gmm = gmm::gmm_fit(features, cfg.scale_seed(index), cfg.gmm);
    out.labels = gmm::gmm_predict(out.gmm.model, features);
    out.selection = detection::select_cluster_component(out.labels, dataset);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyClass && e.code() != ErrorCode::TooFewPoints) throw;
    summary.degenerate = true;
    return out;
  }
  summary.gmm_converged = out.gmm.report.converged;
  summary.gmm_reinits = out.gmm.report.reinit_count;
  summary.cluster_component = out.selection->positive_class;
  summary.intensity_margin = out.selection->margin;
  summary.tie = out.selection->tie;
  const auto positives = detection::positive_geometry(out.labels, dataset.geometry, out.selection->positive_class);
  summary.positive_patches = positives.size();
  out.heatmap = detection::build_heatmap(positives, size, normalized.width, normalized.height);
  return out;
}

json parse_json_document(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, what + " is not valid JSON: " + e.what());
  }
}

std::optional<double> optional_number(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  if (!doc[key].is_number()) throw Error(ErrorCode::BadConfig, std::string("field '") + key + "' is not a number");
  return doc[key].get<double>();
}

double required_number(const json& doc, const char* key, const std::string& what) {
  if (!doc.is_object() || !doc.contains(key) || !doc[key].is_number())
    throw Error(ErrorCode::BadConfig, what + " lacks numeric field '" + key + "'");
  return doc[key].get<double>();
}

}  // namespace

// ------------------------------------------------------------ Config

RunConfig RunConfig::from_key_values(const config::KeyValues& kv) {
  RunConfig cfg;
  cfg.image_path = kv.get_string("input.image", "");
  cfg.catalogue_path = kv.get_string("input.catalogue", "");
  cfg.truth_path = kv.get_string("input.truth", "");
  if (kv.contains("reference.ra") || kv.contains("reference.dec") || kv.contains("reference.radius_arcsec")) {
    for (const char* key : {"reference.ra", "reference.dec", "reference.radius_arcsec"})
      if (!kv.contains(key)) throw Error(ErrorCode::BadConfig, std::string("reference circle lacks '") + key + "'");
    cfg.reference = ReferenceCircle{{kv.get_double("reference.ra", 0.0), kv.get_double("reference.dec", 0.0)},
                                    kv.get_double("reference.radius_arcsec", 0.0)};
    if (!(cfg.reference->radius_arcsec > 0.0)) throw Error(ErrorCode::BadConfig, "reference radius must be > 0");
  }
  cfg.survey = imaging::parse_survey(kv.get_string("survey", "2mass"));
  if (kv.contains("pixel_scale")) {
    cfg.pixel_scale_override = kv.get_double("pixel_scale", 1.0);
    if (!(*cfg.pixel_scale_override > 0.0)) throw Error(ErrorCode::BadConfig, "pixel_scale must be > 0");
  }
  cfg.patch_sizes = kv.get_int_list("patches.sizes", cfg.patch_sizes);
  if (cfg.patch_sizes.empty()) throw Error(ErrorCode::BadConfig, "patches.sizes is empty");
  std::set<int> seen;
  for (int s : cfg.patch_sizes) {
    if (s < 2) throw Error(ErrorCode::BadConfig, "patch size " + std::to_string(s) + " must be >= 2");
    if (!seen.insert(s).second) throw Error(ErrorCode::BadConfig, "patch size " + std::to_string(s) + " listed twice");
  }
  cfg.clip_percentile = kv.get_double("patches.clip_percentile", cfg.clip_percentile);
  if (!(cfg.clip_percentile > 0.0 && cfg.clip_percentile <= 100.0))
    throw Error(ErrorCode::BadConfig, "patches.clip_percentile must lie in (0, 100]");

  apply_train_keys(kv, "train.", cfg.train);
  for (int size : cfg.patch_sizes) {
    vae::TrainConfig t = cfg.train;
    apply_train_keys(kv, "train." + std::to_string(size) + ".", t);
    cfg.per_scale_train.push_back(t);
  }

  cfg.gmm.max_iter = static_cast<int>(kv.get_int("gmm.max_iter", cfg.gmm.max_iter));
  cfg.gmm.tol = kv.get_double("gmm.tol", cfg.gmm.tol);
  cfg.gmm.weight_floor = kv.get_double("gmm.weight_floor", cfg.gmm.weight_floor);
  cfg.gmm.separation_rel = kv.get_double("gmm.separation_rel", cfg.gmm.separation_rel);
  cfg.gmm.max_reinit = static_cast<int>(kv.get_int("gmm.max_reinit", cfg.gmm.max_reinit));
  cfg.gmm.cov_floor_rel = kv.get_double("gmm.cov_floor_rel", cfg.gmm.cov_floor_rel);
  if (cfg.gmm.max_iter < 1 || !(cfg.gmm.tol > 0.0) || cfg.gmm.max_reinit < 0 || !(cfg.gmm.cov_floor_rel > 0.0))
    throw Error(ErrorCode::BadConfig, "invalid gmm settings");

  cfg.output_dir = kv.get_string("output.dir", cfg.output_dir);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.parallel = kv.get_bool("parallel", cfg.parallel);
  return cfg;
}

vae::TrainConfig RunConfig::train_for(std::size_t index) const {
  vae::TrainConfig t = index < per_scale_train.size() ? per_scale_train[index] : train;
  t.seed = scale_seed(index);
  return t;
}

void RunConfig::validate_scales(int width, int height) const {
  for (int s : patch_sizes)
    if (s > std::min(width, height))
      throw Error(ErrorCode::PatchTooLarge, "patch size " + std::to_string(s) + " exceeds the image (" +
                                                std::to_string(width) + "x" + std::to_string(height) + ")");
}

// ---------------------------------------------------------- Detection

DetectionResult detect_cluster(const imaging::Image& image, const imaging::Catalogue& catalogue, const RunConfig& cfg,
                               const std::optional<ReferenceCircle>& reference) {
  image.validate();
  cfg.validate_scales(image.width, image.height);
  DetectionResult result;
  result.normalized = patching::normalize(image, cfg.clip_percentile);

  const std::size_t n_scales = cfg.patch_sizes.size();
  result.scales.resize(n_scales);
  if (cfg.parallel && n_scales > 1) {
    std::vector<std::exception_ptr> errors(n_scales);
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < n_scales; ++i)
      workers.emplace_back([&, i] {
        try {
          result.scales[i] = run_scale(result.normalized, cfg, i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t i = 0; i < n_scales; ++i) result.scales[i] = run_scale(result.normalized, cfg, i);
  }

  auto& report = result.report;
  std::vector<detection::Heatmap> maps;
  for (const auto& s : result.scales) {
    report.scales.push_back(s.summary);
    maps.push_back(s.heatmap);
  }
  result.ensemble = detection::ensemble(maps);

  if (reference) {
    const auto c = imaging::sky_to_pixel(image, reference->center.ra_deg, reference->center.dec_deg);
    result.reference_region =
        detection::disk_region(c, reference->radius_arcsec / image.pixel_scale_arcsec, image.width, image.height);
  }

  const auto mask = detection::threshold_map(result.ensemble);
  if (mask.empty()) {
    report.detected = false;
    report.diagnostic = "every scale voted nothing; the thresholded heatmap is empty";
    return result;
  }
  result.region = detection::largest_region(mask);
  const auto& region = *result.region;
  report.detected = true;
  report.region_pixels = region.size();
  report.center_px = detection::cluster_center(region, result.normalized);
  report.center_sky = imaging::pixel_to_sky(image, report.center_px.x, report.center_px.y);
  report.radius_arcsec = detection::cluster_radius(region, image.pixel_scale_arcsec);
  report.members = detection::count_members(region, catalogue, image);
  if (result.reference_region) {
    try {
      report.iou = detection::iou(region, *result.reference_region, catalogue, image);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyUnion) throw;
      report.diagnostic = "no catalogue source in the detected or reference region; IoU undefined";
    }
  }
  return result;
}

// ------------------------------------------------------------ Outputs

std::string report_to_json(const detection::DetectionReport& r) {
  json doc;
  doc["detected"] = r.detected;
  doc["center_px"] = {{"x", r.center_px.x}, {"y", r.center_px.y}};
  doc["center_sky"] = {{"ra", r.center_sky.ra_deg}, {"dec", r.center_sky.dec_deg}};
  doc["radius_arcsec"] = r.radius_arcsec;
  doc["region_pixels"] = r.region_pixels;
  doc["members"] = r.members;
  doc["iou"] = r.iou ? json(*r.iou) : json(nullptr);
  json scales = json::array();
  for (const auto& s : r.scales) scales.push_back(scale_to_json(s));
  doc["scales"] = scales;
  doc["diagnostic"] = r.diagnostic;
  return doc.dump(2) + "\n";
}

std::string report_to_text(const detection::DetectionReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "detected=" << (r.detected ? "true" : "false") << "\n";
  os << "center_px.x=" << r.center_px.x << "\ncenter_px.y=" << r.center_px.y << "\n";
  os << "center_sky.ra=" << r.center_sky.ra_deg << "\ncenter_sky.dec=" << r.center_sky.dec_deg << "\n";
  os << "radius_arcsec=" << r.radius_arcsec << "\n";
  os << "region_pixels=" << r.region_pixels << "\n";
  os << "members=" << r.members << "\n";
  if (r.iou) os << "iou=" << *r.iou << "\n";
  for (const auto& s : r.scales) {
    const std::string p = "scale." + std::to_string(s.patch_size) + ".";
    os << p << "n_patches=" << s.n_patches << "\n"
       << p << "positive_patches=" << s.positive_patches << "\n"
       << p << "cluster_component=" << s.cluster_component << "\n"
       << p << "degenerate=" << (s.degenerate ? "true" : "false") << "\n"
       << p << "final_loss=" << s.final_loss << "\n";
  }
  if (!r.diagnostic.empty()) os << "diagnostic=" << r.diagnostic << "\n";
  return os.str();
}

std::vector<std::uint8_t> heatmap_to_pgm(const detection::Heatmap& heatmap) {
  const std::string header =
      "P5\n" + std::to_string(heatmap.width) + " " + std::to_string(heatmap.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double mx = heatmap.max();
  for (double v : heatmap.votes) {
    const double scaled = mx > 0.0 ? std::nearbyint(255.0 * v / mx) : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0)));
  }
  return out;
}

std::string heatmap_to_csv(const detection::Heatmap& heatmap) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int y = 0; y < heatmap.height; ++y) {
    for (int x = 0; x < heatmap.width; ++x) {
      if (x) os << ',';
      os << heatmap.at(x, y);
    }
    os << '\n';
  }
  return os.str();
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// -------------------------------------------------------------- Synth

synthfield::FieldSpec field_spec_from_key_values(const config::KeyValues& kv) {
  synthfield::FieldSpec spec;
  spec.width = static_cast<int>(kv.get_int("synth.width", spec.width));
  spec.height = static_cast<int>(kv.get_int("synth.height", spec.height));
  spec.n_cluster = static_cast<int>(kv.get_int("synth.n_cluster", spec.n_cluster));
  spec.n_background = static_cast<int>(kv.get_int("synth.n_background", spec.n_background));
  spec.cluster_center_px = {kv.get_double("synth.cluster_x", 0.5 * (spec.width - 1)),
                            kv.get_double("synth.cluster_y", 0.5 * (spec.height - 1))};
  spec.cluster_sigma_px = kv.get_double("synth.cluster_sigma", spec.cluster_sigma_px);
  spec.psf_sigma_px = kv.get_double("synth.psf_sigma", spec.psf_sigma_px);
  spec.mag_bright = kv.get_double("synth.mag_bright", spec.mag_bright);
  spec.mag_faint = kv.get_double("synth.mag_faint", spec.mag_faint);
  spec.flux_scale = kv.get_double("synth.flux_scale", spec.flux_scale);
  spec.pixel_scale_arcsec = kv.get_double("synth.pixel_scale", kv.get_double("pixel_scale", spec.pixel_scale_arcsec));
  spec.origin_sky = {kv.get_double("synth.ra0", spec.origin_sky.ra_deg), kv.get_double("synth.dec0", spec.origin_sky.dec_deg)};
  spec.quantize = kv.get_bool("synth.quantize", spec.quantize);
  spec.survey = imaging::parse_survey(kv.get_string("survey", "2mass"));
  spec.seed = kv.get_u64("seed", spec.seed);
  if (kv.contains("synth.noise_sigma")) {
    spec.noise_sigma = kv.get_double("synth.noise_sigma", 0.0);
  } else {
    spec.noise_sigma = kv.get_double("synth.noise_fraction", 0.0) * synthfield::peak_star_value(spec);
  }
  return spec;
}

int cmd_synth(const config::KeyValues& kv, std::ostream& log) {
  synthfield::FieldSpec spec;
  synthfield::Field field;
  try {
    spec = field_spec_from_key_values(kv);
    field = synthfield::generate_field(spec);
  } catch (const Error& e) {
    log << "synth: " << e.what() << "\n";
    return kExitBadConfig;
  }
  const fs::path dir = kv.get_string("output.dir", "out");
  const std::string prefix = kv.get_string("output.prefix", "field");
  const auto fits = imaging::write_fits(field.image);
  if (fits.clipped > 0) log << "synth: warning: " << fits.clipped << " pixels clipped to the int16 range\n";
  write_file_atomic(dir / (prefix + ".fits"), fits.bytes);
  write_file_atomic(dir / (prefix + ".csv"), imaging::write_catalogue(field.catalogue));
  write_file_atomic(dir / (prefix + ".truth"), synthfield::write_ground_truth(field.truth, spec, field.image));
  log << "synth: wrote " << (dir / prefix).string() << ".{fits,csv,truth} (" << field.catalogue.size()
      << " sources, " << field.truth.member_count() << " members)\n";
  return kExitOk;
}

// ------------------------------------------------------------- Detect

int cmd_detect(const config::KeyValues& kv, std::ostream& log) {
  RunConfig cfg;
  try {
    cfg = RunConfig::from_key_values(kv);
    if (cfg.image_path.empty()) throw Error(ErrorCode::BadConfig, "input.image is required");
  } catch (const Error& e) {
    log << "detect: " << e.what() << "\n";
    return kExitBadConfig;
  }

  imaging::Image image;
  imaging::Catalogue catalogue;
  std::optional<ReferenceCircle> reference = cfg.reference;
  try {
    image = imaging::read_fits(read_file(cfg.image_path));
    if (cfg.pixel_scale_override) image.pixel_scale_arcsec = *cfg.pixel_scale_override;
    if (!cfg.catalogue_path.empty()) {
      const auto bytes = read_file(cfg.catalogue_path);
      auto parsed = imaging::parse_catalogue(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                             cfg.survey);
      for (const auto& s : parsed.skipped)
        log << "detect: catalogue line " << s.line << " skipped: " << s.reason << "\n";
      catalogue = std::move(parsed.catalogue);
    }
    if (!reference && !cfg.truth_path.empty()) {
      const auto bytes = read_file(cfg.truth_path);
      const auto gt =
          synthfield::parse_ground_truth(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      reference = ReferenceCircle{gt.center_sky, gt.radius_arcsec};
    }
  } catch (const Error& e) {
    log << "detect: " << e.what() << "\n";
    return kExitUnreadableInput;
  }

  try {
    cfg.validate_scales(image.width, image.height);
  } catch (const Error& e) {
    log << "detect: " << e.what() << "\n";
    return kExitBadConfig;
  }

  const DetectionResult result = detect_cluster(image, catalogue, cfg, reference);
  const fs::path dir = cfg.output_dir;
  for (const auto& s : result.scales) {
    const std::string tag = std::to_string(s.patch_size);
    write_file_atomic(dir / ("vae_" + tag + ".ckpt"), vae::save_checkpoint(s.training.params, s.patch_size));
    if (!s.summary.degenerate) write_file_atomic(dir / ("gmm_" + tag + ".txt"), gmm::serialize_model(s.gmm.model));
    std::ostringstream latent;
    latent << std::setprecision(17) << "x0,y0,z0,z1,label\n";
    for (std::size_t i = 0; i < s.latents.size(); ++i) {
      const auto& g = s.latents.geometry[i];
      latent << g.x0 << ',' << g.y0 << ',' << s.latents.mu(0, static_cast<Eigen::Index>(i)) << ','
             << (s.latents.mu.rows() > 1 ? s.latents.mu(1, static_cast<Eigen::Index>(i)) : 0.0) << ','
             << (s.labels.empty() ? -1 : s.labels[i]) << '\n';
    }
    write_file_atomic(dir / ("latent_" + tag + ".csv"), latent.str());
  }
  write_file_atomic(dir / "heatmap.pgm", heatmap_to_pgm(result.ensemble));
  write_file_atomic(dir / "heatmap.csv", heatmap_to_csv(result.ensemble));
  write_file_atomic(dir / "report.json", report_to_json(result.report));
  write_file_atomic(dir / "report.txt", report_to_text(result.report));

  const auto& r = result.report;
  if (!r.detected) {
    log << "detect: no cluster region found (" << r.diagnostic << ")\n";
    return kExitDegenerate;
  }
  log << "detect: centre (" << fmt_fixed(r.center_px.x, 2) << ", " << fmt_fixed(r.center_px.y, 2) << ") px, radius "
      << fmt_fixed(r.radius_arcsec, 2) << "\", members " << r.members;
  if (r.iou) log << ", IoU " << fmt_fixed(*r.iou, 4);
  log << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- Eval

EvalRow compare_reports(std::string_view report_json, std::string_view reference_json, std::string name) {
  const json ours = parse_json_document(report_json, "report");
  const json ref = parse_json_document(reference_json, "reference");
  EvalRow row;
  row.name = ref.is_object() && ref.contains("name") && ref["name"].is_string() ? ref["name"].get<std::string>()
                                                                               : std::move(name);
  row.radius_ours = required_number(ours, "radius_arcsec", "report");
  row.radius_ref = required_number(ref, "radius_arcsec", "reference");
  row.radius_delta = row.radius_ours - row.radius_ref;
  row.members_ours = std::llround(required_number(ours, "members", "report"));
  row.members_ref = std::llround(required_number(ref, "members", "reference"));
  row.members_delta = row.members_ours - row.members_ref;
  row.iou_ours = optional_number(ours, "iou");
  row.iou_ref = optional_number(ref, "iou");
  return row;
}

std::string format_eval_table(std::span<const EvalRow> rows) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_fixed(*v, 4) : std::string("-"); };
  std::ostringstream os;
  os << std::left << std::setw(16) << "field" << std::right << std::setw(12) << "radius" << std::setw(12) << "ref_radius"
     << std::setw(10) << "d_radius" << std::setw(9) << "members" << std::setw(9) << "ref_mem" << std::setw(7) << "d_mem"
     << std::setw(9) << "iou" << std::setw(9) << "ref_iou" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.name << std::right << std::setw(12) << fmt_fixed(r.radius_ours, 2)
       << std::setw(12) << fmt_fixed(r.radius_ref, 2) << std::setw(10) << fmt_fixed(r.radius_delta, 2) << std::setw(9)
       << r.members_ours << std::setw(9) << r.members_ref << std::setw(7) << r.members_delta << std::setw(9)
       << opt(r.iou_ours) << std::setw(9) << opt(r.iou_ref) << "\n";
  }
  return os.str();
}

int cmd_eval(std::span<const std::string> reports, std::span<const std::string> references, std::ostream& out,
             std::ostream& log) {
  if (reports.empty() || reports.size() != references.size()) {
    log << "eval: need one --reference per --report\n";
    return kExitBadConfig;
  }
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    try {
      const auto a = read_file(reports[i]);
      const auto b = read_file(references[i]);
      rows.push_back(compare_reports(std::string_view(reinterpret_cast<const char*>(a.data()), a.size()),
                                     std::string_view(reinterpret_cast<const char*>(b.data()), b.size()),
                                     fs::path(reports[i]).parent_path().filename().string()));
    } catch (const Error& e) {
      log << "eval: " << e.what() << "\n";
      return e.code() == ErrorCode::Io ? kExitUnreadableInput : kExitBadConfig;
    }
  }
  out << format_eval_table(rows);
  return kExitOk;
}

}  // namespace starvae::pipeline
