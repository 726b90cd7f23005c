#pragma once

#include "starvae/config.hpp"
#include "starvae/detection.hpp"
#include "starvae/gmm.hpp"
#include "starvae/imaging.hpp"
#include "starvae/synthfield.hpp"
#include "starvae/vae.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace starvae::pipeline {

enum ExitCode : int {
  kExitOk = 0,
  kExitBadConfig = 2,
  kExitDegenerate = 3,
  kExitUnreadableInput = 4,
};

struct ReferenceCircle {
  imaging::SkyCoord center;
  double radius_arcsec = 0.0;
};

/// Everything a detection run depends on. Keys (flat, "section.key"):
///   input.image input.catalogue input.truth
///   reference.ra reference.dec reference.radius_arcsec
///   survey pixel_scale seed parallel output.dir
///   patches.sizes patches.clip_percentile
///   train.{epochs,batch_size,learning_rate,mc_samples,latent_dim,hidden,prior,prior_offset,prior_variance}
///   train.<size>.<key> overrides one scale, e.g. train.8.epochs=5
///   gmm.{max_iter,tol,weight_floor,separation_rel,max_reinit,cov_floor_rel}
struct RunConfig {
  std::string image_path;
  std::string catalogue_path;
  std::string truth_path;
  std::optional<ReferenceCircle> reference;
  imaging::Survey survey = imaging::Survey::TwoMass;
  std::optional<double> pixel_scale_override;
  std::vector<int> patch_sizes{8, 16, 32, 64};
  double clip_percentile = 99.5;
  vae::TrainConfig train;
  std::vector<vae::TrainConfig> per_scale_train;
  gmm::GmmConfig gmm;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  bool parallel = false;

  static RunConfig from_key_values(const config::KeyValues& kv);

  /// Training settings for scale `index`; its seed is master seed + index.
  vae::TrainConfig train_for(std::size_t index) const;
  std::uint64_t scale_seed(std::size_t index) const { return seed + index; }

  /// Throws PatchTooLarge/BadConfig naming the offending scale.
  void validate_scales(int width, int height) const;
};

struct ScaleResult {
  int patch_size = 0;
  vae::TrainResult training;
  vae::LatentStats latents;
  gmm::FitResult gmm;
  std::vector<int> labels;
  std::optional<detection::ComponentSelection> selection;
  detection::Heatmap heatmap;
  detection::ScaleSummary summary;
};

struct DetectionResult {
  detection::DetectionReport report;
  imaging::Image normalized;
  std::vector<ScaleResult> scales;
  detection::Heatmap ensemble;
  std::optional<detection::Region> region;
  std::optional<detection::Region> reference_region;
};

/// Runs the multi-scale pipeline in memory: normalise, per scale
/// patch/train/encode/cluster/vote, then ensemble, threshold and measure.
/// `reference` (if any) gives the disk against which IoU is computed.
DetectionResult detect_cluster(const imaging::Image& image, const imaging::Catalogue& catalogue,
                               const RunConfig& cfg, const std::optional<ReferenceCircle>& reference);

std::string report_to_json(const detection::DetectionReport& report);
std::string report_to_text(const detection::DetectionReport& report);

/// 8-bit binary PGM with votes scaled linearly so the maximum maps to 255.
std::vector<std::uint8_t> heatmap_to_pgm(const detection::Heatmap& heatmap);
std::string heatmap_to_csv(const detection::Heatmap& heatmap);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

synthfield::FieldSpec field_spec_from_key_values(const config::KeyValues& kv);

struct EvalRow {
  std::string name;
  double radius_ours = 0.0;
  double radius_ref = 0.0;
  double radius_delta = 0.0;
  long long members_ours = 0;
  long long members_ref = 0;
  long long members_delta = 0;
  std::optional<double> iou_ours;
  std::optional<double> iou_ref;
};

/// Both documents need numeric radius_arcsec and members; iou is optional.
EvalRow compare_reports(std::string_view report_json, std::string_view reference_json, std::string name);
std::string format_eval_table(std::span<const EvalRow> rows);

int cmd_synth(const config::KeyValues& kv, std::ostream& log);
int cmd_detect(const config::KeyValues& kv, std::ostream& log);
int cmd_eval(std::span<const std::string> reports, std::span<const std::string> references, std::ostream& out,
             std::ostream& log);

}  // namespace starvae::pipeline
