#include "starvae/config.hpp"
#include "starvae/error.hpp"
#include "starvae/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

namespace pipeline = starvae::pipeline;
using starvae::config::KeyValues;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> pixel_scale;
  std::optional<std::string> survey;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "key=value run configuration file");
  cmd->add_option("--seed", flags.seed, "master seed");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--pixel-scale", flags.pixel_scale, "pixel scale in arcsec/pixel (overrides the FITS header)");
  cmd->add_option("--survey", flags.survey, "catalogue survey: ukidss or 2mass");
  cmd->add_option("--set", flags.overrides, "extra key=value override (repeatable)");
}

/// Config file first, then --set pairs, then the dedicated flags.
std::optional<KeyValues> load_config(const CommonFlags& flags) {
  KeyValues kv;
  if (!flags.config_path.empty()) {
    const auto bytes = pipeline::read_file(flags.config_path);
    kv = KeyValues::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  for (const auto& item : flags.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw starvae::Error(starvae::ErrorCode::BadConfig, "--set expects key=value, got '" + item + "'");
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (flags.seed) kv.set("seed", std::to_string(*flags.seed));
  if (flags.out) kv.set("output.dir", *flags.out);
  if (flags.pixel_scale) kv.set("pixel_scale", std::to_string(*flags.pixel_scale));
  if (flags.survey) kv.set("survey", *flags.survey);
  return kv;
}

int exit_code_for(const starvae::Error& e) {
  using starvae::ErrorCode;
  switch (e.code()) {
    case ErrorCode::Io:
    case ErrorCode::MalformedHeader:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::TruncatedData:
    case ErrorCode::MissingColumn:
      return pipeline::kExitUnreadableInput;
    default:
      return pipeline::kExitBadConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised stellar cluster detection with a dense VAE and a two-component GMM"};
  app.require_subcommand(1);

  CommonFlags synth_flags, detect_flags;
  auto* synth = app.add_subcommand("synth", "generate a synthetic star field with a planted cluster");
  add_common(synth, synth_flags);
  auto* detect = app.add_subcommand("detect", "run the multi-scale detector on a FITS image");
  add_common(detect, detect_flags);

  std::vector<std::string> reports, references;
  auto* eval = app.add_subcommand("eval", "compare detection reports against reference values");
  eval->add_option("--report", reports, "report.json produced by detect (repeatable)")->required();
  eval->add_option("--reference", references, "reference JSON with radius_arcsec, members, optional iou")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pipeline::kExitBadConfig;
  }

  try {
    if (*synth) {
      const auto kv = load_config(synth_flags);
      return pipeline::cmd_synth(*kv, std::cerr);
    }
    if (*detect) {
      const auto kv = load_config(detect_flags);
      return pipeline::cmd_detect(*kv, std::cerr);
    }
    return pipeline::cmd_eval(reports, references, std::cout, std::cerr);
  } catch (const starvae::Error& e) {
    std::cerr << "starvae: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "starvae: " << e.what() << "\n";
    return 1;
  }
}
