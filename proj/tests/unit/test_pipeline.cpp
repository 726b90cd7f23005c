#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "starvae/error.hpp"
#include "starvae/pipeline.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>

using namespace starvae;
using namespace starvae::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("starvae_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

config::KeyValues small_synth(const fs::path& out, std::uint64_t seed = 5) {
  config::KeyValues kv;
  kv.set("synth.width", "64");
  kv.set("synth.height", "64");
  kv.set("synth.n_cluster", "30");
  kv.set("synth.n_background", "15");
  kv.set("synth.cluster_sigma", "5");
  kv.set("synth.noise_fraction", "0.02");
  kv.set("seed", std::to_string(seed));
  kv.set("output.dir", out.string());
  return kv;
}

config::KeyValues small_detect(const fs::path& field, const fs::path& out) {
  config::KeyValues kv;
  kv.set("input.image", (field / "field.fits").string());
  kv.set("input.catalogue", (field / "field.csv").string());
  kv.set("input.truth", (field / "field.truth").string());
  kv.set("patches.sizes", "8,16");
  kv.set("train.epochs", "2");
  kv.set("train.hidden", "24,12,6");
  kv.set("train.latent_dim", "2");
  kv.set("train.batch_size", "16");
  kv.set("seed", "3");
  kv.set("output.dir", out.string());
  return kv;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(STARVAE_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run configuration defaults and overrides") {
  config::KeyValues kv;
  kv.set("seed", "10");
  kv.set("train.epochs", "7");
  kv.set("train.16.epochs", "3");
  kv.set("train.16.prior", "mixture");
  const auto cfg = RunConfig::from_key_values(kv);
  CHECK(cfg.patch_sizes == std::vector<int>{8, 16, 32, 64});
  CHECK(cfg.clip_percentile == 99.5);
  CHECK(cfg.train_for(0).epochs == 7);
  CHECK(cfg.train_for(1).epochs == 3);
  CHECK(cfg.train_for(1).prior.kind == vae::PriorKind::Mixture);
  CHECK(cfg.train_for(2).prior.kind == vae::PriorKind::StandardNormal);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(cfg.train_for(i).seed == 10 + i);
    CHECK(cfg.scale_seed(i) == 10 + i);
  }
  CHECK(cfg.train_for(0).hidden == std::vector<int>{1024, 256, 32});
  CHECK(cfg.train_for(0).latent_dim == 16);
}

TEST_CASE("invalid run configurations") {
  auto rejects = [](const std::string& key, const std::string& value) {
    config::KeyValues kv;
    kv.set(key, value);
    try {
      RunConfig::from_key_values(kv);
      return false;
    } catch (const Error& e) {
      return e.code() == ErrorCode::BadConfig;
    }
  };
  CHECK(rejects("patches.sizes", "8,8"));
  CHECK(rejects("patches.clip_percentile", "0"));
  CHECK(rejects("train.epochs", "0"));
  CHECK(rejects("train.prior", "laplace"));
  CHECK(rejects("train.learning_rate", "fast"));
  CHECK(rejects("pixel_scale", "-1"));
  CHECK(rejects("reference.ra", "10"));
}

TEST_CASE("oversized scale is named") {
  config::KeyValues kv;
  kv.set("patches.sizes", "8,128");
  const auto cfg = RunConfig::from_key_values(kv);
  try {
    cfg.validate_scales(64, 64);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PatchTooLarge);
    CHECK(std::string(e.what()).find("128") != std::string::npos);
  }
  CHECK_NOTHROW(cfg.validate_scales(128, 200));
}

TEST_CASE("synth writes three re-readable, reproducible files") {
  const auto a = scratch("synth_a");
  const auto b = scratch("synth_b");
  std::ostringstream log;
  REQUIRE(cmd_synth(small_synth(a), log) == kExitOk);
  REQUIRE(cmd_synth(small_synth(b), log) == kExitOk);
  for (const char* name : {"field.fits", "field.csv", "field.truth"}) {
    REQUIRE(fs::exists(a / name));
    CHECK(read_file(a / name) == read_file(b / name));
  }
  const auto img = imaging::read_fits(read_file(a / "field.fits"));
  CHECK(img.width == 64);
  CHECK(img.pixel_scale_arcsec == doctest::Approx(1.03).epsilon(1e-12));
  const auto cat = imaging::parse_catalogue(slurp(a / "field.csv"), imaging::Survey::TwoMass);
  CHECK(cat.catalogue.size() == 45);
  CHECK(synthfield::parse_ground_truth(slurp(a / "field.truth")).members == 30);

  auto empty = small_synth(a);
  empty.set("synth.n_cluster", "0");
  REQUIRE(cmd_synth(empty, log) == kExitOk);
  CHECK(synthfield::parse_ground_truth(slurp(a / "field.truth")).members == 0);

  auto bad = small_synth(a);
  bad.set("synth.cluster_sigma", "0");
  CHECK(cmd_synth(bad, log) == kExitBadConfig);
}

TEST_CASE("detect runs end to end and is byte-for-byte reproducible") {
  const auto field = scratch("detect_field");
  std::ostringstream log;
  REQUIRE(cmd_synth(small_synth(field), log) == kExitOk);
  const auto out1 = scratch("detect_1");
  const auto out2 = scratch("detect_2");
  const int code1 = cmd_detect(small_detect(field, out1), log);
  const int code2 = cmd_detect(small_detect(field, out2), log);
  CHECK((code1 == kExitOk || code1 == kExitDegenerate));
  CHECK(code1 == code2);

  const auto report = nlohmann::json::parse(slurp(out1 / "report.json"));
  for (const char* key : {"center_px", "center_sky", "radius_arcsec", "members", "iou", "scales"})
    CHECK(report.contains(key));
  CHECK(report["scales"].size() == 2);
  for (const char* name : {"report.json", "report.txt", "heatmap.pgm", "heatmap.csv", "vae_8.ckpt", "vae_16.ckpt",
                           "latent_8.csv", "latent_16.csv"}) {
    REQUIRE(fs::exists(out1 / name));
    CHECK(read_file(out1 / name) == read_file(out2 / name));
  }
  // Checkpoints load back against the configured architecture.
  const auto ck = vae::load_checkpoint(read_file(out1 / "vae_16.ckpt"), vae::Architecture{256, {24, 12, 6}, 2});
  CHECK(ck.patch_size == 16);

  SUBCASE("scale-level parallelism changes nothing") {
    const auto out3 = scratch("detect_3");
    auto kv = small_detect(field, out3);
    kv.set("parallel", "true");
    CHECK(cmd_detect(kv, log) == code1);
    CHECK(read_file(out3 / "report.json") == read_file(out1 / "report.json"));
    CHECK(read_file(out3 / "vae_8.ckpt") == read_file(out1 / "vae_8.ckpt"));
  }
}

TEST_CASE("detect exit codes") {
  const auto field = scratch("exit_field");
  std::ostringstream log;
  REQUIRE(cmd_synth(small_synth(field), log) == kExitOk);
  const auto out = scratch("exit_out");

  auto too_big = small_detect(field, out);
  too_big.set("patches.sizes", "8,128");
  std::ostringstream msg;
  CHECK(cmd_detect(too_big, msg) == kExitBadConfig);
  CHECK(msg.str().find("128") != std::string::npos);

  auto missing = small_detect(field, out);
  missing.set("input.image", (field / "nope.fits").string());
  CHECK(cmd_detect(missing, log) == kExitUnreadableInput);

  write_file_atomic(field / "broken.fits", std::string(100, 'x'));
  auto broken = small_detect(field, out);
  broken.set("input.image", (field / "broken.fits").string());
  CHECK(cmd_detect(broken, log) == kExitUnreadableInput);

  auto bad = small_detect(field, out);
  bad.set("train.epochs", "-1");
  CHECK(cmd_detect(bad, log) == kExitBadConfig);

  config::KeyValues no_image;
  CHECK(cmd_detect(no_image, log) == kExitBadConfig);
}

TEST_CASE("eval comparisons") {
  SUBCASE("identity") {
    const std::string doc = R"({"radius_arcsec": 41.2, "members": 120, "iou": 0.75})";
    const auto row = compare_reports(doc, doc, "f");
    CHECK(row.radius_delta == 0.0);
    CHECK(row.members_delta == 0);
    CHECK(row.iou_ours == 0.75);
    CHECK(row.iou_ref == 0.75);
  }
  SUBCASE("radius delta") {
    const auto row = compare_reports(R"({"radius_arcsec": 77.13, "members": 98, "iou": 0.8})",
                                     R"({"radius_arcsec": 89, "members": 119})", "06055+2039");
    CHECK(row.radius_delta == doctest::Approx(-11.87).epsilon(1e-12));
    CHECK(row.members_delta == -21);
    CHECK_FALSE(row.iou_ref.has_value());
    const std::vector<EvalRow> rows{row};
    const auto table = format_eval_table(rows);
    CHECK(table.find("-11.87") != std::string::npos);
    CHECK(table.find("0.8000") != std::string::npos);
    CHECK(table.find(" -\n") != std::string::npos);
  }
  SUBCASE("schema mismatch") {
    CHECK_THROWS_AS(compare_reports(R"({"radius_arcsec": 1})", R"({"radius_arcsec": 1, "members": 2})", "x"), Error);
    CHECK_THROWS_AS(compare_reports("not json", R"({"radius_arcsec": 1, "members": 2})", "x"), Error);
  }
  SUBCASE("files") {
    const auto dir = scratch("eval");
    write_file_atomic(dir / "report.json", std::string(R"({"radius_arcsec": 77.13, "members": 98, "iou": null})"));
    write_file_atomic(dir / "ref.json", std::string(R"({"radius_arcsec": 89, "members": 98})"));
    write_file_atomic(dir / "bad.json", std::string(R"({"members": 98})"));
    std::ostringstream out, log;
    const std::vector<std::string> reports{(dir / "report.json").string()};
    const std::vector<std::string> refs{(dir / "ref.json").string()};
    CHECK(cmd_eval(reports, refs, out, log) == kExitOk);
    CHECK(out.str().find("-11.87") != std::string::npos);
    const std::vector<std::string> bad{(dir / "bad.json").string()};
    CHECK(cmd_eval(reports, bad, out, log) == kExitBadConfig);
  }
}

TEST_CASE("heatmap exports") {
  detection::Heatmap h(3, 2);
  h.votes = {0.0, 1.0, 2.0, 4.0, 0.5, 0.0};
  const auto pgm = heatmap_to_pgm(h);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(std::string(pgm.begin(), pgm.begin() + static_cast<long>(header.size())) == header);
  CHECK(pgm[header.size() + 3] == 255);
  CHECK(pgm[header.size()] == 0);
  const auto csv = heatmap_to_csv(h);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("command-line front end") {
  const auto dir = scratch("cli");
  const std::string out = (dir / "field").string();
  CHECK(run_cli("synth --seed 4 --out " + out +
                " --set synth.width=64 --set synth.height=64 --set synth.n_cluster=20 --set synth.n_background=10"
                " --set synth.cluster_sigma=5") == 0);
  CHECK(fs::exists(dir / "field" / "field.fits"));
  const std::string inputs = " --set input.image=" + out + "/field.fits --set input.catalogue=" + out + "/field.csv";
  CHECK(run_cli("detect --out " + (dir / "run").string() + inputs + " --set patches.sizes=8,128") == 2);
  CHECK(run_cli("detect --out " + (dir / "run").string() + " --set input.image=" + out + "/missing.fits") == 4);
  CHECK(run_cli("detect --set not-a-pair") == 2);
  CHECK(run_cli("frobnicate") == 2);
  const int code = run_cli("detect --seed 1 --out " + (dir / "run").string() + inputs +
                           " --set patches.sizes=16 --set train.epochs=1 --set train.hidden=16,8,4 --set train.latent_dim=2");
  CHECK((code == 0 || code == 3));
  write_file_atomic(dir / "ref.json", std::string(R"({"radius_arcsec": 10, "members": 5})"));
  CHECK(run_cli("eval --report " + (dir / "run" / "report.json").string() + " --reference " +
                (dir / "ref.json").string()) == 0);
}
