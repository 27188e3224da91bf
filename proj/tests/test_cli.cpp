#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "bevloc/bevloc.hpp"

using namespace bevloc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kData = BEVLOC_DATA;

struct Outcome {
  int code = -1;
  std::string out;
  std::vector<json> lines() const {
    std::vector<json> v;
    std::istringstream ss(out);
    for (std::string l; std::getline(ss, l);)
      if (!l.empty()) v.push_back(json::parse(l));
    return v;
  }
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(BEVLOC_EXE) + " " + args + " 2>/dev/null";
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path work(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bevloc_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string d(const std::string& name) { return (kData / name).string(); }

} // namespace

TEST(Gps2Pix, EquatorAnchor) {
  const Outcome r = run_cli("gps2pix --lat 0 --lon 0 --zoom 20");
  ASSERT_EQ(r.code, 0);
  const json j = r.lines().at(0);
  EXPECT_EQ(j["x"].get<double>(), 134217728.0);
  EXPECT_EQ(j["y"].get<double>(), 134217728.0);
}

TEST(Pix2Gps, PatchModeInvertsGps2Pix) {
  const Outcome a = run_cli("gps2pix --lat 40.7131 --lon -74.0057 --zoom 20 --center-lat 40.7128 --center-lon -74.006 --size 640");
  ASSERT_EQ(a.code, 0);
  const json ja = a.lines().at(0);
  char args[256];
  std::snprintf(args, sizeof args, "pix2gps --x %.17g --y %.17g --zoom 20 --center-lat 40.7128 --center-lon -74.006 --size 640",
                ja["u"].get<double>(), ja["v"].get<double>());
  const Outcome b = run_cli(args);
  ASSERT_EQ(b.code, 0);
  const json jb = b.lines().at(0);
  EXPECT_NEAR(jb["lat"].get<double>(), 40.7131, 1e-9);
  EXPECT_NEAR(jb["lon"].get<double>(), -74.0057, 1e-9);
}

TEST(WarpPano, MatchesLibraryByteForByte) {
  const fs::path out = work("pano_bev.png"), lib = work("pano_bev_lib.png");
  const Outcome r = run_cli("warp-pano --config " + d("pano_camera.yaml") + " --input " + d("pano.png") + " --output " + out.string());
  ASSERT_EQ(r.code, 0);
  write_image(lib, panorama_to_bev(read_image(kData / "pano.png"), BevCamera{128, 128, 85.0}, Attitude{0.0, 0.0, 15.0}));
  EXPECT_EQ(slurp(out), slurp(lib));
  EXPECT_EQ(slurp(out), slurp(kData / "pano_bev_expected.png"));
  EXPECT_FALSE(fs::exists(out.string() + ".tmp"));
}

TEST(WarpFront, MatchesLibraryByteForByte) {
  const fs::path out = work("front_bev.png"), lib = work("front_bev_lib.png");
  const Outcome r = run_cli("warp-front --config " + d("front_camera.yaml") + " --input " + d("front.png") + " --output " + out.string());
  ASSERT_EQ(r.code, 0);
  const FrontCamera front{124, 38, 17.5, 0.8};
  write_image(lib, warp_by_grid(read_image(kData / "front.png"), build_front_bev_grid(front, {96, 96}, 0.0)));
  EXPECT_EQ(slurp(out), slurp(lib));
  EXPECT_EQ(slurp(out), slurp(kData / "front_bev_expected.png"));
}

TEST(FixLabels, RecordsMatchLibrary) {
  const fs::path out = work("labels_fixed.txt");
  const Outcome r = run_cli("fix-labels --input " + d("labels.txt") + " --output " + out.string());
  ASSERT_EQ(r.code, 0);
  const auto lines = r.lines();
  ASSERT_EQ(lines.size(), 3u);

  PatchMeta m;
  m.center = {40.7128, -74.0060};
  m.zoom = 20;
  m.size = 640;
  const LabelCorrection c = correct_label(m, {40.7130, -74.0058}, {370.123, 280.456});
  EXPECT_EQ(lines[0]["id"], "nyc_0001");
  EXPECT_NEAR(lines[0]["u"].get<double>(), c.corrected.u, 1e-9);
  EXPECT_NEAR(lines[0]["v"].get<double>(), c.corrected.v, 1e-9);
  EXPECT_NEAR(lines[0]["correction_m"].get<double>(), c.correction_m, 1e-9);
  EXPECT_TRUE(lines[2]["correction_m"].is_null());

  std::istringstream text(slurp(out));
  std::string first;
  std::getline(text, first);
  std::istringstream fields(first);
  std::vector<std::string> f;
  for (std::string t; fields >> t;) f.push_back(t);
  ASSERT_EQ(f.size(), 12u);
  EXPECT_NEAR(std::stod(f[11]), c.correction_m, 1e-6);
}

TEST(Align, MatchesGoldenAndGroundTruth) {
  const Outcome r = run_cli("align --bev " + d("pair_bev.png") + " --sat " + d("pair_sat.png") + " --meta " +
                       d("pair_meta.txt") + " --gt " + d("pair_gt.json"));
  ASSERT_EQ(r.code, 0);
  const json got = r.lines().at(0);
  const json golden = json::parse(slurp(kData / "align_golden.json"));

  const auto h = got["homography"].get<std::vector<double>>();
  const auto hg = golden["homography"].get<std::vector<double>>();
  ASSERT_EQ(h.size(), 9u);
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(h[k], hg[k], 1e-6 * std::max(1.0, std::abs(hg[k])));
  EXPECT_NEAR(got["u_s"].get<double>(), golden["u_s"].get<double>(), 1e-6);
  EXPECT_NEAR(got["v_s"].get<double>(), golden["v_s"].get<double>(), 1e-6);
  EXPECT_NEAR(got["lat"].get<double>(), golden["lat"].get<double>(), 1e-10);
  EXPECT_NEAR(got["lon"].get<double>(), golden["lon"].get<double>(), 1e-10);
  EXPECT_NEAR(got["theta_deg"].get<double>(), golden["theta_deg"].get<double>(), 1e-6);
  EXPECT_NEAR(got["confidence"].get<double>(), golden["confidence"].get<double>(), 1e-6);
  const auto steps = got["per_step_corner_error"].get<std::vector<double>>();
  const auto steps_g = golden["per_step_corner_error"].get<std::vector<double>>();
  ASSERT_EQ(steps.size(), 7u);
  for (std::size_t k = 0; k < steps.size(); ++k) EXPECT_NEAR(steps[k], steps_g[k], 1e-6);

  // Against the synthetic ground truth rather than the golden file.
  const json gt = json::parse(slurp(kData / "pair_gt.json"));
  EXPECT_LT(steps.back(), 0.05);
  EXPECT_NEAR(got["theta_deg"].get<double>(), gt["theta_deg"].get<double>(), 0.05);
  EXPECT_LT(got["gps_error_m"].get<double>(), 0.05);
}

TEST(Align, DeterministicAndFourRotationAgrees) {
  const std::string base = "align --bev " + d("pair_bev.png") + " --sat " + d("pair_sat.png") + " --meta " + d("pair_meta.txt");
  const Outcome a = run_cli(base), b = run_cli(base);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_TRUE(a.lines().at(0)["per_step_corner_error"].empty());

  const fs::path ov = work("overlay.png"), heat = work("heat.png");
  const Outcome c = run_cli(base + " --rotations 4 --overlay " + ov.string() + " --dump-correlation " + heat.string());
  ASSERT_EQ(c.code, 0);
  const json j = c.lines().at(0);
  EXPECT_EQ(j["rotation_deg"], 0);
  EXPECT_NEAR(j["lat"].get<double>(), a.lines().at(0)["lat"].get<double>(), 1e-9);
  EXPECT_EQ(read_image(ov).channels(), 3);
  EXPECT_EQ(read_image(heat).width(), 16);
}

TEST(Bench, SuiteReport) {
  const Outcome r = run_cli("bench --suite " + d("suite.yaml") + " --threads 1");
  ASSERT_EQ(r.code, 0);
  const auto lines = r.lines();
  ASSERT_EQ(lines.size(), 5u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(lines[k]["ok"].get<bool>());
  EXPECT_EQ(lines[3]["seed"], 9);
  EXPECT_EQ(lines[3]["branch"], 2);
  const json& rep = lines[4];
  EXPECT_EQ(rep["trials"], 4);
  EXPECT_EQ(rep["converged_fraction"].get<double>(), 1.0);
  EXPECT_EQ(rep["mean_curve"].size(), 7u);
  EXPECT_EQ(rep["summary"]["count"], 4);
  EXPECT_EQ(run_cli("bench --suite " + d("suite.yaml") + " --threads 2").out, r.out);
}

TEST(Eval, SummaryMatchesLibrary) {
  const Outcome r = run_cli("eval --input " + d("eval_records.jsonl"));
  ASSERT_EQ(r.code, 0);
  const json j = r.lines().at(0);
  const EvalRecord a = make_record({40.7128, -74.0060}, 10.0, {40.7128, -74.0060}, 10.0, 40.7128);
  const EvalRecord b = make_record({40.71285, -74.0060}, 12.0, {40.7128, -74.0060}, 10.0, 40.7128);
  EXPECT_EQ(j["count"], 2);
  EXPECT_NEAR(j["mean_m"].get<double>(), 0.5 * (a.localization_m + b.localization_m), 1e-12);
  EXPECT_NEAR(j["median_deg"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(j["orientation_recall"]["5"].get<double>(), 1.0);
  EXPECT_EQ(j["localization_recall"]["1"].get<double>(), 0.5);
}

TEST(ExitCodes, DistinctPerFailureKind) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("gps2pix --lat 0 --lon 0 --bogus 1").code, 2);
  EXPECT_EQ(run_cli("gps2pix --lat 0 --lon 0 --zoom 24").code, 2);
  EXPECT_EQ(run_cli("--help").code, 0);

  const fs::path bad = work("bad_labels.txt");
  std::ofstream(bad) << "only three fields\n";
  EXPECT_EQ(run_cli("fix-labels --input " + bad.string()).code, 3);
  const fs::path cfg = work("bad_camera.yaml");
  std::ofstream(cfg) << "bev: {width: 64, height: 64, fov: 85}\n";
  EXPECT_EQ(run_cli("warp-pano --config " + cfg.string() + " --input " + d("pano.png") + " --output " +
                   work("x.png").string()).code, 3);
  EXPECT_EQ(run_cli("warp-pano --config " + d("pano_camera.yaml") + " --input " + work("missing.png").string() +
                   " --output " + work("x.png").string()).code, 3);

  EXPECT_EQ(run_cli("align --bev " + d("pair_bev.png") + " --sat " + d("pair_sat.png") + " --meta " +
                   d("pair_meta.txt") + " --gt-homography 1 0 0 0 0 0 0 0 1").code, 4);

  EXPECT_EQ(run_cli("gps2pix --lat 89 --lon 0").code, 5);
  EXPECT_EQ(run_cli("align --bev " + d("pair_bev.png") + " --sat " + d("pano_bev_expected.png") + " --meta " +
                   d("pair_meta.txt")).code, 5);
}
