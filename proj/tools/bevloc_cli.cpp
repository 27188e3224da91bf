// bevloc: command-line front end for warping, geo-referencing, alignment and benchmarks.
//
// Exit codes: 0 ok, 2 usage, 3 unreadable or malformed input, 4 degenerate
// geometry, 5 precondition or domain violation, 6 anything else.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bevloc/bevloc.hpp"

using namespace bevloc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kInput = 3, kDegenerate = 4, kPrecondition = 5, kInternal = 6 };

void emit(const json& j) { std::cout << j.dump() << '\n'; }

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

YAML::Node load_yaml(const fs::path& path) {
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw IoError("cannot read " + path.string());
  } catch (const YAML::Exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

template <class T>
T get_or(const YAML::Node& n, const char* key, T fallback) {
  if (!n || !n[key]) return fallback;
  try {
    return n[key].as<T>();
  } catch (const YAML::Exception&) {
    throw IoError(std::string("config key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const YAML::Node& n, const std::vector<std::string>& known, const std::string& where) {
  if (!n) return;
  if (!n.IsMap()) throw IoError(where + " must be a key-value map");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw IoError("unknown key '" + key + "' in " + where);
  }
}

// ---------------------------------------------------------------------------
// Label records: image-id lat lon center-lat center-lon zoom size [legacy-u legacy-v]

struct LabelRecord {
  std::string id;
  GpsCoord gps;
  PatchMeta meta;
  std::optional<PixelLabel> legacy;
  std::string line;
};

std::vector<LabelRecord> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<LabelRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::string norm = line;
    std::replace(norm.begin(), norm.end(), ',', ' ');
    std::istringstream ss(norm);
    std::vector<std::string> f;
    for (std::string t; ss >> t;) f.push_back(t);
    if (f.size() != 7 && f.size() != 9)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 7 or 9 fields, got " +
                    std::to_string(f.size()));
    LabelRecord r;
    try {
      r.id = f[0];
      r.gps = {std::stod(f[1]), std::stod(f[2])};
      r.meta.center = {std::stod(f[3]), std::stod(f[4])};
      r.meta.zoom = std::stoi(f[5]);
      r.meta.size = std::stoi(f[6]);
      if (f.size() == 9) r.legacy = PixelLabel{std::stod(f[7]), std::stod(f[8])};
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    r.meta.validate();
    r.line = line;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Camera config

BevCamera bev_from(const YAML::Node& n) {
  reject_unknown(n, {"width", "height", "fov_deg"}, "bev");
  BevCamera b;
  b.width = get_or(n, "width", b.width);
  b.height = get_or(n, "height", b.height);
  b.fov_deg = get_or(n, "fov_deg", b.fov_deg);
  b.validate();
  return b;
}

Attitude attitude_from(const YAML::Node& n) {
  reject_unknown(n, {"roll_deg", "pitch_deg", "yaw_deg"}, "attitude");
  return {get_or(n, "roll_deg", 0.0), get_or(n, "pitch_deg", 0.0), get_or(n, "yaw_deg", 0.0)};
}

json image_doc(const fs::path& out, const ImageBuffer& img) {
  return {{"output", out.string()}, {"width", img.width()}, {"height", img.height()}, {"channels", img.channels()}};
}

int cmd_warp_pano(const fs::path& config, const fs::path& input, const fs::path& output) {
  const YAML::Node cfg = load_yaml(config);
  reject_unknown(cfg, {"bev", "attitude"}, config.string());
  const BevCamera bev = bev_from(cfg["bev"]);
  const Attitude att = attitude_from(cfg["attitude"]);
  ImageBuffer pano = read_image(input);
  if (pano.width() != 2 * pano.height()) pano = complete_panorama(pano);
  const ImageBuffer out = panorama_to_bev(pano, bev, att);
  write_image(output, out);
  json doc = image_doc(output, out);
  doc["command"] = "warp-pano";
  emit(doc);
  return kOk;
}

int cmd_warp_front(const fs::path& config, const fs::path& input, const fs::path& output) {
  const YAML::Node cfg = load_yaml(config);
  reject_unknown(cfg, {"front", "bev", "yaw_deg"}, config.string());
  const YAML::Node fn = cfg["front"];
  reject_unknown(fn, {"width", "height", "fov_deg", "tilt_deg"}, "front");
  const ImageBuffer img = read_image(input);
  FrontCamera front;
  front.width = get_or(fn, "width", img.width());
  front.height = get_or(fn, "height", img.height());
  front.fov_deg = get_or(fn, "fov_deg", front.fov_deg);
  front.tilt_deg = get_or(fn, "tilt_deg", front.tilt_deg);
  front.validate();
  require(front.width == img.width() && front.height == img.height(),
          "front camera size does not match the input image");
  const YAML::Node bn = cfg["bev"];
  reject_unknown(bn, {"width", "height"}, "bev");
  const FrameSize size{get_or(bn, "width", 512), get_or(bn, "height", 512)};
  require(size.width > 0 && size.height > 0, "BEV size must be positive");
  const ImageBuffer out = warp_by_grid(img, build_front_bev_grid(front, size, get_or(cfg, "yaw_deg", 0.0)));
  write_image(output, out);
  json doc = image_doc(output, out);
  doc["command"] = "warp-front";
  emit(doc);
  return kOk;
}

// ---------------------------------------------------------------------------
// Geo-referencing

struct PatchArgs {
  std::optional<double> center_lat, center_lon;
  int size = 512;
};

std::optional<PatchMeta> patch_from(const PatchArgs& a, int zoom) {
  if (!a.center_lat && !a.center_lon) return std::nullopt;
  require(a.center_lat.has_value() && a.center_lon.has_value(), "--center-lat and --center-lon go together");
  PatchMeta m;
  m.center = {*a.center_lat, *a.center_lon};
  m.zoom = zoom;
  m.size = a.size;
  m.validate();
  return m;
}

int cmd_gps2pix(double lat, double lon, int zoom, const PatchArgs& pa) {
  const GpsCoord g{lat, lon};
  json doc{{"lat", lat}, {"lon", lon}, {"zoom", zoom}};
  const GlobalPixel p = gps_to_global(g, zoom);
  doc["x"] = p.x;
  doc["y"] = p.y;
  if (const auto m = patch_from(pa, zoom)) {
    const PixelLabel px = gps_to_patch_pixel(*m, g);
    doc["u"] = px.u;
    doc["v"] = px.v;
  }
  emit(doc);
  return kOk;
}

int cmd_pix2gps(double x, double y, int zoom, const PatchArgs& pa) {
  GpsCoord g;
  if (const auto m = patch_from(pa, zoom)) {
    g = patch_pixel_to_gps(*m, {x, y});
  } else {
    g = global_to_gps({x, y, zoom});
  }
  emit({{"x", x}, {"y", y}, {"zoom", zoom}, {"lat", g.lat}, {"lon", g.lon}});
  return kOk;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int cmd_fix_labels(const fs::path& input, const std::optional<fs::path>& output) {
  const std::vector<LabelRecord> recs = read_labels(input);
  std::string text;
  for (const auto& r : recs) {
    json doc{{"id", r.id}};
    std::string extra;
    if (r.legacy) {
      const LabelCorrection c = correct_label(r.meta, r.gps, *r.legacy);
      doc["u"] = c.corrected.u;
      doc["v"] = c.corrected.v;
      doc["correction_m"] = c.correction_m;
      extra = fixed(c.corrected.u) + " " + fixed(c.corrected.v) + " " + fixed(c.correction_m);
    } else {
      const PixelLabel px = gps_to_patch_pixel(r.meta, r.gps);
      doc["u"] = px.u;
      doc["v"] = px.v;
      doc["correction_m"] = nullptr;
      extra = fixed(px.u) + " " + fixed(px.v) + " -";
    }
    emit(doc);
    text += r.line + " " + extra + "\n";
  }
  if (output) write_text_atomic(*output, text);
  return kOk;
}

// ---------------------------------------------------------------------------
// Alignment

std::optional<Homography> read_homography(const std::vector<double>& flat, const std::optional<fs::path>& file) {
  if (!flat.empty()) return Homography::from_row_major(flat);
  if (!file) return std::nullopt;
  std::ifstream in(*file);
  if (!in) throw IoError("cannot read " + file->string());
  json j;
  try {
    in >> j;
    return Homography::from_row_major(j.at("homography").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw IoError(file->string() + ": " + e.what());
  }
}

ImageBuffer heatmap(const ConfidenceMap& m) {
  const double peak = *std::max_element(m.prob.begin(), m.prob.end());
  std::vector<double> v(m.prob.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = peak > 0.0 ? m.prob[i] / peak : 0.0;
  return ImageBuffer(m.height, m.width, 1, std::move(v));
}

// Red: warped BEV, green and blue: satellite. Unobserved BEV pixels show the satellite only.
ImageBuffer overlay(const ImageBuffer& bev, const ImageBuffer& sat, const Homography& h) {
  const ImageBuffer w = warp_by_homography(bev, h, sat.size());
  ImageBuffer out(sat.height(), sat.width(), 3);
  for (int y = 0; y < sat.height(); ++y)
    for (int x = 0; x < sat.width(); ++x) {
      const double s = sat.at(y, x), b = w.at(y, x);
      out.set(y, x, 0, b > 0.0 ? b : s);
      out.set(y, x, 1, s);
      out.set(y, x, 2, b > 0.0 ? 0.5 * s : s);
    }
  return out;
}

struct AlignArgs {
  fs::path bev, sat, meta;
  std::string meta_id;
  int rotations = 1;
  int iters = 6;
  int radius = 4;
  int grid = 16;
  std::vector<double> gt_flat;
  std::optional<fs::path> gt_file, overlay, dump_correlation;
};

int cmd_align(const AlignArgs& a) {
  const std::vector<LabelRecord> recs = read_labels(a.meta);
  if (recs.empty()) throw IoError(a.meta.string() + " holds no records");
  const LabelRecord* rec = &recs.front();
  if (!a.meta_id.empty()) {
    rec = nullptr;
    for (const auto& r : recs)
      if (r.id == a.meta_id) rec = &r;
    if (!rec) throw IoError("no record '" + a.meta_id + "' in " + a.meta.string());
  }
  const ImageBuffer bev = to_grayscale(read_image(a.bev));
  const ImageBuffer sat = to_grayscale(read_image(a.sat));
  EstimatorConfig cfg;
  cfg.iterations = a.iters;
  cfg.radius = a.radius;
  cfg.grid_h = cfg.grid_w = a.grid;
  cfg.validate();
  const std::optional<Homography> gt = read_homography(a.gt_flat, a.gt_file);

  LocalizationResult loc;
  const EstimationResult* est = nullptr;
  DisambiguationResult d;
  EstimationResult single;
  int branch = 0;
  if (a.rotations == 4) {
    d = disambiguate_rotations(bev, sat, rec->meta, cfg);
    loc = d.best;
    branch = d.best_branch;
    est = &d.runs[static_cast<std::size_t>(branch)];
  } else {
    single = run(bev, sat, cfg);
    loc = readout(single, single.h_image, rec->meta, bev.size(), cfg);
    est = &single;
  }

  json doc;
  std::vector<double> row_major;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) row_major.push_back(loc.h_image.matrix()(r, c));
  doc["homography"] = row_major;
  doc["u_s"] = loc.sat_pixel.x();
  doc["v_s"] = loc.sat_pixel.y();
  doc["lat"] = loc.gps.lat;
  doc["lon"] = loc.gps.lon;
  doc["theta_deg"] = loc.heading_deg;
  doc["confidence"] = loc.confidence;
  doc["rotation_deg"] = 90 * branch;
  json steps = json::array();
  if (gt) {
    const Point2 pivot((bev.width() - 1) / 2.0, (bev.height() - 1) / 2.0);
    const Homography turn = rotation_homography(90.0 * branch, pivot);
    const Homography gt_feature = image_to_feature(*gt, est->stride_x, est->stride_y);
    for (const auto& st : est->trace) {
      const Homography full = compose(feature_to_image(st.h, est->stride_x, est->stride_y), turn);
      steps.push_back(mean_corner_error(image_to_feature(full, est->stride_x, est->stride_y), gt_feature, est->frame));
    }
  }
  doc["per_step_corner_error"] = steps;
  doc["gps_error_m"] = localization_error_m(loc.gps, rec->gps, rec->meta.center.lat);
  if (a.overlay) write_image(*a.overlay, overlay(bev, sat, loc.h_image));
  if (a.dump_correlation) write_image(*a.dump_correlation, heatmap(loc.confidence_map));
  emit(doc);
  return kOk;
}

// ---------------------------------------------------------------------------
// Benchmark suites
//
// defaults: {perturbation, rotation_deg, disambiguate, style, size, noise, occlusion,
//            iterations, radius, lat, lon, zoom}
// seeds: [first, last]            inclusive range, expanded with the defaults
// trials: [{seed: 7, ...}, ...]   explicit records, overriding the defaults

const std::vector<std::string> kTrialKeys{"seed",  "perturbation", "rotation_deg", "disambiguate",
                                          "style", "size",         "noise",        "occlusion",
                                          "iterations", "radius",  "lat",          "lon", "zoom"};

TrialSpec trial_from(const YAML::Node& n, TrialSpec t, const std::string& where) {
  reject_unknown(n, kTrialKeys, where);
  t.scene.seed = get_or<std::uint64_t>(n, "seed", t.scene.seed);
  t.perturbation = get_or(n, "perturbation", t.perturbation);
  t.rotation_deg = get_or(n, "rotation_deg", t.rotation_deg);
  t.disambiguate = get_or(n, "disambiguate", t.disambiguate);
  if (n && n["style"]) t.scene.style = texture_style_from_string(get_or<std::string>(n, "style", ""));
  t.scene.size = get_or(n, "size", t.scene.size);
  t.scene.noise_sigma = get_or(n, "noise", t.scene.noise_sigma);
  t.scene.occlusion = get_or(n, "occlusion", t.scene.occlusion);
  t.estimator.iterations = get_or(n, "iterations", t.estimator.iterations);
  t.estimator.radius = get_or(n, "radius", t.estimator.radius);
  t.center.lat = get_or(n, "lat", t.center.lat);
  t.center.lon = get_or(n, "lon", t.center.lon);
  t.zoom = get_or(n, "zoom", t.zoom);
  t.scene.validate();
  t.estimator.validate();
  require(t.perturbation >= 0.0, "perturbation must be non-negative");
  return t;
}

std::vector<TrialSpec> read_suite(const fs::path& path) {
  const YAML::Node root = load_yaml(path);
  reject_unknown(root, {"defaults", "seeds", "trials"}, path.string());
  const TrialSpec base = trial_from(root["defaults"], TrialSpec{}, "defaults");
  std::vector<TrialSpec> out;
  if (const YAML::Node s = root["seeds"]) {
    const auto range = get_or<std::vector<std::uint64_t>>(root, "seeds", {});
    if (range.size() != 2 || range[0] > range[1]) throw IoError("seeds must be [first, last]");
    for (std::uint64_t k = range[0]; k <= range[1]; ++k) {
      TrialSpec t = base;
      t.scene.seed = k;
      out.push_back(t);
    }
  }
  if (const YAML::Node ts = root["trials"]) {
    if (!ts.IsSequence()) throw IoError("trials must be a list");
    for (std::size_t i = 0; i < ts.size(); ++i) out.push_back(trial_from(ts[i], base, "trials[" + std::to_string(i) + "]"));
  }
  if (out.empty()) throw IoError(path.string() + " defines no trials");
  return out;
}

json recall_doc(const std::vector<RecallAt>& r) {
  json j = json::object();
  for (const auto& x : r) {
    char key[32];
    std::snprintf(key, sizeof key, "%g", x.threshold);
    j[key] = x.recall;
  }
  return j;
}

json report_doc(const EvalReport& s) {
  return {{"count", s.count},
          {"mean_m", s.mean_m},
          {"median_m", s.median_m},
          {"mean_deg", s.mean_deg},
          {"median_deg", s.median_deg},
          {"localization_recall", recall_doc(s.localization_recall)},
          {"lateral_recall", recall_doc(s.lateral_recall)},
          {"longitudinal_recall", recall_doc(s.longitudinal_recall)},
          {"orientation_recall", recall_doc(s.orientation_recall)}};
}

int cmd_bench(const fs::path& suite, double threshold, unsigned threads) {
  require(threshold > 0.0, "threshold must be positive");
  const BenchmarkReport rep = run_benchmark(read_suite(suite), threshold, threads);
  for (const auto& t : rep.trials) {
    json j{{"seed", t.seed}, {"ok", t.ok}};
    if (t.ok) {
      j["corner_error"] = t.corner_error;
      j["corner_error_px"] = t.corner_error_px;
      j["gps_error_m"] = t.gps_error_m;
      j["theta_error_deg"] = t.record->orientation_deg;
      j["confidence"] = t.confidence;
      j["branch"] = t.branch;
      j["step_errors"] = t.step_errors;
    } else {
      j["error"] = t.error;
    }
    emit(j);
  }
  json doc{{"report", "bench"},
           {"trials", rep.trials.size()},
           {"convergence_threshold", rep.convergence_threshold},
           {"converged_fraction", rep.converged_fraction},
           {"mean_curve", rep.mean_curve}};
  if (rep.summary) doc["summary"] = report_doc(*rep.summary);
  emit(doc);
  return kOk;
}

// eval: one JSON object per line with pred_lat, pred_lon, pred_heading, gt_lat, gt_lon, gt_heading.
int cmd_eval(const fs::path& input) {
  std::ifstream in(input);
  if (!in) throw IoError("cannot read " + input.string());
  std::vector<EvalRecord> recs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const GpsCoord pred{j.at("pred_lat").get<double>(), j.at("pred_lon").get<double>()};
      const GpsCoord gt{j.at("gt_lat").get<double>(), j.at("gt_lon").get<double>()};
      recs.push_back(make_record(pred, j.at("pred_heading").get<double>(), gt, j.at("gt_heading").get<double>(),
                                 gt.lat));
    } catch (const json::exception& e) {
      throw IoError(input.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (recs.empty()) throw IoError(input.string() + " holds no records");
  json doc = report_doc(summarize(recs));
  doc["report"] = "eval";
  emit(doc);
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"bevloc: cross-view BEV to satellite alignment and geo-referencing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bevloc 1.0");

  fs::path config, input, output;
  auto* warp_pano = app.add_subcommand("warp-pano", "Project an equirectangular panorama to a BEV raster");
  auto* warp_front = app.add_subcommand("warp-front", "Project a front-view image to a BEV raster");
  for (auto* sc : {warp_pano, warp_front}) {
    sc->add_option("--config", config, "Camera config (YAML)")->required()->check(CLI::ExistingFile);
    sc->add_option("--input", input, "Input raster (.png/.pgm/.ppm)")->required();
    sc->add_option("--output", output, "Output raster (.png/.pgm/.ppm)")->required();
  }

  double lat = 0.0, lon = 0.0, x = 0.0, y = 0.0;
  int zoom = 20;
  PatchArgs patch;
  auto* gps2pix = app.add_subcommand("gps2pix", "GPS to Web Mercator global (and optionally patch) pixels");
  gps2pix->add_option("--lat", lat, "Latitude, degrees")->required();
  gps2pix->add_option("--lon", lon, "Longitude, degrees")->required();
  auto* pix2gps = app.add_subcommand("pix2gps", "Global (or patch, with --center-*) pixels to GPS");
  pix2gps->add_option("--x", x, "Pixel x (u in patch mode)")->required();
  pix2gps->add_option("--y", y, "Pixel y (v in patch mode)")->required();
  for (auto* sc : {gps2pix, pix2gps}) {
    sc->add_option("--zoom", zoom, "Zoom level")->check(CLI::Range(0, 23))->capture_default_str();
    sc->add_option("--center-lat", patch.center_lat, "Patch centre latitude");
    sc->add_option("--center-lon", patch.center_lon, "Patch centre longitude");
    sc->add_option("--size", patch.size, "Patch size in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  }

  std::optional<fs::path> labels_out;
  auto* fix = app.add_subcommand("fix-labels", "Recompute pixel labels from GPS; report legacy-label error");
  fix->add_option("--input", input, "Label file")->required()->check(CLI::ExistingFile);
  fix->add_option("--output", labels_out, "Write the records with u v correction_m appended");

  AlignArgs al;
  auto* align = app.add_subcommand("align", "Estimate the BEV-to-satellite homography and read out GPS and heading");
  align->add_option("--bev", al.bev, "BEV raster")->required()->check(CLI::ExistingFile);
  align->add_option("--sat", al.sat, "Satellite raster")->required()->check(CLI::ExistingFile);
  align->add_option("--meta", al.meta, "Label file with the patch record")->required()->check(CLI::ExistingFile);
  align->add_option("--meta-id", al.meta_id, "Record id to use (default: first record)");
  align->add_option("--rotations", al.rotations, "1, or 4 to search quarter-turn branches")
      ->check(CLI::IsMember({1, 4}))
      ->capture_default_str();
  align->add_option("--iters", al.iters, "Iterations K")->check(CLI::Range(1, 100))->capture_default_str();
  align->add_option("--radius", al.radius, "Correlation window radius r")->check(CLI::Range(1, 32))->capture_default_str();
  align->add_option("--grid", al.grid, "Feature grid side")->check(CLI::Range(2, 256))->capture_default_str();
  align->add_option("--gt-homography", al.gt_flat, "Ground-truth BEV-to-satellite homography, 9 numbers row-major")
      ->expected(9);
  align->add_option("--gt", al.gt_file, "JSON file with a 'homography' field used as ground truth")
      ->check(CLI::ExistingFile);
  align->add_option("--overlay", al.overlay, "Write the warped BEV composited onto the satellite");
  align->add_option("--dump-correlation", al.dump_correlation, "Write the centre-cell correlation heatmap");

  fs::path suite;
  double threshold = 0.25;
  unsigned threads = 0;
  auto* bench = app.add_subcommand("bench", "Run a synthetic benchmark suite");
  bench->add_option("--suite", suite, "Suite file (YAML)")->required()->check(CLI::ExistingFile);
  bench->add_option("--threshold", threshold, "Convergence threshold, feature cells")->capture_default_str();
  bench->add_option("--threads", threads, "Worker threads (0: all cores)")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Summarize prediction records (JSON lines)");
  eval->add_option("--input", input, "Records file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*warp_pano) return cmd_warp_pano(config, input, output);
    if (*warp_front) return cmd_warp_front(config, input, output);
    if (*gps2pix) return cmd_gps2pix(lat, lon, zoom, patch);
    if (*pix2gps) return cmd_pix2gps(x, y, zoom, patch);
    if (*fix) return cmd_fix_labels(input, labels_out);
    if (*align) return cmd_align(al);
    if (*bench) return cmd_bench(suite, threshold, threads);
    if (*eval) return cmd_eval(input);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  } catch (const DegenerateError& e) {
    std::cerr << "error: degenerate geometry: " << e.what() << '\n';
    return kDegenerate;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kPrecondition;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kPrecondition;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
