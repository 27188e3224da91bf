// Regenerates the files under data/ used by the CLI test.
//   make_fixtures <data-dir>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bevloc/bevloc.hpp"

using namespace bevloc;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_fixtures <data-dir>\n");
    return 2;
  }
  const fs::path dir = argv[1];
  fs::create_directories(dir);

  // Panorama and its BEV as the library computes them.
  SceneSpec scene;
  scene.seed = 11;
  scene.size = 256;
  scene.style = TextureStyle::road_grid;
  const BevCamera bev{128, 128, 85.0};
  const ImageBuffer pano = quantize8(render_pano(make_overhead(scene), BevCamera{256, 256, 85.0}, PanoCamera{512, 256}));
  write_image(dir / "pano.png", pano);
  write_image(dir / "pano_bev_expected.png", panorama_to_bev(pano, bev, Attitude{0.0, 0.0, 15.0}));

  // Front view: a horizontal-stripe pattern on a small sensor.
  FrontCamera front{124, 38, 17.5, 0.8};
  ImageBuffer f(front.height, front.width, 1);
  for (int y = 0; y < front.height; ++y)
    for (int x = 0; x < front.width; ++x) f.set(y, x, 0, ((x / 8 + y / 4) % 2) ? 0.8 : 0.2);
  f = quantize8(f);
  write_image(dir / "front.png", f);
  write_image(dir / "front_bev_expected.png", warp_by_grid(f, build_front_bev_grid(front, {96, 96}, 0.0)));

  // Synthetic alignment pair with its ground truth.
  TrialSpec t;
  t.scene.seed = 7;
  t.scene.size = 256;
  t.perturbation = 2.0;
  const SyntheticPair p = make_pair(make_overhead(t.scene), t);
  write_image(dir / "pair_bev.png", p.bev);
  write_image(dir / "pair_sat.png", p.sat);
  {
    std::ofstream meta(dir / "pair_meta.txt");
    meta.precision(17);
    meta << "# image-id lat lon center-lat center-lon zoom size\n";
    meta << "pair7 " << p.gt_gps.lat << ' ' << p.gt_gps.lon << ' ' << p.meta.center.lat << ' '
         << p.meta.center.lon << ' ' << p.meta.zoom << ' ' << p.meta.size << '\n';
  }
  {
    std::ofstream gt(dir / "pair_gt.json");
    gt.precision(17);
    gt << "{\"homography\": [";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) gt << (r || c ? ", " : "") << p.gt_image.matrix()(r, c);
    gt << "], \"theta_deg\": " << p.gt_heading_deg << "}\n";
  }
  return 0;
}
