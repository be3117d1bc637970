// Timing comparison between the parallel renderer and the serial reference,
// plus one full optimization step. Run from the build tree; prints a small
// table to stdout.

#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>

#include "tela/losses.hpp"
#include "tela/render.hpp"
#include "tela/train.hpp"

using namespace tela;

namespace {

double now_s() {
#ifdef _OPENMP
  return omp_get_wtime();
#else
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
#endif
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    double t0 = now_s();
    fn();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

}  // namespace

int main() {
  GridSpec grid;
  grid.levels = 8;
  grid.features = 2;
  grid.table_size = 1u << 13;
  grid.base_resolution = 8;
  grid.max_resolution = 64;
  MlpSpec mlp{2, 32};

  RadianceField body = init_field(grid, mlp, Aabb{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}}, 11);
  RadianceField cloth = init_field(grid, mlp, Aabb{{-0.6, -0.6, -0.6}, {0.6, 0.6, 0.6}}, 12);
  Rng scramble(13);
  for (float& v : body.params.values) v = float(scramble.uniform(-0.3, 0.3));
  for (float& v : cloth.params.values) v = float(scramble.uniform(-0.3, 0.3));

  std::vector<Layer> layers(2);
  layers[0] = {"body", &body, nullptr, 1.0, nullptr};
  layers[1] = {"cloth", &cloth, nullptr, 1.0, nullptr};

  Camera cam = Camera::look_at(Vec3{0, 0.2, -2.5}, Vec3{0, 0, 0}, 50, 128, 128);
  RenderOptions opt;
  opt.samples = 48;

#ifdef _OPENMP
  int threads = omp_get_max_threads();
#else
  int threads = 1;
#endif
  std::printf("threads: %d, image 128x128, 48 samples/ray, 2 layers\n", threads);

  double t_ser = time_best_of(3, [&] { render_image_reference(layers, cam, opt); });
  std::printf("render serial reference : %8.1f ms\n", t_ser * 1e3);

  double t_par = time_best_of(3, [&] { render_image(layers, cam, opt); });
  std::printf("render parallel         : %8.1f ms  (speedup %.2fx)\n", t_par * 1e3, t_ser / t_par);

  RenderOptions opt_serial = opt;
  opt_serial.parallel = false;
  double t_par1 = time_best_of(3, [&] { render_image(layers, cam, opt_serial); });
  std::printf("render parallel, 1 thr  : %8.1f ms\n", t_par1 * 1e3);

  Image target(128, 128, Vec3{0.6, 0.4, 0.3});
  GuidanceProvider provider = make_synthetic_provider(target);
  std::vector<SdsTerm> terms{{"subject", RenderMode::kComposed, 1.0, 1.0},
                             {"garment", RenderMode::kClothOnly, 1.0, 1.0}};
  double t_step = time_best_of(2, [&] {
    GradSink sink;
    sink.init(layers);
    loss_step(layers, cam, opt, provider, terms, nullptr, 0.5, 99, RegTerms{}, sink);
  });
  std::printf("dual-term loss step     : %8.1f ms\n", t_step * 1e3);
  return 0;
}
