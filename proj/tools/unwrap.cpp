#include <CLI11.hpp>

#include <iostream>

#include "umspu/checkpoint.hpp"
#include "umspu/field_io.hpp"
#include "umspu/unwrap.hpp"

using namespace umspu;

int main(int argc, char** argv) {
  CLI::App app{
      "Unwrap a wrapped-phase raster, either from given gradient labels or "
      "with a trained model"};
  std::string phi_path, model_path, out_path, k_out;
  std::vector<std::string> label_paths;
  app.add_option("--phi", phi_path, "wrapped phase (.umsp, f32)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* labels_opt = app.add_option("--labels", label_paths,
                                    "gx.umsp gy.umsp gradient label rasters")
                         ->expected(2);
  auto* model_opt = app.add_option("--model", model_path, "model checkpoint (.umck)")
                        ->check(CLI::ExistingFile);
  labels_opt->excludes(model_opt);
  app.add_option("--out", out_path, "output unwrapped phase (.umsp)")->required();
  app.add_option("--k-out", k_out, "also write the recovered wrap count (.umsp, f32)");
  CLI11_PARSE(app, argc, argv);

  try {
    RasterF32 phi = io::read_raster_f32(phi_path);
    GradientLabelPair labels;
    if (model_opt->count() > 0) {
      io::Checkpoint ck = io::load_checkpoint(model_path);
      labels = ck.fused ? predict_labels(*ck.fused_net, phi, ck.state.alpha)
                        : predict_labels(*ck.net, phi, ck.state.alpha);
    } else if (labels_opt->count() > 0) {
      labels.gx = io::read_raster_i8(label_paths[0]);
      labels.gy = io::read_raster_i8(label_paths[1]);
    } else {
      std::cerr << "unwrap: need either --labels or --model\n";
      return 2;
    }
    auto result = unwrap_from_labels(phi, std::move(labels));
    io::write_raster(result.psi, out_path);
    if (!k_out.empty()) {
      io::write_raster(raster_cast<float>(result.k), k_out);
    }
    auto curl = num::detect_curl(result.labels);
    std::cout << "unwrapped " << phi.height() << "x" << phi.width() << " -> " << out_path
              << " (curl ratio " << curl.ratio << ")\n";
  } catch (const std::exception& e) {
    std::cerr << "unwrap: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
