#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

#include <nlohmann/json.hpp>

#include "umspu/checkpoint.hpp"
#include "umspu/field_io.hpp"
#include "umspu/unwrap.hpp"

using namespace umspu;
using nlohmann::json;

int main(int argc, char** argv) {
  CLI::App app{"Print checkpoint metadata (alpha history, sample-weight summary) as JSON"};
  std::string ckpt_path, attention_phi, attention_dir;
  app.add_option("--ckpt", ckpt_path, "checkpoint (.umck)")->required()->check(CLI::ExistingFile);
  app.add_option("--attention", attention_phi,
                 "wrapped-phase raster: dump per-stage attention maps")
      ->check(CLI::ExistingFile);
  app.add_option("--attention-out", attention_dir, "directory for attention raster dumps");
  CLI11_PARSE(app, argc, argv);

  try {
    io::Checkpoint ck = io::load_checkpoint(ckpt_path);
    json j;
    j["fused"] = ck.fused;
    j["config"] = json::parse(nn::model_config_to_json(ck.config));
    j["epoch"] = ck.state.epoch;
    j["alpha"] = ck.state.alpha;
    j["alpha_history"] = json::array();
    for (const auto& a : ck.state.alpha_history) j["alpha_history"].push_back(a);
    if (!ck.state.weights.empty()) {
      const auto [mn, mx] =
          std::minmax_element(ck.state.weights.begin(), ck.state.weights.end());
      double mean = 0.0;
      long below = 0;
      for (double w : ck.state.weights) {
        mean += w;
        if (w < ck.state.discard_threshold) ++below;
      }
      mean /= ck.state.weights.size();
      j["sample_weights"] = {{"count", ck.state.weights.size()},
                             {"min", *mn},
                             {"max", *mx},
                             {"mean", mean},
                             {"below_threshold", below},
                             {"threshold", ck.state.discard_threshold}};
    }
    j["replacement_pool"] = ck.state.replacement_pool.size();
    if (!ck.fused) j["params"] = ck.net->param_count();

    if (!attention_phi.empty()) {
      if (ck.fused) {
        std::cerr << "inspect: attention dumps need the unfused checkpoint\n";
        return 1;
      }
      const std::string dir = attention_dir.empty() ? "." : attention_dir;
      std::filesystem::create_directories(dir);
      RasterF32 phi = io::read_raster_f32(attention_phi);
      auto out = ck.net->infer_features(tensor_from_raster(phi), true);
      json dumped = json::array();
      for (size_t s = 0; s < out.enc.size(); ++s) {
        for (auto [tag, feat] : {std::pair{"E", &out.enc[s]}, {"D", &out.dec[s]}}) {
          auto soft = nn::attention_soft(nn::attention_map(*feat));
          const std::string name =
              std::string(tag) + std::to_string(s + 1) + "_attention.umsp";
          io::write_raster(soft.values, std::filesystem::path(dir) / name);
          dumped.push_back(name);
        }
      }
      j["attention_dumps"] = dumped;
    }
    std::cout << j.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "inspect: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
