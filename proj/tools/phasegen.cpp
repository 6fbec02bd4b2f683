#include <CLI11.hpp>

#include <iostream>

#include "umspu/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic wrapped-phase dataset (rasters + manifest)"};
  std::string config_path, out_dir;
  app.add_option("--config", config_path, "SynthConfig JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output dataset directory")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = umspu::synth::load_synth_config(config_path);
    auto manifest = umspu::synth::build_dataset(cfg, out_dir);
    std::cout << "wrote " << manifest.samples.size() << " samples to " << out_dir << " ("
              << manifest.by_split("train").size() << " train / "
              << manifest.by_split("val").size() << " val / "
              << manifest.by_split("test").size() << " test)\n";
  } catch (const std::exception& e) {
    std::cerr << "phasegen: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
