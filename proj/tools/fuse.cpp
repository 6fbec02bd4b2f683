#include <CLI11.hpp>

#include <iostream>

#include "umspu/checkpoint.hpp"

using namespace umspu;

int main(int argc, char** argv) {
  CLI::App app{"Re-parameterize a trained checkpoint into its fused inference form"};
  std::string in_path, out_path;
  app.add_option("--ckpt", in_path, "trained checkpoint (.umck)")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_path, "fused checkpoint (.umck)")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    io::Checkpoint ck = io::load_checkpoint(in_path);
    if (ck.fused) {
      std::cerr << "fuse: " << in_path << " is already fused\n";
      return 1;
    }
    nn::FusedNet fused = reparameterize(*ck.net);
    io::save_checkpoint(out_path, fused, ck.state);
    std::cout << "fused " << ck.net->param_count() << " -> " << fused.param_count()
              << " parameters, wrote " << out_path << "\n";
  } catch (const std::exception& e) {
    std::cerr << "fuse: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
