#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "umspu/trainer.hpp"

using namespace umspu;

int main(int argc, char** argv) {
  CLI::App app{"Train the gradient-segmentation ensemble on a generated dataset"};
  std::string data_dir, config_path, out_dir;
  app.add_option("--data", data_dir, "dataset directory (contains manifest.json)")
      ->required()
      ->check(CLI::ExistingDirectory);
  app.add_option("--config", config_path, "TrainConfig JSON")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "checkpoint/log output directory")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    auto manifest = io::load_manifest(std::filesystem::path(data_dir) / "manifest.json");
    auto cfg = train::load_train_config(config_path);
    std::cout << "training on " << manifest.by_split("train").size() << " samples for "
              << cfg.epochs << " epochs\n";
    auto result = train::train(manifest, cfg, out_dir);
    for (const auto& e : result.history) {
      std::printf("epoch %3d  loss %.4f (wmse %.4f wce %.4f kl %.5f curl %.4f)  alpha "
                  "%.3f/%.3f/%.3f  %.1fs",
                  e.epoch, e.mean_loss.total, e.mean_loss.wmse, e.mean_loss.wce,
                  e.mean_loss.kl, e.mean_loss.curl, e.alpha[0], e.alpha[1], e.alpha[2],
                  e.seconds);
      for (const auto& [size, rmse] : e.val_rmse_by_size) {
        std::printf("  val[%d] %.4f", size, rmse);
      }
      std::printf("\n");
    }
    std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
