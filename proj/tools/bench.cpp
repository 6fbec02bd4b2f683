#include <CLI11.hpp>

#include <iostream>

#include "umspu/evalbench.hpp"

using namespace umspu;

namespace {

bench::Predictor make_predictor(const std::string& ckpt_path, bool oracle,
                                std::shared_ptr<io::Checkpoint>& keep) {
  if (oracle) return bench::make_oracle_predictor();
  if (ckpt_path.empty()) {
    throw ValidationError("bench: need --ckpt or --oracle");
  }
  keep = std::make_shared<io::Checkpoint>(io::load_checkpoint(ckpt_path));
  return bench::make_model_predictor(keep);
}

void emit(const bench::BenchReport& report, const std::string& out_path) {
  std::cout << report.to_text();
  if (!out_path.empty()) {
    report.save(out_path);
    std::cout << "report written to " << out_path << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluation protocols: resolution/density RMSE, equivariance sweeps, cost"};
  app.require_subcommand(1);

  std::string ckpt, data, out, split = "test";
  bool oracle = false;
  app.add_option("--ckpt", ckpt, "model checkpoint (.umck)")->check(CLI::ExistingFile);
  app.add_flag("--oracle", oracle, "bypass the model with ground-truth labels");
  app.add_option("--out", out, "write the JSON report here");

  auto* res = app.add_subcommand("resolutions", "per-size RMSE over a dataset split");
  res->fallthrough();
  res->add_option("--data", data, "dataset directory")->required();
  res->add_option("--split", split, "train|val|test");

  auto* den = app.add_subcommand("density", "per-fringe-bucket RMSE over a dataset split");
  den->fallthrough();
  den->add_option("--data", data, "dataset directory")->required();
  den->add_option("--split", split, "train|val|test");
  std::vector<int> bucket_means = {4, 10, 16, 24};
  int bucket_tol = 3;
  den->add_option("--buckets", bucket_means, "bucket means");
  den->add_option("--tolerance", bucket_tol, "bucket tolerance");

  auto* equi = app.add_subcommand("equivariance", "translation/rotation stability sweeps");
  equi->fallthrough();
  std::string kind = "translation";
  int field_size = 512, window = 256, steps = 50, step_deg = 3, fringes = 6;
  uint64_t field_seed = 1234;
  equi->add_option("--kind", kind, "translation|rotation")
      ->check(CLI::IsMember({"translation", "rotation"}));
  equi->add_option("--size", field_size, "clean field size");
  equi->add_option("--window", window, "evaluation window");
  equi->add_option("--steps", steps, "translation steps (1 px each)");
  equi->add_option("--step-deg", step_deg, "rotation step in degrees");
  equi->add_option("--fringes", fringes, "fringe count of the generated field");
  equi->add_option("--seed", field_seed, "field seed");

  auto* cost = app.add_subcommand("cost", "params, analytic MACs, timed inference");
  cost->fallthrough();
  int cost_size = 256, reps = 20;
  cost->add_option("--size", cost_size, "input size");
  cost->add_option("--reps", reps, "timed repetitions");

  CLI11_PARSE(app, argc, argv);

  try {
    std::shared_ptr<io::Checkpoint> keep;
    if (app.got_subcommand(res)) {
      auto manifest = io::load_manifest(std::filesystem::path(data) / "manifest.json");
      emit(bench::bench_resolutions(manifest, make_predictor(ckpt, oracle, keep), split), out);
    } else if (app.got_subcommand(den)) {
      auto manifest = io::load_manifest(std::filesystem::path(data) / "manifest.json");
      std::vector<std::pair<int, int>> buckets;
      for (int m : bucket_means) buckets.emplace_back(m, bucket_tol);
      emit(bench::bench_density(manifest, make_predictor(ckpt, oracle, keep), buckets, split),
           out);
    } else if (app.got_subcommand(equi)) {
      auto predictor = make_predictor(ckpt, oracle, keep);
      RasterF32 psi = bench::make_equivariance_field(field_size, fringes, field_seed);
      if (kind == "translation") {
        emit(bench::equivariance_translation(psi, window, steps, predictor), out);
      } else {
        emit(bench::equivariance_rotation(psi, window, step_deg, predictor), out);
      }
    } else if (app.got_subcommand(cost)) {
      if (ckpt.empty()) throw ValidationError("bench cost: needs --ckpt");
      io::Checkpoint ck = io::load_checkpoint(ckpt);
      if (ck.fused) throw ValidationError("bench cost: needs the unfused checkpoint");
      nn::FusedNet fused = reparameterize(*ck.net);
      emit(bench::cost_report(*ck.net, fused, cost_size, reps), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
