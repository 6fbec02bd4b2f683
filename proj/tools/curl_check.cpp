#include <CLI11.hpp>

#include <iostream>

#include <nlohmann/json.hpp>

#include "umspu/field_io.hpp"
#include "umspu/numerics.hpp"

using namespace umspu;

int main(int argc, char** argv) {
  CLI::App app{"Report curl points of a gradient-label pair as JSON"};
  std::vector<std::string> label_paths;
  std::string mask_out;
  app.add_option("--labels", label_paths, "gx.umsp gy.umsp")->required()->expected(2);
  app.add_option("--mask-out", mask_out, "write the curl mask raster (.umsp, i8)");
  CLI11_PARSE(app, argc, argv);

  try {
    GradientLabelPair labels;
    labels.gx = io::read_raster_i8(label_paths[0]);
    labels.gy = io::read_raster_i8(label_paths[1]);
    auto rep = num::detect_curl(labels);
    nlohmann::json j = {{"n_curl", rep.n_curl},
                        {"n_gradient", rep.n_gradient},
                        {"ratio", rep.ratio},
                        {"height", labels.height()},
                        {"width", labels.width()}};
    std::cout << j.dump(2) << "\n";
    if (!mask_out.empty()) io::write_raster(rep.curl_mask, mask_out);
  } catch (const std::exception& e) {
    std::cerr << "curl-check: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
