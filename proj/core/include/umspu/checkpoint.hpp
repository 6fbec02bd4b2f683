#pragma once

#include <filesystem>
#include <memory>

#include "umspu/boost_ensemble.hpp"
#include "umspu/msdnet.hpp"

namespace umspu::io {

/// Version-tagged container: model config + ensemble state + named tensors
/// (weights and normalization statistics). Holds either the trainable
/// multi-branch model or its fused inference form.
struct Checkpoint {
  bool fused = false;
  nn::ModelConfig config;
  ensemble::EnsembleState state;
  std::shared_ptr<nn::MsdNet> net;         // when !fused
  std::shared_ptr<nn::FusedNet> fused_net; // when fused
};

void save_checkpoint(const std::filesystem::path& path, nn::MsdNet& net,
                     const ensemble::EnsembleState& state);
void save_checkpoint(const std::filesystem::path& path, nn::FusedNet& net,
                     const ensemble::EnsembleState& state);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace umspu::io
