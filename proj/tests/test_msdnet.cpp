#include <doctest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"
#include "umspu/checkpoint.hpp"
#include "umspu/msdnet.hpp"
#include "umspu/unwrap.hpp"

using namespace umspu;
using nn::Tensor;

namespace {

nn::ModelConfig tiny_config() {
  nn::ModelConfig cfg;
  cfg.stages = 3;
  cfg.channels = {4, 8, 16};
  cfg.msd_pairs = {{1, 1}, {2, 2}, {3, 3}};
  cfg.r_min = 32;
  cfg.r_max = 128;
  return cfg;
}

Tensor random_input(int n, int size, uint64_t seed) {
  Tensor x(n, 1, size, size);
  Rng rng(seed);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-M_PI, M_PI));
  return x;
}

/// Nudges batch-norm running statistics away from their init so fusion tests
/// exercise real normalization folding.
void settle_bn_stats(nn::MsdNet& net, int steps, uint64_t seed) {
  for (int s = 0; s < steps; ++s) {
    auto out = net.forward_train(random_input(2, 32, seed + s));
    for (int head = 0; head < 3; ++head) {
      (void)net.head_fwd(out.features, head, true);
    }
  }
}

}  // namespace

TEST_CASE("model config validation") {
  nn::ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("channels must increase") {
    cfg.channels = {8, 8, 16};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("msd pairs must connect equal stages") {
    cfg.msd_pairs = {{1, 2}};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SUBCASE("json round trip") {
    nn::ModelConfig back = nn::model_config_from_json(nn::model_config_to_json(cfg));
    CHECK(back.stages == cfg.stages);
    CHECK(back.channels == cfg.channels);
    CHECK(back.msd_pairs == cfg.msd_pairs);
    CHECK(back.r_min == cfg.r_min);
    CHECK(back.r_max == cfg.r_max);
  }
}

TEST_CASE("forward shapes and size agnosticism") {
  nn::MsdNet net(tiny_config(), 3);

  SUBCASE("64x64 input: full-size features, stage-2 taps at 32x32") {
    auto out = net.infer_features(random_input(1, 64, 1), true);
    CHECK(out.features.h == 64);
    CHECK(out.features.w == 64);
    CHECK(out.enc[1].h == 32);
    CHECK(out.dec[1].h == 32);
    CHECK(out.enc[2].h == 16);
    Tensor logits = net.head_infer(out.features, 0);
    CHECK(logits.c == 6);
    CHECK(logits.h == 64);
  }

  SUBCASE("same weights run at 128x128 without reconfiguration") {
    auto out = net.infer_features(random_input(1, 128, 2));
    CHECK(out.features.h == 128);
  }

  SUBCASE("batch dimension is preserved") {
    auto fwd = net.forward_train(random_input(4, 32, 3));
    CHECK(fwd.features->val.n == 4);
    for (const auto& tap : fwd.taps.enc) CHECK(tap->val.n == 4);
  }

  SUBCASE("indivisible size names the required multiple") {
    Tensor bad(1, 1, 42, 42);
    try {
      net.infer_features(bad);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("4") != std::string::npos);
    }
  }
}

TEST_CASE("attention map operations") {
  SUBCASE("all-zero feature maps to all-zero attention") {
    Tensor f(1, 3, 4, 4);
    auto att = nn::attention_map(f);
    for (size_t i = 0; i < att.values.size(); ++i) CHECK(att.values[i] == 0.0f);
  }
  SUBCASE("single channel gives absolute values") {
    Tensor f(1, 1, 2, 2);
    f.v = {-3.0f, 4.0f, 0.5f, -0.25f};
    auto att = nn::attention_map(f);
    CHECK(att.values[0] == doctest::Approx(3.0f));
    CHECK(att.values[1] == doctest::Approx(4.0f));
  }
  SUBCASE("two channels follow the Pythagorean rule") {
    Tensor f(1, 2, 2, 2);
    f.ptr(0, 0)[0] = 3.0f;
    f.ptr(0, 1)[0] = 4.0f;
    auto att = nn::attention_map(f);
    CHECK(att.values[0] == doctest::Approx(5.0f));
  }
  SUBCASE("soft labels: constant raw map becomes uniform and sums to 1") {
    nn::AttentionMap raw{RasterF32(4, 8, 2.5f), false};
    auto soft = nn::attention_soft(raw);
    double sum = 0.0;
    for (size_t i = 0; i < soft.values.size(); ++i) {
      CHECK(soft.values[i] == doctest::Approx(1.0 / 32.0));
      sum += soft.values[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("a dominant peak keeps most of the mass") {
    nn::AttentionMap raw{RasterF32(4, 4, 0.0f), false};
    raw.values.at(2, 2) = 10.0f;
    auto soft = nn::attention_soft(raw);
    CHECK(soft.values.at(2, 2) > 0.99f);
  }
}

TEST_CASE("distillation weight schedule") {
  double l1 = 0, l2 = 0;
  nn::msd_lambdas(64, 64, 256, &l1, &l2);
  CHECK(l1 == doctest::Approx(1.0));
  CHECK(l2 == doctest::Approx(0.0));
  nn::msd_lambdas(256, 64, 256, &l1, &l2);
  CHECK(l1 == doctest::Approx(0.0));
  CHECK(l2 == doctest::Approx(1.0));
  for (int r : {64, 96, 128, 200, 256}) {
    nn::msd_lambdas(r, 64, 256, &l1, &l2);
    CHECK(l1 + l2 == doctest::Approx(1.0));
    CHECK(l1 >= 0.0);
    CHECK(l2 >= 0.0);
  }
  // outside the preset range the weights clamp to the endpoints
  nn::msd_lambdas(32, 64, 256, &l1, &l2);
  CHECK(l1 == doctest::Approx(1.0));
  nn::msd_lambdas(1024, 64, 256, &l1, &l2);
  CHECK(l2 == doctest::Approx(1.0));
}

TEST_CASE("structural re-parameterization") {
  nn::MsdNet net(tiny_config(), 11);
  settle_bn_stats(net, 4, 100);
  nn::FusedNet fused = reparameterize(net);

  SUBCASE("fused and unfused inference agree within 1e-4 relative") {
    for (int size : {32, 64, 128}) {
      Tensor x = random_input(1, size, 200 + size);
      auto a = net.infer_all_heads(x);
      auto b = fused.infer_all_heads(x);
      double max_abs = 0.0, max_dev = 0.0;
      for (int k = 0; k < 3; ++k) {
        for (size_t i = 0; i < a[k].count(); ++i) {
          max_abs = std::max(max_abs, std::abs((double)a[k].v[i]));
          max_dev = std::max(max_dev, std::abs((double)a[k].v[i] - b[k].v[i]));
        }
      }
      CHECK(max_dev / std::max(max_abs, 1e-12) < 1e-4);
    }
  }

  SUBCASE("fused model has fewer parameters") {
    CHECK(fused.param_count() < net.param_count());
  }

  SUBCASE("fused analytic MAC count is below unfused") {
    CHECK(fused.mac_count(64, 64) < net.mac_count(64, 64));
  }
}

TEST_CASE("fusion arithmetic on neutral normalization") {
  // With unit-variance, zero-mean statistics the fused kernel is the 3x3
  // branch plus the 1x1 at the center plus 1 on the diagonal center.
  nn::MsdNet net(tiny_config(), 13);
  nn::FusedNet fused = reparameterize(net);
  // Stage-1 encoder block of the freshly initialized net has rmean=0,
  // rvar=1, gamma=1, beta=0 in all branches.
  Tensor w3, w1;
  net.visit_tensors([&](const std::string& name, const Tensor& t) {
    if (name == "enc1.c3.w") w3 = t;
    if (name == "enc1.c1.w") w1 = t;
  });
  Tensor fused_w;
  fused.visit_tensors([&](const std::string& name, Tensor& t) {
    if (name == "enc1.w") fused_w = t;
  });
  REQUIRE(fused_w.count() == w3.count());
  const float inv = 1.0f / std::sqrt(1.0f + 1e-5f);
  const int co = w3.n, ci = w3.c;
  for (int o = 0; o < co; ++o) {
    for (int i = 0; i < ci; ++i) {
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          float expect = w3.at(o, i, a, b) * inv;
          if (a == 1 && b == 1) {
            expect += w1.at(o, i, 0, 0) * inv;
            if (o == i) expect += inv;
          }
          CHECK(fused_w.at(o, i, a, b) == doctest::Approx(expect).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("checkpoint round trip preserves inference bit-for-bit") {
  testutil::TempDir tmp("ckpt");
  nn::MsdNet net(tiny_config(), 17);
  settle_bn_stats(net, 2, 300);

  ensemble::EnsembleState state;
  state.sample_ids = {"a", "b", "c"};
  state.init_uniform_weights();
  state.alpha = {0.5, 0.3, 0.2};
  state.alpha_history = {{0.4, 0.3, 0.3}, {0.5, 0.3, 0.2}};
  state.epoch = 2;

  const auto p = tmp.path / "net.umck";
  io::save_checkpoint(p, net, state);
  io::Checkpoint back = io::load_checkpoint(p);
  REQUIRE_FALSE(back.fused);
  CHECK(back.state.alpha == state.alpha);
  CHECK(back.state.alpha_history.size() == 2);
  CHECK(back.state.epoch == 2);

  Tensor x = random_input(1, 64, 500);
  auto a = net.infer_all_heads(x);
  auto b = back.net->infer_all_heads(x);
  for (int k = 0; k < 3; ++k) CHECK(a[k].v == b[k].v);

  SUBCASE("fused checkpoint round trip") {
    nn::FusedNet fused = reparameterize(net);
    const auto pf = tmp.path / "fused.umck";
    io::save_checkpoint(pf, fused, state);
    io::Checkpoint fback = io::load_checkpoint(pf);
    REQUIRE(fback.fused);
    auto c = fused.infer_all_heads(x);
    auto d = fback.fused_net->infer_all_heads(x);
    for (int k = 0; k < 3; ++k) CHECK(c[k].v == d[k].v);
  }

  SUBCASE("truncated checkpoint is rejected") {
    auto bytes = [&] {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    }();
    bytes.resize(bytes.size() / 2);
    std::ofstream(tmp.path / "trunc.umck", std::ios::binary) << bytes;
    CHECK_THROWS_AS(io::load_checkpoint(tmp.path / "trunc.umck"), IoError);
  }
}
