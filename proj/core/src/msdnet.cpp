#include "umspu/msdnet.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace umspu::nn {

using nlohmann::json;

void ModelConfig::validate() const {
  if (stages < 2) throw ValidationError("ModelConfig: stages must be >= 2");
  if (static_cast<int>(channels.size()) != stages) {
    throw ValidationError("ModelConfig: channels list must have one entry per stage");
  }
  for (size_t i = 1; i < channels.size(); ++i) {
    if (channels[i] <= channels[i - 1]) {
      throw ValidationError("ModelConfig: channels must be strictly increasing");
    }
  }
  if (channels.front() < 2) throw ValidationError("ModelConfig: first stage too narrow");
  for (auto [e, d] : msd_pairs) {
    if (e != d || e < 1 || e > stages) {
      throw ValidationError(
          "ModelConfig: msd pair (" + std::to_string(e) + "," + std::to_string(d) +
          ") does not connect equal-resolution encoder/decoder stages");
    }
  }
  if (r_min <= 0 || r_max <= r_min) {
    throw ValidationError("ModelConfig: need 0 < r_min < r_max");
  }
}

ModelConfig model_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ModelConfig cfg;
  if (j.contains("stages")) cfg.stages = j["stages"];
  if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int>>();
  if (j.contains("msd_pairs")) {
    cfg.msd_pairs.clear();
    for (const auto& p : j["msd_pairs"]) {
      cfg.msd_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
  }
  if (j.contains("r_min")) cfg.r_min = j["r_min"];
  if (j.contains("r_max")) cfg.r_max = j["r_max"];
  cfg.validate();
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["stages"] = cfg.stages;
  j["channels"] = cfg.channels;
  j["msd_pairs"] = json::array();
  for (auto [e, d] : cfg.msd_pairs) j["msd_pairs"].push_back({e, d});
  j["r_min"] = cfg.r_min;
  j["r_max"] = cfg.r_max;
  return j.dump();
}

AttentionMap attention_map(const Tensor& feature) {
  if (feature.n != 1) throw ValidationError("attention_map: expects a single sample");
  Tensor l2 = attention_l2_fwd(feature);
  AttentionMap out;
  out.values = RasterF32(feature.h, feature.w);
  std::copy(l2.v.begin(), l2.v.end(), out.values.data());
  out.normalized = false;
  return out;
}

AttentionMap attention_soft(const AttentionMap& raw) {
  AttentionMap out;
  out.values = RasterF32(raw.values.height(), raw.values.width());
  const size_t n = raw.values.size();
  float mx = -1e30f;
  for (size_t i = 0; i < n; ++i) mx = std::max(mx, raw.values[i]);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const float e = std::exp(raw.values[i] - mx);
    out.values[i] = e;
    sum += e;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (size_t i = 0; i < n; ++i) out.values[i] *= inv;
  out.normalized = true;
  return out;
}

double kl_attention_value(const AttentionMap& p, const AttentionMap& q) {
  if (!p.normalized || !q.normalized) {
    throw ValidationError("kl_attention_value: both maps must be normalized");
  }
  require_same_shape(p.values, q.values, "kl_attention_value");
  double acc = 0.0;
  for (size_t i = 0; i < p.values.size(); ++i) {
    const double pf = std::max(p.values[i], kLogEps);
    const double qf = std::max(q.values[i], kLogEps);
    acc += static_cast<double>(p.values[i]) * (std::log(pf) - std::log(qf));
  }
  return acc / static_cast<double>(p.values.size());
}

void msd_lambdas(int r, int r_min, int r_max, double* lambda1, double* lambda2) {
  const int rc = std::clamp(r, r_min, r_max);
  *lambda1 = static_cast<double>(r_max - rc) / (r_max - r_min);
  *lambda2 = static_cast<double>(rc - r_min) / (r_max - r_min);
}

namespace {

Tensor randn_tensor(int n, int c, int h, int w, float stddev, Rng& rng) {
  Tensor t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

Conv2dLayer make_conv(int co, int ci, int k, int stride, int pad, int dil, bool bias, Rng& rng,
                      float stddev_override = -1.0f) {
  Conv2dLayer layer;
  const float stddev = stddev_override > 0.0f
                           ? stddev_override
                           : std::sqrt(2.0f / (static_cast<float>(ci) * k * k));
  layer.w = leaf(randn_tensor(co, ci, k, k, stddev, rng), true);
  if (bias) layer.b = leaf(Tensor(1, co, 1, 1), true);
  layer.stride = stride;
  layer.pad = pad;
  layer.dil = dil;
  return layer;
}

BnLayer make_bn(int c) {
  BnLayer bn;
  bn.gamma = leaf(Tensor(1, c, 1, 1, 1.0f), true);
  bn.beta = leaf(Tensor(1, c, 1, 1, 0.0f), true);
  bn.running = BnRunning(c);
  return bn;
}

}  // namespace

Var ConvBnRelu::fwd(const Var& x, bool /*train*/) { return relu(bn.fwd(conv.fwd(x))); }

Tensor ConvBnRelu::infer(const Tensor& x) const { return relu_fwd(bn.infer(conv.infer(x))); }

Var FusibleBlock::fwd(const Var& x, bool /*train*/) {
  Var y = add(b3.fwd(c3.fwd(x)), b1.fwd(c1.fwd(x)));
  if (has_identity) y = add(y, bid.fwd(x));
  return relu(y);
}

Tensor FusibleBlock::infer(const Tensor& x) const {
  Tensor y = b3.infer(c3.infer(x));
  Tensor y1 = b1.infer(c1.infer(x));
  for (size_t i = 0; i < y.count(); ++i) y.v[i] += y1.v[i];
  if (has_identity) {
    Tensor yid = bid.infer(x);
    for (size_t i = 0; i < y.count(); ++i) y.v[i] += yid.v[i];
  }
  return relu_fwd(y);
}

void FusibleBlock::fuse_into(Tensor& weight, std::vector<float>& bias) const {
  const int co = c3.w->val.n, ci = c3.w->val.c;
  weight = Tensor(co, ci, 3, 3);
  bias.assign(co, 0.0f);

  auto branch = [&](const Tensor& w, const BnLayer& bn, bool center_only) {
    for (int o = 0; o < co; ++o) {
      const float inv = 1.0f / std::sqrt(bn.running.var[o] + bn.eps);
      const float scale = bn.gamma->val.v[o] * inv;
      bias[o] += bn.beta->val.v[o] - bn.running.mean[o] * scale;
      for (int i = 0; i < ci; ++i) {
        if (center_only) {
          weight.at(o, i, 1, 1) += w.at(o, i, 0, 0) * scale;
        } else {
          for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
              weight.at(o, i, ki, kj) += w.at(o, i, ki, kj) * scale;
            }
          }
        }
      }
    }
  };
  branch(c3.w->val, b3, false);
  branch(c1.w->val, b1, true);
  if (has_identity) {
    for (int o = 0; o < co; ++o) {
      const float inv = 1.0f / std::sqrt(bid.running.var[o] + bid.eps);
      const float scale = bid.gamma->val.v[o] * inv;
      bias[o] += bid.beta->val.v[o] - bid.running.mean[o] * scale;
      weight.at(o, o, 1, 1) += scale;
    }
  }
}

Var SegmenterHead::fwd(const Var& features, bool train) {
  return out.fwd(pre.fwd(features, train));
}

Tensor SegmenterHead::infer(const Tensor& features) const {
  return out.infer(pre.infer(features));
}

MsdNet::MsdNet(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed ^ 0x6d5d4e37a9f4c1ULL);
  const auto& ch = cfg_.channels;
  const int s = cfg_.stages;

  stem_.conv = make_conv(ch[0], 1, 3, 1, 1, 1, false, rng);
  stem_.bn = make_bn(ch[0]);

  auto make_block = [&](int c) {
    FusibleBlock b;
    b.c3 = make_conv(c, c, 3, 1, 1, 1, false, rng);
    b.c1 = make_conv(c, c, 1, 1, 0, 1, false, rng);
    b.b3 = make_bn(c);
    b.b1 = make_bn(c);
    b.bid = make_bn(c);
    b.has_identity = true;
    return b;
  };

  for (int st = 0; st < s; ++st) enc_blocks_.push_back(make_block(ch[st]));
  for (int st = 0; st < s - 1; ++st) {
    ConvBnRelu d;
    d.conv = make_conv(ch[st + 1], ch[st], 3, 2, 1, 1, false, rng);
    d.bn = make_bn(ch[st + 1]);
    down_.push_back(std::move(d));
  }
  for (int st = 0; st < s; ++st) dec_blocks_.push_back(make_block(ch[st]));
  for (int st = 0; st < s - 1; ++st) {
    ConvBnRelu u;
    u.conv = make_conv(ch[st], ch[st + 1], 3, 1, 1, 1, false, rng);
    u.bn = make_bn(ch[st]);
    up_.push_back(std::move(u));
  }

  const int dil[3] = {1, 2, 4};
  for (int k = 0; k < 3; ++k) {
    heads_[k].dilation = dil[k];
    heads_[k].pre.conv = make_conv(ch[0], ch[0], 3, 1, dil[k], dil[k], false, rng);
    heads_[k].pre.bn = make_bn(ch[0]);
    heads_[k].out = make_conv(6, ch[0], 1, 1, 0, 1, true, rng, 0.01f);
  }
}

void MsdNet::check_input(const Tensor& x) const {
  if (x.c != 1) throw ValidationError("MsdNet: input must be single-channel");
  const int mult = cfg_.size_multiple();
  if (x.h % mult != 0 || x.w % mult != 0) {
    throw ValidationError("MsdNet: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                          " not divisible by the required multiple of " + std::to_string(mult));
  }
}

MsdNet::TrainOut MsdNet::forward_train(const Tensor& x) {
  check_input(x);
  const int s = cfg_.stages;
  TrainOut out;
  out.taps.enc.resize(s);
  out.taps.dec.resize(s);

  Var cur = stem_.fwd(leaf(x), true);
  for (int st = 0; st < s; ++st) {
    if (st > 0) cur = down_[st - 1].fwd(cur, true);
    out.taps.enc[st] = enc_blocks_[st].fwd(cur, true);
    cur = out.taps.enc[st];
  }
  out.taps.dec[s - 1] = dec_blocks_[s - 1].fwd(out.taps.enc[s - 1], true);
  for (int st = s - 2; st >= 0; --st) {
    Var u = up_[st].fwd(upsample2x(out.taps.dec[st + 1]), true);
    out.taps.dec[st] = dec_blocks_[st].fwd(add(u, out.taps.enc[st]), true);
  }
  out.features = out.taps.dec[0];
  return out;
}

MsdNet::InferOut MsdNet::infer_features(const Tensor& x, bool want_taps) const {
  check_input(x);
  const int s = cfg_.stages;
  InferOut out;
  if (want_taps) {
    out.enc.resize(s);
    out.dec.resize(s);
  }

  std::vector<Tensor> enc(s);
  Tensor cur = stem_.infer(x);
  for (int st = 0; st < s; ++st) {
    if (st > 0) cur = down_[st - 1].infer(cur);
    enc[st] = enc_blocks_[st].infer(cur);
    cur = enc[st];
    if (want_taps) out.enc[st] = enc[st];
  }
  Tensor dec = dec_blocks_[s - 1].infer(enc[s - 1]);
  if (want_taps) out.dec[s - 1] = dec;
  for (int st = s - 2; st >= 0; --st) {
    Tensor u = up_[st].infer(upsample2x_fwd(dec));
    for (size_t i = 0; i < u.count(); ++i) u.v[i] += enc[st].v[i];
    dec = dec_blocks_[st].infer(u);
    if (want_taps) out.dec[st] = dec;
  }
  out.features = std::move(dec);
  return out;
}

Var MsdNet::head_fwd(const Var& features, int head, bool train) {
  return heads_[head].fwd(features, train);
}

Tensor MsdNet::head_infer(const Tensor& features, int head) const {
  return heads_[head].infer(features);
}

std::array<Tensor, 3> MsdNet::infer_all_heads(const Tensor& x) const {
  Tensor features = infer_features(x).features;
  return {head_infer(features, 0), head_infer(features, 1), head_infer(features, 2)};
}

std::vector<Var> MsdNet::parameters() {
  std::vector<Var> params;
  auto add_conv = [&](Conv2dLayer& c) {
    params.push_back(c.w);
    if (c.b) params.push_back(c.b);
  };
  auto add_bn = [&](BnLayer& b) {
    params.push_back(b.gamma);
    params.push_back(b.beta);
  };
  auto add_cbr = [&](ConvBnRelu& c) {
    add_conv(c.conv);
    add_bn(c.bn);
  };
  auto add_block = [&](FusibleBlock& b) {
    add_conv(b.c3);
    add_conv(b.c1);
    add_bn(b.b3);
    add_bn(b.b1);
    if (b.has_identity) add_bn(b.bid);
  };
  add_cbr(stem_);
  for (auto& b : enc_blocks_) add_block(b);
  for (auto& d : down_) add_cbr(d);
  for (auto& b : dec_blocks_) add_block(b);
  for (auto& u : up_) add_cbr(u);
  for (auto& h : heads_) {
    add_cbr(h.pre);
    add_conv(h.out);
  }
  return params;
}

namespace {
using VisitFn = std::function<void(const std::string&, Tensor&)>;

void visit_conv(const std::string& prefix, Conv2dLayer& c, const VisitFn& fn) {
  fn(prefix + ".w", c.w->val);
  if (c.b) fn(prefix + ".b", c.b->val);
}

void visit_bn(const std::string& prefix, BnLayer& b, const VisitFn& fn) {
  fn(prefix + ".gamma", b.gamma->val);
  fn(prefix + ".beta", b.beta->val);
  // Running stats travel with the weights so inference after reload matches.
  Tensor rm(1, static_cast<int>(b.running.mean.size()), 1, 1);
  rm.v = b.running.mean;
  fn(prefix + ".rmean", rm);
  b.running.mean = rm.v;
  Tensor rv(1, static_cast<int>(b.running.var.size()), 1, 1);
  rv.v = b.running.var;
  fn(prefix + ".rvar", rv);
  b.running.var = rv.v;
}

void visit_cbr(const std::string& prefix, ConvBnRelu& c, const VisitFn& fn) {
  visit_conv(prefix + ".conv", c.conv, fn);
  visit_bn(prefix + ".bn", c.bn, fn);
}

void visit_block(const std::string& prefix, FusibleBlock& b, const VisitFn& fn) {
  visit_conv(prefix + ".c3", b.c3, fn);
  visit_conv(prefix + ".c1", b.c1, fn);
  visit_bn(prefix + ".b3", b.b3, fn);
  visit_bn(prefix + ".b1", b.b1, fn);
  if (b.has_identity) visit_bn(prefix + ".bid", b.bid, fn);
}

}  // namespace

void MsdNet::visit_tensors(const VisitFn& fn) {
  visit_cbr("stem", stem_, fn);
  for (size_t i = 0; i < enc_blocks_.size(); ++i) {
    visit_block("enc" + std::to_string(i + 1), enc_blocks_[i], fn);
  }
  for (size_t i = 0; i < down_.size(); ++i) {
    visit_cbr("down" + std::to_string(i + 1), down_[i], fn);
  }
  for (size_t i = 0; i < dec_blocks_.size(); ++i) {
    visit_block("dec" + std::to_string(i + 1), dec_blocks_[i], fn);
  }
  for (size_t i = 0; i < up_.size(); ++i) {
    visit_cbr("up" + std::to_string(i + 1), up_[i], fn);
  }
  for (int k = 0; k < 3; ++k) {
    visit_cbr("head" + std::to_string(k + 1) + ".pre", heads_[k].pre, fn);
    visit_conv("head" + std::to_string(k + 1) + ".out", heads_[k].out, fn);
  }
}

void MsdNet::visit_tensors(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<MsdNet*>(this)->visit_tensors(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

size_t MsdNet::param_count() const {
  size_t count = 0;
  visit_tensors([&](const std::string& name, const Tensor& t) {
    if (name.find(".rmean") == std::string::npos && name.find(".rvar") == std::string::npos) {
      count += t.count();
    }
  });
  return count;
}

namespace {

// Sums conv multiply-accumulates over the shared topology. block_factor is
// the per-block kernel-area multiplier: 10 (3x3 + 1x1) unfused, 9 fused.
size_t topology_macs(const ModelConfig& cfg, int h, int w, int block_factor) {
  const auto& ch = cfg.channels;
  const int s = cfg.stages;
  size_t macs = 0;
  auto plane = [&](int stage) {
    return (static_cast<size_t>(h) >> stage) * (static_cast<size_t>(w) >> stage);
  };
  macs += static_cast<size_t>(9) * ch[0] * plane(0);  // stem
  for (int st = 0; st < s; ++st) {
    macs += static_cast<size_t>(block_factor) * ch[st] * ch[st] * plane(st) * 2;  // enc+dec
  }
  for (int st = 0; st < s - 1; ++st) {
    macs += static_cast<size_t>(9) * ch[st] * ch[st + 1] * plane(st + 1);  // down
    macs += static_cast<size_t>(9) * ch[st + 1] * ch[st] * plane(st);      // up
  }
  for (int k = 0; k < 3; ++k) {
    macs += static_cast<size_t>(9) * ch[0] * ch[0] * plane(0);  // head pre
    macs += static_cast<size_t>(6) * ch[0] * plane(0);          // head out
  }
  return macs;
}

}  // namespace

size_t MsdNet::mac_count(int h, int w) const { return topology_macs(cfg_, h, w, 10); }

Tensor fused_conv_infer(const FusedNet::FusedConv& c, const Tensor& x) {
  return conv2d_fwd(x, c.w, &c.b, c.stride, c.pad, c.dil);
}

void FusedNet::check_input(const Tensor& x) const {
  if (x.c != 1) throw ValidationError("FusedNet: input must be single-channel");
  const int mult = cfg_.size_multiple();
  if (x.h % mult != 0 || x.w % mult != 0) {
    throw ValidationError("FusedNet: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                          " not divisible by the required multiple of " + std::to_string(mult));
  }
}

Tensor FusedNet::infer_features(const Tensor& x) const {
  check_input(x);
  const int s = cfg_.stages;
  std::vector<Tensor> enc(s);
  Tensor cur = relu_fwd(fused_conv_infer(stem_, x));
  for (int st = 0; st < s; ++st) {
    if (st > 0) cur = relu_fwd(fused_conv_infer(down_[st - 1], cur));
    enc[st] = relu_fwd(fused_conv_infer(enc_[st], cur));
    cur = enc[st];
  }
  Tensor dec = relu_fwd(fused_conv_infer(dec_[s - 1], enc[s - 1]));
  for (int st = s - 2; st >= 0; --st) {
    Tensor u = relu_fwd(fused_conv_infer(up_[st], upsample2x_fwd(dec)));
    for (size_t i = 0; i < u.count(); ++i) u.v[i] += enc[st].v[i];
    dec = relu_fwd(fused_conv_infer(dec_[st], u));
  }
  return dec;
}

Tensor FusedNet::head_infer(const Tensor& features, int head) const {
  Tensor pre = relu_fwd(fused_conv_infer(heads_[head].pre, features));
  return fused_conv_infer(heads_[head].out, pre);
}

std::array<Tensor, 3> FusedNet::infer_all_heads(const Tensor& x) const {
  Tensor features = infer_features(x);
  return {head_infer(features, 0), head_infer(features, 1), head_infer(features, 2)};
}

size_t FusedNet::param_count() const {
  size_t count = 0;
  const_cast<FusedNet*>(this)->visit_tensors(
      [&](const std::string&, Tensor& t) { count += t.count(); });
  return count;
}

size_t FusedNet::mac_count(int h, int w) const { return topology_macs(cfg_, h, w, 9); }

void FusedNet::visit_tensors(const std::function<void(const std::string&, Tensor&)>& fn) {
  auto visit = [&](const std::string& name, FusedConv& c) {
    fn(name + ".w", c.w);
    Tensor b(1, static_cast<int>(c.b.size()), 1, 1);
    b.v = c.b;
    fn(name + ".b", b);
    c.b = b.v;
  };
  visit("stem", stem_);
  for (size_t i = 0; i < enc_.size(); ++i) visit("enc" + std::to_string(i + 1), enc_[i]);
  for (size_t i = 0; i < down_.size(); ++i) visit("down" + std::to_string(i + 1), down_[i]);
  for (size_t i = 0; i < dec_.size(); ++i) visit("dec" + std::to_string(i + 1), dec_[i]);
  for (size_t i = 0; i < up_.size(); ++i) visit("up" + std::to_string(i + 1), up_[i]);
  for (int k = 0; k < 3; ++k) {
    visit("head" + std::to_string(k + 1) + ".pre", heads_[k].pre);
    visit("head" + std::to_string(k + 1) + ".out", heads_[k].out);
  }
}

namespace {

FusedNet::FusedConv fold_cbr(const ConvBnRelu& layer) {
  FusedNet::FusedConv out;
  const Tensor& w = layer.conv.w->val;
  out.w = Tensor(w.n, w.c, w.h, w.w);
  out.b.assign(w.n, 0.0f);
  out.stride = layer.conv.stride;
  out.pad = layer.conv.pad;
  out.dil = layer.conv.dil;
  const auto& bn = layer.bn;
  const size_t per_out = static_cast<size_t>(w.c) * w.h * w.w;
  for (int o = 0; o < w.n; ++o) {
    const float inv = 1.0f / std::sqrt(bn.running.var[o] + bn.eps);
    const float scale = bn.gamma->val.v[o] * inv;
    out.b[o] = bn.beta->val.v[o] - bn.running.mean[o] * scale;
    for (size_t i = 0; i < per_out; ++i) {
      out.w.v[o * per_out + i] = w.v[o * per_out + i] * scale;
    }
  }
  return out;
}

}  // namespace

FusedNet reparameterize(const MsdNet& net) {
  FusedNet fused(net.cfg_);
  fused.stem_ = fold_cbr(net.stem_);
  for (const auto& b : net.enc_blocks_) {
    FusedNet::FusedConv c;
    b.fuse_into(c.w, c.b);
    fused.enc_.push_back(std::move(c));
  }
  for (const auto& d : net.down_) fused.down_.push_back(fold_cbr(d));
  for (const auto& b : net.dec_blocks_) {
    FusedNet::FusedConv c;
    b.fuse_into(c.w, c.b);
    fused.dec_.push_back(std::move(c));
  }
  for (const auto& u : net.up_) fused.up_.push_back(fold_cbr(u));
  for (int k = 0; k < 3; ++k) {
    fused.heads_[k].pre = fold_cbr(net.heads_[k].pre);
    fused.heads_[k].pre.dil = net.heads_[k].dilation;
    fused.heads_[k].pre.pad = net.heads_[k].dilation;
    FusedNet::FusedConv out;
    out.w = net.heads_[k].out.w->val;
    out.b = net.heads_[k].out.b->val.v;
    out.stride = 1;
    out.pad = 0;
    out.dil = 1;
    fused.heads_[k].out = std::move(out);
  }
  return fused;
}

FusedNet fused_from_tensors(const ModelConfig& cfg, std::map<std::string, Tensor>& tensors) {
  // Build an empty topology, then overwrite every tensor from the table.
  MsdNet scratch(cfg, 0);
  FusedNet fused = reparameterize(scratch);
  fused.visit_tensors([&](const std::string& name, Tensor& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw IoError("fused checkpoint: missing tensor " + name);
    }
    if (it->second.count() != t.count()) {
      throw IoError("fused checkpoint: shape mismatch for " + name);
    }
    t = it->second;
  });
  return fused;
}

}  // namespace umspu::nn
