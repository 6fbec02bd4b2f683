#include "umspu/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace umspu::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'U', 'M', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::string get_string(std::istream& in) {
  const uint32_t len = get_u32(in);
  if (len > (1u << 28)) throw IoError("checkpoint: implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

template <typename Net>
void save_impl(const fs::path& path, Net& net, const ensemble::EnsembleState& state,
               bool fused) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + tmp.string());
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    out.put(fused ? 1 : 0);
    put_string(out, nn::model_config_to_json(net.config()));
    put_string(out, state.to_json());

    uint32_t count = 0;
    net.visit_tensors([&](const std::string&, nn::Tensor&) { ++count; });
    put_u32(out, count);
    net.visit_tensors([&](const std::string& name, nn::Tensor& t) {
      put_string(out, name);
      put_u32(out, static_cast<uint32_t>(t.n));
      put_u32(out, static_cast<uint32_t>(t.c));
      put_u32(out, static_cast<uint32_t>(t.h));
      put_u32(out, static_cast<uint32_t>(t.w));
      out.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    });
    if (!out) throw IoError("save_checkpoint: short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("save_checkpoint: rename to " + path.string() + " failed");
}

}  // namespace

void save_checkpoint(const fs::path& path, nn::MsdNet& net,
                     const ensemble::EnsembleState& state) {
  save_impl(path, net, state, false);
}

void save_checkpoint(const fs::path& path, nn::FusedNet& net,
                     const ensemble::EnsembleState& state) {
  save_impl(path, net, state, true);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("load_checkpoint: bad magic in " + path.string());
  }
  const uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.fused = in.get() == 1;
  ck.config = nn::model_config_from_json(get_string(in));
  ck.state = ensemble::EnsembleState::from_json(get_string(in));

  const uint32_t count = get_u32(in);
  std::map<std::string, nn::Tensor> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in);
    const int n = static_cast<int>(get_u32(in));
    const int c = static_cast<int>(get_u32(in));
    const int h = static_cast<int>(get_u32(in));
    const int w = static_cast<int>(get_u32(in));
    nn::Tensor t(n, c, h, w);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!in) throw IoError("load_checkpoint: truncated tensor " + name);
    tensors.emplace(name, std::move(t));
  }

  if (ck.fused) {
    ck.fused_net = std::make_shared<nn::FusedNet>(nn::fused_from_tensors(ck.config, tensors));
  } else {
    ck.net = std::make_shared<nn::MsdNet>(ck.config, 0);
    ck.net->visit_tensors([&](const std::string& name, nn::Tensor& t) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw IoError("load_checkpoint: missing tensor " + name);
      if (it->second.count() != t.count()) {
        throw IoError("load_checkpoint: shape mismatch for " + name);
      }
      t = it->second;
    });
  }
  return ck;
}

}  // namespace umspu::io
