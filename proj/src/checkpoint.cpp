#include "rescal/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rescal::io {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'C', 'L'};
constexpr uint8_t kVersion = 0x01;

void put_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float f) {
  put_u32(buf, std::bit_cast<uint32_t>(f));
}

struct Reader {
  std::string data;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > data.size()) {
      throw std::runtime_error(std::string("checkpoint: truncated ") + what);
    }
  }

  uint32_t u32(const char* what) {
    need(4, what);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
    pos += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& entries) {
  std::string buf;
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  put_u32(buf, static_cast<uint32_t>(entries.size()));
  for (const NamedTensor& e : entries) {
    put_u32(buf, static_cast<uint32_t>(e.name.size()));
    buf.append(e.name);
    const auto& shape = e.tensor.shape();
    put_u32(buf, static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) put_u32(buf, static_cast<uint32_t>(d));
    for (float v : e.tensor.values()) put_f32(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  Reader r;
  r.data.assign(std::istreambuf_iterator<char>(in),
                std::istreambuf_iterator<char>());

  r.need(5, "header");
  if (std::memcmp(r.data.data(), kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  if (static_cast<uint8_t>(r.data[4]) != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }
  r.pos = 5;

  const uint32_t count = r.u32("entry count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "name");
    const uint32_t rank = r.u32("rank");
    ad::Shape shape(rank);
    int64_t total = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int64_t>(r.u32("dims"));
      total *= shape[d];
    }
    std::vector<float> vals(static_cast<size_t>(total));
    for (int64_t j = 0; j < total; ++j) vals[static_cast<size_t>(j)] = r.f32("payload");
    out.push_back({std::move(name),
                   ad::Tensor::from(std::move(shape), std::move(vals))});
  }
  return out;
}

void load_into(const std::string& path, std::vector<NamedTensor> dest) {
  auto loaded = load_checkpoint(path);
  for (NamedTensor& d : dest) {
    bool found = false;
    for (const NamedTensor& s : loaded) {
      if (s.name != d.name) continue;
      if (s.tensor.shape() != d.tensor.shape()) {
        throw std::runtime_error("checkpoint: shape mismatch for '" + d.name +
                                 "': file has " +
                                 ad::shape_str(s.tensor.shape()) +
                                 ", model wants " +
                                 ad::shape_str(d.tensor.shape()));
      }
      auto dst = d.tensor.mutable_values();
      auto src = s.tensor.values();
      std::copy(src.begin(), src.end(), dst.begin());
      found = true;
      break;
    }
    if (!found) {
      throw std::runtime_error("checkpoint: missing entry '" + d.name +
                               "' in " + path);
    }
  }
}

}  // namespace rescal::io
