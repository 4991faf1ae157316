#include "seg2seg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace seg2seg::checkpoint {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

Tensor config_tensor(const model::ModelConfig& c) {
  return Tensor::vector({static_cast<double>(c.src_vocab), static_cast<double>(c.tgt_vocab),
                         static_cast<double>(c.d), static_cast<double>(c.enc_layers),
                         static_cast<double>(c.dec_layers), static_cast<double>(c.heads),
                         static_cast<double>(c.ffn), c.dropout});
}

model::ModelConfig config_from(const Tensor& t) {
  if (t.size() != 8) throw std::runtime_error("checkpoint: malformed config record");
  model::ModelConfig c;
  c.src_vocab = static_cast<int>(t[0]);
  c.tgt_vocab = static_cast<int>(t[1]);
  c.d = static_cast<int>(t[2]);
  c.enc_layers = static_cast<int>(t[3]);
  c.dec_layers = static_cast<int>(t[4]);
  c.heads = static_cast<int>(t[5]);
  c.ffn = static_cast<int>(t[6]);
  c.dropout = t[7];
  return c;
}

}  // namespace

void write_arrays(const std::string& path, const ad::ParamMap& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(os, d);
    for (double v : t.storage()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

ad::ParamMap read_arrays(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(is, path);
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(is, path);
  ad::ParamMap out;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t len = get_u32(is, path);
    if (len > 4096) throw std::runtime_error(path + ": implausible record name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error(path + ": truncated checkpoint");
    const std::uint32_t rank = get_u32(is, path);
    if (rank > 8) throw std::runtime_error(path + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(is, path);
    const std::size_t n = shape_size(shape);
    if (n > (1u << 28)) throw std::runtime_error(path + ": implausible size for " + name);
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(get_u64(is, path));
    if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw std::runtime_error(path + ": duplicate record " + name);
    }
  }
  return out;
}

void save(const std::string& path, const model::Model& m) {
  ad::ParamMap arrays = m.params();
  arrays.emplace(kConfigRecord, config_tensor(m.config()));
  write_arrays(path, arrays);
}

model::Model load(const std::string& path) {
  ad::ParamMap arrays = read_arrays(path);
  auto it = arrays.find(kConfigRecord);
  if (it == arrays.end()) throw std::runtime_error(path + ": missing model configuration");
  const model::ModelConfig config = config_from(it->second);
  arrays.erase(it);
  return model::Model(config, std::move(arrays));
}

model::Model load(const std::string& path, const model::ModelConfig& expected) {
  model::Model m = load(path);
  if (!(m.config() == expected)) {
    throw std::runtime_error(path + ": checkpoint model configuration does not match the run configuration");
  }
  return m;
}

}  // namespace seg2seg::checkpoint
