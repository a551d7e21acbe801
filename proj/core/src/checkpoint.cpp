#include "pearl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pearl {

namespace {
constexpr char kStackMagic[8] = {'P', 'R', 'L', 'S', 'T', 'A', 'C', 'K'};
constexpr std::uint32_t kStackVersion = 1;
}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t read_u8(std::istream& in) {
  const int c = in.get();
  if (c == EOF) throw std::runtime_error("checkpoint: unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& in) {
  char buf[4];
  if (!in.read(buf, 4)) throw std::runtime_error("checkpoint: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  if (!in.read(buf, 8)) throw std::runtime_error("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void write_stack(std::ostream& out, const nn::DenseStack& net) {
  out.write(kStackMagic, sizeof(kStackMagic));
  write_u32(out, kStackVersion);
  write_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    write_u32(out, static_cast<std::uint32_t>(layer.in_dim()));
    write_u32(out, static_cast<std::uint32_t>(layer.out_dim()));
    write_u8(out, static_cast<std::uint8_t>(layer.activation));
  }
  for (const auto& layer : net.layers) {
    for (double w : layer.weights.data) write_f64(out, w);
    for (double b : layer.bias) write_f64(out, b);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

nn::DenseStack read_stack(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kStackMagic))
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = read_u32(in);
  if (version != kStackVersion) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t count = read_u32(in);
  nn::DenseStack net;
  net.layers.resize(count);
  for (auto& layer : net.layers) {
    const int in_dim = static_cast<int>(read_u32(in));
    const int out_dim = static_cast<int>(read_u32(in));
    const std::uint8_t code = read_u8(in);
    if (code > 2) throw std::runtime_error("checkpoint: bad activation code");
    layer.weights = nn::Matrix(out_dim, in_dim);
    layer.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
    layer.activation = static_cast<nn::Activation>(code);
  }
  for (auto& layer : net.layers) {
    for (double& w : layer.weights.data) w = read_f64(in);
    for (double& b : layer.bias) b = read_f64(in);
  }
  return net;
}

void save_stack(const std::string& path, const nn::DenseStack& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_stack(out, net);
}

nn::DenseStack load_stack(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return read_stack(in);
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace pearl
