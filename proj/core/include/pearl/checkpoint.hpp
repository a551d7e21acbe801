#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pearl/nn.hpp"

namespace pearl {

// Flat versioned container for a DenseStack:
//   magic "PRLSTACK", u32 version, u32 layer_count,
//   per layer: u32 in_dim, u32 out_dim, u8 activation code,
//   then per layer: weights row-major as little-endian f64, bias as f64.
// Round-trips are bit-exact (doubles pass through std::bit_cast).
void write_stack(std::ostream& out, const nn::DenseStack& net);
nn::DenseStack read_stack(std::istream& in);

void save_stack(const std::string& path, const nn::DenseStack& net);
nn::DenseStack load_stack(const std::string& path);

// Low-level little-endian primitives shared by the network container format.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

// FNV-1a 64 over a file's bytes, hex-encoded; recorded in run manifests.
std::string file_hash_hex(const std::string& path);

}  // namespace pearl
