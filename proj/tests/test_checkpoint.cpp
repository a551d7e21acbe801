#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "pearl/checkpoint.hpp"
#include "pearl/ee_qnet.hpp"
#include "pearl/nn.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pearl-test-" + name);
}

}  // namespace

TEST_CASE("stack round-trip is bit exact, including awkward doubles") {
  Rng rng(201);
  nn::DenseStack net = nn::make_stack(
      {4, 7, 2}, {nn::Activation::relu, nn::Activation::sigmoid}, rng);
  net.layers[0].weights.data[0] = -0.0;
  net.layers[0].weights.data[1] = 5e-324;        // smallest denormal
  net.layers[0].weights.data[2] = 1.7976931348623157e308;
  net.layers[0].bias[0] = 0.1 + 0.2;             // classic non-representable sum

  std::stringstream buf;
  write_stack(buf, net);
  nn::DenseStack back = read_stack(buf);
  REQUIRE(back.layers.size() == net.layers.size());
  CHECK(nn::parameter_hash(back) == nn::parameter_hash(net));
  CHECK(std::signbit(back.layers[0].weights.data[0]));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.layers[l].activation == net.layers[l].activation);
    CHECK(back.layers[l].weights.data == net.layers[l].weights.data);
    CHECK(back.layers[l].bias == net.layers[l].bias);
  }
}

TEST_CASE("little-endian primitives round trip") {
  std::stringstream buf;
  write_u8(buf, 0xAB);
  write_u32(buf, 0xDEADBEEF);
  write_u64(buf, 0x0123456789ABCDEFULL);
  write_f64(buf, -12345.6789);
  CHECK(read_u8(buf) == 0xAB);
  CHECK(read_u32(buf) == 0xDEADBEEF);
  CHECK(read_u64(buf) == 0x0123456789ABCDEFULL);
  CHECK(read_f64(buf) == -12345.6789);
}

TEST_CASE("corrupt magic is rejected") {
  std::stringstream buf;
  buf << "NOTASTACKxxxxxxxxxxxxxxxxxxxx";
  CHECK_THROWS(read_stack(buf));
}

TEST_CASE("truncated stream is rejected") {
  Rng rng(202);
  nn::DenseStack net = nn::make_stack({3, 3}, {nn::Activation::linear}, rng);
  std::stringstream buf;
  write_stack(buf, net);
  const std::string full = buf.str();
  std::stringstream cut(full.substr(0, full.size() / 2));
  CHECK_THROWS(read_stack(cut));
}

TEST_CASE("network container round-trips every section and the metadata") {
  Rng rng(203);
  EEQNetwork net;
  net.state_dim = 4;
  net.action_count = 3;
  net.trunk = nn::make_stack({4, 8, 8}, {nn::Activation::relu, nn::Activation::relu}, rng);
  for (int b = 0; b < 2; ++b) {
    net.branches.push_back(
        nn::make_stack({8, 6, 3}, {nn::Activation::relu, nn::Activation::linear}, rng));
    net.utility_heads.push_back(
        nn::make_stack({8, 4, 1}, {nn::Activation::relu, nn::Activation::sigmoid}, rng));
    net.privacy_heads.push_back(
        nn::make_stack({8, 4, 1}, {nn::Activation::relu, nn::Activation::sigmoid}, rng));
  }
  net.budget_u = 0.75;
  net.budget_p = 0.7;
  net.i_max_bits = 2.125;

  const auto path = temp_file("net.bin");
  save_network(path.string(), net);
  const EEQNetwork back = load_network(path.string());
  std::filesystem::remove(path);

  CHECK(back.state_dim == net.state_dim);
  CHECK(back.action_count == net.action_count);
  CHECK(back.budget_u == net.budget_u);
  CHECK(back.budget_p == net.budget_p);
  CHECK(back.i_max_bits == net.i_max_bits);
  REQUIRE(back.branches.size() == net.branches.size());
  CHECK(nn::parameter_hash(back.trunk) == nn::parameter_hash(net.trunk));
  for (std::size_t b = 0; b < net.branches.size(); ++b) {
    CHECK(nn::parameter_hash(back.branches[b]) == nn::parameter_hash(net.branches[b]));
    CHECK(nn::parameter_hash(back.utility_heads[b]) == nn::parameter_hash(net.utility_heads[b]));
    CHECK(nn::parameter_hash(back.privacy_heads[b]) == nn::parameter_hash(net.privacy_heads[b]));
  }
}

TEST_CASE("file hash is stable and content sensitive") {
  const auto path = temp_file("hash.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "hello";
  }
  const std::string h1 = file_hash_hex(path.string());
  CHECK(file_hash_hex(path.string()) == h1);
  {
    std::ofstream out(path, std::ios::binary);
    out << "hellp";
  }
  CHECK(file_hash_hex(path.string()) != h1);
  std::filesystem::remove(path);
}
