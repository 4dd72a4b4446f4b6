#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "gazefusion/hash.hpp"
#include "gazefusion/keyvalue.hpp"
#include "gazefusion/serialize.hpp"
#include "helpers.hpp"

using namespace gazefusion;

TEST_CASE("tensor file round trip") {
  std::mt19937_64 rng(1);
  NamedTensors src{{"a.weight", testutil::random_tensor({2, 3}, rng)}, {"scalar", Tensor::scalar(3.25)}};
  std::stringstream buf;
  write_tensors(buf, src);
  CHECK(buf.str().substr(0, 4) == "GZF1");
  NamedTensors back = read_tensors(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a.weight");
  CHECK(back[0].second.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(back[0].second.at(i) == src[0].second.at(i));
  CHECK(back[1].second.item() == 3.25);

  NamedTensors dest{{"scalar", Tensor::zeros({})}, {"a.weight", Tensor::zeros({2, 3})}};
  assign_tensors(back, dest);
  CHECK(dest[0].second.item() == 3.25);
  NamedTensors wrong{{"a.weight", Tensor::zeros({3, 2})}};
  CHECK_THROWS(assign_tensors(back, wrong));
  NamedTensors missing{{"b", Tensor::zeros({1})}};
  CHECK_THROWS(assign_tensors(back, missing));

  std::stringstream bad("GZF0");
  CHECK_THROWS(read_tensors(bad));
}

TEST_CASE("key=value parsing") {
  kv::Document d = kv::parse("# comment\na = 1\n\n[dataset]\nb=x,y\n", "f.txt");
  REQUIRE(d.entries.size() == 2);
  CHECK(d.entries[0].key == "a");
  CHECK(d.entries[0].value == "1");
  CHECK(d.entries[1].section == 1);
  CHECK(d.entries[1].line == 5);
  CHECK(d.section_names[0] == "dataset");
  CHECK_THROWS_AS(kv::parse("novalue\n", "f.txt"), ConfigError);
  CHECK(kv::to_bool(d.entries[0], "f") == true);
  CHECK_THROWS_AS(kv::to_size(kv::Entry{"k", "-1", 1, 0}, "f"), ConfigError);
}

TEST_CASE("format_double is shortest exact") {
  for (double v : {0.1, 1e-4, 1.0 / 3.0, -2.5e300, 0.0, 5e-324}) CHECK(std::strtod(kv::format_double(v).c_str(), nullptr) == v);
  CHECK(kv::format_double(0.25) == "0.25");
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
