#include "anople/tensor_io.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace anople;

TEST(TensorIo, RoundTripKeepsValuesShapesAndMetadata) {
  oracle::TempDir dir("tio");
  std::mt19937_64 rng(1);
  TensorFile f;
  f.tensors["a"] = TensorRecord::from_matrix(oracle::random_unit_rows(3, 5, rng));
  f.tensors["b.c"] = TensorRecord::with_shape(ad::Matrix::Constant(2, 6, 0.25), {2, 3, 2});
  f.metadata["classes"] = "bottle,cable";
  const auto path = dir.path() / "x.safetensors";
  write_tensor_file(path, f);
  const TensorFile g = read_tensor_file(path);
  EXPECT_EQ(g.metadata.at("classes"), "bottle,cable");
  EXPECT_EQ(g.at("a").data, f.at("a").data);
  EXPECT_EQ(g.at("b.c").shape, (std::vector<std::int64_t>{2, 3, 2}));
  EXPECT_EQ(g.at("b.c").data, f.at("b.c").data);
}

TEST(TensorIo, SinglePrecisionRoundsToFloat) {
  oracle::TempDir dir("tio32");
  TensorFile f;
  ad::Matrix m(1, 2);
  m << 0.1, -3.0;
  f.tensors["m"] = TensorRecord::from_matrix(m);
  write_tensor_file(dir.path() / "f.safetensors", f, DType::F32);
  const auto back = read_tensor_file(dir.path() / "f.safetensors").at("m").data;
  EXPECT_EQ(back(0, 0), static_cast<double>(0.1f));
  EXPECT_EQ(back(0, 1), -3.0);
}

TEST(TensorIo, HalfPrecisionDecodes) {
  oracle::TempDir dir("tio16");
  // Hand-built file: one F16 tensor [1.0, -2.0, 0.5] and one BF16 tensor [1.0].
  const std::string header =
      R"({"h":{"dtype":"F16","shape":[3],"data_offsets":[0,6]},"b":{"dtype":"BF16","shape":[1],"data_offsets":[6,8]}})";
  const unsigned char data[] = {0x00, 0x3c, 0x00, 0xc0, 0x00, 0x38, 0x80, 0x3f};
  const auto path = dir.path() / "h.safetensors";
  {
    std::ofstream out(path, std::ios::binary);
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
    out << header;
    out.write(reinterpret_cast<const char*>(data), sizeof data);
  }
  const TensorFile f = read_tensor_file(path);
  EXPECT_EQ(f.at("h").data(0, 0), 1.0);
  EXPECT_EQ(f.at("h").data(0, 1), -2.0);
  EXPECT_EQ(f.at("h").data(0, 2), 0.5);
  EXPECT_EQ(f.at("b").data(0, 0), 1.0);
}

TEST(TensorIo, MalformedInputsRaiseFormatError) {
  oracle::TempDir dir("tiobad");
  EXPECT_THROW(read_tensor_file(dir.path() / "missing.safetensors"), FormatError);
  const auto junk = dir.path() / "junk.safetensors";
  std::ofstream(junk) << "not a tensor file at all";
  EXPECT_THROW(read_tensor_file(junk), FormatError);
  TensorFile empty;
  EXPECT_THROW(empty.at("nope"), FormatError);
}
