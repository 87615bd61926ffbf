// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "helpers.hpp"

using namespace hqga;
using hqga::testing::randn;
using hqga::testing::temp_dir;

namespace {

void write_raw(const std::filesystem::path& p, const std::string& header, std::size_t payload = 0) {
  std::ofstream out(p, std::ios::binary);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out << header;
  out << std::string(payload, '\0');
}

}  // namespace

TEST(Archive, RoundTripPreservesValuesMetadataAndDtype) {
  std::mt19937_64 rng(2);
  Mat<double> a = randn(rng, 3, 5);
  Mat<float> b = randn(rng, 2, 2).cast<float>();
  NamedArrays arc;
  arc.put_matrix("a", a);
  arc.put_matrix("layer.b", b);
  arc.metadata()["kind"] = "checkpoint";
  const auto path = temp_dir("archive") / "x.safetensors";
  write_archive(arc, path);

  const NamedArrays back = read_archive(path);
  EXPECT_EQ(back.get_matrix<double>("a", 3, 5), a);
  EXPECT_EQ(back.get_matrix<float>("layer.b", 2, 2), b);
  EXPECT_EQ(back.at("a").dtype, DType::F64);
  EXPECT_EQ(back.at("layer.b").dtype, DType::F32);
  EXPECT_EQ(back.metadata().at("kind"), "checkpoint");
}

TEST(Archive, RewritingIsByteIdentical) {
  std::mt19937_64 rng(3);
  NamedArrays arc;
  arc.put_matrix("w", randn(rng, 4, 4));
  arc.metadata()["k"] = "v";
  const auto dir = temp_dir("archive_bytes");
  write_archive(arc, dir / "one.bin");
  write_archive(read_archive(dir / "one.bin"), dir / "two.bin");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "one.bin"), slurp(dir / "two.bin"));
}

TEST(Archive, HeaderIsAlignedToEightBytes) {
  NamedArrays arc;
  arc.put_matrix<float>("odd", Mat<float>::Ones(1, 3));
  const auto path = temp_dir("archive_align") / "a.bin";
  write_archive(arc, path);
  std::ifstream in(path, std::ios::binary);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  EXPECT_EQ(len % 8, 0u);
  EXPECT_EQ(std::filesystem::file_size(path), 8 + len + 12);
}

TEST(Archive, EmptyArrayRoundTrips) {
  NamedArrays arc;
  arc.put<double>("none", {0, 4}, std::span<const double>());
  const auto path = temp_dir("archive_empty") / "e.bin";
  write_archive(arc, path);
  EXPECT_EQ(read_archive(path).get<double>("none", {0, 4}).size(), 0u);
}

TEST(Archive, MissingArrayIsReported) {
  NamedArrays arc;
  EXPECT_THROW(arc.at("nope"), MissingArrayError);
  EXPECT_FALSE(arc.contains("nope"));
}

TEST(Archive, DtypeAndShapeMismatchesThrow) {
  NamedArrays arc;
  arc.put_matrix<double>("m", Mat<double>::Zero(2, 3));
  EXPECT_THROW(arc.get_matrix<float>("m", 2, 3), ShapeMismatchError);
  EXPECT_THROW(arc.get_matrix<double>("m", 3, 2), ShapeMismatchError);
  std::vector<double> three(3);
  EXPECT_THROW(arc.put<double>("bad", {2, 2}, three), ShapeMismatchError);
}

TEST(Archive, CorruptFilesAreRejected) {
  const auto dir = temp_dir("archive_corrupt");
  {
    std::ofstream out(dir / "short.bin", std::ios::binary);
    out << "abc";
  }
  EXPECT_THROW(read_archive(dir / "short.bin"), CorruptManifestError);

  write_raw(dir / "long.bin", "{}");
  {
    std::fstream f(dir / "long.bin", std::ios::binary | std::ios::in | std::ios::out);
    const std::uint64_t huge = 1 << 20;
    f.write(reinterpret_cast<const char*>(&huge), sizeof(huge));
  }
  EXPECT_THROW(read_archive(dir / "long.bin"), CorruptManifestError);

  write_raw(dir / "json.bin", "{not json");
  EXPECT_THROW(read_archive(dir / "json.bin"), CorruptManifestError);

  write_raw(dir / "list.bin", "[1,2]");
  EXPECT_THROW(read_archive(dir / "list.bin"), CorruptManifestError);

  write_raw(dir / "dtype.bin", R"({"x":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})", 1);
  EXPECT_THROW(read_archive(dir / "dtype.bin"), CorruptManifestError);

  write_raw(dir / "offsets.bin", R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", 4);
  EXPECT_THROW(read_archive(dir / "offsets.bin"), CorruptManifestError);

  write_raw(dir / "size.bin", R"({"x":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", 8);
  EXPECT_THROW(read_archive(dir / "size.bin"), ShapeMismatchError);
}

TEST(Archive, UnreadablePathIsDataError) {
  EXPECT_THROW(read_archive(temp_dir("archive_missing") / "absent.bin"), DataError);
}
