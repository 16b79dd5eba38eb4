#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <cstring>
#include <fstream>
#include <random>

#include "psic/error.hpp"
#include "psic/io.hpp"
#include "psic/manifest.hpp"
#include "psic/model_file.hpp"
#include "psic/phantom.hpp"
#include "test_support.hpp"

using namespace psic;
using namespace psic::io;
namespace fs = std::filesystem;

namespace {

Volume random_volume(const Dims& dims, std::uint32_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume v(dims, k);
  v.b_value = 1000.0;
  const auto scheme = psic::testing::random_scheme(static_cast<int>(k), seed);
  v.gradients = scheme.directions();
  for (auto& x : v.data) x = u(rng);
  return v;
}

Mask random_blob(const Dims& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.85);
  Mask m(dims);
  for (std::uint32_t x = 1; x + 1 < dims[0]; ++x) {
    for (std::uint32_t y = 1; y + 1 < dims[1]; ++y) {
      for (std::uint32_t z = 0; z < dims[2]; ++z) m.data[m.voxel_index(x, y, z)] = coin(rng) ? 1 : 0;
    }
  }
  return m;
}

}  // namespace

TEST(Container, VolumeRoundTripIsBitExact) {
  const auto v = random_volume({3, 4, 5}, 7, 1);
  const auto bytes = encode_volume(v);
  EXPECT_EQ(bytes.size(), 30u + 7u * 24u + 3u * 4u * 5u * 7u * 4u);
  EXPECT_EQ(std::memcmp(bytes.data(), "DCB1", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 3);  // little-endian N1
  EXPECT_EQ(decode_volume(bytes), v);

  // Payload value at (x, y, z, k) is at ((x N2 + y) N3 + z) K + k.
  float f;
  const std::size_t payload = 30 + 7 * 24;
  std::memcpy(&f, bytes.data() + payload + (((2 * 4 + 1) * 5 + 3) * 7 + 6) * 4, 4);
  EXPECT_EQ(f, v.voxel(v.voxel_index(2, 1, 3))[6]);
}

TEST(Container, MaskRoundTrip) {
  const auto m = random_blob({6, 6, 6}, 2);
  const auto bytes = encode_mask(m);
  EXPECT_EQ(bytes.size(), 30u + 24u + 216u);
  EXPECT_EQ(decode_mask(bytes), m);
  EXPECT_THROW(decode_volume(bytes), IoError);
  EXPECT_THROW(decode_mask(encode_volume(random_volume({2, 2, 2}, 6, 1))), IoError);
}

TEST(Container, CorruptInputsAreRejected) {
  auto bytes = encode_volume(random_volume({2, 2, 2}, 6, 3));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_volume(bad_magic), IoError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_volume(bad_version), IoError);
  EXPECT_THROW(decode_volume(std::span(bytes).first(bytes.size() - 1)), IoError);
  EXPECT_THROW(decode_volume(std::span(bytes).first(10)), IoError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_volume(trailing), IoError);
}

TEST(Container, FilesAndAtomicWrites) {
  const auto dir = psic::testing::scratch_dir("io_files");
  const auto v = random_volume({4, 3, 2}, 6, 4);
  write_volume(dir / "v.dcb", v);
  EXPECT_EQ(read_volume(dir / "v.dcb"), v);
  EXPECT_EQ(read_file(dir / "v.dcb"), encode_volume(v));
  write_text_atomic(dir / "t.txt", "abc");
  write_text_atomic(dir / "t.txt", "xyz");
  EXPECT_EQ(read_file(dir / "t.txt"), (std::vector<std::uint8_t>{'x', 'y', 'z'}));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 2u);  // no temporaries left behind
  EXPECT_THROW(read_volume(dir / "missing.dcb"), IoError);
  EXPECT_THROW(write_volume(dir / "no" / "such" / "dir.dcb", v), IoError);
  EXPECT_FALSE(fs::exists(dir / "no"));
  fs::remove_all(dir);
}

TEST(Container, PgmHeader) {
  const auto dir = psic::testing::scratch_dir("io_pgm");
  write_pgm(dir / "a.pgm", 3, 2, std::vector<std::uint8_t>{0, 1, 2, 3, 4, 255});
  const auto bytes = read_file(dir / "a.pgm");
  const std::string head(bytes.begin(), bytes.begin() + 11);
  EXPECT_EQ(head, "P5\n3 2\n255\n");
  EXPECT_EQ(bytes.size(), 17u);
  EXPECT_EQ(bytes.back(), 255);
  fs::remove_all(dir);
}

TEST(Cubes, InteriorVoxelsMatchBruteForce) {
  const Dims dims{8, 9, 7};
  const auto mask = random_blob(dims, 5);
  for (int radius : {0, 1, 2}) {
    std::vector<Voxel> want;
    for (int x = 0; x < 8; ++x) {
      for (int y = 0; y < 9; ++y) {
        for (int z = 0; z < 7; ++z) {
          bool ok = true;
          for (int dx = -radius; dx <= radius && ok; ++dx) {
            for (int dy = -radius; dy <= radius && ok; ++dy) {
              for (int dz = -radius; dz <= radius && ok; ++dz) {
                const int a = x + dx, b = y + dy, c = z + dz;
                ok = a >= 0 && b >= 0 && c >= 0 && a < 8 && b < 9 && c < 7 &&
                     mask.inside(mask.voxel_index(a, b, c));
              }
            }
          }
          if (ok) want.push_back({x, y, z});
        }
      }
    }
    EXPECT_EQ(interior_voxels(mask, radius), want) << radius;
  }
  EXPECT_THROW(interior_voxels(mask, 4), DomainError);
  EXPECT_THROW(interior_voxels(mask, -1), DomainError);
}

TEST(Cubes, ExtractedValuesComeFromTheVolume) {
  const Dims dims{6, 6, 6};
  const auto v = random_volume(dims, 6, 6);
  Mask all(dims);
  std::fill(all.data.begin(), all.data.end(), 1);
  const auto cubes = extract_dcs(v, all, 1);
  ASSERT_EQ(cubes.size(), 64u);
  for (const auto& c : cubes) {
    for (int dx = 0; dx < 3; ++dx) {
      for (int dy = 0; dy < 3; ++dy) {
        for (int dz = 0; dz < 3; ++dz) {
          const auto src = v.voxel(v.voxel_index(c.center[0] + dx - 1, c.center[1] + dy - 1, c.center[2] + dz - 1));
          const auto got = c.site(dx, dy, dz);
          for (int k = 0; k < 6; ++k) EXPECT_EQ(got[k], static_cast<double>(src[k]));
        }
      }
    }
  }
  EXPECT_THROW(extract_dcs(v, Mask({6, 6, 5}), 1), ShapeError);
}

TEST(Cubes, ShOfConstantCubeIsBandZero) {
  const auto scheme = phantom::make_scheme(30, 1);
  DiffusionCube c;
  c.radius = 1;
  c.channels = 30;
  c.data.assign(27 * 30, 0.6);
  const auto sh_cubes = dcs_to_sh(std::span(&c, 1), scheme, 6, 0.0);
  ASSERT_EQ(sh_cubes.size(), 1u);
  const double y00 = 1.0 / std::sqrt(4.0 * std::numbers::pi);
  for (int s = 0; s < 27; ++s) {
    EXPECT_NEAR(sh_cubes[0].data[static_cast<std::size_t>(s) * 28], 0.6 / y00, 1e-12);
    for (int j = 1; j < 28; ++j) EXPECT_NEAR(sh_cubes[0].data[static_cast<std::size_t>(s) * 28 + j], 0.0, 1e-12);
  }
  EXPECT_THROW(dcs_to_sh(std::span(&c, 1), phantom::make_scheme(31, 1), 6), ShapeError);
}

TEST(Cubes, VolumeFitAgreesWithPerCubeFit) {
  const Dims dims{5, 6, 5};
  auto v = random_volume(dims, 41, 7);
  v.gradients = phantom::make_scheme(41, 3).directions();
  Mask mask(dims);
  std::fill(mask.data.begin(), mask.data.end(), 1);
  mask.data[mask.voxel_index(2, 2, 2)] = 0;
  const auto cubes = extract_dcs(v, mask, 1);
  ASSERT_FALSE(cubes.empty());
  const auto want = dcs_to_sh(cubes, v.scheme(), 6);
  const auto coeffs1 = fit_sh_volume(v, 6, sh::kDefaultShRegularization, 1);
  const auto coeffs3 = fit_sh_volume(v, 6, sh::kDefaultShRegularization, 3);
  EXPECT_EQ(coeffs1.data, coeffs3.data);
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    const auto got = sh_cube_at(coeffs1, cubes[i].center, 1);
    ASSERT_EQ(got.data.size(), want[i].data.size());
    for (std::size_t j = 0; j < got.data.size(); ++j) EXPECT_NEAR(got.data[j], want[i].data[j], 1e-13);
  }
  const auto container = sh_volume_container(coeffs1);
  EXPECT_EQ(container.channels, 28u);
  EXPECT_EQ(container.b_value, 0.0);
  EXPECT_THROW(container.scheme(), DomainError);
}

TEST(Psic, MapAndSliceExport) {
  const auto dir = psic::testing::scratch_dir("io_psic");
  const Dims dims{4, 3, 5};
  Mask mask(dims);
  mask.data[mask.voxel_index(1, 1, 1)] = 1;
  mask.data[mask.voxel_index(2, 1, 3)] = 1;
  const std::vector<Voxel> voxels = {{1, 1, 1}, {2, 1, 3}};
  const auto map = psic_map(dims, voxels, std::vector<double>{0.25, 1.0});
  EXPECT_EQ(map.channels, 1u);
  EXPECT_EQ(map.data[map.voxel_index(1, 1, 1)], 0.25f);
  EXPECT_EQ(map.data[map.voxel_index(0, 0, 0)], 0.0f);
  EXPECT_THROW(psic_map(dims, voxels, std::vector<double>{0.25, 1.5}), DomainError);

  const auto slices = export_psic(dir / "psic.dcb", map, mask);
  ASSERT_EQ(slices.size(), 2u);
  EXPECT_EQ(slices[0].filename(), "psic_z001.pgm");
  EXPECT_EQ(slices[1].filename(), "psic_z003.pgm");
  EXPECT_EQ(read_volume(dir / "psic.dcb"), map);
  const auto pgm = read_file(slices[0]);
  const std::string header = "P5\n4 3\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 12);
  // Pixel (x, y) sits at row y, column x.
  EXPECT_EQ(pgm[header.size() + 1 * 4 + 1], 64);  // round(255 * 0.25)
  EXPECT_EQ(pgm[header.size() + 0], 0);
  EXPECT_EQ(read_file(slices[1])[header.size() + 1 * 4 + 2], 255);
  fs::remove_all(dir);
}

TEST(ModelFile, RoundTripAndValidation) {
  ModelFile m;
  m.config.n_max = 2;
  m.config.seed = 9;
  m.seed = 77;
  m.sh_regularization = 0.01;
  m.fingerprint = "0123456789abcdef";
  const auto params = dcnn::init_params(m.config, 3);
  m.params.assign(params.values().begin(), params.values().end());
  const auto bytes = encode_model(m);
  EXPECT_EQ(std::memcmp(bytes.data(), "PSCM", 4), 0);
  EXPECT_EQ(decode_model(bytes), m);
  EXPECT_EQ(encode_model(decode_model(bytes)), bytes);
  const auto net = m.network();
  EXPECT_TRUE(std::equal(net.values().begin(), net.values().end(), params.values().begin()));

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_model(truncated), IoError);
  ModelFile wrong = m;
  wrong.params.pop_back();
  EXPECT_THROW(wrong.network(), ShapeError);
  EXPECT_THROW(decode_model(encode_model(wrong)), Error);
}

TEST(ModelFile, FingerprintTracksDataAndSettings) {
  training::LabeledDcSet set;
  set.push_back(sh::ShCube(1, 2), 0, "a");
  set.push_back(sh::ShCube(1, 2), 1, "b");
  dcnn::NetworkConfig net;
  net.n_max = 2;
  training::TrainingConfig cfg;
  const auto f = training_fingerprint(set, net, cfg);
  EXPECT_EQ(f.size(), 16u);
  EXPECT_EQ(training_fingerprint(set, net, cfg), f);
  set.labels[0] = 1;
  EXPECT_NE(training_fingerprint(set, net, cfg), f);
  set.labels[0] = 0;
  cfg.epochs = 3;
  EXPECT_NE(training_fingerprint(set, net, cfg), f);
}

TEST(Manifest, RoundTripWithRelativePaths) {
  const auto dir = psic::testing::scratch_dir("io_manifest");
  CohortManifest m;
  m.subjects.push_back({"s1", 0, dir / "s1.dcb", {{"hipp", dir / "masks" / "s1_hipp.dcb"}}});
  m.subjects.push_back({"s2", 1, dir / "s2.dcb", {{"hipp", dir / "masks" / "s2_hipp.dcb"}, {"cc", dir / "cc.dcb"}}});
  m.provenance["generator"] = "test";
  write_manifest(dir / "manifest.json", m);
  const auto bytes = read_file(dir / "manifest.json");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_NE(text.find("\"masks/s1_hipp.dcb\""), std::string::npos);
  EXPECT_NE(text.find("\"group\": \"AD\""), std::string::npos);
  const auto back = read_manifest(dir / "manifest.json");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.roi_names(), std::vector<std::string>{"hipp"});
  EXPECT_EQ(back.labels(), (std::vector<int>{0, 1}));

  write_text_atomic(dir / "dup.json",
                    R"({"format":"psic-cohort","version":1,"subjects":[{"id":"a","label":0,"volume":"a.dcb","masks":{}},)"
                    R"({"id":"a","label":1,"volume":"b.dcb","masks":{}}]})");
  EXPECT_THROW(read_manifest(dir / "dup.json"), IoError);
  write_text_atomic(dir / "label.json",
                    R"({"format":"psic-cohort","version":1,"subjects":[{"id":"a","label":2,"volume":"a.dcb","masks":{}}]})");
  EXPECT_THROW(read_manifest(dir / "label.json"), IoError);
  write_text_atomic(dir / "format.json", R"({"format":"other","version":1,"subjects":[]})");
  EXPECT_THROW(read_manifest(dir / "format.json"), IoError);
  fs::remove_all(dir);
}
