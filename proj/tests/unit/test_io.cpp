#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "lightplane/io.hpp"

using namespace lightplane;

TEST(Io, GridRoundTrip) {
  for (auto kind : {StructureKind::voxel, StructureKind::triplane}) {
    HashStructure<float> g(GridShape{kind, 3, 4, 5, 2});
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : g.data()) v = u(rng);
    const auto bytes = io::encode_grid(g);
    EXPECT_EQ(bytes.substr(0, 4), "LPG1");
    EXPECT_EQ(bytes.size(), 24 + g.size() * 4);
    const auto back = io::decode_grid(bytes);
    EXPECT_EQ(back.shape(), g.shape());
    EXPECT_TRUE(std::equal(g.data().begin(), g.data().end(), back.data().begin()));
  }
}

TEST(Io, GridRejectsCorruption) {
  const auto bytes = io::encode_grid(HashStructure<float>::voxel(2, 2, 2, 1));
  EXPECT_THROW(io::decode_grid("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(io::decode_grid(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(io::decode_grid(bytes.substr(0, 10)), FormatError);
  auto bad_kind = bytes;
  bad_kind[4] = 7;
  EXPECT_THROW(io::decode_grid(bad_kind), FormatError);
}

TEST(Io, MlpRecordsRoundTrip) {
  auto a = init_mlp<float>(sigma_mlp_shape(4, 8, 2), 1);
  auto b = init_mlp<float>(feature_mlp_shape(7, 3, 8, 3), 2);
  const auto back = io::decode_mlps(io::encode_mlps({a, b}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].layers[1].weight, a.layers[1].weight);
  EXPECT_EQ(back[1].layers[2].bias, b.layers[2].bias);
  EXPECT_EQ(back[0].output_activation, Activation::softplus);
  EXPECT_EQ(back[1].output_activation, Activation::sigmoid);
  EXPECT_EQ(back[1].hidden_activation, Activation::relu);
}

TEST(Io, MlpRejectsBrokenChains) {
  auto a = init_mlp<float>(sigma_mlp_shape(4, 8, 2), 1);
  a.layers[1].in = 5;
  a.layers[1].weight.resize(5);
  EXPECT_THROW(io::decode_mlps(io::encode_mlps({a})), FormatError);
  EXPECT_THROW(io::decode_mlps("LPM1"), FormatError);
  EXPECT_THROW(io::decode_mlps(""), FormatError);
}

TEST(Io, LpiRoundTripAndPpm) {
  io::Image img(3, 2, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i) / 17.0f - 0.1f;
  const auto back = io::decode_lpi(io::encode_lpi(img));
  EXPECT_EQ(back.data, img.data);
  const auto ppm = io::encode_ppm(img);
  const std::string header = "P6\n3 2\n255\n";
  ASSERT_EQ(ppm.size(), header.size() + 18);
  EXPECT_EQ(ppm.substr(0, header.size()), header);
  // Pixel (0,0) red is clamped from -0.1.
  EXPECT_EQ((unsigned char)ppm[header.size()], 0);
  EXPECT_THROW(io::encode_ppm(io::Image(2, 2, 4)), DimensionError);
}

TEST(Io, ImageRayConversionIsInverse) {
  std::vector<float> rays(4 * 3 * 2);
  for (std::size_t i = 0; i < rays.size(); ++i) rays[i] = float(i);
  const auto img = io::image_from_rays<float>(rays, 4, 3, 2);
  EXPECT_EQ(img.at(1, 0, 0), 1.0f);       // ray 0, channel 1
  EXPECT_EQ(img.at(0, 1, 2), 2.0f * 6);   // ray 6, channel 0
  EXPECT_EQ(io::rays_from_image(img), rays);
  EXPECT_THROW(io::image_from_rays<float>(rays, 5, 3, 2), DimensionError);
}

TEST(Io, CameraJsonRoundTrip) {
  const auto cam = look_at({1, 2, 3}, {0, 0, 0}, {0, 1, 0}, 8, 6, 5.0, 0.5, 6.0);
  const auto back = io::camera_from_json(io::camera_to_json(cam));
  EXPECT_EQ(back.rotation, cam.rotation);
  EXPECT_EQ(back.center, cam.center);
  EXPECT_EQ(back.width, 8);
  EXPECT_THROW(io::camera_from_json("{"), FormatError);
  EXPECT_THROW(io::camera_from_json(R"({"fx": 1})"), FormatError);
}

TEST(Io, AtomicWriteLeavesNoTemporary) {
  const auto dir = std::filesystem::temp_directory_path() / "lightplane_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "x.bin";
  io::write_file_atomic(path, "hello");
  EXPECT_EQ(io::read_file(path), "hello");
  io::write_file_atomic(path, "bye");
  EXPECT_EQ(io::read_file(path), "bye");
  int n = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1);
  EXPECT_THROW(io::read_file(dir / "missing"), FormatError);
  std::filesystem::remove_all(dir);
}
