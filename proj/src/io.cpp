#include "lightplane/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lightplane::io {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_f32(std::string& s, float v) { put_u32(s, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : s_(bytes) {}

  void expect_magic(const char* magic) {
    need(4);
    if (s_.compare(pos_, 4, magic) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b)
      v |= std::uint32_t(static_cast<unsigned char>(s_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(s_[pos_++]);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (auto& v : out) v = f32();
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw FormatError("unexpected end of file");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

int checked_dim(std::uint32_t v, const char* what) {
  if (v == 0 || v > (1u << 20)) throw FormatError(std::string("implausible ") + what);
  return static_cast<int>(v);
}

Activation checked_activation(std::uint8_t v) {
  if (v > static_cast<std::uint8_t>(Activation::sigmoid)) throw FormatError("unknown activation");
  return static_cast<Activation>(v);
}

}  // namespace

template <class Real>
Image image_from_rays(std::span<const Real> features, int width, int height, int channels) {
  if (features.size() != std::size_t(width) * height * channels)
    throw DimensionError("feature count does not match image size");
  Image img(width, height, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(features[(std::size_t(y) * width + x) * channels + c]);
  return img;
}

std::vector<float> rays_from_image(const Image& img) {
  std::vector<float> out(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out[(std::size_t(y) * img.width + x) * img.channels + c] = img.at(c, y, x);
  return out;
}

std::string encode_grid(const HashStructure<float>& grid) {
  std::string s = "LPG1";
  const auto& sh = grid.shape();
  put_u32(s, static_cast<std::uint32_t>(sh.kind));
  put_u32(s, sh.H);
  put_u32(s, sh.W);
  put_u32(s, sh.D);
  put_u32(s, sh.K);
  for (float v : grid.data()) put_f32(s, v);
  return s;
}

HashStructure<float> decode_grid(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic("LPG1");
  const auto tag = r.u32();
  if (tag > 1) throw FormatError("unknown grid kind");
  GridShape sh;
  sh.kind = static_cast<StructureKind>(tag);
  sh.H = checked_dim(r.u32(), "grid height");
  sh.W = checked_dim(r.u32(), "grid width");
  sh.D = checked_dim(r.u32(), "grid depth");
  sh.K = checked_dim(r.u32(), "grid channels");
  if (bytes.size() != 24 + sh.size() * 4) throw FormatError("grid payload size mismatch");
  HashStructure<float> g(sh);
  r.f32s(g.data());
  return g;
}

std::string encode_mlps(const std::vector<MlpParams<float>>& mlps) {
  std::string s;
  for (const auto& m : mlps) {
    s += "LPM1";
    put_u32(s, static_cast<std::uint32_t>(m.layers.size()));
    for (const auto& l : m.layers) {
      put_u32(s, l.out);
      put_u32(s, l.in);
      for (float w : l.weight) put_f32(s, w);
      for (float b : l.bias) put_f32(s, b);
    }
    s.push_back(static_cast<char>(m.hidden_activation));
    s.push_back(static_cast<char>(m.output_activation));
  }
  return s;
}

std::vector<MlpParams<float>> decode_mlps(const std::string& bytes) {
  Reader r(bytes);
  std::vector<MlpParams<float>> out;
  while (!r.done()) {
    r.expect_magic("LPM1");
    const auto n = r.u32();
    if (n == 0 || n > 64) throw FormatError("implausible layer count");
    MlpParams<float> m;
    for (std::uint32_t i = 0; i < n; ++i) {
      DenseLayer<float> l;
      l.out = checked_dim(r.u32(), "layer width");
      l.in = checked_dim(r.u32(), "layer width");
      l.weight.resize(std::size_t(l.out) * l.in);
      l.bias.resize(l.out);
      r.f32s(l.weight);
      r.f32s(l.bias);
      m.layers.push_back(std::move(l));
    }
    m.hidden_activation = checked_activation(r.u8());
    m.output_activation = checked_activation(r.u8());
    try {
      m.validate();
    } catch (const DimensionError& e) {
      throw FormatError(std::string("invalid MLP record: ") + e.what());
    }
    out.push_back(std::move(m));
  }
  if (out.empty()) throw FormatError("no MLP records");
  return out;
}

std::string encode_lpi(const Image& img) {
  std::string s = "LPI1";
  put_u32(s, img.width);
  put_u32(s, img.height);
  put_u32(s, img.channels);
  for (float v : img.data) put_f32(s, v);
  return s;
}

Image decode_lpi(const std::string& bytes) {
  Reader r(bytes);
  r.expect_magic("LPI1");
  const int w = checked_dim(r.u32(), "image width");
  const int h = checked_dim(r.u32(), "image height");
  const int c = checked_dim(r.u32(), "image channels");
  Image img(w, h, c);
  if (bytes.size() != 16 + img.data.size() * 4) throw FormatError("image payload size mismatch");
  r.f32s(img.data);
  return img;
}

std::string encode_ppm(const Image& img) {
  if (img.channels != 3) throw DimensionError("PPM output needs exactly 3 channels");
  std::string s = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
  return s;
}

Camera camera_from_json(const std::string& text) {
  Camera cam;
  try {
    const auto j = nlohmann::json::parse(text);
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto R = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (R.size() != 9 || t.size() != 3) throw FormatError("camera R needs 9 numbers and t needs 3");
    std::copy(R.begin(), R.end(), cam.rotation.begin());
    cam.center = {t[0], t[1], t[2]};
    cam.near = j.at("near").get<double>();
    cam.far = j.at("far").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("camera json: ") + e.what());
  }
  return cam;
}

std::string camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  j["R"] = std::vector<double>(cam.rotation.begin(), cam.rotation.end());
  j["t"] = {cam.center.x, cam.center.y, cam.center.z};
  j["near"] = cam.near;
  j["far"] = cam.far;
  return j.dump(2);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template Image image_from_rays<float>(std::span<const float>, int, int, int);
template Image image_from_rays<double>(std::span<const double>, int, int, int);

}  // namespace lightplane::io
