#include <harmonic/container.hpp>
#include <harmonic/train.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace harmonic;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "harmonic_test_data_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string le32s(const std::vector<std::uint32_t>& v) {
  std::string out;
  for (auto x : v) norb::put_le32(out, x);
  return out;
}

// Writes a tiny NORB-format triple with n samples of size x size pixels.
std::array<fs::path, 3> fake_norb(const std::string& tag, std::size_t n, std::size_t size) {
  std::string px;
  for (std::size_t i = 0; i < n * 2 * size * size; ++i) px.push_back(static_cast<char>(i % 256));
  std::vector<std::uint32_t> labels, info;
  for (std::size_t i = 0; i < n; ++i) {
    labels.push_back(static_cast<std::uint32_t>(i % 5));
    for (std::uint32_t c : {7u, 4u, 10u, static_cast<std::uint32_t>(i % 6)}) info.push_back(c);
  }
  std::array<fs::path, 3> p{scratch(tag + "-dat.mat"), scratch(tag + "-cat.mat"), scratch(tag + "-info.mat")};
  write_bytes(p[0], norb::encode(norb::kMagicByte, {n, 2, size, size}, px));
  write_bytes(p[1], norb::encode(norb::kMagicInt, {n}, le32s(labels)));
  write_bytes(p[2], norb::encode(norb::kMagicInt, {n, 4}, le32s(info)));
  return p;
}

template <Real T>
void expect_bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(std::bit_cast<detail::Bits<T>>(a[i]), std::bit_cast<detail::Bits<T>>(b[i]));
}

}  // namespace

TEST(SynthShapes, DeterministicBalancedAndBounded) {
  SynthOptions o;
  o.per_class = 12;
  o.size = 24;
  o.seed = 3;
  const auto a = synth_shapes(o), b = synth_shapes(o);
  ASSERT_EQ(a.size(), 60u);
  for (std::size_t i = 0; i < a.images.size(); ++i) ASSERT_EQ(a.images[i], b.images[i]);
  EXPECT_EQ(a.labels, b.labels);
  std::vector<int> count(5, 0);
  for (int l : a.labels) count[static_cast<std::size_t>(l)]++;
  for (int c : count) EXPECT_EQ(c, 12);
  for (float v : a.images.span()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 0.5f);
  }
  for (double v : a.attribute) EXPECT_EQ(v, 0.0);
  o.seed = 4;
  EXPECT_NE(synth_shapes(o).labels, a.labels);
}

TEST(SynthShapes, BrightnessOffsetIsAddedWithoutClipping) {
  SynthOptions o;
  o.per_class = 4;
  o.size = 16;
  const auto base = synth_shapes(o);
  o.brightness_lo = o.brightness_hi = 0.4;
  const auto lit = synth_shapes(o);
  for (std::size_t i = 0; i < base.images.size(); ++i) EXPECT_NEAR(lit.images[i] - base.images[i], 0.4f, 1e-6f);
  for (double v : lit.attribute) EXPECT_EQ(v, 0.4);
  o.brightness_lo = 0.2;
  o.brightness_hi = 0.1;
  EXPECT_THROW(synth_shapes(o), InvalidArgument);
}

TEST(Dataset, SubsetAndValidate) {
  SynthOptions o;
  o.per_class = 2;
  o.size = 16;
  auto d = synth_shapes(o);
  const auto s = d.subset({3, 1});
  EXPECT_EQ(s.labels, (std::vector<int>{d.labels[3], d.labels[1]}));
  EXPECT_EQ(s.images.at(1, 0, 5, 7), d.images.at(1, 0, 5, 7));
  EXPECT_THROW(d.subset({}), ShapeError);
  d.labels[0] = 9;
  EXPECT_THROW(d.validate(), ShapeError);
}

TEST(Augment, DisabledIsIdentity) {
  Rng rng(1);
  const auto x = rng.uniform_tensor<float>({3, 2, 8, 8}, 0.0, 1.0);
  const auto y = augment(x, {}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Augment, TranslationMatchesRecordedShift) {
  Rng rng(2);
  const auto x = rng.uniform_tensor<float>({6, 1, 8, 8}, 0.0, 1.0);
  std::vector<AugmentRecord> rec;
  AugmentOptions o;
  o.pad = 2;
  o.flip = true;
  const auto y = augment(x, o, rng, &rec);
  ASSERT_EQ(rec.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) {
        const long sy = static_cast<long>(r + rec[i].dy) - 2;
        long sx = static_cast<long>(c + rec[i].dx) - 2;
        if (rec[i].flipped) sx = 7 - sx;
        const float want = (sy < 0 || sy > 7 || sx < 0 || sx > 7) ? 0.0f : x.at(i, 0, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        ASSERT_EQ(y.at(i, 0, r, c), want);
      }
  }
}

TEST(Augment, BrightnessShiftsMeanAndClamps) {
  Rng rng(3);
  Tensor<float> x({4, 1, 4, 4});
  x.fill(0.5f);
  std::vector<AugmentRecord> rec;
  AugmentOptions o;
  o.brightness = 0.3;
  const auto y = augment(x, o, rng, &rec);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LE(std::abs(rec[i].brightness), 0.3);
    EXPECT_NEAR(y.at(i, 0, 2, 2), 0.5 + rec[i].brightness, 1e-6);
  }
  x.fill(0.95f);
  AugmentOptions big;
  big.brightness = 5.0;
  const auto clipped = augment(x, big, rng);
  for (float v : clipped.span()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Norb, LoadsSyntheticTriple) {
  const auto p = fake_norb("ok", 7, 6);
  const auto d = load_small_norb(p[0], p[1], p[2]);
  EXPECT_EQ(d.images.shape(), (Shape{7, 2, 6, 6}));
  EXPECT_EQ(d.labels[6], 1);
  EXPECT_EQ(d.attribute[5], 5.0);
  EXPECT_FLOAT_EQ(d.images[10], 10.0f / 255.0f);
}

TEST(Norb, BadMagicIsReportedWithBothValues) {
  auto p = fake_norb("magic", 2, 4);
  auto bytes = norb::read_file(p[0]);
  bytes[0] = 0x00;
  try {
    norb::parse(bytes, "dat", norb::kMagicByte);
    FAIL();
  } catch (const BadMagicError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0x1E3D4C00"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0x1E3D4C55"), std::string::npos) << msg;
  }
}

TEST(Norb, TruncationAndExtentErrorsAreDistinct) {
  const auto p = fake_norb("trunc", 3, 4);
  auto bytes = norb::read_file(p[0]);
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(norb::parse(bytes, "dat", norb::kMagicByte), TruncatedError);
  bytes.resize(10);
  EXPECT_THROW(norb::parse(bytes, "dat", norb::kMagicByte), TruncatedError);

  // Label file claiming 4 samples against 3 images.
  write_bytes(p[1], norb::encode(norb::kMagicInt, {4}, le32s({0, 1, 2, 3})));
  EXPECT_THROW(load_small_norb(p[0], p[1], p[2]), ExtentMismatchError);
  EXPECT_THROW(load_small_norb(scratch("missing-dat.mat"), p[1], p[2]), FormatError);
}

TEST(Norb, OfficialFileNames) {
  const auto f = small_norb_files("/d", "testing");
  EXPECT_EQ(f[0].filename().string(), "smallnorb-5x01235x9x18x6x2x96x96-testing-dat.mat");
}

TEST(Container, RoundTripIsBitwiseForBothPrecisions) {
  Rng rng(5);
  Container c;
  c.tensors.emplace("a", rng.normal_tensor<float>({3, 5}));
  c.tensors.emplace("b", rng.normal_tensor<double>({7}));
  c.tensors.emplace("c.scalar", Tensor<double>({1}, {-0.0}));
  c.meta["note"] = "x";
  const auto bytes = encode_container(c);
  EXPECT_EQ(bytes.substr(0, 8), "HARMNET1");
  const auto back = decode_container(bytes);
  expect_bitwise_equal(std::get<Tensor<float>>(back.tensors.at("a")), std::get<Tensor<float>>(c.tensors.at("a")));
  expect_bitwise_equal(std::get<Tensor<double>>(back.tensors.at("b")), std::get<Tensor<double>>(c.tensors.at("b")));
  expect_bitwise_equal(std::get<Tensor<double>>(back.tensors.at("c.scalar")),
                       std::get<Tensor<double>>(c.tensors.at("c.scalar")));
  EXPECT_EQ(back.meta["note"], "x");
}

TEST(Container, PayloadIsAlignedAndLittleEndian) {
  Container c;
  c.tensors.emplace("one", Tensor<float>({1}, {1.0f}));
  c.tensors.emplace("two", Tensor<float>({1}, {2.0f}));
  const auto bytes = encode_container(c);
  const auto len = detail::get_le<std::uint32_t>(bytes.data() + 8);
  const auto manifest = nlohmann::json::parse(bytes.substr(12, len));
  const std::size_t base = (12 + len + 63) / 64 * 64;
  for (const auto& e : manifest["tensors"]) {
    const std::size_t off = e["offset"];
    EXPECT_EQ(off % 64, 0u);
    const auto bits = detail::get_le<std::uint32_t>(bytes.data() + base + off);
    EXPECT_EQ(bits, std::bit_cast<std::uint32_t>(e["name"] == "one" ? 1.0f : 2.0f));
  }
}

TEST(Container, CorruptionIsReported) {
  Container c;
  c.tensors.emplace("w", Tensor<float>({4}, {1, 2, 3, 4}));
  const auto good = encode_container(c);

  auto bad = good;
  bad.replace(0, 8, "NOTHARM!");
  try {
    decode_container(bad, "m.hnet");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("NOTHARM!"), std::string::npos);
  }
  EXPECT_THROW(decode_container(good.substr(0, good.size() - 4)), FormatError);
  EXPECT_THROW(decode_container(good.substr(0, 6)), FormatError);

  auto lying = good;
  const auto pos = lying.find("\"nbytes\":16");
  ASSERT_NE(pos, std::string::npos);
  lying.replace(pos, 11, "\"nbytes\":12");
  EXPECT_THROW(decode_container(lying), FormatError);
}

TEST(Container, SaveLoadModelPreservesEvaluation) {
  PresetOptions o;
  o.scale = 0.25;
  o.in_channels = 1;
  o.input_size = 16;
  o.dropout = 0.0;
  const auto spec = toy_preset("toy-harm", o);
  Rng rng(8);
  const auto params = init_params<float>(spec, rng);
  const auto path = scratch("model.hnet");
  save_model(path, spec, params);

  const auto loaded = load_model<float>(path);
  EXPECT_EQ(to_json(loaded.spec), to_json(spec));
  for (const auto& [name, t] : params) expect_bitwise_equal(loaded.params.at(name), t);

  SynthOptions so;
  so.per_class = 6;
  so.size = 16;
  const auto data = synth_shapes(so);
  Model<float> a(spec, params), b(loaded.spec, loaded.params);
  const auto ra = evaluate(a, data), rb = evaluate(b, data);
  EXPECT_EQ(ra.accuracy, rb.accuracy);
  EXPECT_EQ(ra.loss, rb.loss);
  EXPECT_EQ(stored_dtype(load_container(path)), "f32");

  const auto as_double = load_model<double>(path);
  EXPECT_EQ(as_double.params.at("0.weight")[3], static_cast<double>(params.at("0.weight")[3]));
}

TEST(Container, ModelWithMismatchedTensorsIsRejected) {
  PresetOptions o;
  o.scale = 0.25;
  o.in_channels = 1;
  o.input_size = 16;
  const auto spec = toy_preset("toy-cnn", o);
  Rng rng(1);
  auto params = init_params<float>(spec, rng);
  Container c;
  c.meta["spec"] = to_json(spec);
  for (const auto& [name, t] : params) c.tensors.emplace(name, t);
  c.tensors.erase("0.weight");
  c.tensors.emplace("0.weight", Tensor<float>({1}));
  const auto path = scratch("broken.hnet");
  save_container(path, c);
  EXPECT_THROW(load_model<float>(path), FormatError);
}
