#pragma once

#include <harmonic/error.hpp>
#include <harmonic/tensor.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

namespace harmonic {

/// Images in [0, 1] with integer labels and one optional scalar attribute per
/// sample (brightness offset for synthetic data, lighting condition for NORB).
struct Dataset {
  Tensor<float> images;  // [N, C, H, W]
  std::vector<int> labels;
  std::vector<double> attribute;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
      throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for images " + shape_str(images.shape()));
    }
    if (!attribute.empty() && attribute.size() != labels.size()) throw ShapeError("dataset: attribute count mismatch");
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw ShapeError("dataset: label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
      }
    }
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw ShapeError("dataset: empty subset");
    Dataset d;
    d.classes = classes;
    Shape s = images.shape();
    const std::size_t per = images.size() / s[0];
    s[0] = idx.size();
    d.images = Tensor<float>(s);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.data() + idx[i] * per, per, d.images.data() + i * per);
      d.labels.push_back(labels[idx[i]]);
      if (!attribute.empty()) d.attribute.push_back(attribute[idx[i]]);
    }
    return d;
  }

  /// Images of the listed samples as one batch in the requested precision.
  template <Real T>
  Tensor<T> batch(const std::vector<std::size_t>& idx) const {
    Shape s = images.shape();
    const std::size_t per = images.size() / s[0];
    s[0] = idx.size();
    Tensor<T> out(s);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t e = 0; e < per; ++e) out[i * per + e] = static_cast<T>(images[idx[i] * per + e]);
    return out;
  }
};

// ---- synthetic shapes -----------------------------------------------------

enum class ShapeFamily { disk, square, triangle, cross, ring };

struct SynthOptions {
  std::size_t per_class = 100;
  std::size_t size = 32;
  std::size_t channels = 1;
  double brightness_lo = 0.0, brightness_hi = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Membership test in shape-local coordinates scaled so the shape radius is 1.
inline bool inside(ShapeFamily f, double x, double y) {
  const double r = std::hypot(x, y);
  switch (f) {
    case ShapeFamily::disk: return r <= 1.0;
    case ShapeFamily::square: return std::abs(x) <= 0.75 && std::abs(y) <= 0.75;
    case ShapeFamily::triangle: {
      // Equilateral triangle with circumradius 1, apex up.
      const double s3 = std::sqrt(3.0);
      return y >= -0.5 && s3 * x + y <= 1.0 && -s3 * x + y <= 1.0;
    }
    case ShapeFamily::cross: return (std::abs(x) <= 0.28 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.28 && std::abs(x) <= 1.0);
    case ShapeFamily::ring: return r <= 1.0 && r >= 0.55;
  }
  return false;
}

}  // namespace detail

/// Five shape families with random position, size, rotation and intensity on a
/// dark background, plus a per-image additive brightness offset drawn from
/// [brightness_lo, brightness_hi]. Base pixel values stay within [0, 0.5] so an
/// offset up to 0.5 never clips. Classes are exactly balanced; sample order is
/// shuffled. Each pixel averages a 4x4 grid of sub-samples.
inline Dataset synth_shapes(const SynthOptions& o) {
  if (o.size < 16) throw InvalidArgument("synth_shapes: size must be at least 16");
  if (o.per_class == 0 || o.channels == 0) throw InvalidArgument("synth_shapes: empty dataset");
  if (o.brightness_lo > o.brightness_hi) throw InvalidArgument("synth_shapes: brightness range reversed");
  constexpr std::size_t classes = 5, sub = 4;
  const std::size_t n = classes * o.per_class, sz = o.size;
  Rng rng(o.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  Dataset d;
  d.classes = classes;
  d.images = Tensor<float>({n, o.channels, sz, sz});
  d.labels.resize(n);
  d.attribute.resize(n);
  const double dsz = static_cast<double>(sz);
  for (std::size_t slot = 0; slot < n; ++slot) {
    const auto family = static_cast<ShapeFamily>(order[slot] % classes);
    d.labels[slot] = static_cast<int>(family);
    const double radius = rng.uniform(0.22, 0.36) * dsz;
    const double cx = rng.uniform(radius + 1.0, dsz - radius - 1.0);
    const double cy = rng.uniform(radius + 1.0, dsz - radius - 1.0);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double bg = rng.uniform(0.0, 0.1), fg = rng.uniform(0.3, 0.45);
    const double offset = o.brightness_lo == o.brightness_hi ? o.brightness_lo : rng.uniform(o.brightness_lo, o.brightness_hi);
    d.attribute[slot] = offset;
    for (std::size_t yy = 0; yy < sz; ++yy) {
      for (std::size_t xx = 0; xx < sz; ++xx) {
        std::size_t hits = 0;
        for (std::size_t sy = 0; sy < sub; ++sy)
          for (std::size_t sx = 0; sx < sub; ++sx) {
            const double px = static_cast<double>(xx) + (static_cast<double>(sx) + 0.5) / sub - cx;
            const double py = static_cast<double>(yy) + (static_cast<double>(sy) + 0.5) / sub - cy;
            const double lx = (ct * px + st * py) / radius, ly = (-st * px + ct * py) / radius;
            hits += detail::inside(family, lx, ly);
          }
        const double cover = static_cast<double>(hits) / (sub * sub);
        const double noise = rng.uniform(0.0, 0.04);
        const double v = bg + cover * (fg - bg) + noise + offset;
        for (std::size_t c = 0; c < o.channels; ++c) {
          d.images.at(slot, c, yy, xx) = static_cast<float>(v);
        }
      }
    }
  }
  return d;
}

// ---- augmentation -----------------------------------------------------------

struct AugmentOptions {
  std::size_t pad = 0;  // zero padding before a random crop back to the input size
  bool flip = false;
  double brightness = 0.0;  // additive offset drawn from [-b, b]
  double contrast = 0.0;    // scale around the image mean drawn from [1-c, 1+c]
};

struct AugmentRecord {
  std::size_t dx = 0, dy = 0;  // crop origin inside the padded image
  bool flipped = false;
  double brightness = 0.0, contrast = 1.0;
};

/// Per-sample independent transforms; pixels are clamped to [0, 1] at the end.
inline Tensor<float> augment(const Tensor<float>& batch, const AugmentOptions& o, Rng& rng,
                             std::vector<AugmentRecord>* records = nullptr) {
  if (batch.rank() != 4) throw ShapeError("augment: expects [N, C, H, W], got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor<float> out(batch.shape());
  if (records) records->assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    AugmentRecord r;
    if (o.pad > 0) {
      r.dx = rng.index(2 * o.pad + 1);
      r.dy = rng.index(2 * o.pad + 1);
    } else {
      r.dx = r.dy = 0;
    }
    r.flipped = o.flip && rng.uniform() < 0.5;
    r.brightness = o.brightness > 0 ? rng.uniform(-o.brightness, o.brightness) : 0.0;
    r.contrast = o.contrast > 0 ? 1.0 + rng.uniform(-o.contrast, o.contrast) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Sample (y, x) of the output reads padded coordinate (y + dy, x + dx).
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto sy = static_cast<std::ptrdiff_t>(y + r.dy) - static_cast<std::ptrdiff_t>(o.pad);
          auto sx = static_cast<std::ptrdiff_t>(x + r.dx) - static_cast<std::ptrdiff_t>(o.pad);
          if (r.flipped) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
          float v = 0.0f;
          if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) {
            v = batch.at(i, ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
          out.at(i, ch, y, x) = v;
        }
      if (r.contrast != 1.0 || r.brightness != 0.0) {
        float* plane = out.data() + (i * c + ch) * h * w;
        double mean = 0.0;
        for (std::size_t e = 0; e < h * w; ++e) mean += plane[e];
        mean /= static_cast<double>(h * w);
        for (std::size_t e = 0; e < h * w; ++e) {
          plane[e] = static_cast<float>(mean + (plane[e] - mean) * r.contrast + r.brightness);
        }
      }
    }
    float* sample = out.data() + i * c * h * w;
    for (std::size_t e = 0; e < c * h * w; ++e) sample[e] = std::clamp(sample[e], 0.0f, 1.0f);
    if (records) (*records)[i] = r;
  }
  return out;
}

// ---- small NORB ---------------------------------------------------------------

/// Binary-matrix file errors, each distinct so callers can tell them apart.
struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};
struct ExtentMismatchError : FormatError {
  using FormatError::FormatError;
};

namespace norb {

inline constexpr std::uint32_t kMagicByte = 0x1E3D4C55;
inline constexpr std::uint32_t kMagicInt = 0x1E3D4C54;

struct Matrix {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::vector<char> payload;
};

inline std::uint32_t read_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline void put_le32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

/// Header: magic, ndim, then max(3, ndim) extents, all 32-bit little-endian.
inline Matrix parse(const std::vector<char>& bytes, const std::string& what, std::uint32_t expect_magic) {
  auto need = [&](std::size_t n) {
    if (bytes.size() < n) {
      throw TruncatedError(what + ": truncated header, expected at least " + std::to_string(n) + " bytes, file has " +
                           std::to_string(bytes.size()));
    }
  };
  need(8);
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  Matrix m;
  m.magic = read_le32(u);
  if (m.magic != expect_magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08X (expected 0x%08X)", m.magic, expect_magic);
    throw BadMagicError(what + ": " + buf);
  }
  const std::uint32_t ndim = read_le32(u + 4);
  if (ndim == 0 || ndim > 8) throw ExtentMismatchError(what + ": implausible dimension count " + std::to_string(ndim));
  const std::size_t stored = std::max<std::uint32_t>(3, ndim);
  const std::size_t header = 8 + 4 * stored;
  need(header);
  for (std::size_t i = 0; i < ndim; ++i) m.dims.push_back(read_le32(u + 8 + 4 * i));
  const std::size_t elem = m.magic == kMagicByte ? 1 : 4;
  std::size_t count = 1;
  for (auto d : m.dims) count *= d;
  const std::size_t expected = count * elem, available = bytes.size() - header;
  if (available < expected) {
    throw TruncatedError(what + ": truncated payload, expected " + std::to_string(expected) + " bytes, available " +
                         std::to_string(available));
  }
  m.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                   bytes.begin() + static_cast<std::ptrdiff_t>(header + expected));
  return m;
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Encodes a matrix in the same format (used by tests and tools).
inline std::string encode(std::uint32_t magic, const std::vector<std::size_t>& dims, const std::string& payload) {
  std::string out;
  put_le32(out, magic);
  put_le32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t i = 0; i < std::max<std::size_t>(3, dims.size()); ++i) {
    put_le32(out, i < dims.size() ? static_cast<std::uint32_t>(dims[i]) : 1u);
  }
  return out + payload;
}

}  // namespace norb

/// Reads a small NORB split: "-dat" images [N, 2, 96, 96] (bytes), "-cat"
/// labels [N] (int32) and "-info" [N, 4] (int32: instance, elevation, azimuth,
/// lighting). Lighting becomes the sample attribute.
inline Dataset load_small_norb(const std::filesystem::path& dat, const std::filesystem::path& cat,
                               const std::filesystem::path& info) {
  const auto m = norb::parse(norb::read_file(dat), dat.filename().string(), norb::kMagicByte);
  const auto l = norb::parse(norb::read_file(cat), cat.filename().string(), norb::kMagicInt);
  const auto a = norb::parse(norb::read_file(info), info.filename().string(), norb::kMagicInt);
  if (m.dims.size() != 4) throw ExtentMismatchError("image matrix must be 4-D, got " + std::to_string(m.dims.size()));
  const std::size_t n = m.dims[0];
  if (l.dims.size() != 1 || l.dims[0] != n) {
    throw ExtentMismatchError("label count " + std::to_string(l.dims.empty() ? 0 : l.dims[0]) + " != image count " +
                              std::to_string(n));
  }
  if (a.dims.size() != 2 || a.dims[0] != n || a.dims[1] != 4) {
    throw ExtentMismatchError("info matrix must be [" + std::to_string(n) + ", 4]");
  }
  Dataset d;
  d.classes = 5;
  d.images = Tensor<float>({n, m.dims[1], m.dims[2], m.dims[3]});
  const auto* px = reinterpret_cast<const unsigned char*>(m.payload.data());
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(px[i]) / 255.0f;
  const auto* lb = reinterpret_cast<const unsigned char*>(l.payload.data());
  const auto* inf = reinterpret_cast<const unsigned char*>(a.payload.data());
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<int>(norb::read_le32(lb + 4 * i)));
    d.attribute.push_back(static_cast<double>(norb::read_le32(inf + 4 * (4 * i + 3))));
  }
  d.validate();
  return d;
}

/// Finds the official file triple for a split ("training" or "testing") in dir.
inline std::array<std::filesystem::path, 3> small_norb_files(const std::filesystem::path& dir, std::string_view split) {
  const std::string stem = std::string("smallnorb-5x") + (split == "training" ? "46789" : "01235") + "x9x18x6x2x96x96-" +
                           std::string(split);
  return {dir / (stem + "-dat.mat"), dir / (stem + "-cat.mat"), dir / (stem + "-info.mat")};
}

}  // namespace harmonic
