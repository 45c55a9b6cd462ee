#pragma once

#include <harmonic/model_spec.hpp>
#include <harmonic/params.hpp>

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>

namespace harmonic {

/// "HARMNET1" | u32 LE manifest length | JSON manifest | zero fill to a
/// 64-byte boundary | little-endian payload. Tensor offsets in the manifest
/// are relative to the payload start, each 64-byte aligned.
inline constexpr char kContainerMagic[8] = {'H', 'A', 'R', 'M', 'N', 'E', 'T', '1'};
inline constexpr std::size_t kContainerAlign = 64;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;
using TensorMap = std::map<std::string, AnyTensor>;

struct Container {
  TensorMap tensors;
  nlohmann::json meta = nlohmann::json::object();  // free-form, e.g. the model spec
};

namespace detail {

inline std::size_t align_up(std::size_t v) { return (v + kContainerAlign - 1) / kContainerAlign * kContainerAlign; }

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

template <Real T>
using Bits = std::conditional_t<std::same_as<T, float>, std::uint32_t, std::uint64_t>;

}  // namespace detail

inline std::string encode_container(const Container& c) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, any] : c.tensors) {
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          const std::size_t nbytes = t.size() * sizeof(T);
          index.push_back({{"name", name}, {"dtype", std::string(dtype_name<T>())}, {"shape", t.shape()},
                           {"offset", offset}, {"nbytes", nbytes}});
          offset = detail::align_up(offset + nbytes);
        },
        any);
  }
  nlohmann::json manifest{{"format", "HARMNET1"}, {"version", 1}, {"meta", c.meta}, {"tensors", index}};
  const std::string text = manifest.dump();
  std::string out(kContainerMagic, 8);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.resize(detail::align_up(out.size()), '\0');
  const std::size_t base = out.size();
  for (const auto& [name, any] : c.tensors) {
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          out.resize(detail::align_up(out.size() - base) + base, '\0');
          for (T v : t.span()) detail::put_le(out, std::bit_cast<detail::Bits<T>>(v));
        },
        any);
  }
  return out;
}

inline Container decode_container(const std::string& bytes, const std::string& what = "container") {
  if (bytes.size() < 12) throw FormatError(what + ": file too short for a HARMNET1 header");
  if (std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    std::string tag;
    for (std::size_t i = 0; i < 8; ++i) {
      const char ch = bytes[i];
      tag += (ch >= 32 && ch < 127) ? ch : '?';
    }
    throw FormatError(what + ": magic tag '" + tag + "' is not 'HARMNET1'");
  }
  const auto len = detail::get_le<std::uint32_t>(bytes.data() + 8);
  if (12 + static_cast<std::size_t>(len) > bytes.size()) throw FormatError(what + ": manifest runs past end of file");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": manifest is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "HARMNET1" || manifest.value("version", 0) != 1) {
    throw FormatError(what + ": unsupported manifest format/version");
  }
  const std::size_t base = detail::align_up(12 + len);
  Container c;
  c.meta = manifest.value("meta", nlohmann::json::object());
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  try {
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto dtype = e.at("dtype").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      const std::size_t elem = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (elem == 0) throw FormatError(what + ": tensor '" + name + "' has unknown dtype '" + dtype + "'");
      if (shape_numel(shape) * elem != nbytes) {
        throw FormatError(what + ": tensor '" + name + "' nbytes " + std::to_string(nbytes) + " disagrees with shape " +
                          shape_str(shape));
      }
      if (off % kContainerAlign != 0 || base + off + nbytes > bytes.size()) {
        throw FormatError(what + ": tensor '" + name + "' lies outside the payload");
      }
      for (const auto& [s, n] : spans) {
        if (off < s + n && s < off + nbytes) throw FormatError(what + ": tensor '" + name + "' overlaps another");
      }
      spans.push_back({off, nbytes});
      const char* p = bytes.data() + base + off;
      auto fill = [&]<typename T>(Tensor<T> t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<T>(detail::get_le<detail::Bits<T>>(p + i * sizeof(T)));
        return t;
      };
      if (c.tensors.contains(name)) throw FormatError(what + ": duplicate tensor '" + name + "'");
      if (elem == 4) {
        c.tensors.emplace(name, fill(Tensor<float>(shape)));
      } else {
        c.tensors.emplace(name, fill(Tensor<double>(shape)));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed tensor index: " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = encode_container(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_container(bytes, path.filename().string());
}

template <Real T>
struct SavedModel {
  ModelSpec spec;
  ParamStore<T> params;
};

template <Real T>
void save_model(const std::filesystem::path& path, const ModelSpec& spec, const ParamStore<T>& params) {
  check_params(spec, params);
  Container c;
  c.meta["spec"] = to_json(spec);
  for (const auto& [name, t] : params) c.tensors.emplace(name, t);
  save_container(path, c);
}

/// Loads a model; tensors stored in the other precision are converted.
template <Real T>
SavedModel<T> load_model(const std::filesystem::path& path) {
  Container c = load_container(path);
  if (!c.meta.contains("spec")) throw FormatError(path.filename().string() + ": container holds no model spec");
  SavedModel<T> m;
  m.spec = spec_from_json(c.meta["spec"]);
  for (auto& [name, any] : c.tensors) {
    m.params.emplace(name, std::visit([](const auto& t) { return t.template cast<T>(); }, any));
  }
  try {
    check_params(m.spec, m.params);
  } catch (const ShapeError& e) {
    throw FormatError(path.filename().string() + ": manifest inconsistent with spec: " + e.what());
  }
  return m;
}

/// dtype of the first stored tensor ("f32" when empty).
inline std::string stored_dtype(const Container& c) {
  if (c.tensors.empty()) return "f32";
  return std::holds_alternative<Tensor<double>>(c.tensors.begin()->second) ? "f64" : "f32";
}

}  // namespace harmonic
