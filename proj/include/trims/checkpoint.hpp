#pragma once

// Named-tensor container file.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "TRIMSCKP"
//   u32          format version
//   u64          header length H
//   H bytes      UTF-8 JSON header: {"format_version", "meta", "tensors": [
//                  {"name", "shape", "dtype": "f32"|"f64", "offset", "nbytes"}]}
//   payload      raw little-endian IEEE-754 values; offsets are relative to
//                the first payload byte
//
// Values are stored as their exact bit patterns, so write -> read is lossless.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trims/error.hpp"
#include "trims/tensor.hpp"

namespace trims {

inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'I', 'M', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Ordered name -> tensor map. Insertion order is the serialization order.
template <class T>
class NamedTensors {
 public:
  void add(std::string name, Tensor<T> t) {
    if (index_.contains(name)) throw DataError("duplicate tensor name '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("no tensor named '" + name + "'");
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }
  Tensor<T>& at(const std::string& name) { return tensors_[index_of(name)]; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  template <class U>
  NamedTensors<U> cast() const {
    NamedTensors<U> out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const NamedTensors& a, const NamedTensors& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
struct TensorFile {
  nlohmann::json meta;
  NamedTensors<T> tensors;
};

namespace detail {

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class U>
void put_le(std::string& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<Bits>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(p[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

template <class Stored, class T>
void decode_payload(const unsigned char* p, std::size_t count, std::vector<T>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<T>(get_le<Stored>(p + i * sizeof(Stored)));
}

}  // namespace detail

template <class T>
std::string encode_tensor_file(const nlohmann::json& meta, const NamedTensors<T>& tensors) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors.tensors()[i];
    const std::uint64_t nbytes = t.size() * sizeof(T);
    index.push_back({{"name", tensors.names()[i]},
                     {"shape", t.shape()},
                     {"dtype", detail::dtype_name<T>()},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion}, {"meta", meta}, {"tensors", index}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& t : tensors.tensors())
    for (T v : t.data()) detail::put_le<T>(out, v);
  return out;
}

template <class T>
TensorFile<T> decode_tensor_file(std::span<const unsigned char> bytes, const std::string& origin) {
  auto fail = [&](const std::string& what) { return DataError(origin + ": " + what); };
  constexpr std::size_t fixed = sizeof(kCheckpointMagic) + 4 + 8;
  if (bytes.size() < fixed) throw fail("file too short for a checkpoint header");
  if (!std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw fail("bad magic, not a checkpoint file");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw fail("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto header_len = detail::get_le<std::uint64_t>(bytes.data() + 12);
  if (header_len > bytes.size() - fixed) throw fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + fixed, bytes.begin() + fixed + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  const std::size_t payload_begin = fixed + header_len;
  const std::size_t payload_size = bytes.size() - payload_begin;

  TensorFile<T> file;
  file.meta = header.value("meta", nlohmann::json::object());
  try {
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (width == 0) throw fail("tensor '" + name + "' has unknown dtype '" + dtype + "'");
      if (nbytes != shape_numel(shape) * width) throw fail("tensor '" + name + "' byte count does not match shape");
      if (offset > payload_size || nbytes > payload_size - offset) {
        throw fail("tensor '" + name + "' payload out of bounds");
      }
      std::vector<T> values;
      const unsigned char* p = bytes.data() + payload_begin + offset;
      if (width == 4) {
        detail::decode_payload<float>(p, shape_numel(shape), values);
      } else {
        detail::decode_payload<double>(p, shape_numel(shape), values);
      }
      file.tensors.add(name, Tensor<T>(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed tensor index: ") + e.what());
  }
  return file;
}

template <class T>
void write_tensor_file(const std::filesystem::path& path, const nlohmann::json& meta, const NamedTensors<T>& tensors) {
  const std::string bytes = encode_tensor_file(meta, tensors);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

template <class T>
TensorFile<T> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor_file<T>(bytes, path.string());
}

}  // namespace trims
