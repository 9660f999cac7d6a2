#include "pilot/networks/tensor_container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pilot/core/error.hpp"

namespace pilot::io {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'L', 'O', 'T', 'T', 'N', 'S'};

template <class T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T read_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

DType parse_dtype(const std::string& s, const std::string& source) {
  if (s == "f64") return DType::f64;
  if (s == "f32") return DType::f32;
  if (s == "u8") return DType::u8;
  if (s == "i64") return DType::i64;
  throw DataError(source + ": unknown dtype '" + s + "'");
}

}  // namespace

std::string dtype_name(DType t) {
  switch (t) {
    case DType::f64: return "f64";
    case DType::f32: return "f32";
    case DType::u8: return "u8";
    case DType::i64: return "i64";
  }
  return "?";
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f64: return 8;
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::i64: return 8;
  }
  return 0;
}

Entry& Container::slot(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) {
      e.payload.clear();
      return e;
    }
  entries_.push_back(Entry{name, DType::f64, {}, {}});
  return entries_.back();
}

void Container::put(const std::string& name, const ad::Tensor& t) {
  Entry& e = slot(name);
  e.dtype = DType::f64;
  e.shape = t.shape();
  e.payload.reserve(t.size() * 8);
  for (double v : t.data()) append_le(e.payload, v);
}

void Container::put_f32(const std::string& name, const ad::Tensor& t) {
  Entry& e = slot(name);
  e.dtype = DType::f32;
  e.shape = t.shape();
  e.payload.reserve(t.size() * 4);
  for (double v : t.data()) append_le(e.payload, static_cast<float>(v));
}

void Container::put_u8(const std::string& name, ad::Shape shape, const std::vector<std::uint8_t>& values) {
  if (ad::shape_size(shape) != values.size()) throw ShapeError("container: u8 tensor " + name + " shape/size mismatch");
  Entry& e = slot(name);
  e.dtype = DType::u8;
  e.shape = std::move(shape);
  e.payload = values;
}

void Container::put_i64(const std::string& name, ad::Shape shape, const std::vector<std::int64_t>& values) {
  if (ad::shape_size(shape) != values.size()) throw ShapeError("container: i64 tensor " + name + " shape/size mismatch");
  Entry& e = slot(name);
  e.dtype = DType::i64;
  e.shape = std::move(shape);
  for (std::int64_t v : values) append_le(e.payload, v);
}

bool Container::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Entry& Container::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw DataError("container: missing tensor '" + name + "'");
}

ad::Tensor Container::tensor(const std::string& name) const {
  const Entry& e = entry(name);
  const std::size_t n = ad::shape_size(e.shape);
  std::vector<double> values(n);
  const std::uint8_t* p = e.payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (e.dtype) {
      case DType::f64: values[i] = read_le<double>(p + 8 * i); break;
      case DType::f32: values[i] = read_le<float>(p + 4 * i); break;
      case DType::u8: values[i] = p[i]; break;
      case DType::i64: values[i] = static_cast<double>(read_le<std::int64_t>(p + 8 * i)); break;
    }
  }
  return ad::Tensor(e.shape, std::move(values));
}

std::vector<std::int64_t> Container::integers(const std::string& name) const {
  const Entry& e = entry(name);
  const std::size_t n = ad::shape_size(e.shape);
  std::vector<std::int64_t> out(n);
  const std::uint8_t* p = e.payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (e.dtype) {
      case DType::i64: out[i] = read_le<std::int64_t>(p + 8 * i); break;
      case DType::u8: out[i] = p[i]; break;
      case DType::f64: out[i] = static_cast<std::int64_t>(read_le<double>(p + 8 * i)); break;
      case DType::f32: out[i] = static_cast<std::int64_t>(read_le<float>(p + 4 * i)); break;
    }
  }
  return out;
}

std::vector<std::uint8_t> Container::serialize() const {
  nlohmann::json header;
  header["format"] = "pilot-tensors";
  header["version"] = kContainerVersion;
  header["meta"] = meta_;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    header["tensors"].push_back({{"name", e.name},
                                 {"dtype", dtype_name(e.dtype)},
                                 {"shape", e.shape},
                                 {"offset", offset},
                                 {"nbytes", e.payload.size()}});
    offset += e.payload.size();
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  append_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& e : entries_) out.insert(out.end(), e.payload.begin(), e.payload.end());
  return out;
}

Container Container::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 16) {
    throw DataError(source + ": truncated header at byte offset " + std::to_string(bytes.size()) + " (need 16)");
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError(source + ": bad magic at byte offset 0");
  const std::uint64_t hlen = read_le<std::uint64_t>(bytes.data() + 8);
  if (hlen > bytes.size() - 16) {
    throw DataError(source + ": header of " + std::to_string(hlen) + " bytes runs past end of file at byte offset " +
                    std::to_string(bytes.size()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(source + ": malformed JSON header at byte offset 16: " + ex.what());
  }
  if (!header.contains("version") || !header["version"].is_number_integer()) {
    throw DataError(source + ": header has no integer 'version' field");
  }
  if (header["version"].get<int>() != kContainerVersion) {
    throw DataError(source + ": unsupported container version " + header["version"].dump());
  }
  const std::size_t payload_start = 16 + hlen;
  const std::size_t payload_size = bytes.size() - payload_start;
  Container c;
  if (header.contains("meta")) c.meta_ = header["meta"];
  if (!header.contains("tensors") || !header["tensors"].is_array()) throw DataError(source + ": header has no 'tensors' array");
  try {
    for (const auto& t : header["tensors"]) {
      Entry e;
      e.name = t.at("name").get<std::string>();
      e.dtype = parse_dtype(t.at("dtype").get<std::string>(), source);
      e.shape = t.at("shape").get<ad::Shape>();
      const std::size_t offset = t.at("offset").get<std::size_t>();
      const std::size_t nbytes = t.at("nbytes").get<std::size_t>();
      if (nbytes != ad::shape_size(e.shape) * dtype_size(e.dtype)) {
        throw DataError(source + ": tensor '" + e.name + "' declares " + std::to_string(nbytes) +
                        " bytes, shape needs " + std::to_string(ad::shape_size(e.shape) * dtype_size(e.dtype)));
      }
      if (offset > payload_size || nbytes > payload_size - offset) {
        throw DataError(source + ": tensor '" + e.name + "' payload [" + std::to_string(payload_start + offset) + ", " +
                        std::to_string(payload_start + offset + nbytes) + ") runs past end of file at byte offset " +
                        std::to_string(bytes.size()));
      }
      const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(payload_start + offset);
      e.payload.assign(begin, begin + static_cast<std::ptrdiff_t>(nbytes));
      c.entries_.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(source + ": malformed tensor table: " + ex.what());
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace pilot::io
