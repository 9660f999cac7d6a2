#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pilot/autodiff/tensor.hpp"

namespace pilot::io {

// On-disk layout (all integers little-endian):
//   bytes 0..7    magic "PILOTTNS"
//   bytes 8..15   u64 length H of the JSON header
//   next H bytes  JSON: {"format":"pilot-tensors","version":1,"meta":{...},
//                        "tensors":[{"name","dtype","shape","offset","nbytes"}]}
//   remainder     payload; tensor offsets are relative to the payload start
// dtypes: "f64", "f32", "u8", "i64".
inline constexpr int kContainerVersion = 1;

enum class DType { f64, f32, u8, i64 };

std::string dtype_name(DType t);
std::size_t dtype_size(DType t);

struct Entry {
  std::string name;
  DType dtype = DType::f64;
  ad::Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian element bytes
};

class Container {
 public:
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put(const std::string& name, const ad::Tensor& t);  // stored as f64
  void put_f32(const std::string& name, const ad::Tensor& t);
  void put_u8(const std::string& name, ad::Shape shape, const std::vector<std::uint8_t>& values);
  void put_i64(const std::string& name, ad::Shape shape, const std::vector<std::int64_t>& values);

  bool contains(const std::string& name) const;
  const Entry& entry(const std::string& name) const;  // DataError when missing
  // Any numeric dtype, converted to double.
  ad::Tensor tensor(const std::string& name) const;
  std::vector<std::int64_t> integers(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

 private:
  Entry& slot(const std::string& name);
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<Entry> entries_;
};

}  // namespace pilot::io
