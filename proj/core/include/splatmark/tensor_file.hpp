#pragma once

// Named-array container in the safetensors layout: an 8-byte little-endian
// header length, a JSON header mapping names to dtype/shape/byte ranges plus
// a string-valued "__metadata__" object, then the raw little-endian data.
// Files written here load with the Python `safetensors` package, which is
// the supported way to bring externally computed embeddings in.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splatmark/autodiff.hpp"

namespace splatmark {

enum class DType { kF64, kI64, kU8 };

struct TensorEntry {
  DType dtype = DType::kF64;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;
};

class TensorFile {
 public:
  void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }
  /// Throws FormatError when the key is missing.
  const std::string& metadata(const std::string& key) const;
  bool has_metadata(const std::string& key) const { return metadata_.count(key) != 0; }
  const std::map<std::string, std::string>& all_metadata() const { return metadata_; }

  void put(const std::string& name, const ad::Matrix& m);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values,
               std::vector<std::int64_t> shape);
  void put_u8(const std::string& name, const std::vector<std::uint8_t>& values,
              std::vector<std::int64_t> shape);

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const TensorEntry& entry(const std::string& name) const;
  /// F64 array of rank 1 or 2 as a matrix (rank 1 becomes a single row).
  ad::Matrix matrix(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;
  std::vector<std::string> names() const;

  void save(const std::string& path) const;
  static TensorFile load(const std::string& path);
  /// Checks metadata "format" and "version"; throws FormatError on mismatch.
  void expect_format(const std::string& format, int version) const;

 private:
  std::map<std::string, TensorEntry> tensors_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace splatmark
