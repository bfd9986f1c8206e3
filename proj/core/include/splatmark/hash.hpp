#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace splatmark {

/// Incremental SHA-256; digests are reported as lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  template <class T>
  Sha256& update_values(std::span<const T> values) {
    return update(std::as_bytes(values));
  }
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);

}  // namespace splatmark
