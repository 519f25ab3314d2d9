#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace cfstab {

// Incremental SHA-256, hex output. Values are fed in a fixed little-endian
// byte layout so fingerprints do not depend on host endianness.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const unsigned char> bytes);
  Sha256& update(std::string_view text);
  Sha256& update_u64(std::uint64_t v);
  Sha256& update_f64(double v);
  // Length-prefixed, so ("ab","c") and ("a","bc") hash differently.
  Sha256& update_field(std::string_view text);
  std::string hex_digest();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view text);

}  // namespace cfstab
