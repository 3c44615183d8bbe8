#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace neuroloop {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001B3ULL;
    }
  }
  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string digest_hex(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

inline std::uint64_t digest_u64(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.value();
}

}  // namespace neuroloop
