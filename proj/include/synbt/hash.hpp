#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace synbt {

// FNV-1a, 64-bit. Used for manifests and frozen-parameter checks; not
// cryptographic.
class Fnv1a {
  public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    template <typename T>
    void update_vec(const std::vector<T>& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        update(v.data(), v.size() * sizeof(T));
    }

    uint64_t value() const { return h_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        uint64_t v = h_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<size_t>(i)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

  private:
    uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::string fnv1a_hex(const void* data, size_t n) {
    Fnv1a h;
    h.update(data, n);
    return h.hex();
}

inline std::string fnv1a_hex(const std::string& s) { return fnv1a_hex(s.data(), s.size()); }

// Hash of a file's contents; throws std::runtime_error if unreadable.
std::string hash_file(const std::string& path);

}  // namespace synbt
