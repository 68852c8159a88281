#include "synbt/hash.hpp"

#include <fstream>
#include <stdexcept>

namespace synbt {

std::string hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for hashing: " + path);
    Fnv1a h;
    char buf[1 << 16];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h.update(buf, static_cast<size_t>(f.gcount()));
    return h.hex();
}

}  // namespace synbt
