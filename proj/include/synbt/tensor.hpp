#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace synbt {

// Dense channel-last array over a 3-D grid: index ((x*ny + y)*nz + z)*ch + c.
// Used for volumes (H x W x D x C), latents and network activations alike.
template <typename T>
struct Tens {
    std::array<int, 3> dims{0, 0, 0};
    int ch = 0;
    std::vector<T> v;

    Tens() = default;
    Tens(std::array<int, 3> d, int c) : dims(d), ch(c), v(numel_of(d, c), T(0)) {}
    Tens(int nx, int ny, int nz, int c) : Tens(std::array<int, 3>{nx, ny, nz}, c) {}

    static size_t numel_of(std::array<int, 3> d, int c) {
        if (d[0] < 0 || d[1] < 0 || d[2] < 0 || c < 0) throw std::invalid_argument("negative tensor dims");
        return static_cast<size_t>(d[0]) * static_cast<size_t>(d[1]) * static_cast<size_t>(d[2]) *
               static_cast<size_t>(c);
    }

    size_t sites() const {
        return static_cast<size_t>(dims[0]) * static_cast<size_t>(dims[1]) * static_cast<size_t>(dims[2]);
    }
    size_t numel() const { return sites() * static_cast<size_t>(ch); }

    size_t idx(int x, int y, int z, int c) const {
        assert(x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2] && c >= 0 && c < ch);
        return ((static_cast<size_t>(x) * dims[1] + y) * dims[2] + z) * ch + c;
    }
    size_t site(int x, int y, int z) const {
        return (static_cast<size_t>(x) * dims[1] + y) * dims[2] + z;
    }

    T& at(int x, int y, int z, int c) { return v[idx(x, y, z, c)]; }
    const T& at(int x, int y, int z, int c) const { return v[idx(x, y, z, c)]; }

    T* site_ptr(int x, int y, int z) { return v.data() + site(x, y, z) * ch; }
    const T* site_ptr(int x, int y, int z) const { return v.data() + site(x, y, z) * ch; }

    bool same_shape(const Tens& o) const { return dims == o.dims && ch == o.ch; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tens<U> cast() const {
        Tens<U> out(dims, ch);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = Tens<float>;
using DTensor = Tens<double>;

}  // namespace synbt
