#include "synbt/filters.hpp"

#include <algorithm>
#include <stdexcept>

namespace synbt {

namespace {

// One separable pass along `axis`; weights (0.25, 0.5, 0.25), out-of-range
// neighbors read as zero.
Tensor blur3_axis(const Tensor& t, int axis) {
    Tensor out(t.dims, t.ch);
    std::array<int, 3> i{};
    for (i[0] = 0; i[0] < t.dims[0]; ++i[0])
        for (i[1] = 0; i[1] < t.dims[1]; ++i[1])
            for (i[2] = 0; i[2] < t.dims[2]; ++i[2])
                for (int c = 0; c < t.ch; ++c) {
                    double acc = 0.5 * t.at(i[0], i[1], i[2], c);
                    std::array<int, 3> j = i;
                    j[axis] = i[axis] - 1;
                    if (j[axis] >= 0) acc += 0.25 * t.at(j[0], j[1], j[2], c);
                    j[axis] = i[axis] + 1;
                    if (j[axis] < t.dims[axis]) acc += 0.25 * t.at(j[0], j[1], j[2], c);
                    out.at(i[0], i[1], i[2], c) = static_cast<float>(acc);
                }
    return out;
}

Tensor box_axis(const Tensor& t, int axis, int radius) {
    Tensor out(t.dims, t.ch);
    const double inv = 1.0 / (2 * radius + 1);
    std::array<int, 3> i{};
    for (i[0] = 0; i[0] < t.dims[0]; ++i[0])
        for (i[1] = 0; i[1] < t.dims[1]; ++i[1])
            for (i[2] = 0; i[2] < t.dims[2]; ++i[2])
                for (int c = 0; c < t.ch; ++c) {
                    double acc = 0.0;
                    std::array<int, 3> j = i;
                    for (int o = -radius; o <= radius; ++o) {
                        j[axis] = std::clamp(i[axis] + o, 0, t.dims[axis] - 1);
                        acc += t.at(j[0], j[1], j[2], c);
                    }
                    out.at(i[0], i[1], i[2], c) = static_cast<float>(acc * inv);
                }
    return out;
}

}  // namespace

Tensor blur3(const Tensor& t, int iters) {
    Tensor cur = t;
    for (int it = 0; it < iters; ++it)
        for (int axis = 0; axis < 3; ++axis) cur = blur3_axis(cur, axis);
    return cur;
}

Tensor box_blur(const Tensor& t, int radius, int iters) {
    if (radius < 1) throw std::invalid_argument("box blur radius must be >= 1");
    Tensor cur = t;
    for (int it = 0; it < iters; ++it)
        for (int axis = 0; axis < 3; ++axis) cur = box_axis(cur, axis, radius);
    return cur;
}

Tensor avg_pool(const Tensor& t, int factor) {
    if (factor < 1) throw std::invalid_argument("pool factor must be >= 1");
    for (int a = 0; a < 3; ++a)
        if (t.dims[a] % factor != 0)
            throw std::invalid_argument("dims must be divisible by pool factor");
    Tensor out({t.dims[0] / factor, t.dims[1] / factor, t.dims[2] / factor}, t.ch);
    const double inv = 1.0 / (static_cast<double>(factor) * factor * factor);
    for (int x = 0; x < out.dims[0]; ++x)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int z = 0; z < out.dims[2]; ++z)
                for (int c = 0; c < t.ch; ++c) {
                    double acc = 0.0;
                    for (int dx = 0; dx < factor; ++dx)
                        for (int dy = 0; dy < factor; ++dy)
                            for (int dz = 0; dz < factor; ++dz)
                                acc += t.at(x * factor + dx, y * factor + dy, z * factor + dz, c);
                    out.at(x, y, z, c) = static_cast<float>(acc * inv);
                }
    return out;
}

Tensor upsample_nearest(const Tensor& t, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
    Tensor out({t.dims[0] * factor, t.dims[1] * factor, t.dims[2] * factor}, t.ch);
    for (int x = 0; x < out.dims[0]; ++x)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int z = 0; z < out.dims[2]; ++z)
                for (int c = 0; c < t.ch; ++c)
                    out.at(x, y, z, c) = t.at(x / factor, y / factor, z / factor, c);
    return out;
}

}  // namespace synbt
