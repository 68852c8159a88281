// Minimal read-only NIfTI-1 importer (.nii / .nii.gz, the latter via zlib's
// transparent gzread). Only what the conversion path needs: common datatypes,
// scl_slope/scl_inter scaling, byte-swapped files.

#include <zlib.h>

#include <cstring>
#include <stdexcept>
#include <vector>

#include "synbt/volume.hpp"

namespace synbt {

namespace {

struct NiftiHeader {
    int32_t sizeof_hdr;
    char pad0[36];
    int16_t dim[8];
    char pad1[14];
    int16_t datatype;
    int16_t bitpix;
    char pad2[2];
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    char pad3[224];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348);

void bswap(int16_t& x) {
    uint16_t u;
    std::memcpy(&u, &x, 2);
    u = static_cast<uint16_t>((u >> 8) | (u << 8));
    std::memcpy(&x, &u, 2);
}

void bswap(int32_t& x) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&x, &u, 4);
}

void bswap(float& x) {
    uint32_t u;
    std::memcpy(&u, &x, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&x, &u, 4);
}

template <typename T>
void bswap_buf(std::vector<unsigned char>& buf) {
    for (size_t i = 0; i + sizeof(T) <= buf.size(); i += sizeof(T)) {
        T x;
        std::memcpy(&x, buf.data() + i, sizeof(T));
        bswap(x);
        std::memcpy(buf.data() + i, &x, sizeof(T));
    }
}

void bswap(int64_t&) = delete;

double read_elem(const unsigned char* p, int16_t datatype) {
    switch (datatype) {
        case 2: {  // uint8
            return static_cast<double>(*p);
        }
        case 4: {  // int16
            int16_t x;
            std::memcpy(&x, p, 2);
            return static_cast<double>(x);
        }
        case 8: {  // int32
            int32_t x;
            std::memcpy(&x, p, 4);
            return static_cast<double>(x);
        }
        case 16: {  // float32
            float x;
            std::memcpy(&x, p, 4);
            return static_cast<double>(x);
        }
        case 64: {  // float64
            double x;
            std::memcpy(&x, p, 8);
            return x;
        }
        case 512: {  // uint16
            uint16_t x;
            std::memcpy(&x, p, 2);
            return static_cast<double>(x);
        }
        default:
            throw std::runtime_error("nifti: unsupported datatype " + std::to_string(datatype));
    }
}

}  // namespace

Volume import_nifti(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("nifti: cannot open: " + path);
    struct Closer {
        gzFile f;
        ~Closer() { gzclose(f); }
    } closer{f};

    NiftiHeader hdr;
    if (gzread(f, &hdr, sizeof(hdr)) != static_cast<int>(sizeof(hdr)))
        throw std::runtime_error("nifti: truncated header: " + path);

    bool swapped = false;
    if (hdr.sizeof_hdr != 348) {
        bswap(hdr.sizeof_hdr);
        if (hdr.sizeof_hdr != 348) throw std::runtime_error("nifti: bad header size: " + path);
        swapped = true;
        for (auto& d : hdr.dim) bswap(d);
        bswap(hdr.datatype);
        bswap(hdr.bitpix);
        for (auto& p : hdr.pixdim) bswap(p);
        bswap(hdr.vox_offset);
        bswap(hdr.scl_slope);
        bswap(hdr.scl_inter);
    }
    if (std::strncmp(hdr.magic, "n+1", 3) != 0 && std::strncmp(hdr.magic, "ni1", 3) != 0)
        throw std::runtime_error("nifti: bad magic: " + path);
    if (hdr.dim[0] < 3 || hdr.dim[0] > 4)
        throw std::runtime_error("nifti: need a 3-D or 4-D image: " + path);

    const int nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
    const int nc = hdr.dim[0] == 4 ? hdr.dim[4] : 1;
    if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("nifti: bad dims: " + path);
    if (nc != 1 && nc != 2)
        throw std::invalid_argument("nifti: only 1 or 2 channels supported, got " +
                                    std::to_string(nc));

    const size_t elem_bytes = static_cast<size_t>(hdr.bitpix) / 8;
    const size_t nvox = static_cast<size_t>(nx) * ny * nz * static_cast<size_t>(nc);
    const long offset = static_cast<long>(hdr.vox_offset);
    if (offset < static_cast<long>(sizeof(hdr)))
        throw std::runtime_error("nifti: bad vox_offset: " + path);
    std::vector<unsigned char> skip(static_cast<size_t>(offset) - sizeof(hdr));
    if (!skip.empty() &&
        gzread(f, skip.data(), static_cast<unsigned>(skip.size())) !=
            static_cast<int>(skip.size()))
        throw std::runtime_error("nifti: truncated extension block: " + path);

    std::vector<unsigned char> buf(nvox * elem_bytes);
    size_t got = 0;
    while (got < buf.size()) {
        const int chunk = gzread(f, buf.data() + got,
                                 static_cast<unsigned>(std::min<size_t>(buf.size() - got, 1u << 24)));
        if (chunk <= 0) throw std::runtime_error("nifti: truncated payload: " + path);
        got += static_cast<size_t>(chunk);
    }
    if (swapped) {
        switch (hdr.datatype) {
            case 2: break;
            case 4: bswap_buf<int16_t>(buf); break;
            case 8: bswap_buf<int32_t>(buf); break;
            case 16: bswap_buf<float>(buf); break;
            case 512: bswap_buf<int16_t>(buf); break;  // same 2-byte swap
            default:
                throw std::runtime_error("nifti: unsupported swapped datatype: " + path);
        }
    }

    const double slope = hdr.scl_slope != 0.0f ? hdr.scl_slope : 1.0;
    const double inter = hdr.scl_slope != 0.0f ? hdr.scl_inter : 0.0;

    Volume v;
    v.data = Tensor({nx, ny, nz}, nc);
    for (int a = 0; a < 3; ++a) {
        const double p = std::abs(static_cast<double>(hdr.pixdim[a + 1]));
        v.spacing[a] = p > 0.0 ? p : 1.0;
    }
    v.channel_roles = nc == 2 ? std::vector<std::string>{"pre", "post"}
                              : std::vector<std::string>{"image"};

    // nifti stores x fastest; our layout has z fastest
    const size_t plane = static_cast<size_t>(nx) * ny;
    const size_t vol3 = plane * nz;
    for (int c = 0; c < nc; ++c)
        for (int k = 0; k < nz; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    const size_t src = static_cast<size_t>(c) * vol3 + static_cast<size_t>(k) * plane +
                                       static_cast<size_t>(j) * nx + static_cast<size_t>(i);
                    const double x = read_elem(buf.data() + src * elem_bytes, hdr.datatype);
                    v.data.at(i, j, k, c) = static_cast<float>(slope * x + inter);
                }
    v.validate();
    return v;
}

}  // namespace synbt
