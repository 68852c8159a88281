#include <bit>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "synbt/volume.hpp"

static_assert(std::endian::native == std::endian::little,
              "svol payloads are little-endian; big-endian hosts are not supported");

namespace synbt {

namespace {

using nlohmann::json;

void write_payload(std::ofstream& f, const json& header, const void* data, size_t nbytes) {
    const std::string line = header.dump();
    f.write(line.data(), static_cast<std::streamsize>(line.size()));
    f.put('\n');
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
    if (!f) throw std::runtime_error("svol write failed");
}

json read_header(std::ifstream& f, const std::string& path) {
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("svol: missing header: " + path);
    json h = json::parse(line, nullptr, false);
    if (h.is_discarded() || !h.is_object())
        throw std::runtime_error("svol: corrupt header: " + path);
    if (h.value("byte_order", "") != "little-endian")
        throw std::runtime_error("svol: unsupported byte order: " + path);
    return h;
}

void read_bytes(std::ifstream& f, void* dst, size_t nbytes, const std::string& path) {
    f.read(static_cast<char*>(dst), static_cast<std::streamsize>(nbytes));
    if (f.gcount() != static_cast<std::streamsize>(nbytes))
        throw std::runtime_error("svol: truncated payload: " + path);
}

}  // namespace

void save_svol(const std::string& path, const Volume& v) {
    v.validate();
    json h;
    h["dims"] = {v.data.dims[0], v.data.dims[1], v.data.dims[2], v.data.ch};
    h["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
    h["channel_roles"] = v.channel_roles;
    h["dtype"] = "float32";
    h["byte_order"] = "little-endian";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("svol: cannot open for write: " + path);
    write_payload(f, h, v.data.v.data(), v.data.numel() * sizeof(float));
}

Volume load_svol(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("svol: cannot open: " + path);
    const json h = read_header(f, path);
    if (h.value("dtype", "") != "float32")
        throw std::runtime_error("svol: expected float32 volume: " + path);
    const auto dims = h.at("dims").get<std::vector<int>>();
    if (dims.size() != 4) throw std::runtime_error("svol: volume dims must be 4-D: " + path);
    Volume v;
    v.data = Tensor({dims[0], dims[1], dims[2]}, dims[3]);
    const auto sp = h.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw std::runtime_error("svol: spacing must have 3 entries: " + path);
    v.spacing = {sp[0], sp[1], sp[2]};
    v.channel_roles = h.at("channel_roles").get<std::vector<std::string>>();
    read_bytes(f, v.data.v.data(), v.data.numel() * sizeof(float), path);
    v.validate();
    return v;
}

void save_mask(const std::string& path, const MaskVolume& m) {
    m.validate();
    json h;
    h["dims"] = {m.data.dims[0], m.data.dims[1], m.data.dims[2]};
    h["spacing"] = {m.spacing[0], m.spacing[1], m.spacing[2]};
    h["kind"] = m.kind == MaskKind::binary ? "binary" : "label";
    h["dtype"] = "uint8";
    h["byte_order"] = "little-endian";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("svol: cannot open for write: " + path);
    write_payload(f, h, m.data.v.data(), m.data.numel());
}

MaskVolume load_mask(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("svol: cannot open: " + path);
    const json h = read_header(f, path);
    if (h.value("dtype", "") != "uint8")
        throw std::runtime_error("svol: expected uint8 mask: " + path);
    const auto dims = h.at("dims").get<std::vector<int>>();
    if (dims.size() != 3) throw std::runtime_error("svol: mask dims must be 3-D: " + path);
    MaskVolume m;
    m.data = Tens<uint8_t>({dims[0], dims[1], dims[2]}, 1);
    const auto sp = h.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw std::runtime_error("svol: spacing must have 3 entries: " + path);
    m.spacing = {sp[0], sp[1], sp[2]};
    const std::string kind = h.value("kind", "binary");
    if (kind == "binary")
        m.kind = MaskKind::binary;
    else if (kind == "label")
        m.kind = MaskKind::label;
    else
        throw std::runtime_error("svol: unknown mask kind: " + path);
    read_bytes(f, m.data.v.data(), m.data.numel(), path);
    m.validate();
    return m;
}

}  // namespace synbt
