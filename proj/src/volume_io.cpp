#include "wmhlab/volume_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

static_assert(std::endian::native == std::endian::little,
              "WMHV1 payloads are little-endian; big-endian hosts need byte swaps");

namespace wmhlab {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json header_for(kern::Dims3 dims, const std::array<double, 3>& spacing,
                        const char* dtype, const char* kind) {
    ordered_json h;
    h["magic"] = "WMHV1";
    h["dims"] = {dims.nx, dims.ny, dims.nz};
    h["spacing"] = {spacing[0], spacing[1], spacing[2]};
    h["dtype"] = dtype;
    h["kind"] = kind;
    return h;
}

struct ParsedHeader {
    kern::Dims3 dims{};
    std::array<double, 3> spacing{};
    std::string dtype, kind;
};

ParsedHeader read_header(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line))
        throw BadMagicError("WMHV1: cannot read header line from " + path.string());
    ordered_json h = ordered_json::parse(line, nullptr, false);
    if (h.is_discarded() || !h.contains("magic") || h["magic"] != "WMHV1")
        throw BadMagicError("WMHV1: bad magic in " + path.string());
    ParsedHeader out;
    try {
        out.dims = {h.at("dims").at(0).get<int>(), h.at("dims").at(1).get<int>(),
                    h.at("dims").at(2).get<int>()};
        out.spacing = {h.at("spacing").at(0).get<double>(), h.at("spacing").at(1).get<double>(),
                       h.at("spacing").at(2).get<double>()};
        out.dtype = h.at("dtype").get<std::string>();
        out.kind = h.at("kind").get<std::string>();
    } catch (const ordered_json::exception& e) {
        throw DataError("WMHV1: malformed header in " + path.string() + ": " + e.what());
    }
    if (out.dims.nx <= 0 || out.dims.ny <= 0 || out.dims.nz <= 0)
        throw DataError("WMHV1: non-positive dims in " + path.string());
    return out;
}

void write_file(const std::filesystem::path& path, const ordered_json& header,
                const void* payload, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    const std::string line = header.dump();
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.put('\n');
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("write failed: " + path.string());
}

// reads exactly `bytes` and requires EOF right after
void read_payload(std::istream& in, const std::filesystem::path& path, void* dst,
                  std::size_t bytes) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw PayloadMismatchError("WMHV1: payload shorter than dims imply in " + path.string());
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0)
        throw PayloadMismatchError("WMHV1: payload longer than dims imply in " + path.string());
}

} // namespace

void save_volume(const Volume3D& vol, const std::filesystem::path& path) {
    vol.validate();
    write_file(path, header_for(vol.dims, vol.spacing, "f32", "image"), vol.data.data(),
               vol.data.size() * sizeof(float));
}

Volume3D load_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    const ParsedHeader h = read_header(in, path);
    if (h.dtype != "f32" || h.kind != "image")
        throw DataError("WMHV1: expected an f32 image file: " + path.string());
    Volume3D vol;
    vol.dims = h.dims;
    vol.spacing = h.spacing;
    vol.data.resize(static_cast<std::size_t>(h.dims.count()));
    read_payload(in, path, vol.data.data(), vol.data.size() * sizeof(float));
    vol.validate();
    return vol;
}

void save_mask(const Mask3D& mask, const std::filesystem::path& path) {
    mask.validate();
    write_file(path, header_for(mask.dims, mask.spacing, "u8", "mask"), mask.data.data(),
               mask.data.size());
}

Mask3D load_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    const ParsedHeader h = read_header(in, path);
    if (h.dtype != "u8" || h.kind != "mask")
        throw DataError("WMHV1: expected a u8 mask file: " + path.string());
    Mask3D mask;
    mask.dims = h.dims;
    mask.spacing = h.spacing;
    mask.data.resize(static_cast<std::size_t>(h.dims.count()));
    read_payload(in, path, mask.data.data(), mask.data.size());
    for (std::uint8_t v : mask.data)
        if (v > 1) throw NonBinaryMaskError("WMHV1: mask payload with value > 1 in " + path.string());
    return mask;
}

} // namespace wmhlab
