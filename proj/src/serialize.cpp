#include "fedfreeze/serialize.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

namespace fedfreeze {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_f32_array(std::vector<uint8_t>& out, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, data + i, 4);
        put_u32(out, bits);
    }
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated model data");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void f32_array(float* out, size_t n) {
        need(n * 4);
        for (size_t i = 0; i < n; ++i) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<uint32_t>(buf[pos + i * 4 + static_cast<size_t>(b)]) << (8 * b);
            std::memcpy(out + i, &bits, 4);
        }
        pos += n * 4;
    }
};

uint32_t crc_of(const std::vector<uint8_t>& bytes, size_t n) {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

void append_crc(std::vector<uint8_t>& out) { put_u32(out, crc_of(out, out.size())); }

void check_crc_and_magic(Reader& r, const char* magic, const char* what) {
    if (r.buf.size() < 8) throw IoError(std::string("truncated ") + what);
    const uint32_t stored_crc = static_cast<uint32_t>(
        r.buf[r.buf.size() - 4] | (r.buf[r.buf.size() - 3] << 8) | (r.buf[r.buf.size() - 2] << 16) |
        (static_cast<uint32_t>(r.buf[r.buf.size() - 1]) << 24));
    if (crc_of(r.buf, r.buf.size() - 4) != stored_crc)
        throw IoError(std::string("checksum mismatch in ") + what);
    r.need(4);
    if (std::memcmp(r.buf.data(), magic, 4) != 0)
        throw IoError(std::string("bad magic for ") + what);
    r.pos = 4;
}

std::vector<int> parameterized_layers(const ArchitectureDescriptor& arch) {
    std::vector<int> out;
    for (int i = 0; i < arch.num_layers(); ++i)
        if (arch.layers[static_cast<size_t>(i)].parameterized()) out.push_back(i);
    return out;
}

}  // namespace

size_t serialized_model_size(const ArchitectureDescriptor& arch) {
    size_t n = kModelHeaderBytes + kCrcBytes;
    for (const auto& l : arch.layers)
        if (l.parameterized())
            n += kLayerRecordPrefixBytes + static_cast<size_t>(l.param_count) * 4;
    return n;
}

std::vector<uint8_t> model_to_bytes(const Model32& model) {
    const auto& arch = model.arch;
    std::vector<uint8_t> out;
    out.reserve(serialized_model_size(arch));
    out.insert(out.end(), {'F', 'F', 'R', 'Z'});
    const auto layers = parameterized_layers(arch);
    put_u16(out, kModelFormatVersion);
    put_u16(out, static_cast<uint16_t>(layers.size()));
    put_u64(out, static_cast<uint64_t>(arch.total_params()));
    for (int li : layers) {
        const auto& tensors = model.params[static_cast<size_t>(li)];
        put_u16(out, static_cast<uint16_t>(li));
        put_u64(out, static_cast<uint64_t>(arch.layers[static_cast<size_t>(li)].param_count) * 4);
        for (const auto& t : tensors) put_f32_array(out, t.ptr(), t.numel());
    }
    append_crc(out);
    return out;
}

Model32 model_from_bytes(const ArchitectureDescriptor& arch, const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    check_crc_and_magic(r, "FFRZ", "model");
    const uint16_t version = r.u16();
    if (version != kModelFormatVersion)
        throw IoError("unsupported model format version " + std::to_string(version));
    const auto layers = parameterized_layers(arch);
    const uint16_t layer_count = r.u16();
    if (layer_count != layers.size())
        throw IoError("model layer count does not match architecture");
    const uint64_t total = r.u64();
    if (total != static_cast<uint64_t>(arch.total_params()))
        throw IoError("model parameter count does not match architecture");

    Model32 m;
    m.arch = arch;
    m.params.resize(arch.layers.size());
    for (int li : layers) {
        const uint16_t idx = r.u16();
        if (idx != li) throw IoError("unexpected layer index in model data");
        const uint64_t len = r.u64();
        const auto& spec = arch.layers[static_cast<size_t>(li)];
        if (len != static_cast<uint64_t>(spec.param_count) * 4)
            throw IoError("layer byte length does not match architecture");
        for (const auto& shp : param_shapes(spec)) {
            Tensor32 t(shp);
            r.f32_array(t.ptr(), t.numel());
            m.params[static_cast<size_t>(li)].push_back(std::move(t));
        }
    }
    return m;
}

void save_model(const Model32& model, const std::string& path) {
    const auto bytes = model_to_bytes(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

Model32 load_model(const ArchitectureDescriptor& arch, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_bytes(arch, bytes);
}

size_t update_tensor_bytes(const ArchitectureDescriptor& arch, const FreezeMask& mask) {
    return static_cast<size_t>(mask.param_count(arch)) * 4;
}

size_t serialized_update_size(const ArchitectureDescriptor& arch, const FreezeMask& mask) {
    // magic + version + round + client + n_k + loss + acc + unit count
    size_t n = 4 + 2 + 4 + 4 + 8 + 8 + 8 + 2 + kCrcBytes;
    n += mask.size() * kLayerRecordPrefixBytes;
    n += update_tensor_bytes(arch, mask);
    return n;
}

std::vector<uint8_t> update_to_bytes(const ArchitectureDescriptor& arch, const PartialUpdate32& upd) {
    std::vector<uint8_t> out;
    out.reserve(serialized_update_size(arch, upd.mask));
    out.insert(out.end(), {'F', 'F', 'R', 'U'});
    put_u16(out, kModelFormatVersion);
    put_u32(out, upd.meta.round);
    put_u32(out, upd.meta.client_id);
    put_u64(out, upd.meta.sample_count);
    put_f64(out, upd.meta.local_loss);
    put_f64(out, upd.meta.local_accuracy);
    put_u16(out, static_cast<uint16_t>(upd.mask.size()));
    for (int u : upd.mask.units) {
        const auto& unit = arch.units[static_cast<size_t>(u)];
        put_u16(out, static_cast<uint16_t>(u));
        put_u64(out, static_cast<uint64_t>(unit.param_count) * 4);
        for (int li : unit.layer_indices) {
            auto it = upd.tensors.find(li);
            if (it == upd.tensors.end())
                throw ShapeError("update missing tensors for layer " + std::to_string(li));
            for (const auto& t : it->second) put_f32_array(out, t.ptr(), t.numel());
        }
    }
    append_crc(out);
    return out;
}

PartialUpdate32 update_from_bytes(const ArchitectureDescriptor& arch,
                                  const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    check_crc_and_magic(r, "FFRU", "partial update");
    const uint16_t version = r.u16();
    if (version != kModelFormatVersion)
        throw IoError("unsupported update format version " + std::to_string(version));
    PartialUpdate32 upd;
    upd.meta.round = r.u32();
    upd.meta.client_id = r.u32();
    upd.meta.sample_count = r.u64();
    upd.meta.local_loss = r.f64();
    upd.meta.local_accuracy = r.f64();
    const uint16_t unit_count = r.u16();
    for (uint16_t i = 0; i < unit_count; ++i) {
        const uint16_t u = r.u16();
        if (u >= arch.units.size()) throw IoError("update references unknown unit");
        const auto& unit = arch.units[u];
        const uint64_t len = r.u64();
        if (len != static_cast<uint64_t>(unit.param_count) * 4)
            throw IoError("unit byte length does not match architecture");
        upd.mask.units.push_back(u);
        for (int li : unit.layer_indices) {
            auto& tensors = upd.tensors[li];
            for (const auto& shp : param_shapes(arch.layers[static_cast<size_t>(li)])) {
                Tensor32 t(shp);
                r.f32_array(t.ptr(), t.numel());
                tensors.push_back(std::move(t));
            }
        }
    }
    upd.mask = FreezeMask::of(upd.mask.units);
    return upd;
}

}  // namespace fedfreeze
