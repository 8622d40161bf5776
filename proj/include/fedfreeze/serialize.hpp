#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedfreeze/model.hpp"

namespace fedfreeze {

// Model file format (little-endian):
//   "FFRZ" | u16 version | u16 parameterized-layer count | u64 total param count
//   per parameterized layer: u16 layer index | u64 byte length | raw f32 data
//   u32 CRC32 over everything above
// The 16-byte header plus 4 bytes per parameter (plus the per-layer
// prefixes) is the whole downlink cost of a global model.
constexpr uint16_t kModelFormatVersion = 1;
constexpr size_t kModelHeaderBytes = 16;
constexpr size_t kLayerRecordPrefixBytes = 10;  // u16 index + u64 length
constexpr size_t kCrcBytes = 4;

std::vector<uint8_t> model_to_bytes(const Model32& model);
Model32 model_from_bytes(const ArchitectureDescriptor& arch, const std::vector<uint8_t>& bytes);

void save_model(const Model32& model, const std::string& path);
Model32 load_model(const ArchitectureDescriptor& arch, const std::string& path);

// Exact size of a serialized model, computable without serializing.
size_t serialized_model_size(const ArchitectureDescriptor& arch);

struct PartialUpdateMeta {
    uint32_t round = 0;
    uint32_t client_id = 0;
    uint64_t sample_count = 0;
    double local_loss = 0.0;
    double local_accuracy = 0.0;
};

// One client's round result: metadata plus parameters for trained units
// only. The tensor payload is exactly 4 bytes per trained parameter, which
// is what the uplink accounting measures.
template <typename S>
struct PartialUpdateT {
    PartialUpdateMeta meta;
    FreezeMask mask;
    std::map<int, std::vector<TensorT<S>>> tensors;  // raw layer index -> param tensors

    int64_t tensor_param_count(const ArchitectureDescriptor& arch) const {
        return mask.param_count(arch);
    }

    template <typename T>
    PartialUpdateT<T> cast() const {
        PartialUpdateT<T> out;
        out.meta = meta;
        out.mask = mask;
        for (const auto& [li, tensors_in] : tensors)
            for (const auto& t : tensors_in) out.tensors[li].push_back(t.template cast<T>());
        return out;
    }
};

using PartialUpdate32 = PartialUpdateT<float>;
using PartialUpdate64 = PartialUpdateT<double>;

std::vector<uint8_t> update_to_bytes(const ArchitectureDescriptor& arch, const PartialUpdate32& upd);
PartialUpdate32 update_from_bytes(const ArchitectureDescriptor& arch,
                                  const std::vector<uint8_t>& bytes);

// number of payload bytes occupied by raw tensor data in a serialized update
size_t update_tensor_bytes(const ArchitectureDescriptor& arch, const FreezeMask& mask);
// full serialized size including metadata and per-unit prefixes
size_t serialized_update_size(const ArchitectureDescriptor& arch, const FreezeMask& mask);

}  // namespace fedfreeze
