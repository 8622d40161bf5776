#include "fedfreeze/arch.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fedfreeze {

using nlohmann::json;

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::BatchNorm: return "batch_norm";
        case LayerKind::MaxPool: return "max_pool";
        case LayerKind::AvgPool: return "avg_pool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

const char* kind_table_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::BatchNorm: return "batch_normalization";
        case LayerKind::MaxPool: return "max_pooling2d";
        case LayerKind::AvgPool: return "average_pooling2d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::ReLU: return "activation";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& name) {
    static const std::map<std::string, LayerKind> table = {
        {"dense", LayerKind::Dense},
        {"conv2d", LayerKind::Conv2D},
        {"batch_norm", LayerKind::BatchNorm},
        {"batch_normalization", LayerKind::BatchNorm},
        {"max_pool", LayerKind::MaxPool},
        {"max_pooling2d", LayerKind::MaxPool},
        {"avg_pool", LayerKind::AvgPool},
        {"average_pooling2d", LayerKind::AvgPool},
        {"flatten", LayerKind::Flatten},
        {"relu", LayerKind::ReLU},
        {"activation", LayerKind::ReLU},
        {"softmax", LayerKind::Softmax},
    };
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown layer kind: " + name);
    return it->second;
}

namespace {

int pooled_dim(int in, int window, int stride) {
    if (in < window) throw ShapeError("pool window larger than input");
    return (in - window) / stride + 1;
}

int conv_dim(int in, int kernel, int stride, Padding pad) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    if (in < kernel) throw ShapeError("conv kernel larger than input (valid padding)");
    return (in - kernel) / stride + 1;
}

void infer_layer(LayerSpec& l) {
    const auto& in = l.input_shape;
    l.param_count = 0;
    l.trainable_param_count = 0;
    switch (l.kind) {
        case LayerKind::Dense: {
            if (in.size() != 1) throw ShapeError("dense layer needs flat input, got " + shape_str(in));
            if (l.units <= 0) throw ConfigError("dense layer needs positive units");
            l.output_shape = {l.units};
            l.param_count = (static_cast<int64_t>(in[0]) + 1) * l.units;
            l.trainable_param_count = l.param_count;
            break;
        }
        case LayerKind::Conv2D: {
            if (in.size() != 3) throw ShapeError("conv2d needs HWC input, got " + shape_str(in));
            if (l.filters <= 0 || l.kernel <= 0 || l.stride <= 0)
                throw ConfigError("conv2d needs positive filters/kernel/stride");
            l.output_shape = {conv_dim(in[0], l.kernel, l.stride, l.padding),
                              conv_dim(in[1], l.kernel, l.stride, l.padding), l.filters};
            l.param_count =
                (static_cast<int64_t>(l.kernel) * l.kernel * in[2] + 1) * l.filters;
            l.trainable_param_count = l.param_count;
            break;
        }
        case LayerKind::BatchNorm: {
            if (in.empty()) throw ShapeError("batch_norm needs non-empty input shape");
            const int channels = in.back();
            l.output_shape = in;
            l.param_count = 4LL * channels;
            l.trainable_param_count = 2LL * channels;
            break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            if (in.size() != 3) throw ShapeError("pooling needs HWC input, got " + shape_str(in));
            if (l.pool <= 0 || l.stride <= 0) throw ConfigError("pooling needs positive pool/stride");
            l.output_shape = {pooled_dim(in[0], l.pool, l.stride), pooled_dim(in[1], l.pool, l.stride),
                              in[2]};
            break;
        }
        case LayerKind::Flatten: {
            l.output_shape = {static_cast<int>(numel_of(in))};
            break;
        }
        case LayerKind::ReLU:
        case LayerKind::Softmax: {
            l.output_shape = in;
            break;
        }
    }
}

// conv+bn / dense+bn pairs collapse into one selectable unit; anything else
// parameterized stands alone
std::vector<TrainableUnit> build_units(const std::vector<LayerSpec>& layers) {
    std::vector<TrainableUnit> units;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
        const auto& l = layers[static_cast<size_t>(i)];
        if (!l.parameterized()) continue;
        const bool joins_previous = l.kind == LayerKind::BatchNorm && !units.empty() && i > 0 &&
                                    units.back().layer_indices.back() == i - 1 &&
                                    (layers[static_cast<size_t>(i - 1)].kind == LayerKind::Conv2D ||
                                     layers[static_cast<size_t>(i - 1)].kind == LayerKind::Dense);
        if (joins_previous) {
            units.back().layer_indices.push_back(i);
            units.back().param_count += l.param_count;
        } else {
            units.push_back(TrainableUnit{{i}, l.param_count});
        }
    }
    return units;
}

}  // namespace

ArchitectureDescriptor finalize_architecture(std::string name, std::vector<int> input_shape,
                                             std::vector<LayerSpec> layers) {
    ArchitectureDescriptor arch;
    arch.name = std::move(name);
    arch.input_shape = std::move(input_shape);
    arch.layers = std::move(layers);

    std::map<LayerKind, int> kind_counter;
    std::vector<int> shape = arch.input_shape;
    for (auto& l : arch.layers) {
        l.input_shape = shape;
        infer_layer(l);
        shape = l.output_shape;
        const int n = kind_counter[l.kind]++;
        l.label = kind_table_name(l.kind);
        if (n > 0) l.label += "_" + std::to_string(n);
    }
    arch.units = build_units(arch.layers);
    arch.layer_unit.assign(arch.layers.size(), -1);
    for (size_t u = 0; u < arch.units.size(); ++u)
        for (int li : arch.units[u].layer_indices)
            arch.layer_unit[static_cast<size_t>(li)] = static_cast<int>(u);
    return arch;
}

ParameterCountReport count_parameters(const ArchitectureDescriptor& arch) {
    ParameterCountReport rep;
    rep.per_layer.reserve(arch.layers.size());
    for (const auto& l : arch.layers) {
        rep.per_layer.push_back(l.param_count);
        rep.total += l.param_count;
    }
    rep.trainable_units = arch.trainable_units();
    return rep;
}

std::vector<std::vector<int>> param_shapes(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::Dense:
            return {{spec.input_shape[0], spec.units}, {spec.units}};
        case LayerKind::Conv2D:
            return {{spec.kernel, spec.kernel, spec.input_shape[2], spec.filters}, {spec.filters}};
        case LayerKind::BatchNorm: {
            const int c = spec.input_shape.back();
            return {{c}, {c}, {c}, {c}};
        }
        default:
            return {};
    }
}

namespace {

LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    l.kind = kind_from_name(j.at("kind").get<std::string>());
    switch (l.kind) {
        case LayerKind::Dense:
            l.units = j.at("units").get<int>();
            break;
        case LayerKind::Conv2D:
            l.filters = j.at("filters").get<int>();
            l.kernel = j.at("kernel").get<int>();
            l.stride = j.value("stride", 1);
            l.padding = j.value("padding", std::string("same")) == "valid" ? Padding::Valid
                                                                           : Padding::Same;
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            l.pool = j.value("pool", 2);
            l.stride = j.value("stride", l.pool);
            break;
        default:
            break;
    }
    return l;
}

}  // namespace

ArchitectureDescriptor load_architecture_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("architecture descriptor is not valid JSON: ") + e.what());
    }
    std::vector<LayerSpec> layers;
    for (const auto& lj : j.at("layers")) layers.push_back(layer_from_json(lj));
    return finalize_architecture(j.value("name", std::string("unnamed")),
                                 j.at("input_shape").get<std::vector<int>>(), std::move(layers));
}

ArchitectureDescriptor load_architecture_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open architecture descriptor: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_architecture_json(ss.str());
}

std::string architecture_to_json(const ArchitectureDescriptor& arch) {
    json j;
    j["name"] = arch.name;
    j["input_shape"] = arch.input_shape;
    json layers = json::array();
    for (const auto& l : arch.layers) {
        json lj;
        lj["kind"] = kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::Dense:
                lj["units"] = l.units;
                break;
            case LayerKind::Conv2D:
                lj["filters"] = l.filters;
                lj["kernel"] = l.kernel;
                lj["stride"] = l.stride;
                lj["padding"] = l.padding == Padding::Valid ? "valid" : "same";
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                lj["pool"] = l.pool;
                lj["stride"] = l.stride;
                break;
            default:
                break;
        }
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j.dump(2);
}

}  // namespace fedfreeze
