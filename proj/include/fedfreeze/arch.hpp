#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfreeze/errors.hpp"
#include "fedfreeze/tensor.hpp"

namespace fedfreeze {

enum class LayerKind { Dense, Conv2D, BatchNorm, MaxPool, AvgPool, Flatten, ReLU, Softmax };

enum class Padding { Same, Valid };

const char* kind_name(LayerKind k);           // canonical JSON name ("conv2d", ...)
const char* kind_table_name(LayerKind k);     // report-style name ("batch_normalization", "activation", ...)
LayerKind kind_from_name(const std::string& name);

// One layer of an architecture: configuration plus everything shape
// inference derives from it. param_count follows the closed forms
//   Conv2D:    (k*k*c_in + 1) * c_out
//   Dense:     (n_in + 1) * n_out
//   BatchNorm: 4*C total, of which 2*C (gamma, beta) receive gradients
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int units = 0;       // Dense
    int filters = 0;     // Conv2D
    int kernel = 0;      // Conv2D (square)
    int stride = 1;      // Conv2D / pools
    int pool = 2;        // pools
    Padding padding = Padding::Same;  // Conv2D only; pools are valid

    // derived
    std::vector<int> input_shape;
    std::vector<int> output_shape;
    int64_t param_count = 0;
    int64_t trainable_param_count = 0;
    std::string label;  // keras-style: "conv2d", "conv2d_1", ...

    bool parameterized() const { return param_count > 0; }
};

// A selectable group of layers: a conv (or dense) plus its adjacent batch
// norm. The random layer selection of a round operates on unit indices.
struct TrainableUnit {
    std::vector<int> layer_indices;
    int64_t param_count = 0;
};

struct ArchitectureDescriptor {
    std::string name;
    std::vector<int> input_shape;
    std::vector<LayerSpec> layers;
    std::vector<TrainableUnit> units;
    std::vector<int> layer_unit;  // unit index per layer, -1 for unparameterized

    int64_t total_params() const {
        int64_t t = 0;
        for (const auto& l : layers) t += l.param_count;
        return t;
    }
    int trainable_units() const { return static_cast<int>(units.size()); }
    int num_layers() const { return static_cast<int>(layers.size()); }
};

struct ParameterCountReport {
    int64_t total = 0;
    std::vector<int64_t> per_layer;
    int trainable_units = 0;
};

// Runs shape inference over `layers`, filling derived fields and the
// trainable-unit table. Throws ShapeError on dimension mismatches.
ArchitectureDescriptor finalize_architecture(std::string name, std::vector<int> input_shape,
                                             std::vector<LayerSpec> layers);

ParameterCountReport count_parameters(const ArchitectureDescriptor& arch);

// JSON descriptor files: {"name": ..., "input_shape": [...], "layers": [{"kind": ...}, ...]}
ArchitectureDescriptor load_architecture_json(const std::string& text);
ArchitectureDescriptor load_architecture_file(const std::string& path);
std::string architecture_to_json(const ArchitectureDescriptor& arch);

// Parameter tensor shapes for one layer, in canonical order:
//   Dense {W [in,out], b [out]}, Conv2D {W [k,k,cin,cout], b [cout]},
//   BatchNorm {gamma, beta, running_mean, running_var — all [C]}.
std::vector<std::vector<int>> param_shapes(const LayerSpec& spec);

}  // namespace fedfreeze
