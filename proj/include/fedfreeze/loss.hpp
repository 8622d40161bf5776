#pragma once

#include <cmath>
#include <vector>

#include "fedfreeze/tensor.hpp"

namespace fedfreeze {

// Floor applied to predicted probabilities before log().
constexpr double kProbFloor = 1e-12;

// Mean categorical cross-entropy over a [B, classes] probability tensor and
// integer class labels.
template <typename S>
double mean_cross_entropy(const TensorT<S>& probs, const std::vector<int>& labels) {
    if (probs.shape.size() != 2) throw ShapeError("cross-entropy expects [batch, classes]");
    const size_t batch = static_cast<size_t>(probs.shape[0]);
    const size_t classes = static_cast<size_t>(probs.shape[1]);
    if (labels.size() != batch) throw ShapeError("label count does not match batch size");
    double total = 0.0;
    for (size_t b = 0; b < batch; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<size_t>(y) >= classes) throw ShapeError("label out of class range");
        const double p = std::max(static_cast<double>(probs[b * classes + static_cast<size_t>(y)]),
                                  kProbFloor);
        total -= std::log(p);
    }
    return total / static_cast<double>(batch);
}

template <typename S>
std::vector<int> argmax_rows(const TensorT<S>& probs) {
    if (probs.shape.size() != 2) throw ShapeError("argmax expects [batch, classes]");
    const size_t batch = static_cast<size_t>(probs.shape[0]);
    const size_t classes = static_cast<size_t>(probs.shape[1]);
    std::vector<int> out(batch);
    for (size_t b = 0; b < batch; ++b) {
        size_t best = 0;
        for (size_t c = 1; c < classes; ++c)
            if (probs[b * classes + c] > probs[b * classes + best]) best = c;
        out[b] = static_cast<int>(best);
    }
    return out;
}

}  // namespace fedfreeze
