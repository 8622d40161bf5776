#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "fedfreeze/loss.hpp"
#include "fedfreeze/model.hpp"

namespace fedfreeze {

enum class Phase { Train, Eval };

constexpr double kBatchNormEpsilon = 1e-5;
constexpr double kBatchNormMomentum = 0.99;

template <typename S>
struct LayerCache {
    TensorT<S> input;
    // batch norm
    std::vector<S> mean, var, inv_std;
    TensorT<S> xhat;
    // max pool
    std::vector<int64_t> argmax;
};

template <typename S>
struct ForwardTrace {
    Phase phase = Phase::Train;
    std::vector<LayerCache<S>> caches;
    TensorT<S> output;
};

// Parameter gradients keyed by layer index; entries align with the layer's
// param tensors (batch-norm running stats get empty placeholders).
template <typename S>
struct GradientsT {
    std::map<int, std::vector<TensorT<S>>> by_layer;

    bool empty() const { return by_layer.empty(); }
};

namespace detail {

struct ConvGeometry {
    int out_h, out_w, pad_top, pad_left;
};

inline ConvGeometry conv_geometry(const LayerSpec& l) {
    const int in_h = l.input_shape[0], in_w = l.input_shape[1];
    ConvGeometry g{l.output_shape[0], l.output_shape[1], 0, 0};
    if (l.padding == Padding::Same) {
        const int pad_h = std::max((g.out_h - 1) * l.stride + l.kernel - in_h, 0);
        const int pad_w = std::max((g.out_w - 1) * l.stride + l.kernel - in_w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    }
    return g;
}

template <typename S>
TensorT<S> with_batch(const std::vector<int>& dims, int batch) {
    std::vector<int> shape;
    shape.reserve(dims.size() + 1);
    shape.push_back(batch);
    shape.insert(shape.end(), dims.begin(), dims.end());
    return TensorT<S>(shape);
}

template <typename S>
void dense_forward(const LayerSpec& l, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                   TensorT<S>& y) {
    const int batch = x.shape[0], in = l.input_shape[0], out = l.units;
    for (int n = 0; n < batch; ++n) {
        const S* xr = x.ptr() + static_cast<size_t>(n) * in;
        S* yr = y.ptr() + static_cast<size_t>(n) * out;
        for (int u = 0; u < out; ++u) yr[u] = b[static_cast<size_t>(u)];
        for (int d = 0; d < in; ++d) {
            const S xv = xr[d];
            const S* wr = w.ptr() + static_cast<size_t>(d) * out;
            for (int u = 0; u < out; ++u) yr[u] += xv * wr[u];
        }
    }
}

template <typename S>
void conv2d_forward(const LayerSpec& l, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                    TensorT<S>& y) {
    const ConvGeometry g = conv_geometry(l);
    const int batch = x.shape[0];
    const int in_h = l.input_shape[0], in_w = l.input_shape[1], cin = l.input_shape[2];
    const int k = l.kernel, f = l.filters, s = l.stride;
    for (int n = 0; n < batch; ++n) {
        const S* xn = x.ptr() + static_cast<size_t>(n) * in_h * in_w * cin;
        S* yn = y.ptr() + static_cast<size_t>(n) * g.out_h * g.out_w * f;
        for (int oh = 0; oh < g.out_h; ++oh)
            for (int ow = 0; ow < g.out_w; ++ow) {
                S* yo = yn + (static_cast<size_t>(oh) * g.out_w + ow) * f;
                for (int c = 0; c < f; ++c) yo[c] = b[static_cast<size_t>(c)];
                for (int kh = 0; kh < k; ++kh) {
                    const int ih = oh * s + kh - g.pad_top;
                    if (ih < 0 || ih >= in_h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int iw = ow * s + kw - g.pad_left;
                        if (iw < 0 || iw >= in_w) continue;
                        const S* xi = xn + (static_cast<size_t>(ih) * in_w + iw) * cin;
                        const S* wk = w.ptr() + (static_cast<size_t>(kh) * k + kw) * cin * f;
                        for (int c = 0; c < cin; ++c) {
                            const S xv = xi[c];
                            const S* wc = wk + static_cast<size_t>(c) * f;
                            for (int fo = 0; fo < f; ++fo) yo[fo] += xv * wc[fo];
                        }
                    }
                }
            }
    }
}

template <typename S>
void batchnorm_forward(const LayerSpec& l, const std::vector<TensorT<S>>& params, const TensorT<S>& x,
                       Phase phase, TensorT<S>& y, LayerCache<S>* cache) {
    const int channels = l.input_shape.back();
    const size_t n = x.numel();
    const size_t rows = n / static_cast<size_t>(channels);
    const auto& gamma = params[0];
    const auto& beta = params[1];

    std::vector<S> mean(static_cast<size_t>(channels)), var(static_cast<size_t>(channels)),
        inv_std(static_cast<size_t>(channels));
    if (phase == Phase::Train) {
        std::vector<double> sum(static_cast<size_t>(channels), 0.0),
            sumsq(static_cast<size_t>(channels), 0.0);
        for (size_t r = 0; r < rows; ++r) {
            const S* xr = x.ptr() + r * static_cast<size_t>(channels);
            for (int c = 0; c < channels; ++c) {
                const double v = static_cast<double>(xr[c]);
                sum[static_cast<size_t>(c)] += v;
                sumsq[static_cast<size_t>(c)] += v * v;
            }
        }
        for (int c = 0; c < channels; ++c) {
            const double m = sum[static_cast<size_t>(c)] / static_cast<double>(rows);
            const double v = std::max(sumsq[static_cast<size_t>(c)] / static_cast<double>(rows) - m * m, 0.0);
            mean[static_cast<size_t>(c)] = static_cast<S>(m);
            var[static_cast<size_t>(c)] = static_cast<S>(v);
            inv_std[static_cast<size_t>(c)] = static_cast<S>(1.0 / std::sqrt(v + kBatchNormEpsilon));
        }
    } else {
        const auto& rm = params[2];
        const auto& rv = params[3];
        for (int c = 0; c < channels; ++c) {
            mean[static_cast<size_t>(c)] = rm[static_cast<size_t>(c)];
            var[static_cast<size_t>(c)] = rv[static_cast<size_t>(c)];
            inv_std[static_cast<size_t>(c)] = static_cast<S>(
                1.0 / std::sqrt(static_cast<double>(rv[static_cast<size_t>(c)]) + kBatchNormEpsilon));
        }
    }

    TensorT<S> xhat(x.shape);
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = x.ptr() + r * static_cast<size_t>(channels);
        S* hr = xhat.ptr() + r * static_cast<size_t>(channels);
        S* yr = y.ptr() + r * static_cast<size_t>(channels);
        for (int c = 0; c < channels; ++c) {
            const size_t ci = static_cast<size_t>(c);
            hr[c] = (xr[c] - mean[ci]) * inv_std[ci];
            yr[c] = gamma[ci] * hr[c] + beta[ci];
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->var = std::move(var);
        cache->inv_std = std::move(inv_std);
        cache->xhat = std::move(xhat);
    }
}

template <typename S>
void pool_forward(const LayerSpec& l, const TensorT<S>& x, TensorT<S>& y, LayerCache<S>* cache) {
    const int batch = x.shape[0];
    const int in_h = l.input_shape[0], in_w = l.input_shape[1], c = l.input_shape[2];
    const int out_h = l.output_shape[0], out_w = l.output_shape[1];
    const int p = l.pool, s = l.stride;
    const bool is_max = l.kind == LayerKind::MaxPool;
    if (cache && is_max) cache->argmax.assign(y.numel(), 0);
    for (int n = 0; n < batch; ++n) {
        const size_t x_base = static_cast<size_t>(n) * in_h * in_w * c;
        const size_t y_base = static_cast<size_t>(n) * out_h * out_w * c;
        for (int oh = 0; oh < out_h; ++oh)
            for (int ow = 0; ow < out_w; ++ow)
                for (int ch = 0; ch < c; ++ch) {
                    const size_t yi = y_base + (static_cast<size_t>(oh) * out_w + ow) * c +
                                      static_cast<size_t>(ch);
                    if (is_max) {
                        size_t best_idx = 0;
                        S best = S(0);
                        bool first = true;
                        for (int kh = 0; kh < p; ++kh)
                            for (int kw = 0; kw < p; ++kw) {
                                const size_t xi =
                                    x_base +
                                    (static_cast<size_t>(oh * s + kh) * in_w + (ow * s + kw)) * c +
                                    static_cast<size_t>(ch);
                                if (first || x[xi] > best) {
                                    best = x[xi];
                                    best_idx = xi;
                                    first = false;
                                }
                            }
                        y[yi] = best;
                        if (cache) cache->argmax[yi] = static_cast<int64_t>(best_idx);
                    } else {
                        double acc = 0.0;
                        for (int kh = 0; kh < p; ++kh)
                            for (int kw = 0; kw < p; ++kw) {
                                const size_t xi =
                                    x_base +
                                    (static_cast<size_t>(oh * s + kh) * in_w + (ow * s + kw)) * c +
                                    static_cast<size_t>(ch);
                                acc += static_cast<double>(x[xi]);
                            }
                        y[yi] = static_cast<S>(acc / (p * p));
                    }
                }
    }
}

template <typename S>
void softmax_rows(const TensorT<S>& x, TensorT<S>& y) {
    const size_t classes = static_cast<size_t>(x.shape.back());
    const size_t rows = x.numel() / classes;
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = x.ptr() + r * classes;
        S* yr = y.ptr() + r * classes;
        S mx = xr[0];
        for (size_t c = 1; c < classes; ++c) mx = std::max(mx, xr[c]);
        double denom = 0.0;
        for (size_t c = 0; c < classes; ++c) {
            const double e = std::exp(static_cast<double>(xr[c] - mx));
            yr[c] = static_cast<S>(e);
            denom += e;
        }
        for (size_t c = 0; c < classes; ++c) yr[c] = static_cast<S>(static_cast<double>(yr[c]) / denom);
    }
}

}  // namespace detail

// Inference/training pass. BatchNorm normalizes with batch statistics in
// Train phase and running statistics in Eval; running statistics are never
// mutated here (train_step owns that, gated on the freeze mask).
template <typename S>
TensorT<S> forward(const ModelT<S>& model, const TensorT<S>& batch, Phase phase,
                   ForwardTrace<S>* trace = nullptr) {
    const auto& arch = model.arch;
    if (batch.shape.empty() || batch.shape.size() != arch.input_shape.size() + 1)
        throw ShapeError("batch rank does not match architecture input " +
                         shape_str(arch.input_shape));
    for (size_t i = 0; i < arch.input_shape.size(); ++i)
        if (batch.shape[i + 1] != arch.input_shape[i])
            throw ShapeError("batch shape " + shape_str(batch.shape) +
                             " does not match architecture input " + shape_str(arch.input_shape));
    const int n = batch.shape[0];

    if (trace) {
        trace->phase = phase;
        trace->caches.assign(arch.layers.size(), LayerCache<S>{});
    }

    require_finite(batch, "forward input batch");
    TensorT<S> x = batch;
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        LayerCache<S>* cache = trace ? &trace->caches[i] : nullptr;
        if (cache) cache->input = x;
        TensorT<S> y = detail::with_batch<S>(l.output_shape, n);
        switch (l.kind) {
            case LayerKind::Dense:
                detail::dense_forward(l, x, model.params[i][0], model.params[i][1], y);
                break;
            case LayerKind::Conv2D:
                detail::conv2d_forward(l, x, model.params[i][0], model.params[i][1], y);
                break;
            case LayerKind::BatchNorm:
                detail::batchnorm_forward(l, model.params[i], x, phase, y, cache);
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                detail::pool_forward(l, x, y, cache);
                break;
            case LayerKind::Flatten:
                y.data = x.data;
                break;
            case LayerKind::ReLU:
                for (size_t j = 0; j < x.numel(); ++j) y[j] = x[j] > S(0) ? x[j] : S(0);
                break;
            case LayerKind::Softmax:
                detail::softmax_rows(x, y);
                break;
        }
        if (!y.all_finite())
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                               l.label + ")");
        x = std::move(y);
    }
    if (trace) trace->output = x;
    return x;
}

namespace detail {

template <typename S>
void dense_backward(const LayerSpec& l, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& g,
                    TensorT<S>& gin, std::vector<TensorT<S>>* pg) {
    const int batch = x.shape[0], in = l.input_shape[0], out = l.units;
    if (pg) {
        auto& dw = (*pg)[0];
        auto& db = (*pg)[1];
        for (int n = 0; n < batch; ++n) {
            const S* xr = x.ptr() + static_cast<size_t>(n) * in;
            const S* gr = g.ptr() + static_cast<size_t>(n) * out;
            for (int d = 0; d < in; ++d) {
                const S xv = xr[d];
                S* dwr = dw.ptr() + static_cast<size_t>(d) * out;
                for (int u = 0; u < out; ++u) dwr[u] += xv * gr[u];
            }
            for (int u = 0; u < out; ++u) db[static_cast<size_t>(u)] += gr[u];
        }
    }
    for (int n = 0; n < batch; ++n) {
        const S* gr = g.ptr() + static_cast<size_t>(n) * out;
        S* gi = gin.ptr() + static_cast<size_t>(n) * in;
        for (int d = 0; d < in; ++d) {
            const S* wr = w.ptr() + static_cast<size_t>(d) * out;
            S acc = S(0);
            for (int u = 0; u < out; ++u) acc += wr[u] * gr[u];
            gi[d] = acc;
        }
    }
}

template <typename S>
void conv2d_backward(const LayerSpec& l, const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& g,
                     TensorT<S>& gin, std::vector<TensorT<S>>* pg) {
    const ConvGeometry geo = conv_geometry(l);
    const int batch = x.shape[0];
    const int in_h = l.input_shape[0], in_w = l.input_shape[1], cin = l.input_shape[2];
    const int k = l.kernel, f = l.filters, s = l.stride;
    TensorT<S>* dw = pg ? &(*pg)[0] : nullptr;
    TensorT<S>* db = pg ? &(*pg)[1] : nullptr;
    for (int n = 0; n < batch; ++n) {
        const S* xn = x.ptr() + static_cast<size_t>(n) * in_h * in_w * cin;
        const S* gn = g.ptr() + static_cast<size_t>(n) * geo.out_h * geo.out_w * f;
        S* gi = gin.ptr() + static_cast<size_t>(n) * in_h * in_w * cin;
        for (int oh = 0; oh < geo.out_h; ++oh)
            for (int ow = 0; ow < geo.out_w; ++ow) {
                const S* go = gn + (static_cast<size_t>(oh) * geo.out_w + ow) * f;
                if (db)
                    for (int fo = 0; fo < f; ++fo) (*db)[static_cast<size_t>(fo)] += go[fo];
                for (int kh = 0; kh < k; ++kh) {
                    const int ih = oh * s + kh - geo.pad_top;
                    if (ih < 0 || ih >= in_h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int iw = ow * s + kw - geo.pad_left;
                        if (iw < 0 || iw >= in_w) continue;
                        const S* xi = xn + (static_cast<size_t>(ih) * in_w + iw) * cin;
                        S* gii = gi + (static_cast<size_t>(ih) * in_w + iw) * cin;
                        const size_t w_off = (static_cast<size_t>(kh) * k + kw) * cin * f;
                        for (int c = 0; c < cin; ++c) {
                            const S* wc = w.ptr() + w_off + static_cast<size_t>(c) * f;
                            S acc = S(0);
                            for (int fo = 0; fo < f; ++fo) acc += wc[fo] * go[fo];
                            gii[c] += acc;
                            if (dw) {
                                S* dwc = dw->ptr() + w_off + static_cast<size_t>(c) * f;
                                const S xv = xi[c];
                                for (int fo = 0; fo < f; ++fo) dwc[fo] += xv * go[fo];
                            }
                        }
                    }
                }
            }
    }
}

template <typename S>
void batchnorm_backward(const LayerSpec& l, const LayerCache<S>& cache, const TensorT<S>& gamma,
                        Phase phase, const TensorT<S>& g, TensorT<S>& gin,
                        std::vector<TensorT<S>>* pg) {
    const int channels = l.input_shape.back();
    const size_t rows = g.numel() / static_cast<size_t>(channels);
    std::vector<double> sum_g(static_cast<size_t>(channels), 0.0),
        sum_gx(static_cast<size_t>(channels), 0.0);
    for (size_t r = 0; r < rows; ++r) {
        const S* gr = g.ptr() + r * static_cast<size_t>(channels);
        const S* hr = cache.xhat.ptr() + r * static_cast<size_t>(channels);
        for (int c = 0; c < channels; ++c) {
            sum_g[static_cast<size_t>(c)] += static_cast<double>(gr[c]);
            sum_gx[static_cast<size_t>(c)] += static_cast<double>(gr[c]) * static_cast<double>(hr[c]);
        }
    }
    if (pg) {
        auto& dgamma = (*pg)[0];
        auto& dbeta = (*pg)[1];
        for (int c = 0; c < channels; ++c) {
            dgamma[static_cast<size_t>(c)] += static_cast<S>(sum_gx[static_cast<size_t>(c)]);
            dbeta[static_cast<size_t>(c)] += static_cast<S>(sum_g[static_cast<size_t>(c)]);
        }
    }
    const double m = static_cast<double>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const S* gr = g.ptr() + r * static_cast<size_t>(channels);
        const S* hr = cache.xhat.ptr() + r * static_cast<size_t>(channels);
        S* gi = gin.ptr() + r * static_cast<size_t>(channels);
        for (int c = 0; c < channels; ++c) {
            const size_t ci = static_cast<size_t>(c);
            const double scale = static_cast<double>(gamma[ci]) * static_cast<double>(cache.inv_std[ci]);
            if (phase == Phase::Train) {
                gi[c] = static_cast<S>(scale * (static_cast<double>(gr[c]) - sum_g[ci] / m -
                                                static_cast<double>(hr[c]) * sum_gx[ci] / m));
            } else {
                gi[c] = static_cast<S>(scale * static_cast<double>(gr[c]));
            }
        }
    }
}

template <typename S>
void pool_backward(const LayerSpec& l, const LayerCache<S>& cache, const TensorT<S>& g,
                   TensorT<S>& gin) {
    if (l.kind == LayerKind::MaxPool) {
        for (size_t i = 0; i < g.numel(); ++i) gin[static_cast<size_t>(cache.argmax[i])] += g[i];
        return;
    }
    const int batch = g.shape[0];
    const int in_h = l.input_shape[0], in_w = l.input_shape[1], c = l.input_shape[2];
    const int out_h = l.output_shape[0], out_w = l.output_shape[1];
    const int p = l.pool, s = l.stride;
    const S inv_area = static_cast<S>(1.0 / (p * p));
    for (int n = 0; n < batch; ++n) {
        const size_t g_base = static_cast<size_t>(n) * out_h * out_w * c;
        const size_t x_base = static_cast<size_t>(n) * in_h * in_w * c;
        for (int oh = 0; oh < out_h; ++oh)
            for (int ow = 0; ow < out_w; ++ow)
                for (int ch = 0; ch < c; ++ch) {
                    const S gv = g[g_base + (static_cast<size_t>(oh) * out_w + ow) * c +
                                   static_cast<size_t>(ch)] *
                                 inv_area;
                    for (int kh = 0; kh < p; ++kh)
                        for (int kw = 0; kw < p; ++kw)
                            gin[x_base +
                                (static_cast<size_t>(oh * s + kh) * in_w + (ow * s + kw)) * c +
                                static_cast<size_t>(ch)] += gv;
                }
    }
}

// generic softmax jacobian product, for softmax anywhere but the fused tail
template <typename S>
void softmax_backward(const TensorT<S>& y, const TensorT<S>& g, TensorT<S>& gin) {
    const size_t classes = static_cast<size_t>(y.shape.back());
    const size_t rows = y.numel() / classes;
    for (size_t r = 0; r < rows; ++r) {
        const S* yr = y.ptr() + r * classes;
        const S* gr = g.ptr() + r * classes;
        S* gi = gin.ptr() + r * classes;
        double dot = 0.0;
        for (size_t c = 0; c < classes; ++c) dot += static_cast<double>(gr[c]) * static_cast<double>(yr[c]);
        for (size_t c = 0; c < classes; ++c)
            gi[c] = static_cast<S>(static_cast<double>(yr[c]) * (static_cast<double>(gr[c]) - dot));
    }
}

}  // namespace detail

// Backprop of mean cross-entropy. The final layer must be Softmax; the pass
// starts from the fused softmax+cross-entropy logits gradient (probs -
// onehot)/batch. Parameter gradients are produced exactly for layers whose
// unit is in the mask; every layer still propagates its input gradient so
// trainable layers upstream of frozen ones learn.
template <typename S>
GradientsT<S> backward(const ModelT<S>& model, const ForwardTrace<S>& trace,
                       const std::vector<int>& labels, const FreezeMask& mask) {
    const auto& arch = model.arch;
    const int n_layers = arch.num_layers();
    if (n_layers == 0 || arch.layers.back().kind != LayerKind::Softmax)
        throw ShapeError("backward requires a softmax output layer");
    const size_t batch = static_cast<size_t>(trace.output.shape[0]);
    const size_t classes = static_cast<size_t>(trace.output.shape.back());
    if (labels.size() != batch) throw ShapeError("label count does not match batch size");

    std::vector<char> layer_selected(static_cast<size_t>(n_layers), 0);
    for (int li : mask.layer_indices(arch)) layer_selected[static_cast<size_t>(li)] = 1;

    GradientsT<S> grads;
    for (int i = 0; i < n_layers; ++i) {
        if (!layer_selected[static_cast<size_t>(i)]) continue;
        const LayerSpec& l = arch.layers[static_cast<size_t>(i)];
        std::vector<TensorT<S>> gs;
        if (l.kind == LayerKind::BatchNorm) {
            const int c = l.input_shape.back();
            gs.emplace_back(std::vector<int>{c});
            gs.emplace_back(std::vector<int>{c});
            gs.emplace_back();  // running mean: not a gradient parameter
            gs.emplace_back();  // running var
        } else {
            for (const auto& shp : param_shapes(l)) gs.emplace_back(shp);
        }
        grads.by_layer.emplace(i, std::move(gs));
    }

    // fused softmax + cross-entropy start
    TensorT<S> g(trace.output.shape);
    for (size_t b = 0; b < batch; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<size_t>(y) >= classes) throw ShapeError("label out of class range");
        for (size_t c = 0; c < classes; ++c) {
            const double p = static_cast<double>(trace.output[b * classes + c]);
            const double t = (static_cast<size_t>(y) == c) ? 1.0 : 0.0;
            g[b * classes + c] = static_cast<S>((p - t) / static_cast<double>(batch));
        }
    }

    for (int i = n_layers - 2; i >= 0; --i) {
        const LayerSpec& l = arch.layers[static_cast<size_t>(i)];
        const LayerCache<S>& cache = trace.caches[static_cast<size_t>(i)];
        const bool want_pg = layer_selected[static_cast<size_t>(i)] != 0;
        std::vector<TensorT<S>>* pg = want_pg ? &grads.by_layer.at(i) : nullptr;
        TensorT<S> gin(cache.input.shape);
        switch (l.kind) {
            case LayerKind::Dense:
                detail::dense_backward(l, cache.input, model.params[static_cast<size_t>(i)][0], g, gin,
                                       pg);
                break;
            case LayerKind::Conv2D:
                detail::conv2d_backward(l, cache.input, model.params[static_cast<size_t>(i)][0], g, gin,
                                        pg);
                break;
            case LayerKind::BatchNorm:
                detail::batchnorm_backward(l, cache, model.params[static_cast<size_t>(i)][0],
                                           trace.phase, g, gin, pg);
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                detail::pool_backward(l, cache, g, gin);
                break;
            case LayerKind::Flatten:
                gin.data = g.data;
                break;
            case LayerKind::ReLU:
                for (size_t j = 0; j < g.numel(); ++j)
                    gin[j] = cache.input[j] > S(0) ? g[j] : S(0);
                break;
            case LayerKind::Softmax: {
                const TensorT<S>& y = trace.caches[static_cast<size_t>(i) + 1].input;
                detail::softmax_backward(y, g, gin);
                break;
            }
        }
        g = std::move(gin);
    }

    for (const auto& [li, gs] : grads.by_layer)
        for (const auto& t : gs)
            if (t.numel() && !t.all_finite())
                throw NumericError("non-finite gradient in layer " + std::to_string(li));
    return grads;
}

// Convenience form running its own forward pass.
template <typename S>
GradientsT<S> backward(const ModelT<S>& model, const TensorT<S>& batch, const std::vector<int>& labels,
                       const FreezeMask& mask) {
    ForwardTrace<S> trace;
    forward(model, batch, Phase::Train, &trace);
    return backward(model, trace, labels, mask);
}

// Updates running statistics of masked batch-norm layers from the batch
// statistics recorded in the trace. Frozen batch-norm layers keep their
// stats untouched, so layers outside the round's selection stay bit-exact.
template <typename S>
void update_batchnorm_stats(ModelT<S>& model, const ForwardTrace<S>& trace, const FreezeMask& mask,
                            double momentum = kBatchNormMomentum) {
    if (trace.phase != Phase::Train) return;
    std::vector<char> selected(model.arch.layers.size(), 0);
    for (int li : mask.layer_indices(model.arch)) selected[static_cast<size_t>(li)] = 1;
    for (size_t i = 0; i < model.arch.layers.size(); ++i) {
        if (!selected[i] || model.arch.layers[i].kind != LayerKind::BatchNorm) continue;
        const auto& cache = trace.caches[i];
        auto& rm = model.params[i][2];
        auto& rv = model.params[i][3];
        for (size_t c = 0; c < rm.numel(); ++c) {
            rm[c] = static_cast<S>(momentum * static_cast<double>(rm[c]) +
                                   (1.0 - momentum) * static_cast<double>(cache.mean[c]));
            rv[c] = static_cast<S>(momentum * static_cast<double>(rv[c]) +
                                   (1.0 - momentum) * static_cast<double>(cache.var[c]));
        }
    }
}

}  // namespace fedfreeze
