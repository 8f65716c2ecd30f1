#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dpap/rng.hpp"
#include "dpap/topology.hpp"

namespace dpap {

/// Weights, bias, and prune masks of one conv or fc layer.
///
/// Masks are 0/1 tensors. `synapse_mask` has one entry per pre/post pair:
/// [out_channels, in_channels] for conv (a cleared entry silences the whole
/// k*k kernel slice) and [out_features, in_features] for fc. `neuron_mask`
/// has one entry per output unit; clearing it silences the unit's incoming
/// row and bias. Cleared entries never come back.
template <typename Scalar>
struct ParamLayer {
    int geom_index = 0;  // position in the bound layer list
    bool is_conv = false;
    int n_pre = 0;   // synapse-mask columns
    int n_post = 0;  // synapse-mask rows
    Tensor<Scalar> w;  // conv [Cout,Cin,K,K], fc [M,N]
    Tensor<Scalar> b;  // [Cout] or [M]
    Tensor<Scalar> synapse_mask;  // [n_post, n_pre]
    Tensor<Scalar> neuron_mask;   // [n_post]

    /// Forces weights and bias to zero wherever a mask is cleared.
    void apply_masks() {
        if (is_conv) {
            const int k = w.dim(2);
            for (int po = 0; po < n_post; ++po) {
                const bool unit_dead = neuron_mask(po) == Scalar(0);
                for (int pi = 0; pi < n_pre; ++pi) {
                    if (!unit_dead && synapse_mask(po, pi) != Scalar(0)) continue;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw) w(po, pi, kh, kw) = Scalar(0);
                }
                if (unit_dead) b(po) = Scalar(0);
            }
        } else {
            for (int po = 0; po < n_post; ++po) {
                const bool unit_dead = neuron_mask(po) == Scalar(0);
                for (int pi = 0; pi < n_pre; ++pi) {
                    if (unit_dead || synapse_mask(po, pi) == Scalar(0)) w(po, pi) = Scalar(0);
                }
                if (unit_dead) b(po) = Scalar(0);
            }
        }
    }

    std::int64_t weight_count() const { return static_cast<std::int64_t>(w.size()); }

    /// Weights still trainable under the current masks.
    std::int64_t retained_weight_count() const {
        const std::int64_t per_synapse = is_conv ? static_cast<std::int64_t>(w.dim(2)) * w.dim(3) : 1;
        std::int64_t alive = 0;
        for (int po = 0; po < n_post; ++po) {
            if (neuron_mask(po) == Scalar(0)) continue;
            for (int pi = 0; pi < n_pre; ++pi)
                if (synapse_mask(po, pi) != Scalar(0)) alive += per_synapse;
        }
        return alive;
    }
};

/// A bound topology plus per-layer parameters. `geoms` covers every layer;
/// `layers` covers only the weighted ones, in order.
template <typename Scalar>
struct Model {
    std::vector<LayerGeom> geoms;
    std::vector<ParamLayer<Scalar>> layers;

    static Model build(std::vector<LayerGeom> geoms, std::uint64_t seed) {
        Model m;
        m.geoms = std::move(geoms);
        for (size_t gi = 0; gi < m.geoms.size(); ++gi) {
            const LayerGeom& g = m.geoms[gi];
            if (!g.weighted()) continue;
            ParamLayer<Scalar> layer;
            layer.geom_index = static_cast<int>(gi);
            layer.is_conv = g.kind == LayerKind::Conv;
            Rng rng(derive_seed(seed, 0x696e6974, m.layers.size()));
            int fan_in = 0;
            if (layer.is_conv) {
                const ConvSpec& c = g.conv;
                layer.n_pre = c.in_channels;
                layer.n_post = c.out_channels;
                fan_in = c.in_channels * c.kernel_size * c.kernel_size;
                layer.w = Tensor<Scalar>({c.out_channels, c.in_channels, c.kernel_size, c.kernel_size});
            } else {
                layer.n_pre = g.in_features;
                layer.n_post = g.out_features;
                fan_in = g.in_features;
                layer.w = Tensor<Scalar>({g.out_features, g.in_features});
            }
            const double bound = std::sqrt(6.0 / fan_in);
            for (auto& v : layer.w.storage()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
            layer.b = Tensor<Scalar>::zeros({layer.n_post});
            layer.synapse_mask = Tensor<Scalar>::full({layer.n_post, layer.n_pre}, Scalar(1));
            layer.neuron_mask = Tensor<Scalar>::full({layer.n_post}, Scalar(1));
            m.layers.push_back(std::move(layer));
        }
        return m;
    }

    void apply_masks() {
        for (auto& l : layers) l.apply_masks();
    }

    std::int64_t total_weights() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.weight_count();
        return n;
    }

    std::int64_t retained_weights() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.retained_weight_count();
        return n;
    }

    template <typename Other>
    Model<Other> cast() const {
        Model<Other> out;
        out.geoms = geoms;
        for (const auto& l : layers) {
            ParamLayer<Other> o;
            o.geom_index = l.geom_index;
            o.is_conv = l.is_conv;
            o.n_pre = l.n_pre;
            o.n_post = l.n_post;
            o.w = l.w.template cast<Other>();
            o.b = l.b.template cast<Other>();
            o.synapse_mask = l.synapse_mask.template cast<Other>();
            o.neuron_mask = l.neuron_mask.template cast<Other>();
            out.layers.push_back(std::move(o));
        }
        return out;
    }
};

template <typename Scalar>
struct LayerGrads {
    Tensor<Scalar> w, b;
};

namespace detail {

/// Applies the stateless layers with geometry indices in (from, to) to `cur`,
/// optionally saving each transform's input for the backward pass.
template <typename Scalar>
Tensor<Scalar> apply_transforms(const Model<Scalar>& model, int from_geom, int to_geom,
                                Tensor<Scalar> cur,
                                std::vector<Tensor<Scalar>>* saved_inputs = nullptr) {
    for (int gi = from_geom + 1; gi < to_geom; ++gi) {
        const LayerGeom& g = model.geoms[gi];
        if (saved_inputs) saved_inputs->push_back(cur);
        switch (g.kind) {
            case LayerKind::AvgPool: cur = avgpool2_forward(cur); break;
            case LayerKind::MaxPool: cur = maxpool2_forward(cur); break;
            case LayerKind::Flatten: {
                const int batch = cur.dim(0);
                cur = cur.reshaped({batch, static_cast<int>(cur.size()) / batch});
                break;
            }
            default: fail("unexpected weighted layer inside a transform chain");
        }
    }
    return cur;
}

/// Pushes `grad` (with respect to the transform-chain output) back to the
/// chain input, recomputing pooling inputs from `chain_input`.
template <typename Scalar>
Tensor<Scalar> transforms_backward(const Model<Scalar>& model, int from_geom, int to_geom,
                                   const Tensor<Scalar>& chain_input, Tensor<Scalar> grad) {
    std::vector<Tensor<Scalar>> inputs;
    Tensor<Scalar> out = apply_transforms(model, from_geom, to_geom, chain_input, &inputs);
    if (!grad.same_shape(out)) grad = grad.reshaped(out.shape());
    for (int gi = to_geom - 1; gi > from_geom; --gi) {
        const Tensor<Scalar>& in = inputs[gi - from_geom - 1];
        switch (model.geoms[gi].kind) {
            case LayerKind::AvgPool: grad = avgpool2_backward(grad); break;
            case LayerKind::MaxPool: grad = maxpool2_backward(grad, in); break;
            case LayerKind::Flatten: grad = grad.reshaped(in.shape()); break;
            default: fail("unexpected weighted layer inside a transform chain");
        }
    }
    return grad;
}

/// Current into a weighted layer: x holds the already-transformed input.
template <typename Scalar>
Tensor<Scalar> weighted_forward(const ParamLayer<Scalar>& layer, const LayerGeom& g,
                                const Tensor<Scalar>& x) {
    if (layer.is_conv) return conv2d_forward(x, layer.w, layer.b, g.conv);
    return linear_forward(x, layer.w, layer.b);
}

template <typename Scalar>
std::vector<LayerGrads<Scalar>> zero_grads(const Model<Scalar>& model) {
    std::vector<LayerGrads<Scalar>> grads;
    for (const auto& layer : model.layers)
        grads.push_back(
            {Tensor<Scalar>::zeros(layer.w.shape()), Tensor<Scalar>::zeros(layer.b.shape())});
    return grads;
}

template <typename Scalar>
void mask_grads(const Model<Scalar>& model, std::vector<LayerGrads<Scalar>>& grads) {
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const ParamLayer<Scalar>& layer = model.layers[l];
        LayerGrads<Scalar>& g = grads[l];
        for (int po = 0; po < layer.n_post; ++po) {
            const bool unit_dead = layer.neuron_mask(po) == Scalar(0);
            for (int pi = 0; pi < layer.n_pre; ++pi) {
                if (!unit_dead && layer.synapse_mask(po, pi) != Scalar(0)) continue;
                if (layer.is_conv) {
                    const int k = layer.w.dim(2);
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw) g.w(po, pi, kh, kw) = Scalar(0);
                } else {
                    g.w(po, pi) = Scalar(0);
                }
            }
            if (unit_dead) g.b(po) = Scalar(0);
        }
    }
}

}  // namespace detail

/// Accumulates `other` into `into` elementwise; both must come from the same
/// model. Used to combine gradients of fixed batch slices in slice order.
template <typename Scalar>
void add_grads(std::vector<LayerGrads<Scalar>>& into, const std::vector<LayerGrads<Scalar>>& other) {
    DPAP_CHECK(into.size() == other.size(), "gradient lists differ in layer count");
    for (size_t l = 0; l < into.size(); ++l) {
        for (size_t i = 0; i < into[l].w.size(); ++i) into[l].w[i] += other[l].w[i];
        for (size_t i = 0; i < into[l].b.size(); ++i) into[l].b[i] += other[l].b[i];
    }
}

template <typename Scalar>
struct OptState {
    std::vector<LayerGrads<Scalar>> velocity;
};

/// Plain SGD with optional classical momentum; masked entries are forced back
/// to zero after the update.
template <typename Scalar>
void sgd_step(Model<Scalar>& model, const std::vector<LayerGrads<Scalar>>& grads, Scalar lr,
              Scalar momentum = Scalar(0), OptState<Scalar>* opt = nullptr) {
    DPAP_CHECK(grads.size() == model.layers.size(), "gradient list does not match the model");
    if (momentum != Scalar(0)) {
        DPAP_CHECK(opt != nullptr, "momentum requires an optimizer state");
        if (opt->velocity.empty()) opt->velocity = detail::zero_grads(model);
    }
    for (size_t l = 0; l < model.layers.size(); ++l) {
        ParamLayer<Scalar>& layer = model.layers[l];
        if (momentum != Scalar(0)) {
            LayerGrads<Scalar>& v = opt->velocity[l];
            for (size_t i = 0; i < layer.w.size(); ++i) {
                v.w[i] = momentum * v.w[i] + grads[l].w[i];
                layer.w[i] -= lr * v.w[i];
            }
            for (size_t i = 0; i < layer.b.size(); ++i) {
                v.b[i] = momentum * v.b[i] + grads[l].b[i];
                layer.b[i] -= lr * v.b[i];
            }
        } else {
            for (size_t i = 0; i < layer.w.size(); ++i) layer.w[i] -= lr * grads[l].w[i];
            for (size_t i = 0; i < layer.b.size(); ++i) layer.b[i] -= lr * grads[l].b[i];
        }
    }
    model.apply_masks();
}

}  // namespace dpap
