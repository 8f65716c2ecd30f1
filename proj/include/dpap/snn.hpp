#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dpap/model.hpp"

namespace dpap {

template <typename Scalar>
struct LifParams {
    Scalar lambda = Scalar(0.2);  // leak factor
    Scalar v_th = Scalar(0.5);    // firing threshold
    Scalar a = Scalar(1);         // surrogate window width
    int T = 8;                    // simulation steps per sample

    void validate() const {
        DPAP_CHECK(lambda >= Scalar(0) && lambda <= Scalar(1),
                   "leak factor must lie in [0,1], got " << lambda);
        DPAP_CHECK(a > Scalar(0), "surrogate width must be positive, got " << a);
        DPAP_CHECK(T >= 1, "window length must be at least 1, got " << T);
    }
};

/// Spike nonlinearity selector. The default is the hard threshold with a
/// rectangular pseudo-derivative and no gradient through the reset factor.
/// The smooth variant replaces the threshold with a sigmoid of matching peak
/// slope and differentiates the reset factor too, making the whole window an
/// ordinary smooth function that finite differences can check.
template <typename Scalar>
struct SpikeModel {
    bool smooth = false;
    Scalar slope = Scalar(4);
    bool reset_grad = false;

    static SpikeModel smooth_proxy(const LifParams<Scalar>& lif) {
        return SpikeModel{true, Scalar(4) / lif.a, true};
    }

    Scalar fire(Scalar u, const LifParams<Scalar>& lif) const {
        if (smooth) return Scalar(1) / (Scalar(1) + std::exp(-slope * (u - lif.v_th)));
        return u >= lif.v_th ? Scalar(1) : Scalar(0);
    }

    Scalar fire_deriv(Scalar u, const LifParams<Scalar>& lif) const {
        if (smooth) {
            const Scalar s = fire(u, lif);
            return slope * s * (Scalar(1) - s);
        }
        return std::abs(u - lif.v_th) < lif.a / Scalar(2) ? Scalar(1) / lif.a : Scalar(0);
    }
};

/// Rectangular pseudo-derivative of the hard threshold, elementwise.
template <typename Scalar>
Tensor<Scalar> surrogate_grad(const Tensor<Scalar>& u, const LifParams<Scalar>& lif) {
    Tensor<Scalar> out(u.shape());
    const SpikeModel<Scalar> hard{};
    for (size_t i = 0; i < u.size(); ++i) out[i] = hard.fire_deriv(u[i], lif);
    return out;
}

/// One membrane update: decay the previous potential where the unit did not
/// fire, add the incoming current, threshold. Returns {u, o}.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> lif_step(const Tensor<Scalar>& u_prev,
                                                   const Tensor<Scalar>& o_prev,
                                                   const Tensor<Scalar>& input,
                                                   const LifParams<Scalar>& lif,
                                                   const SpikeModel<Scalar>& spike = {}) {
    check_same_shape(u_prev, input, "lif_step membrane vs input");
    check_same_shape(o_prev, input, "lif_step spikes vs input");
    Tensor<Scalar> u(input.shape()), o(input.shape());
    for (size_t i = 0; i < input.size(); ++i) {
        u[i] = lif.lambda * u_prev[i] * (Scalar(1) - o_prev[i]) + input[i];
        o[i] = spike.fire(u[i], lif);
    }
    return {std::move(u), std::move(o)};
}

/// Per-step tensors of one weighted layer across a simulation window.
template <typename Scalar>
struct LayerWindow {
    std::vector<Tensor<Scalar>> x;  // layer input after pooling/flatten
    std::vector<Tensor<Scalar>> u;  // membrane potential
    std::vector<Tensor<Scalar>> o;  // spikes
};

template <typename Scalar>
struct WindowRecord {
    std::vector<LayerWindow<Scalar>> layers;  // one per weighted layer
    Tensor<Scalar> rates;                     // [B, n_out], mean spike count
    int T = 0;
};

/// Runs the full simulation window over a batch of constant-shape drive
/// tensors, recording every per-step state needed by the backward pass and
/// by trace accumulation. `drive_fn(t)` supplies the input at each step.
template <typename Scalar, typename DriveFn>
WindowRecord<Scalar> forward_window_fn(const Model<Scalar>& model, const LifParams<Scalar>& lif,
                                       DriveFn&& drive_fn, const SpikeModel<Scalar>& spike = {}) {
    lif.validate();
    const int L = static_cast<int>(model.layers.size());
    DPAP_CHECK(L > 0, "model has no weighted layers");
    WindowRecord<Scalar> rec;
    rec.T = lif.T;
    rec.layers.resize(L);

    for (int t = 0; t < lif.T; ++t) {
        Tensor<Scalar> cur = drive_fn(t);
        int prev_geom = -1;
        for (int l = 0; l < L; ++l) {
            const ParamLayer<Scalar>& layer = model.layers[l];
            const LayerGeom& g = model.geoms[layer.geom_index];
            cur = detail::apply_transforms(model, prev_geom, layer.geom_index, std::move(cur));
            if (!layer.is_conv && cur.rank() > 2) {
                const int batch = cur.dim(0);
                cur = cur.reshaped({batch, static_cast<int>(cur.size()) / batch});
            }
            Tensor<Scalar> z = detail::weighted_forward(layer, g, cur);
            LayerWindow<Scalar>& win = rec.layers[l];
            win.x.push_back(std::move(cur));
            if (t == 0) {
                Tensor<Scalar> u(z.shape()), o(z.shape());
                for (size_t i = 0; i < z.size(); ++i) {
                    u[i] = z[i];
                    o[i] = spike.fire(u[i], lif);
                }
                win.u.push_back(std::move(u));
                win.o.push_back(std::move(o));
            } else {
                auto [u, o] = lif_step(win.u[t - 1], win.o[t - 1], z, lif, spike);
                win.u.push_back(std::move(u));
                win.o.push_back(std::move(o));
            }
            cur = win.o[t];
            prev_geom = layer.geom_index;
        }
    }

    const LayerWindow<Scalar>& top = rec.layers[L - 1];
    rec.rates = Tensor<Scalar>::zeros(top.o[0].shape());
    for (int t = 0; t < lif.T; ++t)
        for (size_t i = 0; i < rec.rates.size(); ++i) rec.rates[i] += top.o[t][i];
    for (auto& v : rec.rates.storage()) v /= Scalar(lif.T);
    return rec;
}

template <typename Scalar>
WindowRecord<Scalar> forward_window(const Model<Scalar>& model, const LifParams<Scalar>& lif,
                                    const Tensor<Scalar>& drive,
                                    const SpikeModel<Scalar>& spike = {}) {
    return forward_window_fn(model, lif, [&](int) { return drive; }, spike);
}

/// Variant for per-step drive tensors (rate-coded input).
template <typename Scalar>
WindowRecord<Scalar> forward_window(const Model<Scalar>& model, const LifParams<Scalar>& lif,
                                    const std::vector<Tensor<Scalar>>& encoded,
                                    const SpikeModel<Scalar>& spike = {}) {
    DPAP_CHECK(static_cast<int>(encoded.size()) == lif.T,
               "encoded window holds " << encoded.size() << " steps, expected " << lif.T);
    return forward_window_fn(model, lif, [&](int t) { return encoded[t]; }, spike);
}

/// Mean over the batch of the squared distance between firing rates and
/// one-hot targets.
template <typename Scalar>
Scalar mse_loss_sum(const Tensor<Scalar>& rates, const Tensor<Scalar>& targets) {
    check_same_shape(rates, targets, "rates vs targets");
    Scalar sum = 0;
    for (size_t i = 0; i < rates.size(); ++i) {
        const Scalar d = rates[i] - targets[i];
        sum += d * d;
    }
    return sum;
}

template <typename Scalar>
Scalar mse_loss(const Tensor<Scalar>& rates, const Tensor<Scalar>& targets) {
    return mse_loss_sum(rates, targets) / Scalar(rates.dim(0));
}

/// d(loss)/d(rates) where the mean is taken over `total_batch` samples; pass
/// the full batch size when `rates` holds only a slice of it.
template <typename Scalar>
Tensor<Scalar> mse_loss_grad(const Tensor<Scalar>& rates, const Tensor<Scalar>& targets,
                             int total_batch) {
    check_same_shape(rates, targets, "rates vs targets");
    Tensor<Scalar> g(rates.shape());
    for (size_t i = 0; i < rates.size(); ++i)
        g[i] = Scalar(2) * (rates[i] - targets[i]) / Scalar(total_batch);
    return g;
}

/// Backpropagation through the recorded window. Gradients flow through the
/// spike pseudo-derivative at every step and through the membrane recurrence
/// u' = lambda*u*(1-o) + z; the reset factor contributes a gradient term only
/// when the spike model asks for it. Masked weights receive zero gradient.
template <typename Scalar>
std::vector<LayerGrads<Scalar>> backward_window(const Model<Scalar>& model,
                                                const LifParams<Scalar>& lif,
                                                const WindowRecord<Scalar>& rec,
                                                const Tensor<Scalar>& loss_grad,
                                                const SpikeModel<Scalar>& spike = {}) {
    const int L = static_cast<int>(model.layers.size());
    DPAP_CHECK(static_cast<int>(rec.layers.size()) == L,
               "window record does not match the model layer count");
    auto grads = detail::zero_grads(model);
    std::vector<Tensor<Scalar>> carry(L);  // d(loss)/d(u) at the step above

    Tensor<Scalar> top_grad(loss_grad.shape());
    for (size_t i = 0; i < loss_grad.size(); ++i) top_grad[i] = loss_grad[i] / Scalar(rec.T);

    for (int t = rec.T - 1; t >= 0; --t) {
        Tensor<Scalar> go = top_grad;  // d(loss)/d(o) of the current layer at step t
        for (int l = L - 1; l >= 0; --l) {
            const ParamLayer<Scalar>& layer = model.layers[l];
            const LayerWindow<Scalar>& win = rec.layers[l];
            const Tensor<Scalar>& u = win.u[t];
            const Tensor<Scalar>& o = win.o[t];

            Tensor<Scalar> gu(u.shape());
            for (size_t i = 0; i < u.size(); ++i) {
                Scalar v = go[i] * spike.fire_deriv(u[i], lif);
                if (t < rec.T - 1) {
                    Scalar du = lif.lambda * (Scalar(1) - o[i]);
                    if (spike.reset_grad) du -= lif.lambda * u[i] * spike.fire_deriv(u[i], lif);
                    v += carry[l][i] * du;
                }
                gu[i] = v;
            }
            carry[l] = gu;

            const LayerGeom& g = model.geoms[layer.geom_index];
            if (layer.is_conv) {
                ConvGrads<Scalar> cg = conv2d_backward(gu, win.x[t], layer.w, g.conv);
                for (size_t i = 0; i < cg.weight.size(); ++i) grads[l].w[i] += cg.weight[i];
                for (size_t i = 0; i < cg.bias.size(); ++i) grads[l].b[i] += cg.bias[i];
                if (l > 0) {
                    const Tensor<Scalar>& o_prev = rec.layers[l - 1].o[t];
                    go = detail::transforms_backward(model, model.layers[l - 1].geom_index,
                                                     layer.geom_index, o_prev,
                                                     std::move(cg.input));
                }
            } else {
                LinearGrads<Scalar> lg = linear_backward(gu, win.x[t], layer.w);
                for (size_t i = 0; i < lg.weight.size(); ++i) grads[l].w[i] += lg.weight[i];
                for (size_t i = 0; i < lg.bias.size(); ++i) grads[l].b[i] += lg.bias[i];
                if (l > 0) {
                    const Tensor<Scalar>& o_prev = rec.layers[l - 1].o[t];
                    Tensor<Scalar> gx = std::move(lg.input);
                    go = detail::transforms_backward(model, model.layers[l - 1].geom_index,
                                                     layer.geom_index, o_prev, std::move(gx));
                }
            }
        }
    }
    detail::mask_grads(model, grads);
    return grads;
}

}  // namespace dpap
