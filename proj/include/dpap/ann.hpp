#pragma once

#include <cmath>
#include <vector>

#include "dpap/model.hpp"

namespace dpap {

/// Forward states of one batch through the ReLU network: per weighted layer
/// the transformed input x and pre-activation z. Hidden layers apply ReLU;
/// the last layer emits raw logits for the softmax readout.
template <typename Scalar>
struct AnnRecord {
    std::vector<Tensor<Scalar>> x;  // per weighted layer
    std::vector<Tensor<Scalar>> z;  // per weighted layer
    Tensor<Scalar> logits;          // [B, classes]
};

template <typename Scalar>
AnnRecord<Scalar> ann_forward(const Model<Scalar>& model, const Tensor<Scalar>& input) {
    const int L = static_cast<int>(model.layers.size());
    DPAP_CHECK(L > 0, "model has no weighted layers");
    AnnRecord<Scalar> rec;
    Tensor<Scalar> cur = input;
    int prev_geom = -1;
    for (int l = 0; l < L; ++l) {
        const ParamLayer<Scalar>& layer = model.layers[l];
        cur = detail::apply_transforms(model, prev_geom, layer.geom_index, std::move(cur));
        if (!layer.is_conv && cur.rank() > 2) {
            const int batch = cur.dim(0);
            cur = cur.reshaped({batch, static_cast<int>(cur.size()) / batch});
        }
        Tensor<Scalar> z =
            detail::weighted_forward(layer, model.geoms[layer.geom_index], cur);
        rec.x.push_back(std::move(cur));
        if (l < L - 1) {
            cur = z;
            for (auto& v : cur.storage()) v = v > Scalar(0) ? v : Scalar(0);
        } else {
            rec.logits = z;
        }
        rec.z.push_back(std::move(z));
        prev_geom = layer.geom_index;
    }
    return rec;
}

/// Post-activation value of layer l: ReLU everywhere, including the readout
/// (its rectified logits serve as the activity measure of the class units).
template <typename Scalar>
Tensor<Scalar> ann_activation(const AnnRecord<Scalar>& rec, int l) {
    Tensor<Scalar> h = rec.z[l];
    for (auto& v : h.storage()) v = v > Scalar(0) ? v : Scalar(0);
    return h;
}

/// Softmax cross-entropy averaged over the batch, with one-hot targets.
/// Stabilized by subtracting the row maximum before exponentiation.
template <typename Scalar>
Scalar cross_entropy_loss_sum(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets) {
    check_same_shape(logits, targets, "logits vs targets");
    DPAP_CHECK(logits.rank() == 2, "logits must be [batch, classes], got "
                                       << shape_string(logits.shape()));
    const int batch = logits.dim(0), classes = logits.dim(1);
    Scalar total = 0;
    for (int bi = 0; bi < batch; ++bi) {
        Scalar mx = logits(bi, 0);
        for (int c = 1; c < classes; ++c) mx = std::max(mx, logits(bi, c));
        Scalar lse = 0;
        for (int c = 0; c < classes; ++c) lse += std::exp(logits(bi, c) - mx);
        lse = mx + std::log(lse);
        Scalar picked = 0;
        for (int c = 0; c < classes; ++c) picked += targets(bi, c) * logits(bi, c);
        total += lse - picked;
    }
    return total;
}

template <typename Scalar>
Scalar cross_entropy_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets) {
    return cross_entropy_loss_sum(logits, targets) / Scalar(logits.dim(0));
}

/// d(loss)/d(logits) = (softmax - target) / total_batch; pass the full batch
/// size when `logits` holds only a slice of it.
template <typename Scalar>
Tensor<Scalar> cross_entropy_grad(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets,
                                  int total_batch) {
    check_same_shape(logits, targets, "logits vs targets");
    const int batch = logits.dim(0), classes = logits.dim(1);
    Tensor<Scalar> g(logits.shape());
    for (int bi = 0; bi < batch; ++bi) {
        Scalar mx = logits(bi, 0);
        for (int c = 1; c < classes; ++c) mx = std::max(mx, logits(bi, c));
        Scalar denom = 0;
        for (int c = 0; c < classes; ++c) denom += std::exp(logits(bi, c) - mx);
        for (int c = 0; c < classes; ++c)
            g(bi, c) = (std::exp(logits(bi, c) - mx) / denom - targets(bi, c)) /
                       Scalar(total_batch);
    }
    return g;
}

/// Exact backpropagation from d(loss)/d(logits); masked weights receive zero
/// gradient.
template <typename Scalar>
std::vector<LayerGrads<Scalar>> ann_backward(const Model<Scalar>& model,
                                             const AnnRecord<Scalar>& rec,
                                             const Tensor<Scalar>& loss_grad) {
    const int L = static_cast<int>(model.layers.size());
    DPAP_CHECK(static_cast<int>(rec.z.size()) == L,
               "forward record does not match the model layer count");
    auto grads = detail::zero_grads(model);
    Tensor<Scalar> gz = loss_grad;
    for (int l = L - 1; l >= 0; --l) {
        const ParamLayer<Scalar>& layer = model.layers[l];
        if (l < L - 1) {
            for (size_t i = 0; i < gz.size(); ++i)
                if (rec.z[l][i] <= Scalar(0)) gz[i] = Scalar(0);
        }
        const LayerGeom& g = model.geoms[layer.geom_index];
        Tensor<Scalar> gx;
        if (layer.is_conv) {
            ConvGrads<Scalar> cg = conv2d_backward(gz, rec.x[l], layer.w, g.conv);
            grads[l].w = std::move(cg.weight);
            grads[l].b = std::move(cg.bias);
            gx = std::move(cg.input);
        } else {
            LinearGrads<Scalar> lg = linear_backward(gz, rec.x[l], layer.w);
            grads[l].w = std::move(lg.weight);
            grads[l].b = std::move(lg.bias);
            gx = std::move(lg.input);
        }
        if (l > 0) {
            Tensor<Scalar> h_prev = ann_activation(rec, l - 1);
            gz = detail::transforms_backward(model, model.layers[l - 1].geom_index,
                                             layer.geom_index, h_prev, std::move(gx));
        }
    }
    detail::mask_grads(model, grads);
    return grads;
}

/// One full training step: gradient from the retained forward states, SGD
/// update, masks re-applied.
template <typename Scalar>
void ann_backward_and_step(Model<Scalar>& model, const AnnRecord<Scalar>& rec,
                           const Tensor<Scalar>& targets, Scalar lr,
                           Scalar momentum = Scalar(0), OptState<Scalar>* opt = nullptr) {
    auto loss_grad = cross_entropy_grad(rec.logits, targets, rec.logits.dim(0));
    auto grads = ann_backward(model, rec, loss_grad);
    sgd_step(model, grads, lr, momentum, opt);
}

}  // namespace dpap
