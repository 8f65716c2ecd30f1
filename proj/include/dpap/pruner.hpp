#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "dpap/plasticity.hpp"

namespace dpap {

template <typename Scalar>
struct SurvivalParams {
    Scalar beta = Scalar(1);        // initial survival value
    Scalar gamma = Scalar(0.999);   // per-epoch survival decay
    Scalar epsilon = Scalar(1);     // normalization decay value
    Scalar eta = Scalar(25);        // decay rate of the update envelope
    Scalar c_conv = Scalar(5);      // protection constant, conv layers
    Scalar c_fc = Scalar(2);        // protection constant, fc layers

    void validate() const {
        DPAP_CHECK(gamma > Scalar(0) && gamma < Scalar(1),
                   "survival decay must lie in (0,1), got " << gamma);
        DPAP_CHECK(epsilon > Scalar(0) && epsilon < Scalar(2),
                   "decay value must lie in (0,2), got " << epsilon);
        DPAP_CHECK(eta > Scalar(0), "decay rate must be positive, got " << eta);
    }
};

/// Survival values of one layer: per synapse-mask entry and per output unit.
template <typename Scalar>
struct LayerSurvival {
    Tensor<Scalar> f_bcm;  // [post, pre]
    Tensor<Scalar> f_d;    // [post]
};

template <typename Scalar>
struct SurvivalState {
    SurvivalParams<Scalar> params;
    std::vector<LayerSurvival<Scalar>> layers;
    int epoch = 0;  // epoch index used in the update envelope; the trainer
                    // counts epochs from 1

    static SurvivalState init(const Model<Scalar>& model, const SurvivalParams<Scalar>& params) {
        params.validate();
        SurvivalState st;
        st.params = params;
        for (const auto& l : model.layers)
            st.layers.push_back({Tensor<Scalar>::full({l.n_post, l.n_pre}, params.beta),
                                 Tensor<Scalar>::full({l.n_post}, params.beta)});
        return st;
    }
};

/// Linear normalization of an importance tensor into [-epsilon, 2-epsilon],
/// with min and max taken over the entries where `alive` is nonzero; dead
/// entries map to 0. A degenerate spread (max == min) maps every live entry
/// to the protected top value 2-epsilon.
template <typename Scalar>
Tensor<Scalar> normalize_delta(const Tensor<Scalar>& importance, Scalar epsilon,
                               const Tensor<Scalar>* alive = nullptr) {
    if (alive) check_same_shape(importance, *alive, "importance vs alive mask");
    Scalar lo = std::numeric_limits<Scalar>::infinity();
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    for (size_t i = 0; i < importance.size(); ++i) {
        if (alive && (*alive)[i] == Scalar(0)) continue;
        DPAP_CHECK(std::isfinite(static_cast<double>(importance[i])),
                   "importance entry " << i << " is not finite");
        lo = std::min(lo, importance[i]);
        hi = std::max(hi, importance[i]);
    }
    Tensor<Scalar> delta = Tensor<Scalar>::zeros(importance.shape());
    if (lo > hi) return delta;  // nothing alive
    for (size_t i = 0; i < importance.size(); ++i) {
        if (alive && (*alive)[i] == Scalar(0)) continue;
        delta[i] = hi == lo
                       ? Scalar(2) - epsilon
                       : Scalar(2) * (importance[i] - lo) / (hi - lo) - epsilon;
    }
    return delta;
}

/// Protection step: non-negative normalized importance earns the constant c
/// on top, negative importance passes through as pure decay.
template <typename Scalar>
Tensor<Scalar> delta_f(const Tensor<Scalar>& delta, Scalar c) {
    Tensor<Scalar> out(delta.shape());
    for (size_t i = 0; i < delta.size(); ++i)
        out[i] = delta[i] >= Scalar(0) ? delta[i] + c : delta[i];
    return out;
}

/// F <- gamma*F + exp(-epoch/eta)*dF on the entries still alive under the
/// model's masks. Uses the epoch index stored in the state.
template <typename Scalar>
void survival_update(SurvivalState<Scalar>& st, const Model<Scalar>& model,
                     const std::vector<Tensor<Scalar>>& df_synapse,
                     const std::vector<Tensor<Scalar>>& df_unit) {
    DPAP_CHECK(df_synapse.size() == st.layers.size() && df_unit.size() == st.layers.size(),
               "survival update tensors do not match the layer count");
    const Scalar envelope =
        std::exp(-Scalar(st.epoch) / st.params.eta);
    for (size_t l = 0; l < st.layers.size(); ++l) {
        const ParamLayer<Scalar>& layer = model.layers[l];
        LayerSurvival<Scalar>& f = st.layers[l];
        check_same_shape(f.f_bcm, df_synapse[l], "f_bcm vs its update");
        check_same_shape(f.f_d, df_unit[l], "f_d vs its update");
        for (int po = 0; po < layer.n_post; ++po) {
            for (int pi = 0; pi < layer.n_pre; ++pi) {
                if (layer.synapse_mask(po, pi) == Scalar(0)) continue;
                f.f_bcm(po, pi) =
                    st.params.gamma * f.f_bcm(po, pi) + envelope * df_synapse[l](po, pi);
            }
            if (layer.neuron_mask(po) != Scalar(0))
                f.f_d(po) = st.params.gamma * f.f_d(po) + envelope * df_unit[l](po);
        }
    }
}

/// Full per-epoch survival pass: advances the epoch counter, normalizes the
/// importance snapshot per layer (min/max over live entries only), applies
/// the layer's protection constant, and updates F.
template <typename Scalar>
void update_survival(SurvivalState<Scalar>& st, const Model<Scalar>& model,
                     const ImportanceSnapshot<Scalar>& imp) {
    DPAP_CHECK(imp.synapse.size() == st.layers.size() && imp.unit.size() == st.layers.size(),
               "importance snapshot does not match the layer count");
    st.epoch += 1;
    std::vector<Tensor<Scalar>> df_syn, df_unit;
    for (size_t l = 0; l < st.layers.size(); ++l) {
        const ParamLayer<Scalar>& layer = model.layers[l];
        const Scalar c = layer.is_conv ? st.params.c_conv : st.params.c_fc;
        df_syn.push_back(
            delta_f(normalize_delta(imp.synapse[l], st.params.epsilon, &layer.synapse_mask), c));
        df_unit.push_back(
            delta_f(normalize_delta(imp.unit[l], st.params.epsilon, &layer.neuron_mask), c));
    }
    survival_update(st, model, df_syn, df_unit);
}

struct NeuronDeath {
    int layer = 0;
    int unit = 0;
    std::int64_t surviving_synapses = 0;  // live incoming synapses at death
};

struct PruneEvents {
    std::int64_t synapses_pruned = 0;  // newly cleared synapse-mask entries
    std::int64_t neurons_pruned = 0;
    std::vector<NeuronDeath> deaths;
};

/// Permanently clears masks where survival dropped below zero: synapses
/// first, then whole units (output-layer units are exempt), whose remaining
/// rows are cleared too. Weights are re-masked afterwards.
template <typename Scalar>
PruneEvents apply_pruning(SurvivalState<Scalar>& st, Model<Scalar>& model) {
    PruneEvents ev;
    const size_t L = model.layers.size();
    for (size_t l = 0; l < L; ++l) {
        ParamLayer<Scalar>& layer = model.layers[l];
        const LayerSurvival<Scalar>& f = st.layers[l];
        for (int po = 0; po < layer.n_post; ++po)
            for (int pi = 0; pi < layer.n_pre; ++pi)
                if (layer.synapse_mask(po, pi) != Scalar(0) && f.f_bcm(po, pi) < Scalar(0)) {
                    layer.synapse_mask(po, pi) = Scalar(0);
                    ev.synapses_pruned += 1;
                }
        if (l + 1 == L) continue;  // readout units stay
        for (int po = 0; po < layer.n_post; ++po) {
            if (layer.neuron_mask(po) == Scalar(0) || f.f_d(po) >= Scalar(0)) continue;
            NeuronDeath death{static_cast<int>(l), po, 0};
            for (int pi = 0; pi < layer.n_pre; ++pi)
                if (layer.synapse_mask(po, pi) != Scalar(0)) {
                    death.surviving_synapses += 1;
                    layer.synapse_mask(po, pi) = Scalar(0);
                    ev.synapses_pruned += 1;
                }
            layer.neuron_mask(po) = Scalar(0);
            ev.neurons_pruned += 1;
            ev.deaths.push_back(death);
        }
    }
    model.apply_masks();
    return ev;
}

struct LayerCompression {
    int layer = 0;
    std::int64_t total = 0;
    std::int64_t retained = 0;
};

struct CompressionReport {
    std::int64_t total = 0;
    std::int64_t retained = 0;
    double pruning_rate = 0.0;
    std::vector<LayerCompression> per_layer;
};

/// Weight-level compression under the current masks (a conv synapse counts
/// its full k*k kernel slice; biases are not part of the prunable pool).
template <typename Scalar>
CompressionReport compression_report(const Model<Scalar>& model) {
    CompressionReport rep;
    for (size_t l = 0; l < model.layers.size(); ++l) {
        LayerCompression lc;
        lc.layer = static_cast<int>(l);
        lc.total = model.layers[l].weight_count();
        lc.retained = model.layers[l].retained_weight_count();
        rep.total += lc.total;
        rep.retained += lc.retained;
        rep.per_layer.push_back(lc);
    }
    rep.pruning_rate = rep.total ? 1.0 - static_cast<double>(rep.retained) / rep.total : 0.0;
    return rep;
}

}  // namespace dpap
