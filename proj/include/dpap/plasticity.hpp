#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "dpap/ann.hpp"
#include "dpap/snn.hpp"

namespace dpap {

/// Exponentially decaying activity trace, one value per unit (fc) or per
/// channel (conv, whose spikes are spatially summed before entering here).
template <typename Scalar>
struct TraceState {
    Tensor<Scalar> S;
    Scalar tau = Scalar(0.5);
};

template <typename Scalar>
void trace_step(TraceState<Scalar>& trace, const Tensor<Scalar>& spike_term) {
    check_same_shape(trace.S, spike_term, "trace vs spike term");
    for (size_t i = 0; i < trace.S.size(); ++i)
        trace.S[i] = trace.tau * trace.S[i] + spike_term[i];
}

/// Sums a [B,C,H,W] spike tensor over its spatial positions, giving the
/// per-channel population activity [B,C].
template <typename Scalar>
Tensor<Scalar> channel_sums(const Tensor<Scalar>& o) {
    DPAP_CHECK(o.rank() == 4, "channel sums need [batch, channels, h, w], got "
                                  << shape_string(o.shape()));
    const int batch = o.dim(0), ch = o.dim(1), plane = o.dim(2) * o.dim(3);
    Tensor<Scalar> out = Tensor<Scalar>::zeros({batch, ch});
    const Scalar* p = o.data();
    for (int bi = 0; bi < batch; ++bi)
        for (int c = 0; c < ch; ++c) {
            Scalar s = 0;
            for (int i = 0; i < plane; ++i) s += p[(bi * ch + c) * plane + i];
            out(bi, c) = s;
        }
    return out;
}

/// Sliding-threshold BCM bookkeeping for one synapse boundary.
template <typename Scalar>
struct BcmState {
    Tensor<Scalar> theta;      // [post], running mean of postsynaptic traces
    Tensor<Scalar> bcm_epoch;  // [post, pre], current-epoch accumulator
    std::int64_t num = 0;      // batches seen since initialization
};

/// One batch of BCM: computes BCM^b from the incoming traces against the
/// current threshold, then advances the threshold to the exact running mean
/// of all postsynaptic samples seen, and adds BCM^b into the epoch sum.
/// Returns BCM^b.
template <typename Scalar>
Tensor<Scalar> bcm_batch(BcmState<Scalar>& st, const Tensor<Scalar>& s_pre,
                         const Tensor<Scalar>& s_post) {
    const int post = st.theta.dim(0);
    const int pre = st.bcm_epoch.dim(1);
    DPAP_CHECK(s_pre.rank() == 1 && s_pre.dim(0) == pre,
               "presynaptic trace " << shape_string(s_pre.shape()) << " does not match "
                                    << pre << " synapse columns");
    DPAP_CHECK(s_post.rank() == 1 && s_post.dim(0) == post,
               "postsynaptic trace " << shape_string(s_post.shape()) << " does not match "
                                     << post << " synapse rows");
    DPAP_CHECK(st.num < (std::int64_t(1) << 53),
               "batch counter left the exactly representable range");
    st.num += 1;
    Tensor<Scalar> bcm({post, pre});
    for (int i = 0; i < post; ++i) {
        const Scalar drive = s_post(i) - st.theta(i);
        for (int j = 0; j < pre; ++j) bcm(i, j) = s_pre(j) * s_post(i) * drive;
    }
    for (int i = 0; i < post; ++i)
        st.theta(i) = (st.theta(i) * Scalar(st.num - 1) + s_post(i)) / Scalar(st.num);
    for (size_t i = 0; i < bcm.size(); ++i) st.bcm_epoch[i] += bcm[i];
    return bcm;
}

/// Per-unit dendritic importance accumulator.
template <typename Scalar>
struct SpineState {
    Tensor<Scalar> d_epoch;  // [post]
};

/// Adds s_post[i] * (row sum of this batch's BCM matrix) into the epoch
/// accumulator of every postsynaptic unit.
template <typename Scalar>
void spine_batch(SpineState<Scalar>& st, const Tensor<Scalar>& s_post,
                 const Tensor<Scalar>& bcm_b) {
    const int post = st.d_epoch.dim(0);
    DPAP_CHECK(s_post.rank() == 1 && s_post.dim(0) == post,
               "postsynaptic trace " << shape_string(s_post.shape()) << " does not match "
                                     << post << " units");
    DPAP_CHECK(bcm_b.rank() == 2 && bcm_b.dim(0) == post,
               "batch BCM " << shape_string(bcm_b.shape()) << " does not match " << post
                            << " units");
    const int pre = bcm_b.dim(1);
    for (int i = 0; i < post; ++i) {
        Scalar row = 0;
        for (int j = 0; j < pre; ++j) row += bcm_b(i, j);
        st.d_epoch(i) += s_post(i) * row;
    }
}

/// End-of-epoch snapshots for the pruner; zeroes the epoch accumulators while
/// the threshold and its batch counter persist across epochs.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> epoch_rollover(BcmState<Scalar>& bcm,
                                                         SpineState<Scalar>& spine) {
    Tensor<Scalar> bcm_snap = bcm.bcm_epoch;
    Tensor<Scalar> d_snap = spine.d_epoch;
    bcm.bcm_epoch.fill(Scalar(0));
    spine.d_epoch.fill(Scalar(0));
    return {std::move(bcm_snap), std::move(d_snap)};
}

/// Per-sample end-of-window traces of one batch at synapse granularity: the
/// input boundary plus each weighted layer's output.
template <typename Scalar>
struct BatchTraces {
    Tensor<Scalar> input;               // [B, first-layer presynaptic units]
    std::vector<Tensor<Scalar>> layer;  // per weighted layer, [B, post units]
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> to_granularity(const Tensor<Scalar>& activity, bool conv_layer) {
    if (conv_layer) return channel_sums(activity);
    if (activity.rank() > 2) {
        const int batch = activity.dim(0);
        return activity.reshaped({batch, static_cast<int>(activity.size()) / batch});
    }
    return activity;
}

}  // namespace detail

/// Runs the trace recurrence over a recorded spiking window. The input
/// boundary traces the drive itself (the injected current plays the role of
/// the presynaptic spike train of the first layer).
template <typename Scalar>
BatchTraces<Scalar> snn_batch_traces(const Model<Scalar>& model, const WindowRecord<Scalar>& rec,
                                     Scalar tau) {
    const int L = static_cast<int>(model.layers.size());
    BatchTraces<Scalar> out;
    const bool first_conv = model.layers[0].is_conv;

    TraceState<Scalar> in_trace{
        Tensor<Scalar>::zeros(detail::to_granularity(rec.layers[0].x[0], first_conv).shape()),
        tau};
    for (int t = 0; t < rec.T; ++t)
        trace_step(in_trace, detail::to_granularity(rec.layers[0].x[t], first_conv));
    out.input = std::move(in_trace.S);

    for (int l = 0; l < L; ++l) {
        const bool conv = model.layers[l].is_conv;
        TraceState<Scalar> tr{
            Tensor<Scalar>::zeros(detail::to_granularity(rec.layers[l].o[0], conv).shape()), tau};
        for (int t = 0; t < rec.T; ++t)
            trace_step(tr, detail::to_granularity(rec.layers[l].o[t], conv));
        out.layer.push_back(std::move(tr.S));
    }
    return out;
}

/// The ANN analog: one batch forward produces one trace sample per boundary,
/// the rectified activation itself (spatially summed per channel for conv).
template <typename Scalar>
BatchTraces<Scalar> ann_batch_traces(const Model<Scalar>& model, const AnnRecord<Scalar>& rec) {
    const int L = static_cast<int>(model.layers.size());
    BatchTraces<Scalar> out;
    out.input = detail::to_granularity(rec.x[0], model.layers[0].is_conv);
    for (int l = 0; l < L; ++l)
        out.layer.push_back(detail::to_granularity(ann_activation(rec, l), model.layers[l].is_conv));
    return out;
}

/// Column means of a [B,n] tensor, summed in sample order.
template <typename Scalar>
Tensor<Scalar> row_mean(const Tensor<Scalar>& rows) {
    DPAP_CHECK(rows.rank() == 2, "row_mean needs [batch, units], got "
                                     << shape_string(rows.shape()));
    const int batch = rows.dim(0), n = rows.dim(1);
    Tensor<Scalar> out = Tensor<Scalar>::zeros({n});
    for (int bi = 0; bi < batch; ++bi)
        for (int j = 0; j < n; ++j) out(j) += rows(bi, j);
    for (auto& v : out.storage()) v /= Scalar(batch);
    return out;
}

/// Presynaptic trace vector of layer l, derived from the batch-aggregated
/// boundary traces. Across a conv-to-fc boundary every flattened unit of a
/// channel inherits that channel's trace.
template <typename Scalar>
Tensor<Scalar> presynaptic_trace(const Model<Scalar>& model, int l, const Tensor<Scalar>& s_in,
                                 const std::vector<Tensor<Scalar>>& s_out) {
    const ParamLayer<Scalar>& layer = model.layers[l];
    if (l == 0) {
        DPAP_CHECK(s_in.dim(0) == layer.n_pre, "input trace has " << s_in.dim(0)
                                                                  << " entries, layer expects "
                                                                  << layer.n_pre);
        return s_in;
    }
    const ParamLayer<Scalar>& prev = model.layers[l - 1];
    const Tensor<Scalar>& s_prev = s_out[l - 1];
    if (prev.is_conv && !layer.is_conv) {
        DPAP_CHECK(layer.n_pre % prev.n_post == 0,
                   "flatten boundary: " << layer.n_pre << " units not divisible by "
                                        << prev.n_post << " channels");
        const int group = layer.n_pre / prev.n_post;
        Tensor<Scalar> out({layer.n_pre});
        for (int j = 0; j < layer.n_pre; ++j) out(j) = s_prev(j / group);
        return out;
    }
    DPAP_CHECK(s_prev.dim(0) == layer.n_pre, "boundary trace has " << s_prev.dim(0)
                                                                   << " entries, layer expects "
                                                                   << layer.n_pre);
    return s_prev;
}

/// Epoch-level importance tensors, one pair per weighted layer.
template <typename Scalar>
struct ImportanceSnapshot {
    std::vector<Tensor<Scalar>> synapse;  // [post, pre]
    std::vector<Tensor<Scalar>> unit;     // [post]
};

/// A pruning criterion consumes batch-aggregated boundary traces and yields
/// per-epoch importance. Alternative rules (e.g. correlation-based ones) plug
/// in here without touching the trainer or the pruner.
template <typename Scalar>
class ImportanceCriterion {
  public:
    virtual ~ImportanceCriterion() = default;
    virtual void observe_batch(const Model<Scalar>& model, const Tensor<Scalar>& s_in,
                               const std::vector<Tensor<Scalar>>& s_out) = 0;
    /// Returns this epoch's importance and resets the epoch accumulators.
    virtual ImportanceSnapshot<Scalar> epoch_snapshot() = 0;
    /// Mean sliding threshold, for metrics; zero if the criterion has none.
    virtual Scalar threshold_mean() const = 0;
};

/// The BCM-plus-dendritic-spine criterion: per-synapse importance is the
/// epoch sum of sliding-threshold BCM, per-unit importance couples the unit's
/// own trace with its summed incoming BCM.
template <typename Scalar>
class BcmSpineCriterion final : public ImportanceCriterion<Scalar> {
  public:
    explicit BcmSpineCriterion(const Model<Scalar>& model) {
        for (const auto& l : model.layers) {
            BcmState<Scalar> b;
            b.theta = Tensor<Scalar>::zeros({l.n_post});
            b.bcm_epoch = Tensor<Scalar>::zeros({l.n_post, l.n_pre});
            bcm_.push_back(std::move(b));
            spine_.push_back({Tensor<Scalar>::zeros({l.n_post})});
        }
    }

    void observe_batch(const Model<Scalar>& model, const Tensor<Scalar>& s_in,
                       const std::vector<Tensor<Scalar>>& s_out) override {
        DPAP_CHECK(s_out.size() == bcm_.size(),
                   "trace list does not match the criterion's layer count");
        for (size_t l = 0; l < bcm_.size(); ++l) {
            Tensor<Scalar> pre =
                presynaptic_trace(model, static_cast<int>(l), s_in, s_out);
            Tensor<Scalar> b = bcm_batch(bcm_[l], pre, s_out[l]);
            spine_batch(spine_[l], s_out[l], b);
        }
    }

    ImportanceSnapshot<Scalar> epoch_snapshot() override {
        ImportanceSnapshot<Scalar> snap;
        for (size_t l = 0; l < bcm_.size(); ++l) {
            auto [b, d] = epoch_rollover(bcm_[l], spine_[l]);
            snap.synapse.push_back(std::move(b));
            snap.unit.push_back(std::move(d));
        }
        return snap;
    }

    Scalar threshold_mean() const override {
        Scalar sum = 0;
        std::int64_t count = 0;
        for (const auto& b : bcm_) {
            for (size_t i = 0; i < b.theta.size(); ++i) sum += b.theta[i];
            count += static_cast<std::int64_t>(b.theta.size());
        }
        return count ? sum / Scalar(count) : Scalar(0);
    }

    std::vector<BcmState<Scalar>>& bcm_states() { return bcm_; }
    std::vector<SpineState<Scalar>>& spine_states() { return spine_; }

  private:
    std::vector<BcmState<Scalar>> bcm_;
    std::vector<SpineState<Scalar>> spine_;
};

}  // namespace dpap
