#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "dpap/ann.hpp"
#include "dpap/checkpoint.hpp"
#include "dpap/config.hpp"
#include "dpap/data.hpp"
#include "dpap/metrics.hpp"
#include "dpap/model.hpp"
#include "dpap/plasticity.hpp"
#include "dpap/pruner.hpp"
#include "dpap/snn.hpp"
#include "dpap/topology.hpp"

namespace dpap {

/// Optional callbacks into a running training loop. All fire on the loop
/// thread after the corresponding work is complete.
template <typename Scalar>
struct TrainObserver {
    std::function<void(const PhaseEvent&)> phase;
    std::function<void(const PhaseEvent&, const Model<Scalar>&)> phase_model;
    std::function<void(int epoch, const Model<Scalar>&, const SurvivalState<Scalar>&,
                       const PruneEvents&)>
        after_prune;
    std::function<void(const EpochRow&)> on_row;
};

namespace detail {

/// Every batch is partitioned into this many sub-batches regardless of the
/// thread count; each sub-batch is computed independently and the results
/// are combined in sub-batch order. The arithmetic is therefore identical
/// whether the run uses one thread or many.
inline constexpr int kBatchSlices = 8;

inline std::pair<int, int> slice_bounds(int total, int slices, int s) {
    const int q = total / slices, r = total % slices;
    const int lo = s * q + std::min(s, r);
    return {lo, lo + q + (s < r ? 1 : 0)};
}

inline void parallel_slices(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int s = 0; s < n; ++s) fn(s);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&]() {
        for (;;) {
            const int s = next.fetch_add(1);
            if (s >= n) return;
            try {
                fn(s);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < std::min(threads, n); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

template <typename Scalar>
Tensor<Scalar> rows_slice(const Tensor<Scalar>& t, int lo, int hi) {
    Shape shape = t.shape();
    shape[0] = hi - lo;
    Tensor<Scalar> out(shape);
    const size_t stride = t.size() / t.dim(0);
    std::copy_n(t.data() + lo * stride, (hi - lo) * stride, out.data());
    return out;
}

/// Adds each row of a [batch, n] block into a length-n accumulator, row by
/// row so the summation order matches an unsliced pass.
template <typename Scalar>
void accumulate_rows(Tensor<Scalar>& acc, const Tensor<Scalar>& rows) {
    const int batch = rows.dim(0), n = rows.dim(1);
    for (int bi = 0; bi < batch; ++bi)
        for (int j = 0; j < n; ++j) acc[j] += rows(bi, j);
}

template <typename Scalar>
LifParams<Scalar> lif_from_config(const ExperimentConfig& cfg) {
    LifParams<Scalar> lif;
    lif.lambda = Scalar(cfg.lambda);
    lif.v_th = Scalar(cfg.v_th);
    lif.a = Scalar(cfg.surrogate_width);
    lif.T = cfg.t_steps;
    lif.validate();
    return lif;
}

template <typename Scalar>
SurvivalParams<Scalar> survival_from_config(const ExperimentConfig& cfg) {
    SurvivalParams<Scalar> sp;
    sp.beta = Scalar(cfg.beta);
    sp.gamma = Scalar(cfg.gamma);
    sp.epsilon = Scalar(cfg.epsilon);
    sp.eta = Scalar(cfg.eta);
    sp.c_conv = Scalar(cfg.c_conv);
    sp.c_fc = Scalar(cfg.c_fc);
    sp.validate();
    return sp;
}

}  // namespace detail

/// Test-set accuracy under the configured engine and encoding. Deterministic:
/// stochastic encodings draw from streams derived from (seed, epoch, batch).
template <typename Scalar>
double evaluate_accuracy(const Model<Scalar>& model, const ExperimentConfig& cfg,
                         const LifParams<Scalar>& lif, const LabeledDataset<Scalar>& test,
                         int epoch) {
    const bool snn = cfg.engine == "snn";
    const bool bernoulli = cfg.encoding == "bernoulli";
    const int n = test.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::int64_t correct = 0;
    for (int lo = 0; lo < n; lo += cfg.eval_batch) {
        const int hi = std::min(n, lo + cfg.eval_batch);
        auto [bx, bl] = gather_rows(test, order, lo, hi);
        std::vector<Tensor<Scalar>> spikes;
        if (snn && bernoulli)
            spikes = synth_poisson(bx, cfg.t_steps,
                                   derive_seed(cfg.seed, 0x6576616c,
                                               (std::uint64_t(epoch) << 24) | std::uint64_t(lo)));
        const int B = hi - lo;
        std::vector<std::int64_t> slice_correct(detail::kBatchSlices, 0);
        detail::parallel_slices(detail::kBatchSlices, cfg.threads, [&](int s) {
            auto [slo, shi] = detail::slice_bounds(B, detail::kBatchSlices, s);
            if (slo >= shi) return;
            Tensor<Scalar> scores;
            if (snn) {
                if (bernoulli) {
                    std::vector<Tensor<Scalar>> drive;
                    for (int t = 0; t < cfg.t_steps; ++t)
                        drive.push_back(detail::rows_slice(spikes[t], slo, shi));
                    scores = forward_window(model, lif, drive).rates;
                } else {
                    scores = forward_window(model, lif, detail::rows_slice(bx, slo, shi)).rates;
                }
            } else {
                scores = ann_forward(model, detail::rows_slice(bx, slo, shi)).logits;
            }
            const int classes = scores.dim(1);
            std::int64_t c = 0;
            for (int r = 0; r < scores.dim(0); ++r) {
                int arg = 0;
                for (int k = 1; k < classes; ++k)
                    if (scores(r, k) > scores(r, arg)) arg = k;
                if (arg == bl[slo + r]) ++c;
            }
            slice_correct[s] = c;
        });
        for (std::int64_t c : slice_correct) correct += c;
    }
    return static_cast<double>(correct) / n;
}

namespace detail {

inline std::string layer_key(int l, const char* field) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "layer%03d/%s", l, field);
    return buf;
}

}  // namespace detail

/// Gathers the complete training state: parameters, masks, survival values,
/// plasticity thresholds and counters, optimizer velocity, and enough
/// metadata to refuse a resume under a mismatched configuration.
template <typename Scalar>
Checkpoint make_checkpoint(const ExperimentConfig& cfg, const Model<Scalar>& model,
                           const SurvivalState<Scalar>& st, BcmSpineCriterion<Scalar>& crit,
                           const OptState<Scalar>& opt, int epoch) {
    Checkpoint ck;
    ck.put_text("meta/engine", cfg.engine);
    ck.put_text("meta/topology", cfg.topology);
    ck.put_text("meta/precision", cfg.precision);
    ck.put_text("meta/encoding", cfg.encoding);
    ck.put_scalar_i64("meta/epoch", epoch);
    ck.put_scalar_i64("meta/seed", static_cast<std::int64_t>(cfg.seed));
    ck.put_scalar_i64("meta/t_steps", cfg.t_steps);
    ck.put_scalar_i64("meta/layers", static_cast<std::int64_t>(model.layers.size()));
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const int li = static_cast<int>(l);
        const auto& layer = model.layers[l];
        auto key = [&](const char* f) { return detail::layer_key(li, f); };
        ck.put(key("w"), layer.w);
        ck.put(key("b"), layer.b);
        ck.put(key("synapse_mask"), layer.synapse_mask);
        ck.put(key("neuron_mask"), layer.neuron_mask);
        ck.put(key("f_bcm"), st.layers[l].f_bcm);
        ck.put(key("f_d"), st.layers[l].f_d);
        ck.put(key("theta"), crit.bcm_states()[l].theta);
        ck.put_scalar_i64(key("num"), crit.bcm_states()[l].num);
        if (!opt.velocity.empty()) {
            ck.put(key("vel_w"), opt.velocity[l].w);
            ck.put(key("vel_b"), opt.velocity[l].b);
        }
    }
    return ck;
}

template <typename Scalar>
int restore_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                       Model<Scalar>& model, SurvivalState<Scalar>& st,
                       BcmSpineCriterion<Scalar>& crit, OptState<Scalar>& opt) {
    const Checkpoint ck = Checkpoint::load(path);
    auto expect_text = [&](const char* name, const std::string& want) {
        const std::string got = ck.get_text(name);
        DPAP_CHECK(got == want, "checkpoint '" << path << "': " << name << " is '" << got
                                               << "' but the config says '" << want << "'");
    };
    expect_text("meta/engine", cfg.engine);
    expect_text("meta/topology", cfg.topology);
    expect_text("meta/precision", cfg.precision);
    DPAP_CHECK(ck.get_scalar_i64("meta/t_steps") == cfg.t_steps,
               "checkpoint '" << path << "' was written with a different window length");
    DPAP_CHECK(ck.get_scalar_i64("meta/layers") ==
                   static_cast<std::int64_t>(model.layers.size()),
               "checkpoint '" << path << "' has a different layer count");
    auto load_into = [&](Tensor<Scalar>& dst, const std::string& name) {
        Tensor<Scalar> t = ck.get<Scalar>(name);
        check_same_shape(t, dst, name.c_str());
        dst = std::move(t);
    };
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const int li = static_cast<int>(l);
        auto key = [&](const char* f) { return detail::layer_key(li, f); };
        load_into(model.layers[l].w, key("w"));
        load_into(model.layers[l].b, key("b"));
        load_into(model.layers[l].synapse_mask, key("synapse_mask"));
        load_into(model.layers[l].neuron_mask, key("neuron_mask"));
        load_into(st.layers[l].f_bcm, key("f_bcm"));
        load_into(st.layers[l].f_d, key("f_d"));
        load_into(crit.bcm_states()[l].theta, key("theta"));
        crit.bcm_states()[l].num = ck.get_scalar_i64(key("num"));
        if (ck.has(key("vel_w"))) {
            if (opt.velocity.empty()) opt.velocity = detail::zero_grads(model);
            load_into(opt.velocity[l].w, key("vel_w"));
            load_into(opt.velocity[l].b, key("vel_b"));
        }
    }
    model.apply_masks();
    const int epoch = static_cast<int>(ck.get_scalar_i64("meta/epoch"));
    st.epoch = epoch;
    return epoch;
}

/// Runs the full training schedule on the given split. Per batch: simulate
/// the window accumulating traces, backpropagate, apply the weight update,
/// then feed the batch traces to the plasticity rule. Per epoch: collect the
/// epoch importance, update survival, prune, and evaluate. Bitwise
/// reproducible for a fixed config regardless of thread count.
template <typename Scalar>
RunMetrics run_training(const ExperimentConfig& cfg, const LabeledDataset<Scalar>& train,
                        const LabeledDataset<Scalar>& test,
                        const TrainObserver<Scalar>* obs = nullptr) {
    cfg.validate();
    train.validate();
    test.validate();
    const bool snn = cfg.engine == "snn";
    const bool bernoulli = cfg.encoding == "bernoulli";

    const auto items = parse_topology(cfg.topology);
    const auto geoms = bind_topology(
        items, {train.images.dim(1), train.images.dim(2), train.images.dim(3)});
    DPAP_CHECK(geoms.back().out_features == train.class_count,
               "topology ends in " << geoms.back().out_features << " units but the dataset has "
                                   << train.class_count << " classes");
    Model<Scalar> model = Model<Scalar>::build(geoms, cfg.seed);
    const LifParams<Scalar> lif = detail::lif_from_config<Scalar>(cfg);
    SurvivalState<Scalar> st =
        SurvivalState<Scalar>::init(model, detail::survival_from_config<Scalar>(cfg));
    BcmSpineCriterion<Scalar> crit(model);
    OptState<Scalar> opt;

    int epoch_start = 0;
    if (!cfg.resume.empty())
        epoch_start = restore_checkpoint(cfg.resume, cfg, model, st, crit, opt);

    RunMetrics m;
    m.engine = cfg.engine;
    m.topology = cfg.topology;
    m.precision = cfg.precision;
    m.encoding = cfg.encoding;
    m.seed = cfg.seed;
    m.split_fingerprint =
        splitmix64(dataset_fingerprint(train) ^ splitmix64(dataset_fingerprint(test)));

    auto emit = [&](Phase p, int epoch, int batch) {
        m.phases.push_back({epoch, batch, p});
        if (obs && obs->phase) obs->phase(m.phases.back());
        if (obs && obs->phase_model) obs->phase_model(m.phases.back(), model);
    };
    auto push_row = [&](EpochRow row) {
        const CompressionReport rep = compression_report(model);
        row.retained_params = rep.retained;
        row.pruning_rate = rep.pruning_rate;
        row.theta_mean = cfg.dpap ? static_cast<double>(crit.threshold_mean()) : 0.0;
        m.rows.push_back(row);
        std::vector<std::int64_t> per_layer;
        for (const auto& lc : rep.per_layer) per_layer.push_back(lc.retained);
        m.per_layer_retained.push_back(std::move(per_layer));
        if (obs && obs->on_row) obs->on_row(m.rows.back());
    };

    using clock = std::chrono::steady_clock;
    if (epoch_start == 0) {
        const auto t0 = clock::now();
        EpochRow row;
        row.epoch = 0;
        row.train_loss = std::numeric_limits<double>::quiet_NaN();
        row.test_acc = evaluate_accuracy(model, cfg, lif, test, 0);
        emit(Phase::Evaluate, 0, -1);
        row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        push_row(row);
    }

    const int n_train = train.size();
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = epoch_start + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = clock::now();
        // Per-epoch sample order comes from its own derived stream, so
        // resuming from a checkpoint replays the identical shuffles.
        {
            Rng shuffle_rng(derive_seed(cfg.seed, 0x73687566, std::uint64_t(epoch)));
            std::iota(order.begin(), order.end(), 0);
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[shuffle_rng.uniform_int(static_cast<std::uint64_t>(i))]);
        }

        double epoch_loss_sum = 0;
        std::int64_t seen = 0;
        int batch_index = 0;
        for (int lo = 0; lo < n_train; lo += cfg.batch, ++batch_index) {
            const int hi = std::min(n_train, lo + cfg.batch);
            const int B = hi - lo;
            auto [bx, bl] = gather_rows(train, order, lo, hi);
            const EncodedBatch<Scalar> enc = encode_batch(
                bx, bl, train.class_count, cfg.t_steps, snn && bernoulli,
                derive_seed(cfg.seed, 0x656e63,
                            (std::uint64_t(epoch) << 24) | std::uint64_t(batch_index)));

            struct SliceResult {
                bool used = false;
                std::vector<LayerGrads<Scalar>> grads;
                double loss_sum = 0;
                BatchTraces<Scalar> traces;
            };
            std::vector<SliceResult> res(detail::kBatchSlices);
            detail::parallel_slices(detail::kBatchSlices, cfg.threads, [&](int s) {
                auto [slo, shi] = detail::slice_bounds(B, detail::kBatchSlices, s);
                if (slo >= shi) return;
                SliceResult& r = res[s];
                const Tensor<Scalar> targets = detail::rows_slice(enc.targets, slo, shi);
                if (snn) {
                    WindowRecord<Scalar> rec;
                    if (enc.constant) {
                        rec = forward_window(model, lif, detail::rows_slice(enc.at(0), slo, shi));
                    } else {
                        std::vector<Tensor<Scalar>> drive;
                        for (int t = 0; t < cfg.t_steps; ++t)
                            drive.push_back(detail::rows_slice(enc.at(t), slo, shi));
                        rec = forward_window(model, lif, drive);
                    }
                    if (cfg.dpap) r.traces = snn_batch_traces(model, rec, Scalar(cfg.tau));
                    r.loss_sum = static_cast<double>(mse_loss_sum(rec.rates, targets));
                    const auto lg = mse_loss_grad(rec.rates, targets, B);
                    r.grads = backward_window(model, lif, rec, lg);
                } else {
                    const AnnRecord<Scalar> rec =
                        ann_forward(model, detail::rows_slice(bx, slo, shi));
                    if (cfg.dpap) r.traces = ann_batch_traces(model, rec);
                    r.loss_sum = static_cast<double>(cross_entropy_loss_sum(rec.logits, targets));
                    const auto lg = cross_entropy_grad(rec.logits, targets, B);
                    r.grads = ann_backward(model, rec, lg);
                }
                r.used = true;
            });

            auto grads = detail::zero_grads(model);
            Tensor<Scalar> s_in;
            std::vector<Tensor<Scalar>> s_out;
            if (cfg.dpap) {
                for (const auto& r : res)
                    if (r.used) {
                        s_in = Tensor<Scalar>::zeros({r.traces.input.dim(1)});
                        for (const auto& t : r.traces.layer)
                            s_out.push_back(Tensor<Scalar>::zeros({t.dim(1)}));
                        break;
                    }
            }
            double batch_loss_sum = 0;
            for (const auto& r : res) {
                if (!r.used) continue;
                add_grads(grads, r.grads);
                batch_loss_sum += r.loss_sum;
                if (cfg.dpap) {
                    detail::accumulate_rows(s_in, r.traces.input);
                    for (size_t l = 0; l < s_out.size(); ++l)
                        detail::accumulate_rows(s_out[l], r.traces.layer[l]);
                }
            }
            emit(Phase::ForwardTrace, epoch, batch_index);
            emit(Phase::Backward, epoch, batch_index);

            sgd_step(model, grads, Scalar(cfg.lr), Scalar(cfg.momentum),
                     cfg.momentum > 0 ? &opt : nullptr);
            emit(Phase::Update, epoch, batch_index);

            if (cfg.dpap) {
                for (size_t i = 0; i < s_in.size(); ++i) s_in[i] /= Scalar(B);
                for (auto& t : s_out)
                    for (size_t i = 0; i < t.size(); ++i) t[i] /= Scalar(B);
                crit.observe_batch(model, s_in, s_out);
                emit(Phase::BatchBcm, epoch, batch_index);
            }
            epoch_loss_sum += batch_loss_sum;
            seen += B;
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = seen ? epoch_loss_sum / seen : 0.0;
        if (cfg.dpap) {
            const ImportanceSnapshot<Scalar> snap = crit.epoch_snapshot();
            emit(Phase::EpochImportance, epoch, -1);
            update_survival(st, model, snap);
            emit(Phase::SurvivalUpdate, epoch, -1);
            const PruneEvents ev = apply_pruning(st, model);
            emit(Phase::Prune, epoch, -1);
            row.pruned_synapses = ev.synapses_pruned;
            row.pruned_neurons = ev.neurons_pruned;
            for (const auto& d : ev.deaths)
                m.deaths.push_back({epoch, d.layer, d.unit, d.surviving_synapses});
            if (obs && obs->after_prune) obs->after_prune(epoch, model, st, ev);
        }
        row.test_acc = evaluate_accuracy(model, cfg, lif, test, epoch);
        emit(Phase::Evaluate, epoch, -1);
        row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        push_row(row);

        if (!cfg.checkpoint_out.empty() && cfg.checkpoint_every > 0 &&
            epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
            make_checkpoint(cfg, model, st, crit, opt, epoch).save(cfg.checkpoint_out);
    }

    if (!cfg.checkpoint_out.empty())
        make_checkpoint(cfg, model, st, crit, opt, std::max(epoch_start, cfg.epochs))
            .save(cfg.checkpoint_out);
    return m;
}

/// Locates or fabricates the configured dataset and applies the seeded
/// stratified subsets. Real files win whenever they are present under the
/// data directory (falling back to the DPAP_DATA_DIR environment variable);
/// otherwise a deterministic synthetic pool is generated, written as IDX,
/// and read back through the normal loader.
template <typename Scalar>
std::pair<LabeledDataset<Scalar>, LabeledDataset<Scalar>> resolve_dataset(
    const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    std::string dir = cfg.data_dir;
    if (dir.empty()) {
        if (const char* env = std::getenv("DPAP_DATA_DIR")) dir = env;
    }
    auto find_file = [&](const std::string& name) -> std::string {
        if (dir.empty()) return "";
        for (const std::string& cand : {dir + "/" + name, dir + "/" + name + ".gz"})
            if (fs::exists(cand)) return cand;
        return "";
    };

    LabeledDataset<Scalar> train_pool, test_pool;
    if (cfg.dataset == "cifar") {
        std::vector<std::string> train_files;
        for (int i = 1; i <= 5; ++i) {
            const std::string f = find_file("data_batch_" + std::to_string(i) + ".bin");
            if (!f.empty()) train_files.push_back(f);
        }
        const std::string test_file = find_file("test_batch.bin");
        DPAP_CHECK(!train_files.empty() && !test_file.empty(),
                   "CIFAR files not found under '" << dir << "'");
        train_pool = load_cifar_batches<Scalar>(train_files);
        test_pool = load_cifar_batches<Scalar>({test_file});
    } else {
        const std::string ti = find_file("train-images-idx3-ubyte");
        const std::string tl = find_file("train-labels-idx1-ubyte");
        const std::string si = find_file("t10k-images-idx3-ubyte");
        const std::string sl = find_file("t10k-labels-idx1-ubyte");
        const bool have_real = cfg.dataset == "mnist" && !ti.empty() && !tl.empty() &&
                               !si.empty() && !sl.empty();
        if (have_real) {
            train_pool = load_mnist_idx<Scalar>(ti, tl);
            test_pool = load_mnist_idx<Scalar>(si, sl);
        } else {
            auto round_up10 = [](int n) { return ((n + 9) / 10) * 10; };
            const int pool_train = round_up10(std::max(2 * cfg.n_train, 2000));
            const int pool_test = round_up10(std::max(2 * cfg.n_test, 1000));
            const auto gen_train = synth_digits<Scalar>(pool_train, 0xA11CEull);
            const auto gen_test = synth_digits<Scalar>(pool_test, 0xB0Bull);
            // Round-trip the synthetic pool through IDX files so the on-disk
            // path stays exercised even without the real dataset.
            const fs::path cache = fs::temp_directory_path() / "dpap_synth_cache";
            fs::create_directories(cache);
            auto via_idx = [&](const LabeledDataset<Scalar>& ds, const std::string& stem) {
                const auto [ib, lb] = serialize_mnist_idx(ds);
                const std::string ip = (cache / (stem + "-images-idx3-ubyte")).string();
                const std::string lp = (cache / (stem + "-labels-idx1-ubyte")).string();
                write_file_bytes(ip, ib);
                write_file_bytes(lp, lb);
                return load_mnist_idx<Scalar>(ip, lp);
            };
            train_pool = via_idx(gen_train, "synth-train-" + std::to_string(pool_train));
            test_pool = via_idx(gen_test, "synth-test-" + std::to_string(pool_test));
        }
    }
    auto [train, drop_a] = subset(train_pool, cfg.n_train, 0, derive_seed(cfg.seed, 0x73706c74, 0));
    auto [test, drop_b] = subset(test_pool, cfg.n_test, 0, derive_seed(cfg.seed, 0x73706c74, 1));
    return {std::move(train), std::move(test)};
}

/// Loads data per the config, trains at the configured precision, and writes
/// the metrics CSV if a path is set.
inline RunMetrics run_experiment(const ExperimentConfig& cfg,
                                 const std::function<void(const EpochRow&)>& on_row = {}) {
    cfg.validate();
    RunMetrics m;
    if (cfg.precision == "f64") {
        auto [train, test] = resolve_dataset<double>(cfg);
        TrainObserver<double> obs;
        obs.on_row = on_row;
        m = run_training<double>(cfg, train, test, &obs);
    } else {
        auto [train, test] = resolve_dataset<float>(cfg);
        TrainObserver<float> obs;
        obs.on_row = on_row;
        m = run_training<float>(cfg, train, test, &obs);
    }
    if (!cfg.metrics_out.empty()) write_metrics_csv(cfg.metrics_out, m);
    return m;
}

/// One sweep cell: the pruning/accuracy trade-off reached at a grid point.
struct SweepPoint {
    double epsilon = 0, eta = 0;
    double final_acc = 0, best_acc = 0;
    double final_pruning_rate = 0;
    std::int64_t final_retained = 0;
};

inline std::vector<SweepPoint> sweep_grid(const ExperimentConfig& base,
                                          const std::vector<double>& epsilons,
                                          const std::vector<double>& etas,
                                          const std::string& out_prefix = "",
                                          const std::function<void(const SweepPoint&)>& on_point = {}) {
    DPAP_CHECK(!epsilons.empty() && !etas.empty(), "sweep needs at least one epsilon and eta");
    std::vector<SweepPoint> points;
    for (double eta : etas)
        for (double eps : epsilons) {
            ExperimentConfig cfg = base;
            cfg.epsilon = eps;
            cfg.eta = eta;
            cfg.dpap = true;
            if (!out_prefix.empty()) {
                std::ostringstream name;
                name << out_prefix << "eps" << eps << "_eta" << eta << ".csv";
                cfg.metrics_out = name.str();
            } else {
                cfg.metrics_out.clear();
            }
            cfg.checkpoint_out.clear();
            const RunMetrics m = run_experiment(cfg);
            SweepPoint p;
            p.epsilon = eps;
            p.eta = eta;
            p.final_acc = m.rows.back().test_acc;
            p.best_acc = m.best_row().test_acc;
            p.final_pruning_rate = m.rows.back().pruning_rate;
            p.final_retained = m.rows.back().retained_params;
            points.push_back(p);
            if (on_point) on_point(p);
        }
    return points;
}

/// Accuracy-versus-pruning table over the sweep results.
inline std::string sweep_table_text(const std::vector<SweepPoint>& points) {
    std::ostringstream o;
    o << "epsilon     eta    pruning_rate    final_acc    best_acc    retained\n";
    for (const auto& p : points) {
        char line[160];
        std::snprintf(line, sizeof(line), "%7.3f %7.2f %15.4f %12.4f %11.4f %11lld\n", p.epsilon,
                      p.eta, p.final_pruning_rate, p.final_acc, p.best_acc,
                      static_cast<long long>(p.final_retained));
        o << line;
    }
    return o.str();
}

}  // namespace dpap
