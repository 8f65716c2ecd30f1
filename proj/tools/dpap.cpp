#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpap/trainer.hpp"

namespace {

/// Registers one flag per config key so the command line mirrors the file
/// format: any key in a config file can also be set as --key value.
void add_config_flags(CLI::App& app, dpap::ExperimentConfig& cfg) {
    app.add_option("--engine", cfg.engine, "snn or ann");
    app.add_option("--topology", cfg.topology, "layer string, e.g. Input-8C3-AvgPool2-...-10FC");
    app.add_option("--t-steps", cfg.t_steps, "simulation steps per window");
    app.add_option("--lambda", cfg.lambda, "membrane leak factor");
    app.add_option("--v-th", cfg.v_th, "firing threshold");
    app.add_option("--surrogate-width", cfg.surrogate_width, "surrogate window width");
    app.add_option("--lr", cfg.lr, "learning rate");
    app.add_option("--momentum", cfg.momentum, "SGD momentum (0 disables)");
    app.add_option("--epochs", cfg.epochs, "training epochs");
    app.add_option("--batch", cfg.batch, "batch size");
    app.add_option("--seed", cfg.seed, "master seed");
    app.add_flag("--dpap,!--no-dpap", cfg.dpap, "adaptive pruning on/off");
    app.add_option("--tau", cfg.tau, "trace decay factor");
    app.add_option("--epsilon", cfg.epsilon, "normalization shift");
    app.add_option("--eta", cfg.eta, "survival envelope time constant");
    app.add_option("--beta", cfg.beta, "initial survival value");
    app.add_option("--gamma", cfg.gamma, "survival decay factor");
    app.add_option("--c-conv", cfg.c_conv, "stabilization constant for conv layers");
    app.add_option("--c-fc", cfg.c_fc, "stabilization constant for fully connected layers");
    app.add_option("--dataset", cfg.dataset, "mnist, cifar, or synth");
    app.add_option("--data-dir", cfg.data_dir, "dataset directory (default: $DPAP_DATA_DIR)");
    app.add_option("--encoding", cfg.encoding, "constant or bernoulli input encoding");
    app.add_option("--n-train", cfg.n_train, "training subset size");
    app.add_option("--n-test", cfg.n_test, "test subset size");
    app.add_option("--precision", cfg.precision, "f32 or f64");
    app.add_option("--threads", cfg.threads, "worker threads");
    app.add_option("--eval-batch", cfg.eval_batch, "evaluation batch size");
    app.add_option("--metrics-out", cfg.metrics_out, "metrics CSV output path");
    app.add_option("--checkpoint-out", cfg.checkpoint_out, "checkpoint output path");
    app.add_option("--resume", cfg.resume, "checkpoint to resume from");
    app.add_option("--checkpoint-every", cfg.checkpoint_every,
                   "also save every k epochs (0 = final only)");
}

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            dpap::fail(std::string("cannot parse ") + what + " list entry '" + cell + "'");
        }
    }
    if (out.empty()) dpap::fail(std::string(what) + " list is empty");
    return out;
}

void print_row(const dpap::EpochRow& r) {
    std::fprintf(stderr,
                 "epoch %3d  loss %9.5f  acc %6.4f  retained %8lld  pruned %5.1f%%  "
                 "(-%lld syn, -%lld units)  %7.0f ms\n",
                 r.epoch, r.train_loss, r.test_acc, static_cast<long long>(r.retained_params),
                 100.0 * r.pruning_rate, static_cast<long long>(r.pruned_synapses),
                 static_cast<long long>(r.pruned_neurons), r.wall_ms);
}

/// Reads a --config/-c argument ahead of the regular parse so file values
/// load first and explicit flags override them.
std::string prescan_config_path(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" || a == "-c") return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spiking / conventional network trainer with developmental-style "
                 "adaptive pruning"};
    app.require_subcommand(1);

    dpap::ExperimentConfig cfg;
    const std::string config_path = prescan_config_path(argc, argv);
    try {
        if (!config_path.empty()) cfg = dpap::ExperimentConfig::from_file(config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::string config_sink = config_path;

    auto* train = app.add_subcommand("train", "run one training experiment");
    train->add_option("--config,-c", config_sink, "key=value config file; flags override it");
    add_config_flags(*train, cfg);
    bool quiet = false;
    train->add_flag("--quiet", quiet, "suppress per-epoch progress");

    auto* compare = app.add_subcommand("compare", "compare two metrics CSVs");
    std::string csv_a, csv_b;
    double baseline = 0.9;
    compare->add_option("a", csv_a, "metrics CSV of the reference run")->required();
    compare->add_option("b", csv_b, "metrics CSV of the candidate run")->required();
    compare->add_option("--baseline", baseline, "baseline accuracy for convergence speed");

    auto* sweep = app.add_subcommand("sweep", "grid sweep over epsilon x eta");
    sweep->add_option("--config,-c", config_sink, "key=value config file; flags override it");
    add_config_flags(*sweep, cfg);
    std::string eps_list = "0.5,1.0,1.5";
    std::string eta_list = "10,25,50";
    std::string sweep_prefix;
    sweep->add_option("--epsilon-list", eps_list, "comma-separated epsilon values");
    sweep->add_option("--eta-list", eta_list, "comma-separated eta values");
    sweep->add_option("--out-prefix", sweep_prefix, "per-run metrics CSV path prefix");

    auto* report = app.add_subcommand("report", "print a metrics CSV as a table");
    std::string report_csv;
    report->add_option("csv", report_csv, "metrics CSV to print")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            cfg.validate();
            const dpap::RunMetrics m = dpap::run_experiment(
                cfg, quiet ? std::function<void(const dpap::EpochRow&)>{} : print_row);
            const auto& last = m.rows.back();
            std::printf("final: epoch %d, accuracy %.4f, retained %lld params (%.1f%% pruned)\n",
                        last.epoch, last.test_acc, static_cast<long long>(last.retained_params),
                        100.0 * last.pruning_rate);
            if (!cfg.metrics_out.empty()) std::printf("metrics: %s\n", cfg.metrics_out.c_str());
            if (!cfg.checkpoint_out.empty())
                std::printf("checkpoint: %s\n", cfg.checkpoint_out.c_str());
        } else if (compare->parsed()) {
            const dpap::RunMetrics a = dpap::read_metrics_csv(csv_a);
            const dpap::RunMetrics b = dpap::read_metrics_csv(csv_b);
            const dpap::ComparisonReport r = dpap::compare_runs(a, b, baseline);
            std::printf("%s", r.to_text().c_str());
        } else if (sweep->parsed()) {
            cfg.validate();
            const auto epsilons = parse_list(eps_list, "epsilon");
            const auto etas = parse_list(eta_list, "eta");
            const auto points = dpap::sweep_grid(
                cfg, epsilons, etas, sweep_prefix, [](const dpap::SweepPoint& p) {
                    std::fprintf(stderr, "done eps=%g eta=%g: acc %.4f, pruned %.1f%%\n",
                                 p.epsilon, p.eta, p.final_acc, 100.0 * p.final_pruning_rate);
                });
            std::printf("%s", dpap::sweep_table_text(points).c_str());
        } else if (report->parsed()) {
            const dpap::RunMetrics m = dpap::read_metrics_csv(report_csv);
            std::printf("engine=%s topology=%s precision=%s seed=%llu\n", m.engine.c_str(),
                        m.topology.c_str(), m.precision.c_str(),
                        static_cast<unsigned long long>(m.seed));
            std::printf("%-6s %-12s %-10s %-16s %-14s %-10s\n", "epoch", "train_loss",
                        "test_acc", "retained_params", "pruning_rate", "wall_ms");
            for (const auto& r : m.rows)
                std::printf("%-6d %-12.6g %-10.4f %-16lld %-14.4f %-10.0f\n", r.epoch,
                            r.train_loss, r.test_acc, static_cast<long long>(r.retained_params),
                            r.pruning_rate, r.wall_ms);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
