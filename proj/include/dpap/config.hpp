#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpap/tensor.hpp"

namespace dpap {

/// Full description of one training run. Flat key=value text on disk; every
/// neuron-model and plasticity constant is a key so nothing is baked in.
struct ExperimentConfig {
    // Engine and model
    std::string engine = "snn";  // snn | ann
    std::string topology = "Input-8C3-AvgPool2-16C3-AvgPool2-Flatten-100FC-10FC";
    int t_steps = 8;

    // Neuron model
    double lambda = 0.2;
    double v_th = 0.5;
    double surrogate_width = 1.0;

    // Optimization
    double lr = 0.1;
    double momentum = 0.0;
    int epochs = 30;
    int batch = 50;
    std::uint64_t seed = 1;

    // Plasticity and pruning
    bool dpap = true;
    double tau = 0.5;
    double epsilon = 1.0;
    double eta = 25.0;
    double beta = 1.0;
    double gamma = 0.999;
    double c_conv = 5.0;
    double c_fc = 2.0;

    // Data
    std::string dataset = "mnist";  // mnist | cifar | synth
    std::string data_dir;           // falls back to the DPAP_DATA_DIR env var
    std::string encoding = "constant";  // constant | bernoulli
    int n_train = 2000;
    int n_test = 1000;

    // Execution
    std::string precision = "f32";  // f32 | f64
    int threads = 4;
    int eval_batch = 250;
    std::string metrics_out;
    std::string checkpoint_out;
    std::string resume;
    int checkpoint_every = 0;  // extra saves every k epochs; 0 = final only

    void set(const std::string& key, const std::string& value);
    void validate() const;
    std::vector<std::pair<std::string, std::string>> to_kv() const;
    std::string to_text() const;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    int x = 0;
    try {
        x = std::stoi(v, &pos);
    } catch (const std::exception&) {
        fail("config key '" + key + "': cannot parse integer from '" + v + "'");
    }
    DPAP_CHECK(pos == v.size(), "config key '" << key << "': trailing text in '" << v << "'");
    return x;
}

inline double parse_double(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        fail("config key '" + key + "': cannot parse number from '" + v + "'");
    }
    DPAP_CHECK(pos == v.size(), "config key '" << key << "': trailing text in '" << v << "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    fail("config key '" + key + "': expected on/off, got '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    std::uint64_t x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        fail("config key '" + key + "': cannot parse integer from '" + v + "'");
    }
    DPAP_CHECK(pos == v.size(), "config key '" << key << "': trailing text in '" << v << "'");
    return x;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "engine") engine = value;
    else if (key == "topology") topology = value;
    else if (key == "t_steps") t_steps = parse_int(key, value);
    else if (key == "lambda") lambda = parse_double(key, value);
    else if (key == "v_th") v_th = parse_double(key, value);
    else if (key == "surrogate_width") surrogate_width = parse_double(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "momentum") momentum = parse_double(key, value);
    else if (key == "epochs") epochs = parse_int(key, value);
    else if (key == "batch") batch = parse_int(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "dpap") dpap = parse_bool(key, value);
    else if (key == "tau") tau = parse_double(key, value);
    else if (key == "epsilon") epsilon = parse_double(key, value);
    else if (key == "eta") eta = parse_double(key, value);
    else if (key == "beta") beta = parse_double(key, value);
    else if (key == "gamma") gamma = parse_double(key, value);
    else if (key == "c_conv") c_conv = parse_double(key, value);
    else if (key == "c_fc") c_fc = parse_double(key, value);
    else if (key == "dataset") dataset = value;
    else if (key == "data_dir") data_dir = value;
    else if (key == "encoding") encoding = value;
    else if (key == "n_train") n_train = parse_int(key, value);
    else if (key == "n_test") n_test = parse_int(key, value);
    else if (key == "precision") precision = value;
    else if (key == "threads") threads = parse_int(key, value);
    else if (key == "eval_batch") eval_batch = parse_int(key, value);
    else if (key == "metrics_out") metrics_out = value;
    else if (key == "checkpoint_out") checkpoint_out = value;
    else if (key == "resume") resume = value;
    else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
    else fail("unknown config key '" + key + "'");
}

inline void ExperimentConfig::validate() const {
    DPAP_CHECK(engine == "snn" || engine == "ann", "engine must be snn or ann, got '"
                                                       << engine << "'");
    DPAP_CHECK(encoding == "constant" || encoding == "bernoulli",
               "encoding must be constant or bernoulli, got '" << encoding << "'");
    DPAP_CHECK(precision == "f32" || precision == "f64",
               "precision must be f32 or f64, got '" << precision << "'");
    DPAP_CHECK(dataset == "mnist" || dataset == "cifar" || dataset == "synth",
               "dataset must be mnist, cifar, or synth, got '" << dataset << "'");
    DPAP_CHECK(t_steps >= 1, "t_steps must be at least 1, got " << t_steps);
    DPAP_CHECK(lambda >= 0 && lambda < 1, "lambda must lie in [0,1), got " << lambda);
    DPAP_CHECK(surrogate_width > 0, "surrogate_width must be positive, got " << surrogate_width);
    DPAP_CHECK(lr > 0, "lr must be positive, got " << lr);
    DPAP_CHECK(momentum >= 0 && momentum < 1, "momentum must lie in [0,1), got " << momentum);
    DPAP_CHECK(epochs >= 0, "epochs must be non-negative, got " << epochs);
    DPAP_CHECK(batch >= 1, "batch must be at least 1, got " << batch);
    DPAP_CHECK(tau >= 0 && tau < 1, "tau must lie in [0,1), got " << tau);
    DPAP_CHECK(epsilon > 0 && epsilon < 2, "epsilon must lie in (0,2), got " << epsilon);
    DPAP_CHECK(eta > 0, "eta must be positive, got " << eta);
    DPAP_CHECK(gamma > 0 && gamma < 1, "gamma must lie in (0,1), got " << gamma);
    DPAP_CHECK(c_conv >= 0 && c_fc >= 0, "stabilization constants must be non-negative");
    DPAP_CHECK(n_train >= 1, "n_train must be at least 1, got " << n_train);
    DPAP_CHECK(n_test >= 1, "n_test must be at least 1, got " << n_test);
    DPAP_CHECK(threads >= 1, "threads must be at least 1, got " << threads);
    DPAP_CHECK(eval_batch >= 1, "eval_batch must be at least 1, got " << eval_batch);
    DPAP_CHECK(checkpoint_every >= 0, "checkpoint_every must be non-negative, got "
                                          << checkpoint_every);
}

inline std::vector<std::pair<std::string, std::string>> ExperimentConfig::to_kv() const {
    auto num = [](double v) {
        std::ostringstream o;
        o.precision(17);
        o << v;
        return o.str();
    };
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("engine", engine);
    kv.emplace_back("topology", topology);
    kv.emplace_back("t_steps", std::to_string(t_steps));
    kv.emplace_back("lambda", num(lambda));
    kv.emplace_back("v_th", num(v_th));
    kv.emplace_back("surrogate_width", num(surrogate_width));
    kv.emplace_back("lr", num(lr));
    kv.emplace_back("momentum", num(momentum));
    kv.emplace_back("epochs", std::to_string(epochs));
    kv.emplace_back("batch", std::to_string(batch));
    kv.emplace_back("seed", std::to_string(seed));
    kv.emplace_back("dpap", dpap ? "on" : "off");
    kv.emplace_back("tau", num(tau));
    kv.emplace_back("epsilon", num(epsilon));
    kv.emplace_back("eta", num(eta));
    kv.emplace_back("beta", num(beta));
    kv.emplace_back("gamma", num(gamma));
    kv.emplace_back("c_conv", num(c_conv));
    kv.emplace_back("c_fc", num(c_fc));
    kv.emplace_back("dataset", dataset);
    kv.emplace_back("data_dir", data_dir);
    kv.emplace_back("encoding", encoding);
    kv.emplace_back("n_train", std::to_string(n_train));
    kv.emplace_back("n_test", std::to_string(n_test));
    kv.emplace_back("precision", precision);
    kv.emplace_back("threads", std::to_string(threads));
    kv.emplace_back("eval_batch", std::to_string(eval_batch));
    kv.emplace_back("metrics_out", metrics_out);
    kv.emplace_back("checkpoint_out", checkpoint_out);
    kv.emplace_back("resume", resume);
    kv.emplace_back("checkpoint_every", std::to_string(checkpoint_every));
    return kv;
}

inline std::string ExperimentConfig::to_text() const {
    std::ostringstream o;
    for (const auto& [k, v] : to_kv()) o << k << "=" << v << "\n";
    return o.str();
}

inline ExperimentConfig ExperimentConfig::from_kv(
    const std::vector<std::pair<std::string, std::string>>& kv) {
    ExperimentConfig cfg;
    for (const auto& [k, v] : kv) cfg.set(k, v);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    DPAP_CHECK(f.good(), "cannot open config '" << path << "'");
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        DPAP_CHECK(eq != std::string::npos,
                   "config '" << path << "' line " << lineno << ": expected key=value");
        cfg.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

}  // namespace dpap
