#pragma once

#include <array>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "dpap/tensor_ops.hpp"

namespace dpap {

enum class LayerKind { Conv, AvgPool, MaxPool, Flatten, Fc };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::AvgPool: return "avgpool2";
        case LayerKind::MaxPool: return "maxpool2";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Fc: return "fc";
    }
    return "?";
}

/// One token of a topology string such as "Input-15C3-AvgPool2-Flatten-300FC".
struct TopologyItem {
    LayerKind kind;
    int units = 0;   // conv out channels / fc out units
    int kernel = 0;  // conv kernel size
};

namespace detail {

inline bool parse_int_prefix(const std::string& tok, size_t& pos, int& value) {
    size_t start = pos;
    while (pos < tok.size() && std::isdigit(static_cast<unsigned char>(tok[pos]))) ++pos;
    if (pos == start) return false;
    value = std::stoi(tok.substr(start, pos - start));
    return true;
}

}  // namespace detail

/// Parses the '-'-separated topology notation. The leading "Input" token is
/// required and consumed; the returned list covers the remaining layers.
inline std::vector<TopologyItem> parse_topology(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (c == '-') {
            tokens.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    tokens.push_back(cur);

    DPAP_CHECK(!tokens.empty() && tokens[0] == "Input",
               "topology must start with 'Input', got '" << (tokens.empty() ? "" : tokens[0])
                                                         << "' at token 1");
    std::vector<TopologyItem> items;
    for (size_t i = 1; i < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        const int pos = static_cast<int>(i) + 1;  // 1-based token position for diagnostics
        if (tok == "AvgPool2") {
            items.push_back({LayerKind::AvgPool});
            continue;
        }
        if (tok == "MaxPool2") {
            items.push_back({LayerKind::MaxPool});
            continue;
        }
        if (tok == "Flatten") {
            items.push_back({LayerKind::Flatten});
            continue;
        }
        size_t p = 0;
        int n = 0;
        if (detail::parse_int_prefix(tok, p, n) && p < tok.size()) {
            if (tok[p] == 'C') {
                ++p;
                int k = 0;
                if (detail::parse_int_prefix(tok, p, k) && p == tok.size() && n > 0 && k > 0) {
                    items.push_back({LayerKind::Conv, n, k});
                    continue;
                }
            } else if (tok.compare(p, std::string::npos, "FC") == 0 && n > 0) {
                items.push_back({LayerKind::Fc, n});
                continue;
            }
        }
        fail("topology parse error at token " + std::to_string(pos) + ": '" + tok + "'");
    }
    DPAP_CHECK(!items.empty(), "topology has no layers after 'Input'");
    return items;
}

/// A topology item bound to concrete input/output shapes.
struct LayerGeom {
    LayerKind kind;
    ConvSpec conv{};                 // Conv layers
    int in_features = 0;             // Fc layers
    int out_features = 0;            // Fc layers
    std::array<int, 3> in_chw{};     // spatial layers ({N,0,0} once flat)
    std::array<int, 3> out_chw{};
    bool flat_in = false;
    bool flat_out = false;

    bool weighted() const { return kind == LayerKind::Conv || kind == LayerKind::Fc; }
};

struct ConvDefaults {
    int stride = 1;
    int padding = -1;  // -1: same-style kernel/2
};

/// Infers every layer's shape from the input [C,H,W]. `padding_overrides` maps
/// the 1-based topology token position of a conv layer to an explicit padding.
inline std::vector<LayerGeom> bind_topology(const std::vector<TopologyItem>& items,
                                            std::array<int, 3> input_chw,
                                            const ConvDefaults& defaults = {},
                                            const std::map<int, int>& padding_overrides = {}) {
    std::vector<LayerGeom> geoms;
    std::array<int, 3> shape = input_chw;
    bool flat = false;
    int flat_n = 0;

    for (size_t i = 0; i < items.size(); ++i) {
        const TopologyItem& it = items[i];
        const int pos = static_cast<int>(i) + 2;  // token position within the original string
        LayerGeom g;
        g.kind = it.kind;
        g.flat_in = flat;
        g.in_chw = shape;
        switch (it.kind) {
            case LayerKind::Conv: {
                DPAP_CHECK(!flat, "topology token " << pos << ": conv requires spatial input");
                g.conv.in_channels = shape[0];
                g.conv.out_channels = it.units;
                g.conv.kernel_size = it.kernel;
                g.conv.stride = defaults.stride;
                auto ov = padding_overrides.find(pos);
                g.conv.padding = ov != padding_overrides.end() ? ov->second
                                 : defaults.padding >= 0     ? defaults.padding
                                                             : it.kernel / 2;
                g.conv.validate();
                shape = {it.units, g.conv.out_extent(shape[1]), g.conv.out_extent(shape[2])};
                break;
            }
            case LayerKind::AvgPool:
            case LayerKind::MaxPool:
                DPAP_CHECK(!flat, "topology token " << pos << ": pooling requires spatial input");
                DPAP_CHECK(shape[1] % 2 == 0 && shape[2] % 2 == 0,
                           "topology token " << pos << ": pooling requires even extents, got "
                                             << shape[1] << "x" << shape[2]);
                shape = {shape[0], shape[1] / 2, shape[2] / 2};
                break;
            case LayerKind::Flatten:
                DPAP_CHECK(!flat, "topology token " << pos << ": input is already flat");
                flat = true;
                flat_n = shape[0] * shape[1] * shape[2];
                break;
            case LayerKind::Fc:
                // A spatial input is implicitly flattened.
                if (!flat) {
                    flat = true;
                    flat_n = shape[0] * shape[1] * shape[2];
                }
                g.in_features = flat_n;
                g.out_features = it.units;
                flat_n = it.units;
                break;
        }
        g.flat_out = flat;
        g.out_chw = flat ? std::array<int, 3>{flat_n, 0, 0} : shape;
        geoms.push_back(g);
    }
    DPAP_CHECK(geoms.back().kind == LayerKind::Fc,
               "topology must end in a fully connected readout layer");
    return geoms;
}

}  // namespace dpap
