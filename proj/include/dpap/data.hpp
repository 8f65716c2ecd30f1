#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "dpap/rng.hpp"
#include "dpap/tensor.hpp"

namespace dpap {

template <typename Scalar>
struct LabeledDataset {
    Tensor<Scalar> images;  // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;
    int class_count = 10;

    int size() const { return images.rank() ? images.dim(0) : 0; }

    void validate() const {
        DPAP_CHECK(images.rank() == 4, "dataset images must be [N,C,H,W], got "
                                           << shape_string(images.shape()));
        DPAP_CHECK(size() > 0 && static_cast<int>(labels.size()) == size(),
                   "dataset has " << size() << " images but " << labels.size() << " labels");
        for (int l : labels)
            DPAP_CHECK(l >= 0 && l < class_count,
                       "label " << l << " outside [0," << class_count << ")");
    }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DPAP_CHECK(f.good(), "cannot open '" << path << "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                      std::istreambuf_iterator<char>());
}

inline bool is_gzip(const std::vector<unsigned char>& b) {
    return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

inline std::vector<unsigned char> gunzip_bytes(const std::vector<unsigned char>& in,
                                               const std::string& path) {
    z_stream zs{};
    DPAP_CHECK(inflateInit2(&zs, 16 + MAX_WBITS) == Z_OK, "zlib init failed for '" << path << "'");
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> buf;
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            fail("gzip decompression failed for '" + path + "'");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, size_t off,
                               const std::string& path) {
    DPAP_CHECK(off + 4 <= b.size(), "'" << path << "' truncated: wanted 4 bytes at offset "
                                        << off << ", file has " << b.size());
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void write_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

/// Parses the big-endian IDX container (gzip accepted) and checks the magic
/// and payload length. Returns the dimension sizes and the byte payload.
inline std::pair<std::vector<int>, std::vector<unsigned char>> load_idx_bytes(
    const std::string& path, std::uint32_t want_magic) {
    auto bytes = detail::read_file_bytes(path);
    if (detail::is_gzip(bytes)) bytes = detail::gunzip_bytes(bytes, path);
    const std::uint32_t magic = detail::read_be32(bytes, 0, path);
    DPAP_CHECK(magic == want_magic, "'" << path << "': bad magic at byte 0: got 0x" << std::hex
                                        << magic << ", expected 0x" << want_magic << std::dec);
    const int rank = static_cast<int>(magic & 0xff);
    std::vector<int> dims;
    size_t off = 4;
    size_t total = 1;
    for (int d = 0; d < rank; ++d, off += 4) {
        const std::uint32_t n = detail::read_be32(bytes, off, path);
        dims.push_back(static_cast<int>(n));
        total *= n;
    }
    DPAP_CHECK(bytes.size() == off + total,
               "'" << path << "': payload of " << bytes.size() - off << " bytes at offset " << off
                   << " does not match declared size " << total);
    return {dims, std::vector<unsigned char>(bytes.begin() + off, bytes.end())};
}

/// MNIST-style pair of IDX files: [N,28,28] ubyte images scaled by 1/255 and
/// [N] ubyte labels, cross-checked for matching counts.
template <typename Scalar>
LabeledDataset<Scalar> load_mnist_idx(const std::string& images_path,
                                      const std::string& labels_path) {
    auto [idim, ibytes] = load_idx_bytes(images_path, 0x00000803u);
    auto [ldim, lbytes] = load_idx_bytes(labels_path, 0x00000801u);
    DPAP_CHECK(idim.size() == 3, "'" << images_path << "' declares " << idim.size()
                                     << " dimensions, expected 3");
    DPAP_CHECK(idim[0] == ldim[0], "image count " << idim[0] << " in '" << images_path
                                                  << "' does not match label count " << ldim[0]
                                                  << " in '" << labels_path << "'");
    LabeledDataset<Scalar> ds;
    ds.images = Tensor<Scalar>({idim[0], 1, idim[1], idim[2]});
    for (size_t i = 0; i < ibytes.size(); ++i)
        ds.images[i] = Scalar(ibytes[i]) / Scalar(255);
    ds.labels.assign(lbytes.begin(), lbytes.end());
    ds.class_count = 10;
    ds.validate();
    return ds;
}

/// Serializes a dataset back into the IDX byte streams it was loaded from
/// (images quantized to their original byte values).
template <typename Scalar>
std::pair<std::vector<unsigned char>, std::vector<unsigned char>> serialize_mnist_idx(
    const LabeledDataset<Scalar>& ds) {
    ds.validate();
    DPAP_CHECK(ds.images.dim(1) == 1, "IDX image serialization expects a single channel");
    std::vector<unsigned char> img;
    detail::write_be32(img, 0x00000803u);
    detail::write_be32(img, static_cast<std::uint32_t>(ds.size()));
    detail::write_be32(img, static_cast<std::uint32_t>(ds.images.dim(2)));
    detail::write_be32(img, static_cast<std::uint32_t>(ds.images.dim(3)));
    for (size_t i = 0; i < ds.images.size(); ++i) {
        const long v = std::lround(static_cast<double>(ds.images[i]) * 255.0);
        img.push_back(static_cast<unsigned char>(std::clamp(v, 0l, 255l)));
    }
    std::vector<unsigned char> lab;
    detail::write_be32(lab, 0x00000801u);
    detail::write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) lab.push_back(static_cast<unsigned char>(l));
    return {std::move(img), std::move(lab)};
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    DPAP_CHECK(f.good(), "cannot write '" << path << "'");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    DPAP_CHECK(f.good(), "short write to '" << path << "'");
}

/// CIFAR-10 binary batches: each record is 1 label byte followed by 3072
/// pixel bytes (three 32x32 planes).
template <typename Scalar>
LabeledDataset<Scalar> load_cifar_batches(const std::vector<std::string>& paths) {
    constexpr int record = 1 + 3 * 32 * 32;
    std::vector<unsigned char> all;
    for (const auto& p : paths) {
        auto b = detail::read_file_bytes(p);
        if (detail::is_gzip(b)) b = detail::gunzip_bytes(b, p);
        DPAP_CHECK(b.size() % record == 0, "'" << p << "': size " << b.size()
                                               << " is not a multiple of the " << record
                                               << "-byte record");
        all.insert(all.end(), b.begin(), b.end());
    }
    const int n = static_cast<int>(all.size() / record);
    DPAP_CHECK(n > 0, "no CIFAR records found");
    LabeledDataset<Scalar> ds;
    ds.images = Tensor<Scalar>({n, 3, 32, 32});
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const unsigned char* r = all.data() + static_cast<size_t>(i) * record;
        ds.labels[i] = r[0];
        for (int j = 0; j < 3 * 32 * 32; ++j)
            ds.images[static_cast<size_t>(i) * 3072 + j] = Scalar(r[1 + j]) / Scalar(255);
    }
    ds.class_count = 10;
    ds.validate();
    return ds;
}

/// Class-stratified train/test split, deterministic under the seed. Each
/// class contributes an equal share (remainders go to the lowest class ids);
/// selected indices are emitted in ascending dataset order, so requesting
/// everything reproduces the dataset as-is.
template <typename Scalar>
std::pair<LabeledDataset<Scalar>, LabeledDataset<Scalar>> subset(
    const LabeledDataset<Scalar>& ds, int n_train, int n_test, std::uint64_t seed) {
    ds.validate();
    DPAP_CHECK(n_train >= 0 && n_test >= 0 && n_train + n_test <= ds.size(),
               "subset of " << n_train << "+" << n_test << " exceeds the " << ds.size()
                            << " available samples");
    std::vector<std::vector<int>> by_class(ds.class_count);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    auto quota = [&](int total, int cls) {
        return total / ds.class_count + (cls < total % ds.class_count ? 1 : 0);
    };
    std::vector<int> train_ix, test_ix;
    for (int c = 0; c < ds.class_count; ++c) {
        const int want_train = quota(n_train, c);
        const int want_test = quota(n_test, c);
        auto& pool = by_class[c];
        DPAP_CHECK(static_cast<int>(pool.size()) >= want_train + want_test,
                   "class " << c << " has " << pool.size() << " samples, need "
                            << want_train + want_test);
        Rng rng(derive_seed(seed, 0x737562, static_cast<std::uint64_t>(c)));
        for (size_t i = pool.size(); i > 1; --i)
            std::swap(pool[i - 1], pool[rng.uniform_int(static_cast<std::uint64_t>(i))]);
        train_ix.insert(train_ix.end(), pool.begin(), pool.begin() + want_train);
        test_ix.insert(test_ix.end(), pool.begin() + want_train,
                       pool.begin() + want_train + want_test);
    }
    std::sort(train_ix.begin(), train_ix.end());
    std::sort(test_ix.begin(), test_ix.end());

    auto take = [&](const std::vector<int>& ix) {
        LabeledDataset<Scalar> out;
        out.class_count = ds.class_count;
        if (ix.empty()) return out;
        const int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
        const size_t stride = static_cast<size_t>(c) * h * w;
        out.images = Tensor<Scalar>({static_cast<int>(ix.size()), c, h, w});
        for (size_t r = 0; r < ix.size(); ++r) {
            std::copy_n(ds.images.data() + ix[r] * stride, stride,
                        out.images.data() + r * stride);
            out.labels.push_back(ds.labels[ix[r]]);
        }
        return out;
    };
    return {take(train_ix), take(test_ix)};
}

/// Independent Bernoulli(rate) spikes per element per step.
template <typename Scalar>
std::vector<Tensor<Scalar>> synth_poisson(const Tensor<Scalar>& rate_map, int T,
                                          std::uint64_t seed) {
    DPAP_CHECK(T >= 1, "window length must be at least 1, got " << T);
    for (size_t i = 0; i < rate_map.size(); ++i)
        DPAP_CHECK(rate_map[i] >= Scalar(0) && rate_map[i] <= Scalar(1),
                   "rate entry " << i << " = " << rate_map[i] << " outside [0,1]");
    Rng rng(seed);
    std::vector<Tensor<Scalar>> spikes;
    for (int t = 0; t < T; ++t) {
        Tensor<Scalar> s(rate_map.shape());
        for (size_t i = 0; i < s.size(); ++i)
            s[i] = rng.bernoulli(static_cast<double>(rate_map[i])) ? Scalar(1) : Scalar(0);
        spikes.push_back(std::move(s));
    }
    return spikes;
}

template <typename Scalar>
Tensor<Scalar> one_hot(const std::vector<int>& labels, int class_count) {
    Tensor<Scalar> y = Tensor<Scalar>::zeros({static_cast<int>(labels.size()), class_count});
    for (size_t i = 0; i < labels.size(); ++i) {
        DPAP_CHECK(labels[i] >= 0 && labels[i] < class_count,
                   "label " << labels[i] << " outside [0," << class_count << ")");
        y(static_cast<int>(i), labels[i]) = Scalar(1);
    }
    return y;
}

/// Drive tensors for one batch window plus one-hot targets. Constant-current
/// mode injects the pixel tensor at every step; Bernoulli mode samples 0/1
/// spikes with the pixel value as rate.
template <typename Scalar>
struct EncodedBatch {
    std::vector<Tensor<Scalar>> drive;  // one tensor (constant) or T tensors
    bool constant = true;
    Tensor<Scalar> targets;

    const Tensor<Scalar>& at(int t) const { return constant ? drive[0] : drive[t]; }
};

template <typename Scalar>
EncodedBatch<Scalar> encode_batch(const Tensor<Scalar>& images, const std::vector<int>& labels,
                                  int class_count, int T, bool bernoulli, std::uint64_t seed) {
    EncodedBatch<Scalar> out;
    out.targets = one_hot<Scalar>(labels, class_count);
    if (!bernoulli) {
        out.constant = true;
        out.drive.push_back(images);
        return out;
    }
    out.constant = false;
    out.drive = synth_poisson(images, T, seed);
    return out;
}

/// Rows [lo, hi) of a dataset as one batch tensor plus labels.
template <typename Scalar>
std::pair<Tensor<Scalar>, std::vector<int>> gather_rows(const LabeledDataset<Scalar>& ds,
                                                        const std::vector<int>& order, int lo,
                                                        int hi) {
    const int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    const size_t stride = static_cast<size_t>(c) * h * w;
    Tensor<Scalar> batch({hi - lo, c, h, w});
    std::vector<int> labels;
    for (int r = lo; r < hi; ++r) {
        std::copy_n(ds.images.data() + order[r] * stride, stride,
                    batch.data() + static_cast<size_t>(r - lo) * stride);
        labels.push_back(ds.labels[order[r]]);
    }
    return {std::move(batch), std::move(labels)};
}

/// Order-insensitive content fingerprint of a dataset, for pairing runs that
/// must share a split.
template <typename Scalar>
std::uint64_t dataset_fingerprint(const LabeledDataset<Scalar>& ds) {
    std::uint64_t h = 0x9e3779b97f4a7c15ull ^ static_cast<std::uint64_t>(ds.size());
    for (size_t i = 0; i < ds.images.size(); ++i) {
        const auto q = static_cast<std::uint64_t>(
            std::lround(static_cast<double>(ds.images[i]) * 255.0));
        h = splitmix64(h ^ q);
    }
    for (int l : ds.labels) h = splitmix64(h ^ static_cast<std::uint64_t>(l));
    return h;
}

namespace detail {

struct Stroke {
    std::vector<std::array<double, 2>> pts;  // polyline in the unit square
};

inline void add_ellipse(std::vector<Stroke>& s, double cx, double cy, double rx, double ry) {
    Stroke e;
    for (int i = 0; i <= 16; ++i) {
        const double a = 2.0 * 3.14159265358979323846 * i / 16;
        e.pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    s.push_back(std::move(e));
}

inline std::vector<Stroke> digit_strokes(int d) {
    std::vector<Stroke> s;
    switch (d) {
        case 0: add_ellipse(s, 0.5, 0.5, 0.27, 0.38); break;
        case 1:
            s.push_back({{{0.55, 0.1}, {0.55, 0.9}}});
            s.push_back({{{0.38, 0.26}, {0.55, 0.1}}});
            break;
        case 2:
            s.push_back({{{0.27, 0.3}, {0.33, 0.15}, {0.5, 0.1}, {0.67, 0.16}, {0.72, 0.32}}});
            s.push_back({{{0.72, 0.32}, {0.26, 0.9}}});
            s.push_back({{{0.26, 0.9}, {0.76, 0.9}}});
            break;
        case 3:
            s.push_back({{{0.3, 0.14}, {0.55, 0.1}, {0.71, 0.26}, {0.55, 0.45}, {0.42, 0.48}}});
            s.push_back({{{0.42, 0.48}, {0.62, 0.52}, {0.74, 0.67}, {0.58, 0.86}, {0.3, 0.86}}});
            break;
        case 4:
            s.push_back({{{0.64, 0.9}, {0.64, 0.1}}});
            s.push_back({{{0.64, 0.1}, {0.26, 0.64}}});
            s.push_back({{{0.26, 0.64}, {0.8, 0.64}}});
            break;
        case 5:
            s.push_back({{{0.72, 0.1}, {0.32, 0.1}}});
            s.push_back({{{0.32, 0.1}, {0.32, 0.45}}});
            s.push_back({{{0.32, 0.45}, {0.6, 0.42}, {0.74, 0.6}, {0.6, 0.84}, {0.3, 0.82}}});
            break;
        case 6:
            add_ellipse(s, 0.5, 0.66, 0.24, 0.22);
            s.push_back({{{0.3, 0.58}, {0.36, 0.28}, {0.56, 0.11}}});
            break;
        case 7:
            s.push_back({{{0.26, 0.1}, {0.76, 0.1}}});
            s.push_back({{{0.76, 0.1}, {0.42, 0.9}}});
            break;
        case 8:
            add_ellipse(s, 0.5, 0.3, 0.21, 0.19);
            add_ellipse(s, 0.5, 0.7, 0.25, 0.21);
            break;
        default:
            add_ellipse(s, 0.5, 0.34, 0.24, 0.22);
            s.push_back({{{0.72, 0.4}, {0.66, 0.7}, {0.46, 0.88}}});
            break;
    }
    return s;
}

inline double point_segment_dist(double px, double py, double ax, double ay, double bx,
                                 double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

/// Deterministic stand-in for handwritten digits: stroke templates rendered
/// at 28x28 with per-sample affine jitter. Intended for environments where
/// the real files are absent; the images go through the same IDX byte format
/// as the genuine dataset.
template <typename Scalar>
LabeledDataset<Scalar> synth_digits(int n, std::uint64_t seed) {
    DPAP_CHECK(n > 0, "sample count must be positive, got " << n);
    LabeledDataset<Scalar> ds;
    ds.images = Tensor<Scalar>::zeros({n, 1, 28, 28});
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        const int label = i % 10;
        ds.labels[i] = label;
        Rng rng(derive_seed(seed, 0x646967, static_cast<std::uint64_t>(i)));
        const double angle = rng.uniform(-0.18, 0.18);
        const double scale = rng.uniform(0.82, 1.12);
        const double tx = rng.uniform(-0.08, 0.08);
        const double ty = rng.uniform(-0.08, 0.08);
        const double shear = rng.uniform(-0.12, 0.12);
        const double ca = std::cos(angle), sa = std::sin(angle);
        const auto strokes = detail::digit_strokes(label);
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                // Map the pixel center into template space (inverse affine).
                const double ux = (x + 0.5) / 28.0 - 0.5 - tx;
                const double uy = (y + 0.5) / 28.0 - 0.5 - ty;
                double px = (ca * ux + sa * uy) / scale;
                double py = (-sa * ux + ca * uy) / scale;
                px -= shear * py;
                px += 0.5;
                py += 0.5;
                double dist = 1e9;
                for (const auto& st : strokes)
                    for (size_t k = 0; k + 1 < st.pts.size(); ++k)
                        dist = std::min(dist, detail::point_segment_dist(
                                                  px, py, st.pts[k][0], st.pts[k][1],
                                                  st.pts[k + 1][0], st.pts[k + 1][1]));
                const double thick = 0.035, soft = 0.045;
                const double v = std::clamp((thick + soft - dist) / soft, 0.0, 1.0);
                // Quantize to byte resolution so IDX round-trips are exact.
                ds.images(i, 0, y, x) =
                    Scalar(std::lround(v * 255.0)) / Scalar(255);
            }
    }
    ds.validate();
    return ds;
}

}  // namespace dpap
