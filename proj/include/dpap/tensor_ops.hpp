#pragma once

#include <Eigen/Dense>
#include <algorithm>

#include "dpap/tensor.hpp"

namespace dpap {

/// Square-kernel 2D convolution geometry.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_size = 3;
    int stride = 1;
    int padding = 0;

    void validate() const {
        DPAP_CHECK(in_channels >= 1, "conv in_channels must be >= 1, got " << in_channels);
        DPAP_CHECK(out_channels >= 1, "conv out_channels must be >= 1, got " << out_channels);
        DPAP_CHECK(kernel_size >= 1, "conv kernel_size must be >= 1, got " << kernel_size);
        DPAP_CHECK(stride >= 1, "conv stride must be >= 1, got " << stride);
        DPAP_CHECK(padding >= 0, "conv padding must be >= 0, got " << padding);
    }

    int out_extent(int in_extent) const {
        const int out = (in_extent + 2 * padding - kernel_size) / stride + 1;
        DPAP_CHECK(out >= 1, "conv output extent " << out << " < 1 for input extent " << in_extent
                                                   << " (kernel " << kernel_size << ", stride "
                                                   << stride << ", padding " << padding << ")");
        return out;
    }
};

namespace detail {

template <typename Scalar>
void check_conv_args(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                     const Tensor<Scalar>* bias, const ConvSpec& spec) {
    spec.validate();
    DPAP_CHECK(input.rank() == 4, "conv input must be rank 4 [B,Cin,H,W], got shape "
                                      << shape_string(input.shape()));
    DPAP_CHECK(weight.rank() == 4, "conv weight must be rank 4 [Cout,Cin,K,K], got shape "
                                       << shape_string(weight.shape()));
    DPAP_CHECK(input.dim(1) == spec.in_channels,
               "conv input channel dimension " << input.dim(1) << " != spec in_channels "
                                               << spec.in_channels);
    DPAP_CHECK(weight.dim(0) == spec.out_channels,
               "conv weight out-channel dimension " << weight.dim(0) << " != spec out_channels "
                                                    << spec.out_channels);
    DPAP_CHECK(weight.dim(1) == spec.in_channels,
               "conv weight in-channel dimension " << weight.dim(1) << " != spec in_channels "
                                                   << spec.in_channels);
    DPAP_CHECK(weight.dim(2) == spec.kernel_size && weight.dim(3) == spec.kernel_size,
               "conv weight kernel dimensions " << weight.dim(2) << "x" << weight.dim(3)
                                                << " != spec kernel_size " << spec.kernel_size);
    if (bias) {
        DPAP_CHECK(bias->rank() == 1 && bias->dim(0) == spec.out_channels,
                   "conv bias shape " << shape_string(bias->shape()) << " != [out_channels="
                                      << spec.out_channels << "]");
    }
}

}  // namespace detail

/// Cross-correlation with zero padding. Per output element the reduction runs
/// over (in_channel, kernel_row, kernel_col) in ascending order, so results are
/// bit-reproducible and match a naive nested-loop evaluation.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                              const Tensor<Scalar>& bias, const ConvSpec& spec) {
    detail::check_conv_args(input, weight, &bias, spec);
    const int batch = input.dim(0), cin = spec.in_channels, h = input.dim(2), w = input.dim(3);
    const int cout = spec.out_channels, k = spec.kernel_size, s = spec.stride, p = spec.padding;
    const int oh = spec.out_extent(h), ow = spec.out_extent(w);

    Tensor<Scalar> out({batch, cout, oh, ow});
    const Scalar* in_ptr = input.data();
    const Scalar* w_ptr = weight.data();
    Scalar* out_ptr = out.data();

    for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < cout; ++co) {
            Scalar* out_plane = out_ptr + (static_cast<std::int64_t>(b) * cout + co) * oh * ow;
            const Scalar bv = bias[co];
            for (int i = 0; i < oh * ow; ++i) out_plane[i] = bv;
            for (int ci = 0; ci < cin; ++ci) {
                const Scalar* in_plane = in_ptr + (static_cast<std::int64_t>(b) * cin + ci) * h * w;
                const Scalar* w_slice = w_ptr + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const Scalar wv = w_slice[kh * k + kw];
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * s - p + kh;
                            if (iy < 0 || iy >= h) continue;
                            Scalar* orow = out_plane + y * ow;
                            const Scalar* irow = in_plane + iy * w;
                            for (int x = 0; x < ow; ++x) {
                                const int ix = x * s - p + kw;
                                if (ix < 0 || ix >= w) continue;
                                orow[x] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
struct ConvGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& weight, const ConvSpec& spec) {
    detail::check_conv_args<Scalar>(input, weight, nullptr, spec);
    const int batch = input.dim(0), cin = spec.in_channels, h = input.dim(2), w = input.dim(3);
    const int cout = spec.out_channels, k = spec.kernel_size, s = spec.stride, p = spec.padding;
    const int oh = spec.out_extent(h), ow = spec.out_extent(w);
    DPAP_CHECK(grad_out.rank() == 4 && grad_out.dim(0) == batch && grad_out.dim(1) == cout &&
                   grad_out.dim(2) == oh && grad_out.dim(3) == ow,
               "conv grad_out shape " << shape_string(grad_out.shape()) << " != expected ["
                                      << batch << "," << cout << "," << oh << "," << ow << "]");

    ConvGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weight.shape()),
                        Tensor<Scalar>({cout})};
    const Scalar* in_ptr = input.data();
    const Scalar* w_ptr = weight.data();
    const Scalar* go_ptr = grad_out.data();

    for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < cout; ++co) {
            const Scalar* go_plane =
                go_ptr + (static_cast<std::int64_t>(b) * cout + co) * oh * ow;
            Scalar gb = 0;
            for (int i = 0; i < oh * ow; ++i) gb += go_plane[i];
            g.bias[co] += gb;
            for (int ci = 0; ci < cin; ++ci) {
                const Scalar* in_plane = in_ptr + (static_cast<std::int64_t>(b) * cin + ci) * h * w;
                Scalar* gi_plane =
                    g.input.data() + (static_cast<std::int64_t>(b) * cin + ci) * h * w;
                const Scalar* w_slice = w_ptr + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
                Scalar* gw_slice =
                    g.weight.data() + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const Scalar wv = w_slice[kh * k + kw];
                        Scalar gw = 0;
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * s - p + kh;
                            if (iy < 0 || iy >= h) continue;
                            const Scalar* grow = go_plane + y * ow;
                            const Scalar* irow = in_plane + iy * w;
                            Scalar* girow = gi_plane + iy * w;
                            for (int x = 0; x < ow; ++x) {
                                const int ix = x * s - p + kw;
                                if (ix < 0 || ix >= w) continue;
                                gw += grow[x] * irow[ix];
                                girow[ix] += grow[x] * wv;
                            }
                        }
                        gw_slice[kh * k + kw] += gw;
                    }
                }
            }
        }
    }
    return g;
}

namespace detail {

template <typename Scalar>
void check_pool_input(const Tensor<Scalar>& input, const char* op) {
    DPAP_CHECK(input.rank() == 4,
               op << " input must be rank 4 [B,C,H,W], got shape " << shape_string(input.shape()));
    DPAP_CHECK(input.dim(2) % 2 == 0, op << " requires even height, got " << input.dim(2));
    DPAP_CHECK(input.dim(3) % 2 == 0, op << " requires even width, got " << input.dim(3));
}

}  // namespace detail

/// Non-overlapping 2x2 mean pooling.
template <typename Scalar>
Tensor<Scalar> avgpool2_forward(const Tensor<Scalar>& input) {
    detail::check_pool_input(input, "avgpool2");
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor<Scalar> out({b, c, h / 2, w / 2});
    const Scalar* in = input.data();
    Scalar* o = out.data();
    const int planes = b * c;
    for (int pl = 0; pl < planes; ++pl) {
        const Scalar* ip = in + static_cast<std::int64_t>(pl) * h * w;
        Scalar* op = o + static_cast<std::int64_t>(pl) * (h / 2) * (w / 2);
        for (int y = 0; y < h / 2; ++y) {
            for (int x = 0; x < w / 2; ++x) {
                const Scalar* r0 = ip + (2 * y) * w + 2 * x;
                const Scalar* r1 = r0 + w;
                op[y * (w / 2) + x] = (r0[0] + r0[1] + r1[0] + r1[1]) * Scalar(0.25);
            }
        }
    }
    return out;
}

/// Distributes each upstream gradient equally to the four window cells.
template <typename Scalar>
Tensor<Scalar> avgpool2_backward(const Tensor<Scalar>& grad_out) {
    DPAP_CHECK(grad_out.rank() == 4, "avgpool2 grad_out must be rank 4, got shape "
                                         << shape_string(grad_out.shape()));
    const int b = grad_out.dim(0), c = grad_out.dim(1), oh = grad_out.dim(2), ow = grad_out.dim(3);
    Tensor<Scalar> gi({b, c, oh * 2, ow * 2});
    const Scalar* go = grad_out.data();
    Scalar* g = gi.data();
    const int planes = b * c;
    for (int pl = 0; pl < planes; ++pl) {
        const Scalar* gop = go + static_cast<std::int64_t>(pl) * oh * ow;
        Scalar* gp = g + static_cast<std::int64_t>(pl) * (oh * 2) * (ow * 2);
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const Scalar v = gop[y * ow + x] * Scalar(0.25);
                Scalar* r0 = gp + (2 * y) * (ow * 2) + 2 * x;
                Scalar* r1 = r0 + ow * 2;
                r0[0] = v;
                r0[1] = v;
                r1[0] = v;
                r1[1] = v;
            }
        }
    }
    return gi;
}

/// Non-overlapping 2x2 max pooling; ties resolve to the first cell in scan order.
template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& input) {
    detail::check_pool_input(input, "maxpool2");
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor<Scalar> out({b, c, h / 2, w / 2});
    const Scalar* in = input.data();
    Scalar* o = out.data();
    const int planes = b * c;
    for (int pl = 0; pl < planes; ++pl) {
        const Scalar* ip = in + static_cast<std::int64_t>(pl) * h * w;
        Scalar* op = o + static_cast<std::int64_t>(pl) * (h / 2) * (w / 2);
        for (int y = 0; y < h / 2; ++y) {
            for (int x = 0; x < w / 2; ++x) {
                const Scalar* r0 = ip + (2 * y) * w + 2 * x;
                const Scalar* r1 = r0 + w;
                Scalar m = r0[0];
                if (r0[1] > m) m = r0[1];
                if (r1[0] > m) m = r1[0];
                if (r1[1] > m) m = r1[1];
                op[y * (w / 2) + x] = m;
            }
        }
    }
    return out;
}

/// Routes each upstream gradient to the window argmax (first in scan order on
/// ties). The argmax scan is recomputed from the forward input.
template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input) {
    detail::check_pool_input(input, "maxpool2");
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    DPAP_CHECK(grad_out.rank() == 4 && grad_out.dim(0) == b && grad_out.dim(1) == c &&
                   grad_out.dim(2) == h / 2 && grad_out.dim(3) == w / 2,
               "maxpool2 grad_out shape " << shape_string(grad_out.shape()) << " != expected ["
                                          << b << "," << c << "," << h / 2 << "," << w / 2 << "]");
    Tensor<Scalar> gi(input.shape());
    const Scalar* in = input.data();
    const Scalar* go = grad_out.data();
    Scalar* g = gi.data();
    const int planes = b * c;
    for (int pl = 0; pl < planes; ++pl) {
        const Scalar* ip = in + static_cast<std::int64_t>(pl) * h * w;
        const Scalar* gop = go + static_cast<std::int64_t>(pl) * (h / 2) * (w / 2);
        Scalar* gp = g + static_cast<std::int64_t>(pl) * h * w;
        for (int y = 0; y < h / 2; ++y) {
            for (int x = 0; x < w / 2; ++x) {
                const int base = (2 * y) * w + 2 * x;
                const int cand[4] = {base, base + 1, base + w, base + w + 1};
                int best = cand[0];
                for (int i = 1; i < 4; ++i)
                    if (ip[cand[i]] > ip[best]) best = cand[i];
                gp[best] += gop[y * (w / 2) + x];
            }
        }
    }
    return gi;
}

/// out = input * weight^T + bias, with input [B,N], weight [M,N], bias [M].
template <typename Scalar>
Tensor<Scalar> linear_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                              const Tensor<Scalar>& bias) {
    DPAP_CHECK(input.rank() == 2, "linear input must be rank 2 [B,N], got shape "
                                      << shape_string(input.shape()));
    DPAP_CHECK(weight.rank() == 2, "linear weight must be rank 2 [M,N], got shape "
                                       << shape_string(weight.shape()));
    DPAP_CHECK(input.dim(1) == weight.dim(1), "linear inner dimension mismatch: input N "
                                                  << input.dim(1) << " vs weight N "
                                                  << weight.dim(1));
    DPAP_CHECK(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
               "linear bias shape " << shape_string(bias.shape()) << " != [M=" << weight.dim(0)
                                    << "]");
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
    const int b = input.dim(0), n = input.dim(1), m = weight.dim(0);
    Tensor<Scalar> out({b, m});
    Eigen::Map<const Mat> in_m(input.data(), b, n);
    Eigen::Map<const Mat> w_m(weight.data(), m, n);
    Eigen::Map<const Vec> b_v(bias.data(), m);
    Eigen::Map<Mat> out_m(out.data(), b, m);
    out_m.noalias() = in_m * w_m.transpose();
    out_m.rowwise() += b_v;
    return out;
}

template <typename Scalar>
struct LinearGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                    const Tensor<Scalar>& weight) {
    DPAP_CHECK(input.rank() == 2 && weight.rank() == 2 && input.dim(1) == weight.dim(1),
               "linear backward: input " << shape_string(input.shape()) << " incompatible with "
                                         << "weight " << shape_string(weight.shape()));
    DPAP_CHECK(grad_out.rank() == 2 && grad_out.dim(0) == input.dim(0) &&
                   grad_out.dim(1) == weight.dim(0),
               "linear grad_out shape " << shape_string(grad_out.shape()) << " != expected ["
                                        << input.dim(0) << "," << weight.dim(0) << "]");
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int b = input.dim(0), n = input.dim(1), m = weight.dim(0);
    LinearGrads<Scalar> g{Tensor<Scalar>({b, n}), Tensor<Scalar>({m, n}), Tensor<Scalar>({m})};
    Eigen::Map<const Mat> in_m(input.data(), b, n);
    Eigen::Map<const Mat> w_m(weight.data(), m, n);
    Eigen::Map<const Mat> go_m(grad_out.data(), b, m);
    Eigen::Map<Mat> gi_m(g.input.data(), b, n);
    Eigen::Map<Mat> gw_m(g.weight.data(), m, n);
    gi_m.noalias() = go_m * w_m;
    gw_m.noalias() = go_m.transpose() * in_m;
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.bias.data(), m) =
        go_m.colwise().sum();
    return g;
}

}  // namespace dpap
