#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "auditkit/tensor.hpp"

// Differentiable primitives over TapeT. Free functions: each records one
// node and returns its id. Shapes follow the [N,C,H,W] row-major layout.
// Accumulation is sequential over samples so backward is bit-deterministic.

namespace audit {

namespace detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
    if (s.size() != rank)
        throw dimension_error(std::string(op) + ": " + what + " must have rank " +
                              std::to_string(rank) + ", got shape " + shape_str(s));
}

// Gather one sample's padded patches into a [C*kh*kw, Ho*Wo] matrix.
template <typename S>
void im2col(const TensorT<S>& x, int n, int kh, int kw, int stride, int padding,
            int ho, int wo, Mat<S>& cols) {
    const int c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
    cols.setZero(static_cast<Eigen::Index>(c_in) * kh * kw, static_cast<Eigen::Index>(ho) * wo);
    for (int c = 0; c < c_in; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + i - padding;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + j - padding;
                        if (ix < 0 || ix >= w) continue;
                        cols(row, static_cast<Eigen::Index>(oy) * wo + ox) = x.at4(n, c, iy, ix);
                    }
                }
            }
}

// Scatter-add the transpose of im2col: accumulate patch gradients back into
// the input gradient of sample n.
template <typename S>
void col2im_add(const Mat<S>& cols, int n, int kh, int kw, int stride, int padding,
                int ho, int wo, const Shape& xshape,
                typename TensorT<S>::Array& dx) {
    const int c_in = xshape[1], h = xshape[2], w = xshape[3];
    for (int c = 0; c < c_in; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + i) * kw + j;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + i - padding;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + j - padding;
                        if (ix < 0 || ix >= w) continue;
                        dx[((static_cast<std::int64_t>(n) * c_in + c) * h + iy) * w + ix] +=
                            cols(row, static_cast<Eigen::Index>(oy) * wo + ox);
                    }
                }
            }
}

}  // namespace detail

// 2-D convolution, zero-padded borders. input [N,C,H,W], kernel [K,C,kh,kw],
// bias [K]. Output [N,K,Ho,Wo] with Ho = floor((H+2p-kh)/stride)+1.
template <typename S>
int conv2d(TapeT<S>& tape, int input_id, int kernel_id, int bias_id, int stride, int padding) {
    using Mat = detail::Mat<S>;
    const TensorT<S>& x = tape.value(input_id);
    const TensorT<S>& k = tape.value(kernel_id);
    const TensorT<S>& b = tape.value(bias_id);
    detail::require_rank(x.shape, 4, "conv2d", "input");
    detail::require_rank(k.shape, 4, "conv2d", "kernel");
    detail::require_rank(b.shape, 1, "conv2d", "bias");
    if (stride < 1) throw validation_error("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw validation_error("conv2d: padding must be >= 0, got " + std::to_string(padding));
    const int n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int k_out = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    if (k.shape[1] != c_in)
        throw dimension_error("conv2d: channel axis mismatch, input has " + std::to_string(c_in) +
                              " channels but kernel expects " + std::to_string(k.shape[1]));
    if (b.shape[0] != k_out)
        throw dimension_error("conv2d: bias axis has " + std::to_string(b.shape[0]) +
                              " entries but kernel produces " + std::to_string(k_out) + " channels");
    if (kh > h + 2 * padding)
        throw dimension_error("conv2d: kernel height " + std::to_string(kh) +
                              " exceeds padded input height " + std::to_string(h + 2 * padding));
    if (kw > w + 2 * padding)
        throw dimension_error("conv2d: kernel width " + std::to_string(kw) +
                              " exceeds padded input width " + std::to_string(w + 2 * padding));
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;

    Eigen::Map<const detail::RowMat<S>> kmat(k.data.data(), k_out,
                                             static_cast<Eigen::Index>(c_in) * kh * kw);
    TensorT<S> out = TensorT<S>::zeros({n_batch, k_out, ho, wo});
    Mat cols;
    for (int n = 0; n < n_batch; ++n) {
        detail::im2col(x, n, kh, kw, stride, padding, ho, wo, cols);
        Mat y = kmat * cols;  // [K, Ho*Wo]
        for (int kc = 0; kc < k_out; ++kc)
            for (Eigen::Index p = 0; p < y.cols(); ++p)
                out.data[((static_cast<std::int64_t>(n) * k_out + kc) * ho * wo) + p] =
                    y(kc, p) + b.data[kc];
    }

    auto backward = [stride, padding, kh, kw, ho, wo](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const int in_id = node.inputs[0], ker_id = node.inputs[1], bia_id = node.inputs[2];
        const TensorT<S>& xin = t.value(in_id);
        const TensorT<S>& key = t.value(ker_id);
        const int nb = xin.shape[0], ci = xin.shape[1];
        const int ko = key.shape[0];
        Eigen::Map<const detail::RowMat<S>> km(key.data.data(), ko,
                                               static_cast<Eigen::Index>(ci) * kh * kw);
        typename TensorT<S>::Array dx = TensorT<S>::Array::Zero(xin.size());
        detail::RowMat<S> dk = detail::RowMat<S>::Zero(ko, static_cast<Eigen::Index>(ci) * kh * kw);
        typename TensorT<S>::Array db = TensorT<S>::Array::Zero(ko);
        Mat cols2, dy(ko, static_cast<Eigen::Index>(ho) * wo);
        for (int n = 0; n < nb; ++n) {
            for (int kc = 0; kc < ko; ++kc)
                for (Eigen::Index p = 0; p < dy.cols(); ++p)
                    dy(kc, p) = node.grad[((static_cast<std::int64_t>(n) * ko + kc) * ho * wo) + p];
            detail::im2col(xin, n, kh, kw, stride, padding, ho, wo, cols2);
            dk.noalias() += dy * cols2.transpose();
            db += dy.rowwise().sum().array();
            Mat dcols = km.transpose() * dy;
            detail::col2im_add<S>(dcols, n, kh, kw, stride, padding, ho, wo, xin.shape, dx);
        }
        t.accumulate(in_id, dx);
        t.accumulate(ker_id, Eigen::Map<const typename TensorT<S>::Array>(dk.data(), dk.size()));
        t.accumulate(bia_id, db);
    };
    return tape.emit("conv2d", {input_id, kernel_id, bias_id}, std::move(out), backward);
}

// Channel concatenation: [N,C1,H,W] ++ [N,C2,H,W] -> [N,C1+C2,H,W].
template <typename S>
int concat_channels(TapeT<S>& tape, int a_id, int b_id) {
    const TensorT<S>& a = tape.value(a_id);
    const TensorT<S>& b = tape.value(b_id);
    detail::require_rank(a.shape, 4, "concat_channels", "lhs");
    detail::require_rank(b.shape, 4, "concat_channels", "rhs");
    for (int axis : {0, 2, 3})
        if (a.shape[axis] != b.shape[axis])
            throw dimension_error("concat_channels: axis " + std::to_string(axis) +
                                  " differs, " + std::to_string(a.shape[axis]) + " vs " +
                                  std::to_string(b.shape[axis]));
    const int n_batch = a.shape[0], c1 = a.shape[1], c2 = b.shape[1];
    const int h = a.shape[2], w = a.shape[3];
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    TensorT<S> out = TensorT<S>::zeros({n_batch, c1 + c2, h, w});
    for (int n = 0; n < n_batch; ++n) {
        out.data.segment(static_cast<std::int64_t>(n) * (c1 + c2) * plane, c1 * plane) =
            a.data.segment(static_cast<std::int64_t>(n) * c1 * plane, c1 * plane);
        out.data.segment(static_cast<std::int64_t>(n) * (c1 + c2) * plane + c1 * plane, c2 * plane) =
            b.data.segment(static_cast<std::int64_t>(n) * c2 * plane, c2 * plane);
    }
    auto backward = [c1, c2, plane](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& av = t.value(node.inputs[0]);
        const TensorT<S>& bv = t.value(node.inputs[1]);
        const int nb = av.shape[0];
        typename TensorT<S>::Array da = TensorT<S>::Array::Zero(av.size());
        typename TensorT<S>::Array db = TensorT<S>::Array::Zero(bv.size());
        for (int n = 0; n < nb; ++n) {
            da.segment(static_cast<std::int64_t>(n) * c1 * plane, c1 * plane) =
                node.grad.segment(static_cast<std::int64_t>(n) * (c1 + c2) * plane, c1 * plane);
            db.segment(static_cast<std::int64_t>(n) * c2 * plane, c2 * plane) =
                node.grad.segment(static_cast<std::int64_t>(n) * (c1 + c2) * plane + c1 * plane,
                                  c2 * plane);
        }
        t.accumulate(node.inputs[0], da);
        t.accumulate(node.inputs[1], db);
    };
    return tape.emit("concat_channels", {a_id, b_id}, std::move(out), backward);
}

// Rectifier; the subgradient at exactly 0 is 0.
template <typename S>
int relu(TapeT<S>& tape, int x_id) {
    const TensorT<S>& x = tape.value(x_id);
    TensorT<S> out;
    out.shape = x.shape;
    out.data = x.data.max(S(0));
    auto backward = [](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& xin = t.value(node.inputs[0]);
        t.accumulate(node.inputs[0],
                     (xin.data > S(0)).select(node.grad, TensorT<S>::Array::Zero(xin.size())));
    };
    return tape.emit("relu", {x_id}, std::move(out), backward);
}

// Average pooling with a square window, no padding.
template <typename S>
int avgpool2d(TapeT<S>& tape, int x_id, int window, int stride) {
    const TensorT<S>& x = tape.value(x_id);
    detail::require_rank(x.shape, 4, "avgpool2d", "input");
    if (window < 1 || stride < 1)
        throw validation_error("avgpool2d: window and stride must be >= 1");
    const int n_batch = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (window > h || window > w)
        throw dimension_error("avgpool2d: window " + std::to_string(window) +
                              " exceeds spatial extent " + std::to_string(h) + "x" + std::to_string(w));
    const int ho = (h - window) / stride + 1;
    const int wo = (w - window) / stride + 1;
    const S inv = S(1) / static_cast<S>(window * window);
    TensorT<S> out = TensorT<S>::zeros({n_batch, c, ho, wo});
    for (int n = 0; n < n_batch; ++n)
        for (int cc = 0; cc < c; ++cc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    S acc = 0;
                    for (int i = 0; i < window; ++i)
                        for (int j = 0; j < window; ++j)
                            acc += x.at4(n, cc, oy * stride + i, ox * stride + j);
                    out.at4(n, cc, oy, ox) = acc * inv;
                }
    auto backward = [window, stride, ho, wo, inv](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& xin = t.value(node.inputs[0]);
        const int nb = xin.shape[0], c2 = xin.shape[1], h2 = xin.shape[2], w2 = xin.shape[3];
        typename TensorT<S>::Array dx = TensorT<S>::Array::Zero(xin.size());
        for (int n = 0; n < nb; ++n)
            for (int cc = 0; cc < c2; ++cc)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        const S g = node.grad[((static_cast<std::int64_t>(n) * c2 + cc) * ho + oy) * wo + ox] * inv;
                        for (int i = 0; i < window; ++i)
                            for (int j = 0; j < window; ++j)
                                dx[((static_cast<std::int64_t>(n) * c2 + cc) * h2 + oy * stride + i) * w2 +
                                   ox * stride + j] += g;
                    }
        t.accumulate(node.inputs[0], dx);
    };
    return tape.emit("avgpool2d", {x_id}, std::move(out), backward);
}

// Fully connected layer: x [N,F], weight [O,F], bias [O] -> [N,O].
template <typename S>
int linear(TapeT<S>& tape, int x_id, int weight_id, int bias_id) {
    const TensorT<S>& x = tape.value(x_id);
    const TensorT<S>& wt = tape.value(weight_id);
    const TensorT<S>& b = tape.value(bias_id);
    detail::require_rank(x.shape, 2, "linear", "input");
    detail::require_rank(wt.shape, 2, "linear", "weight");
    detail::require_rank(b.shape, 1, "linear", "bias");
    if (x.shape[1] != wt.shape[1])
        throw dimension_error("linear: feature axis mismatch, input has " +
                              std::to_string(x.shape[1]) + " features but weight expects " +
                              std::to_string(wt.shape[1]));
    if (b.shape[0] != wt.shape[0])
        throw dimension_error("linear: bias axis has " + std::to_string(b.shape[0]) +
                              " entries but weight produces " + std::to_string(wt.shape[0]));
    const int n_batch = x.shape[0], f = x.shape[1], o = wt.shape[0];
    Eigen::Map<const detail::RowMat<S>> wm(wt.data.data(), o, f);
    TensorT<S> out = TensorT<S>::zeros({n_batch, o});
    for (int n = 0; n < n_batch; ++n) {
        Eigen::Map<const detail::Mat<S>> xn(x.data.data() + static_cast<std::int64_t>(n) * f, f, 1);
        detail::Mat<S> y = wm * xn;
        for (int k = 0; k < o; ++k) out.at2(n, k) = y(k, 0) + b.data[k];
    }
    auto backward = [f, o](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& xin = t.value(node.inputs[0]);
        const TensorT<S>& win = t.value(node.inputs[1]);
        const int nb = xin.shape[0];
        Eigen::Map<const detail::RowMat<S>> wm2(win.data.data(), o, f);
        typename TensorT<S>::Array dx = TensorT<S>::Array::Zero(xin.size());
        detail::RowMat<S> dw = detail::RowMat<S>::Zero(o, f);
        typename TensorT<S>::Array db = TensorT<S>::Array::Zero(o);
        for (int n = 0; n < nb; ++n) {
            Eigen::Map<const detail::Mat<S>> dyn(node.grad.data() + static_cast<std::int64_t>(n) * o, o, 1);
            Eigen::Map<const detail::Mat<S>> xn(xin.data.data() + static_cast<std::int64_t>(n) * f, f, 1);
            Eigen::Map<detail::Mat<S>> dxn(dx.data() + static_cast<std::int64_t>(n) * f, f, 1);
            dxn.noalias() += wm2.transpose() * dyn;
            dw.noalias() += dyn * xn.transpose();
            db += dyn.array();
        }
        t.accumulate(node.inputs[0], dx);
        t.accumulate(node.inputs[1], Eigen::Map<const typename TensorT<S>::Array>(dw.data(), dw.size()));
        t.accumulate(node.inputs[2], db);
    };
    return tape.emit("linear", {x_id, weight_id, bias_id}, std::move(out), backward);
}

// Collapse all trailing axes: [N,...] -> [N,F].
template <typename S>
int flatten(TapeT<S>& tape, int x_id) {
    const TensorT<S>& x = tape.value(x_id);
    if (x.rank() < 2) throw dimension_error("flatten: input must have rank >= 2");
    const int n_batch = x.shape[0];
    const auto f = static_cast<int>(x.size() / n_batch);
    TensorT<S> out;
    out.shape = {n_batch, f};
    out.data = x.data;
    auto backward = [](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        t.accumulate(node.inputs[0], node.grad);
    };
    return tape.emit("flatten", {x_id}, std::move(out), backward);
}

// Per-channel affine normalization of [N,C,H,W]: (x - mean[c]) / std[c].
template <typename S>
int normalize_channels(TapeT<S>& tape, int x_id, const std::vector<S>& mean,
                       const std::vector<S>& stddev) {
    const TensorT<S>& x = tape.value(x_id);
    detail::require_rank(x.shape, 4, "normalize_channels", "input");
    const int c = x.shape[1];
    if (static_cast<int>(mean.size()) != c || static_cast<int>(stddev.size()) != c)
        throw validation_error("normalize_channels: stats cover " + std::to_string(mean.size()) +
                               "/" + std::to_string(stddev.size()) + " channels, input has " +
                               std::to_string(c));
    const int n_batch = x.shape[0];
    const std::int64_t plane = static_cast<std::int64_t>(x.shape[2]) * x.shape[3];
    TensorT<S> out;
    out.shape = x.shape;
    out.data.resize(x.size());
    for (int n = 0; n < n_batch; ++n)
        for (int cc = 0; cc < c; ++cc) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * c + cc) * plane;
            out.data.segment(off, plane) = (x.data.segment(off, plane) - mean[cc]) / stddev[cc];
        }
    auto backward = [c, plane, stddev](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& xin = t.value(node.inputs[0]);
        const int nb = xin.shape[0];
        typename TensorT<S>::Array dx(xin.size());
        for (int n = 0; n < nb; ++n)
            for (int cc = 0; cc < c; ++cc) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c + cc) * plane;
                dx.segment(off, plane) = node.grad.segment(off, plane) / stddev[cc];
            }
        t.accumulate(node.inputs[0], dx);
    };
    return tape.emit("normalize_channels", {x_id}, std::move(out), backward);
}

// Elementwise add/mul over identical shapes, and full reduction to a scalar.
template <typename S>
int add(TapeT<S>& tape, int a_id, int b_id) {
    const TensorT<S>& a = tape.value(a_id);
    const TensorT<S>& b = tape.value(b_id);
    if (a.shape != b.shape)
        throw dimension_error("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    TensorT<S> out;
    out.shape = a.shape;
    out.data = a.data + b.data;
    auto backward = [](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        t.accumulate(node.inputs[0], node.grad);
        t.accumulate(node.inputs[1], node.grad);
    };
    return tape.emit("add", {a_id, b_id}, std::move(out), backward);
}

template <typename S>
int mul(TapeT<S>& tape, int a_id, int b_id) {
    const TensorT<S>& a = tape.value(a_id);
    const TensorT<S>& b = tape.value(b_id);
    if (a.shape != b.shape)
        throw dimension_error("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    TensorT<S> out;
    out.shape = a.shape;
    out.data = a.data * b.data;
    auto backward = [](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& av = t.value(node.inputs[0]);
        const TensorT<S>& bv = t.value(node.inputs[1]);
        t.accumulate(node.inputs[0], node.grad * bv.data);
        t.accumulate(node.inputs[1], node.grad * av.data);
    };
    return tape.emit("mul", {a_id, b_id}, std::move(out), backward);
}

template <typename S>
int sum(TapeT<S>& tape, int x_id) {
    const TensorT<S>& x = tape.value(x_id);
    TensorT<S> out;
    out.shape = {1};
    out.data.resize(1);
    // sequential accumulation, not Eigen's tree reduction
    S acc = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.data[i];
    out.data[0] = acc;
    auto backward = [](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        const TensorT<S>& xin = t.value(node.inputs[0]);
        t.accumulate(node.inputs[0],
                     TensorT<S>::Array::Constant(xin.size(), node.grad[0]));
    };
    return tape.emit("sum", {x_id}, std::move(out), backward);
}

// Row-stable softmax probabilities for [N,K] logits (no tape involvement).
template <typename S>
TensorT<S> softmax(const TensorT<S>& logits) {
    detail::require_rank(logits.shape, 2, "softmax", "logits");
    const int n = logits.shape[0], k = logits.shape[1];
    TensorT<S> out = TensorT<S>::zeros({n, k});
    for (int r = 0; r < n; ++r) {
        S m = logits.at2(r, 0);
        for (int c = 1; c < k; ++c) m = std::max(m, logits.at2(r, c));
        S z = 0;
        for (int c = 0; c < k; ++c) {
            const S e = std::exp(logits.at2(r, c) - m);
            out.at2(r, c) = e;
            z += e;
        }
        for (int c = 0; c < k; ++c) out.at2(r, c) /= z;
    }
    return out;
}

// Mean cross-entropy over the batch, computed in log space (max-subtracted)
// so any finite logits give a finite loss. Backward: (softmax - onehot)/N.
template <typename S>
int softmax_cross_entropy(TapeT<S>& tape, int logits_id, const std::vector<int>& labels) {
    const TensorT<S>& logits = tape.value(logits_id);
    detail::require_rank(logits.shape, 2, "softmax_cross_entropy", "logits");
    const int n = logits.shape[0], k = logits.shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw validation_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                               " labels for a batch of " + std::to_string(n));
    for (int r = 0; r < n; ++r)
        if (labels[r] < 0 || labels[r] >= k)
            throw validation_error("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                                   " at row " + std::to_string(r) + " outside [0," +
                                   std::to_string(k) + ")");
    typename TensorT<S>::Array probs(static_cast<std::int64_t>(n) * k);
    S loss = 0;
    for (int r = 0; r < n; ++r) {
        S m = logits.at2(r, 0);
        for (int c = 1; c < k; ++c) m = std::max(m, logits.at2(r, c));
        S z = 0;
        for (int c = 0; c < k; ++c) z += std::exp(logits.at2(r, c) - m);
        const S lse = std::log(z);
        for (int c = 0; c < k; ++c)
            probs[static_cast<std::int64_t>(r) * k + c] = std::exp(logits.at2(r, c) - m) / z;
        loss += -(logits.at2(r, labels[r]) - m - lse);
    }
    TensorT<S> out;
    out.shape = {1};
    out.data.resize(1);
    out.data[0] = loss / static_cast<S>(n);

    auto backward = [labels, n, k](TapeT<S>& t, int self) {
        const auto& node = t.node(self);
        typename TensorT<S>::Array dl = node.saved[0];
        for (int r = 0; r < n; ++r) dl[static_cast<std::int64_t>(r) * k + labels[r]] -= S(1);
        dl *= node.grad[0] / static_cast<S>(n);
        t.accumulate(node.inputs[0], dl);
    };
    return tape.emit("softmax_cross_entropy", {logits_id}, std::move(out), backward, {probs});
}

}  // namespace audit
