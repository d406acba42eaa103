//
// 3D convolution and instance normalization over FeatureMap tensors.
// Convolutions are im2col + GEMM with zero padding; kernel size 1 or 3.
// Layout: channels x voxels, voxels indexed W-fastest via Grid3.
//

#pragma once

#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <cmath>
#include <string>

namespace panic::img {

template <class S>
struct ConvWorkspace {
    MatX<S> cols;
    MatX<S> dcols;
};

template <class S>
struct Conv3dGrads {
    MatX<S> w;
    VecX<S> b;
    void zero() {
        w.setZero();
        b.setZero();
    }
    void add(const Conv3dGrads& o) {
        w += o.w;
        if (b.size()) b += o.b;
    }
};

template <class S>
struct Conv3d {
    int in_ch = 0;
    int out_ch = 0;
    int ksize = 3;   // 1 or 3
    int stride = 1;  // 1 or 2
    bool has_bias = false;
    MatX<S> w;  // [out_ch, in_ch * k^3], column block per input channel
    VecX<S> b;

    void init(int ci, int co, int k, int s, bool bias, Rng& rng) {
        in_ch = ci;
        out_ch = co;
        ksize = k;
        stride = s;
        has_bias = bias;
        const Index fan_in = Index(ci) * k * k * k;
        w.resize(co, fan_in);
        rng.fill_normal<S>(w, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        b = bias ? VecX<S>::Zero(co) : VecX<S>();
    }

    Grid3 out_grid(const Grid3& in) const {
        const int pad = ksize / 2;
        auto dim = [&](int n) { return (n + 2 * pad - ksize) / stride + 1; };
        return Grid3{dim(in.h), dim(in.d), dim(in.w)};
    }

    void forward(const FeatureMap<S>& in, FeatureMap<S>& out, ConvWorkspace<S>& ws) const {
        const Grid3 go = out_grid(in.grid);
        out.grid = go;
        if (ksize == 1 && stride == 1) {
            out.chan.noalias() = w * in.chan;
        } else {
            im2col(in, ws.cols);
            out.chan.noalias() = w * ws.cols;
        }
        if (has_bias) out.chan.colwise() += b;
    }

    // d(loss)/d(out) -> parameter grads and d(loss)/d(in).
    void backward(const FeatureMap<S>& in, const MatX<S>& dout, MatX<S>* din,
                  Conv3dGrads<S>& g, ConvWorkspace<S>& ws) const {
        if (ksize == 1 && stride == 1) {
            g.w.noalias() += dout * in.chan.transpose();
            if (din) din->noalias() += w.transpose() * dout;
        } else {
            im2col(in, ws.cols);
            g.w.noalias() += dout * ws.cols.transpose();
            if (din) {
                ws.dcols.noalias() = w.transpose() * dout;
                col2im_add(in.grid, ws.dcols, *din);
            }
        }
        if (has_bias) g.b += dout.rowwise().sum();
    }

    Conv3dGrads<S> make_grads() const {
        Conv3dGrads<S> g;
        g.w = MatX<S>::Zero(w.rows(), w.cols());
        g.b = has_bias ? VecX<S>::Zero(b.size()) : VecX<S>();
        return g;
    }

private:
    void im2col(const FeatureMap<S>& in, MatX<S>& cols) const {
        const Grid3 gi = in.grid;
        const Grid3 go = out_grid(gi);
        const int k3 = ksize * ksize * ksize;
        const int pad = ksize / 2;
        cols.resize(Index(in_ch) * k3, go.voxels());
        Index vo = 0;
        for (Index oi = 0; oi < go.h; ++oi)
            for (Index oj = 0; oj < go.d; ++oj)
                for (Index ok = 0; ok < go.w; ++ok, ++vo) {
                    auto col = cols.col(vo);
                    int off = 0;
                    for (int di = 0; di < ksize; ++di)
                        for (int dj = 0; dj < ksize; ++dj)
                            for (int dk = 0; dk < ksize; ++dk, ++off) {
                                const Index si = oi * stride + di - pad;
                                const Index sj = oj * stride + dj - pad;
                                const Index sk = ok * stride + dk - pad;
                                if (si < 0 || si >= gi.h || sj < 0 || sj >= gi.d || sk < 0 ||
                                    sk >= gi.w) {
                                    for (int c = 0; c < in_ch; ++c) col[Index(c) * k3 + off] = S(0);
                                } else {
                                    const Index vi = gi.index(si, sj, sk);
                                    for (int c = 0; c < in_ch; ++c)
                                        col[Index(c) * k3 + off] = in.chan(c, vi);
                                }
                            }
                }
    }

    void col2im_add(const Grid3& gi, const MatX<S>& dcols, MatX<S>& din) const {
        const Grid3 go = out_grid(gi);
        const int k3 = ksize * ksize * ksize;
        const int pad = ksize / 2;
        Index vo = 0;
        for (Index oi = 0; oi < go.h; ++oi)
            for (Index oj = 0; oj < go.d; ++oj)
                for (Index ok = 0; ok < go.w; ++ok, ++vo) {
                    auto col = dcols.col(vo);
                    int off = 0;
                    for (int di = 0; di < ksize; ++di)
                        for (int dj = 0; dj < ksize; ++dj)
                            for (int dk = 0; dk < ksize; ++dk, ++off) {
                                const Index si = oi * stride + di - pad;
                                const Index sj = oj * stride + dj - pad;
                                const Index sk = ok * stride + dk - pad;
                                if (si < 0 || si >= gi.h || sj < 0 || sj >= gi.d || sk < 0 ||
                                    sk >= gi.w)
                                    continue;
                                const Index vi = gi.index(si, sj, sk);
                                for (int c = 0; c < in_ch; ++c)
                                    din(c, vi) += col[Index(c) * k3 + off];
                            }
                }
    }
};

template <class S>
struct NormCache {
    MatX<S> xhat;     // [channels, voxels]
    VecX<S> invstd;   // per channel
};

template <class S>
struct NormGrads {
    VecX<S> gamma;
    VecX<S> beta;
    void zero() {
        gamma.setZero();
        beta.setZero();
    }
    void add(const NormGrads& o) {
        gamma += o.gamma;
        beta += o.beta;
    }
};

// Per-sample, per-channel normalization over voxels with learned affine.
// Identical behaviour in training and evaluation (no batch statistics).
template <class S>
struct InstanceNorm3d {
    VecX<S> gamma;
    VecX<S> beta;
    static constexpr double kEps = 1e-5;

    void init(int channels) {
        gamma = VecX<S>::Ones(channels);
        beta = VecX<S>::Zero(channels);
    }

    void forward(const FeatureMap<S>& in, FeatureMap<S>& out, NormCache<S>* cache) const {
        out.grid = in.grid;
        out.chan.resize(in.chan.rows(), in.chan.cols());
        if (cache) {
            cache->xhat.resize(in.chan.rows(), in.chan.cols());
            cache->invstd.resize(in.chan.rows());
        }
        const Index v = in.chan.cols();
        for (Index c = 0; c < in.chan.rows(); ++c) {
            const S mu = in.chan.row(c).mean();
            const S var = (in.chan.row(c).array() - mu).square().sum() / S(v);
            const S istd = S(1) / std::sqrt(var + S(kEps));
            auto xhat = ((in.chan.row(c).array() - mu) * istd).matrix();
            out.chan.row(c) = gamma[c] * xhat.array() + beta[c];
            if (cache) {
                cache->xhat.row(c) = xhat;
                cache->invstd[c] = istd;
            }
        }
    }

    void backward(const NormCache<S>& cache, const MatX<S>& dout, MatX<S>& din,
                  NormGrads<S>& g) const {
        const Index v = dout.cols();
        for (Index c = 0; c < dout.rows(); ++c) {
            auto xh = cache.xhat.row(c).array();
            auto dy = dout.row(c).array();
            g.gamma[c] += (dy * xh).sum();
            g.beta[c] += dy.sum();
            const S sum_dxhat = gamma[c] * dy.sum();
            const S sum_dxhat_xhat = gamma[c] * (dy * xh).sum();
            din.row(c).array() += (cache.invstd[c] / S(v)) *
                                  (S(v) * gamma[c] * dy - sum_dxhat - xh * sum_dxhat_xhat);
        }
    }

    NormGrads<S> make_grads() const {
        NormGrads<S> g;
        g.gamma = VecX<S>::Zero(gamma.size());
        g.beta = VecX<S>::Zero(beta.size());
        return g;
    }
};

}  // namespace panic::img
