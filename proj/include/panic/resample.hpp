//
// Affine warping of volumes and feature maps. A warp is defined by a 3x3
// matrix M acting on normalized coordinates t in [-1,1]^3 (axis order
// h, d, w): the warped field is (A F)(t) = F(M^-1 t), sampled trilinearly
// with zero padding. warp_scatter_add is the exact transpose, used to
// backpropagate through a warp. upsample_trilinear maps a coarse scalar
// field onto a finer grid with half-pixel alignment and border clamping.
//

#pragma once

#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <cmath>

namespace panic::img {

template <class S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S>
using Vec3 = Eigen::Matrix<S, 3, 1>;

template <class S>
struct AffineSpec {
    S scale = S(1);
    S angle_h = S(0);  // rotation about the h axis
    S angle_d = S(0);
    S angle_w = S(0);
};

// scale ~ U[0.8, 1.2], each angle ~ U[-pi, pi].
template <class S>
AffineSpec<S> random_affine(Rng& rng) {
    AffineSpec<S> a;
    a.scale = static_cast<S>(rng.uniform(0.8, 1.2));
    const double pi = 3.14159265358979323846;
    a.angle_h = static_cast<S>(rng.uniform(-pi, pi));
    a.angle_d = static_cast<S>(rng.uniform(-pi, pi));
    a.angle_w = static_cast<S>(rng.uniform(-pi, pi));
    return a;
}

template <class S>
Mat3<S> affine_matrix(const AffineSpec<S>& a) {
    auto rot = [](int ax0, int ax1, S ang) {
        Mat3<S> r = Mat3<S>::Identity();
        const S c = std::cos(ang), s = std::sin(ang);
        r(ax0, ax0) = c;
        r(ax0, ax1) = -s;
        r(ax1, ax0) = s;
        r(ax1, ax1) = c;
        return r;
    };
    // rotations about w, d, h axes composed, then isotropic scale
    Mat3<S> m = rot(0, 1, a.angle_w) * rot(0, 2, a.angle_d) * rot(1, 2, a.angle_h);
    return m * a.scale;
}

namespace detail {

template <class S>
struct TrilinearTap {
    Index v[8];
    S w[8];
    int count = 0;  // taps that fall inside the grid
};

// Source taps for one output voxel; zero padding drops outside corners.
template <class S>
TrilinearTap<S> taps_for(const Grid3& g, const Mat3<S>& minv, Index oi, Index oj, Index ok) {
    auto to_norm = [](Index i, Index n) { return S(2) * (S(i) + S(0.5)) / S(n) - S(1); };
    Vec3<S> t{to_norm(oi, static_cast<Index>(g.h)), to_norm(oj, static_cast<Index>(g.d)),
              to_norm(ok, static_cast<Index>(g.w))};
    Vec3<S> s = minv * t;
    auto to_idx = [](S c, Index n) { return (c + S(1)) * S(0.5) * S(n) - S(0.5); };
    const S fi = to_idx(s[0], g.h), fj = to_idx(s[1], g.d), fk = to_idx(s[2], g.w);
    const Index i0 = static_cast<Index>(std::floor(fi));
    const Index j0 = static_cast<Index>(std::floor(fj));
    const Index k0 = static_cast<Index>(std::floor(fk));
    const S di = fi - S(i0), dj = fj - S(j0), dk = fk - S(k0);
    TrilinearTap<S> tap;
    for (int ci = 0; ci < 2; ++ci)
        for (int cj = 0; cj < 2; ++cj)
            for (int ck = 0; ck < 2; ++ck) {
                const Index ii = i0 + ci, jj = j0 + cj, kk = k0 + ck;
                if (ii < 0 || ii >= g.h || jj < 0 || jj >= g.d || kk < 0 || kk >= g.w) continue;
                const S w = (ci ? di : S(1) - di) * (cj ? dj : S(1) - dj) * (ck ? dk : S(1) - dk);
                tap.v[tap.count] = g.index(ii, jj, kk);
                tap.w[tap.count] = w;
                ++tap.count;
            }
    return tap;
}

}  // namespace detail

template <class S>
FeatureMap<S> warp_feature_map(const FeatureMap<S>& in, const Mat3<S>& m) {
    FeatureMap<S> out;
    out.grid = in.grid;
    out.chan = MatX<S>::Zero(in.chan.rows(), in.chan.cols());
    const Mat3<S> minv = m.inverse();
    Index vo = 0;
    for (Index i = 0; i < in.grid.h; ++i)
        for (Index j = 0; j < in.grid.d; ++j)
            for (Index k = 0; k < in.grid.w; ++k, ++vo) {
                auto tap = detail::taps_for<S>(in.grid, minv, i, j, k);
                for (int t = 0; t < tap.count; ++t)
                    out.chan.col(vo) += tap.w[t] * in.chan.col(tap.v[t]);
            }
    return out;
}

// Transpose of warp_feature_map: accumulate d(loss)/d(in) given d(loss)/d(out).
template <class S>
void warp_scatter_add(const MatX<S>& dout, const Grid3& grid, const Mat3<S>& m, MatX<S>& din) {
    const Mat3<S> minv = m.inverse();
    Index vo = 0;
    for (Index i = 0; i < grid.h; ++i)
        for (Index j = 0; j < grid.d; ++j)
            for (Index k = 0; k < grid.w; ++k, ++vo) {
                auto tap = detail::taps_for<S>(grid, minv, i, j, k);
                for (int t = 0; t < tap.count; ++t)
                    din.col(tap.v[t]) += tap.w[t] * dout.col(vo);
            }
}

template <class S>
Volume<S> warp_volume(const Volume<S>& in, const Mat3<S>& m) {
    Volume<S> out;
    out.grid = in.grid;
    out.data = VecX<S>::Zero(in.data.size());
    const Mat3<S> minv = m.inverse();
    Index vo = 0;
    for (Index i = 0; i < in.grid.h; ++i)
        for (Index j = 0; j < in.grid.d; ++j)
            for (Index k = 0; k < in.grid.w; ++k, ++vo) {
                auto tap = detail::taps_for<S>(in.grid, minv, i, j, k);
                S acc = S(0);
                for (int t = 0; t < tap.count; ++t) acc += tap.w[t] * in.data[tap.v[t]];
                out.data[vo] = acc;
            }
    return out;
}

// Coarse scalar field -> fine grid, half-pixel centers, borders clamped.
template <class S>
VecX<S> upsample_trilinear(const VecX<S>& coarse, const Grid3& from, const Grid3& to) {
    VecX<S> out(to.voxels());
    auto axis = [](Index i, Index n_to, Index n_from, Index& lo, Index& hi, S& frac) {
        const S src = (S(i) + S(0.5)) * S(n_from) / S(n_to) - S(0.5);
        S f = std::floor(src);
        lo = static_cast<Index>(f);
        frac = src - f;
        if (lo < 0) {
            lo = 0;
            frac = S(0);
        }
        hi = lo + 1;
        if (hi > n_from - 1) {
            hi = n_from - 1;
            frac = lo == n_from - 1 ? S(0) : frac;
        }
    };
    Index vo = 0;
    for (Index i = 0; i < to.h; ++i)
        for (Index j = 0; j < to.d; ++j)
            for (Index k = 0; k < to.w; ++k, ++vo) {
                Index i0, i1, j0, j1, k0, k1;
                S fi, fj, fk;
                axis(i, to.h, from.h, i0, i1, fi);
                axis(j, to.d, from.d, j0, j1, fj);
                axis(k, to.w, from.w, k0, k1, fk);
                auto at = [&](Index a, Index b, Index c) { return coarse[from.index(a, b, c)]; };
                const S v00 = at(i0, j0, k0) * (S(1) - fk) + at(i0, j0, k1) * fk;
                const S v01 = at(i0, j1, k0) * (S(1) - fk) + at(i0, j1, k1) * fk;
                const S v10 = at(i1, j0, k0) * (S(1) - fk) + at(i1, j0, k1) * fk;
                const S v11 = at(i1, j1, k0) * (S(1) - fk) + at(i1, j1, k1) * fk;
                const S v0 = v00 * (S(1) - fj) + v01 * fj;
                const S v1 = v10 * (S(1) - fj) + v11 * fj;
                out[vo] = v0 * (S(1) - fi) + v1 * fi;
            }
    return out;
}

}  // namespace panic::img
