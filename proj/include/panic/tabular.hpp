//
// Neural additive branch for tabular features. Each continuous feature owns
// a small MLP with a class-dimensional output head, each categorical feature
// a linear coefficient vector, and every feature a learned missing-value
// indicator. MLP weight matrices are spectrally normalized via power
// iteration.
//

#pragma once

#include <panic/kvtext.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace panic::tab {

enum class FeatureKind { Continuous, Categorical };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::Continuous;
    int column_index = 0;
};

template <class S>
struct TabularSample {
    VecX<S> values;                 // standardized reals / integer codes
    std::vector<std::uint8_t> missing;  // 1 = missing

    Index size() const { return values.size(); }
    bool is_missing(Index n) const { return missing[static_cast<std::size_t>(n)] != 0; }
};

// [batch, features, classes]; row b*features+n holds the class vector.
template <class S>
struct ContributionMatrix {
    Index batch = 0;
    Index features = 0;
    Index classes = 0;
    MatX<S> flat;

    ContributionMatrix() = default;
    ContributionMatrix(Index b, Index n, Index c)
        : batch(b), features(n), classes(c), flat(MatX<S>::Zero(b * n, c)) {}

    auto row(Index b, Index n) { return flat.row(b * features + n); }
    auto row(Index b, Index n) const { return flat.row(b * features + n); }
};

// Largest singular value by power iteration from a fixed start vector.
template <class S>
S measure_spectral_norm(const MatX<S>& w, int iters) {
    if (w.size() == 0) return S(0);
    VecX<S> u = VecX<S>::Ones(w.rows());
    u.normalize();
    VecX<S> v;
    for (int it = 0; it < iters; ++it) {
        v = w.transpose() * u;
        S nv = v.norm();
        if (nv <= S(0)) return S(0);
        v /= nv;
        u = w * v;
        S nu = u.norm();
        if (nu <= S(0)) return S(0);
        u /= nu;
    }
    return u.dot(w * v);
}

// Dense layer whose effective weight is W divided by its leading singular
// value. u/v are the persistent power-iteration pair; `eval_w` caches the
// materialized weight used by evaluation-mode forwards.
template <class S>
struct SpectralLinear {
    MatX<S> w;
    VecX<S> b;
    VecX<S> u, v;     // power-iteration state, paired with w
    MatX<S> eval_w;   // w / sigma, refreshed via materialize()
    S sigma = S(1);   // sigma for the stored (u, v)

    static constexpr S kSigmaFloor = S(1e-12);

    void init(Index rows, Index cols, Rng& rng) {
        w.resize(rows, cols);
        const double sd = std::sqrt(2.0 / static_cast<double>(cols));
        rng.fill_normal<S>(w, 0.0, sd);
        b = VecX<S>::Zero(rows);
        u.resize(rows);
        rng.fill_normal<S>(u.reshaped(rows, 1), 0.0, 1.0);
        S nu = u.norm();
        u = nu > S(0) ? VecX<S>(u / nu) : VecX<S>::Ones(rows).normalized();
        materialize(50);
    }

    // One power-iteration step tracking drift of w; refreshes (u, v, sigma).
    void power_step() {
        VecX<S> vt = w.transpose() * u;
        S nv = vt.norm();
        if (nv <= kSigmaFloor) {
            sigma = S(1);
            v = VecX<S>::Zero(w.cols());
            return;
        }
        v = vt / nv;
        VecX<S> ut = w * v;
        S nu = ut.norm();
        if (nu <= kSigmaFloor) {
            sigma = S(1);
            return;
        }
        u = ut / nu;
        sigma = u.dot(w * v);
        if (sigma <= kSigmaFloor) sigma = S(1);
    }

    // Converge (u, v) and cache the normalized weight.
    void materialize(int iters = 50) {
        for (int i = 0; i < iters; ++i) power_step();
        sigma = frozen_sigma();
        eval_w = w / sigma;
    }

    // sigma = u^T W v with the stored pair, linear in W; floor guards the
    // all-zero matrix.
    S frozen_sigma() const {
        if (v.size() != w.cols() || u.size() != w.rows()) return S(1);
        S s = u.dot(w * v);
        return s > kSigmaFloor ? s : S(1);
    }

    // Convert a gradient w.r.t. the effective weight W/sigma into a gradient
    // w.r.t. the raw W, treating (u, v) as constants.
    void grad_raw(const MatX<S>& d_eff, S sig, MatX<S>& dw_out) const {
        const MatX<S> eff = w / sig;
        const S inner = (d_eff.array() * eff.array()).sum();
        dw_out.noalias() += d_eff / sig;
        if (v.size() == w.cols() && u.size() == w.rows())
            dw_out.noalias() -= (inner / sig) * (u * v.transpose());
    }
};

struct NamConfig {
    int hidden = 32;
    double mlp_dropout = 0.4;     // hidden-layer dropout
    double output_dropout = 0.1;  // dropout on each univariate output
};

// Per-sample caches needed to backpropagate one training forward.
template <class S>
struct NamFeatureCache {
    int branch = 0;  // 0 missing, 1 categorical, 2 continuous
    S x = S(0);
    VecX<S> a1, h1, a2, h2;  // h* post-dropout
    VecX<S> m1, m2;          // scaled hidden dropout masks
    VecX<S> f;               // univariate outputs, pre output-dropout
    VecX<S> out_mask;        // scaled output-dropout factor per class entry
    S sig1 = S(1), sig2 = S(1), sig3 = S(1);
};

template <class S>
struct NamSampleCache {
    std::vector<NamFeatureCache<S>> feats;
};

template <class S>
struct ContinuousFn {
    SpectralLinear<S> l1, l2, l3;
};

template <class S>
struct NamGrads {
    struct Feat {
        MatX<S> w1, w2, w3;
        VecX<S> b1, b2, b3;
        VecX<S> beta;
        VecX<S> s;
    };
    std::vector<Feat> feats;

    void add(const NamGrads& o) {
        for (std::size_t i = 0; i < feats.size(); ++i) {
            auto& a = feats[i];
            const auto& b = o.feats[i];
            if (a.w1.size()) {
                a.w1 += b.w1;
                a.w2 += b.w2;
                a.w3 += b.w3;
                a.b1 += b.b1;
                a.b2 += b.b2;
                a.b3 += b.b3;
            }
            if (a.beta.size()) a.beta += b.beta;
            a.s += b.s;
        }
    }
    void zero() {
        for (auto& f : feats) {
            f.w1.setZero();
            f.w2.setZero();
            f.w3.setZero();
            f.b1.setZero();
            f.b2.setZero();
            f.b3.setZero();
            f.beta.setZero();
            f.s.setZero();
        }
    }
};

template <class S>
class NamFunctionBank {
public:
    NamFunctionBank() = default;

    NamFunctionBank(std::vector<FeatureSpec> specs, Index classes, NamConfig cfg, Rng& rng)
        : specs_(std::move(specs)), classes_(classes), cfg_(cfg) {
        mlps_.resize(specs_.size());
        betas_.resize(specs_.size());
        s_missing_.assign(specs_.size(), VecX<S>::Zero(classes_));
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            if (specs_[n].kind == FeatureKind::Continuous) {
                mlps_[n].l1.init(cfg_.hidden, 1, rng);
                mlps_[n].l2.init(cfg_.hidden, cfg_.hidden, rng);
                mlps_[n].l3.init(classes_, cfg_.hidden, rng);
            } else {
                betas_[n] = VecX<S>::Zero(classes_);
            }
        }
    }

    Index features() const { return static_cast<Index>(specs_.size()); }
    Index classes() const { return classes_; }
    const NamConfig& config() const { return cfg_; }
    const std::vector<FeatureSpec>& specs() const { return specs_; }
    const FeatureSpec& spec(Index n) const { return specs_[static_cast<std::size_t>(n)]; }

    VecX<S>& missing_indicator(Index n) { return s_missing_[static_cast<std::size_t>(n)]; }
    const VecX<S>& missing_indicator(Index n) const {
        return s_missing_[static_cast<std::size_t>(n)];
    }
    VecX<S>& beta(Index n) { return betas_[static_cast<std::size_t>(n)]; }
    const VecX<S>& beta(Index n) const { return betas_[static_cast<std::size_t>(n)]; }
    ContinuousFn<S>& mlp(Index n) { return mlps_[static_cast<std::size_t>(n)]; }
    const ContinuousFn<S>& mlp(Index n) const { return mlps_[static_cast<std::size_t>(n)]; }

    // Evaluation-mode value of f_n; uses the cached normalized weights.
    VecX<S> feature_contribution(Index n, S x, bool missing) const {
        const auto& sp = spec(n);
        if (missing) return s_missing_[static_cast<std::size_t>(n)];
        if (!std::isfinite(static_cast<double>(x)))
            throw InvalidInput("non-finite value for observed feature '" + sp.name + "'");
        switch (sp.kind) {
            case FeatureKind::Categorical:
                return betas_[static_cast<std::size_t>(n)] * x;
            case FeatureKind::Continuous: {
                const auto& m = mlps_[static_cast<std::size_t>(n)];
                VecX<S> h1 = (m.l1.eval_w * VecX<S>::Constant(1, x) + m.l1.b).cwiseMax(S(0));
                VecX<S> h2 = (m.l2.eval_w * h1 + m.l2.b).cwiseMax(S(0));
                return m.l3.eval_w * h2 + m.l3.b;
            }
        }
        throw ConfigError("unknown feature kind for '" + sp.name + "'");
    }

    // Training forward for one sample; fills the cache for backward.
    // update_power: run one power-iteration step per weight matrix first.
    // rng == nullptr disables dropout (used by gradient checks).
    VecX<S> forward_train_feature(Index n, S x, bool missing, NamFeatureCache<S>& c,
                                  Rng* rng, bool update_power) {
        const auto& sp = spec(n);
        c = NamFeatureCache<S>{};
        if (missing) {
            c.branch = 0;
            c.f = s_missing_[static_cast<std::size_t>(n)];
        } else if (sp.kind == FeatureKind::Categorical) {
            if (!std::isfinite(static_cast<double>(x)))
                throw InvalidInput("non-finite value for observed feature '" + sp.name + "'");
            c.branch = 1;
            c.x = x;
            c.f = betas_[static_cast<std::size_t>(n)] * x;
        } else {
            if (!std::isfinite(static_cast<double>(x)))
                throw InvalidInput("non-finite value for observed feature '" + sp.name + "'");
            c.branch = 2;
            c.x = x;
            auto& m = mlps_[static_cast<std::size_t>(n)];
            if (update_power) {
                m.l1.power_step();
                m.l2.power_step();
                m.l3.power_step();
            }
            c.sig1 = m.l1.frozen_sigma();
            c.sig2 = m.l2.frozen_sigma();
            c.sig3 = m.l3.frozen_sigma();
            c.a1 = (m.l1.w / c.sig1) * VecX<S>::Constant(1, x) + m.l1.b;
            VecX<S> r1 = c.a1.cwiseMax(S(0));
            c.m1 = dropout_mask(r1.size(), cfg_.mlp_dropout, rng);
            c.h1 = r1.cwiseProduct(c.m1);
            c.a2 = (m.l2.w / c.sig2) * c.h1 + m.l2.b;
            VecX<S> r2 = c.a2.cwiseMax(S(0));
            c.m2 = dropout_mask(r2.size(), cfg_.mlp_dropout, rng);
            c.h2 = r2.cwiseProduct(c.m2);
            c.f = (m.l3.w / c.sig3) * c.h2 + m.l3.b;
        }
        c.out_mask = dropout_mask(classes_, cfg_.output_dropout, rng);
        return c.f;
    }

    // Backpropagate d(loss)/d(f_n) for one sample; accumulates into grads.
    void backward_feature(Index n, const VecX<S>& df, const NamFeatureCache<S>& c,
                          NamGrads<S>& grads) const {
        auto& g = grads.feats[static_cast<std::size_t>(n)];
        if (c.branch == 0) {
            g.s += df;
            return;
        }
        if (c.branch == 1) {
            g.beta += df * c.x;
            return;
        }
        const auto& m = mlps_[static_cast<std::size_t>(n)];
        // layer 3
        g.b3 += df;
        MatX<S> d_eff3 = df * c.h2.transpose();
        m.l3.grad_raw(d_eff3, c.sig3, g.w3);
        VecX<S> dh2 = (m.l3.w / c.sig3).transpose() * df;
        VecX<S> da2 =
            dh2.cwiseProduct(c.m2).cwiseProduct((c.a2.array() > S(0)).template cast<S>().matrix());
        // layer 2
        g.b2 += da2;
        MatX<S> d_eff2 = da2 * c.h1.transpose();
        m.l2.grad_raw(d_eff2, c.sig2, g.w2);
        VecX<S> dh1 = (m.l2.w / c.sig2).transpose() * da2;
        VecX<S> da1 =
            dh1.cwiseProduct(c.m1).cwiseProduct((c.a1.array() > S(0)).template cast<S>().matrix());
        // layer 1
        g.b1 += da1;
        MatX<S> d_eff1 = da1 * VecX<S>::Constant(1, c.x).transpose();
        m.l1.grad_raw(d_eff1, c.sig1, g.w1);
    }

    NamGrads<S> make_grads() const {
        NamGrads<S> g;
        g.feats.resize(specs_.size());
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            auto& f = g.feats[n];
            if (specs_[n].kind == FeatureKind::Continuous) {
                f.w1 = MatX<S>::Zero(cfg_.hidden, 1);
                f.w2 = MatX<S>::Zero(cfg_.hidden, cfg_.hidden);
                f.w3 = MatX<S>::Zero(classes_, cfg_.hidden);
                f.b1 = VecX<S>::Zero(cfg_.hidden);
                f.b2 = VecX<S>::Zero(cfg_.hidden);
                f.b3 = VecX<S>::Zero(classes_);
            } else {
                f.beta = VecX<S>::Zero(classes_);
            }
            f.s = VecX<S>::Zero(classes_);
        }
        return g;
    }

    // Refresh all cached evaluation weights (50 power iterations each).
    void refresh_eval_weights(int iters = 50) {
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            if (specs_[n].kind != FeatureKind::Continuous) continue;
            mlps_[n].l1.materialize(iters);
            mlps_[n].l2.materialize(iters);
            mlps_[n].l3.materialize(iters);
        }
    }

    // Largest singular value over all evaluation-mode MLP weight matrices.
    S max_eval_spectral_norm(int iters = 50) const {
        S worst = S(0);
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            if (specs_[n].kind != FeatureKind::Continuous) continue;
            worst = std::max(worst, measure_spectral_norm<S>(mlps_[n].l1.eval_w, iters));
            worst = std::max(worst, measure_spectral_norm<S>(mlps_[n].l2.eval_w, iters));
            worst = std::max(worst, measure_spectral_norm<S>(mlps_[n].l3.eval_w, iters));
        }
        return worst;
    }

    template <class Visitor>
    void visit_params(Visitor&& vis) {
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            const std::string base = "nam." + specs_[n].name;
            if (specs_[n].kind == FeatureKind::Continuous) {
                auto& m = mlps_[n];
                vis(base + ".w1", m.l1.w.data(), m.l1.w.size(), true);
                vis(base + ".b1", m.l1.b.data(), m.l1.b.size(), false);
                vis(base + ".w2", m.l2.w.data(), m.l2.w.size(), true);
                vis(base + ".b2", m.l2.b.data(), m.l2.b.size(), false);
                vis(base + ".w3", m.l3.w.data(), m.l3.w.size(), true);
                vis(base + ".b3", m.l3.b.data(), m.l3.b.size(), false);
            } else {
                vis(base + ".beta", betas_[n].data(), betas_[n].size(), true);
            }
            vis(base + ".s", s_missing_[n].data(), s_missing_[n].size(), false);
        }
    }

    // Power-iteration vectors, serialized alongside parameters so that a
    // reloaded bank reproduces evaluation outputs bit-exactly.
    template <class Visitor>
    void visit_power_state(Visitor&& vis) {
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            if (specs_[n].kind != FeatureKind::Continuous) continue;
            const std::string base = "nam." + specs_[n].name;
            auto& m = mlps_[n];
            for (auto* l : {&m.l1, &m.l2, &m.l3}) {
                vis(base + ".u", l->u);
                vis(base + ".v", l->v);
            }
        }
    }

    // Rebuild cached evaluation weights from the stored (u, v) pairs without
    // running any power iterations (checkpoint load path).
    void refresh_from_power_state() {
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            if (specs_[n].kind != FeatureKind::Continuous) continue;
            auto& m = mlps_[n];
            for (auto* l : {&m.l1, &m.l2, &m.l3}) {
                l->sigma = l->frozen_sigma();
                l->eval_w = l->w / l->sigma;
            }
        }
    }

    template <class Visitor>
    void visit_grads(NamGrads<S>& g, Visitor&& vis) const {
        for (std::size_t n = 0; n < specs_.size(); ++n) {
            const std::string base = "nam." + specs_[n].name;
            auto& f = g.feats[n];
            if (specs_[n].kind == FeatureKind::Continuous) {
                vis(base + ".w1", f.w1.data(), f.w1.size(), true);
                vis(base + ".b1", f.b1.data(), f.b1.size(), false);
                vis(base + ".w2", f.w2.data(), f.w2.size(), true);
                vis(base + ".b2", f.b2.data(), f.b2.size(), false);
                vis(base + ".w3", f.w3.data(), f.w3.size(), true);
                vis(base + ".b3", f.b3.data(), f.b3.size(), false);
            } else {
                vis(base + ".beta", f.beta.data(), f.beta.size(), true);
            }
            vis(base + ".s", f.s.data(), f.s.size(), false);
        }
    }

private:
    VecX<S> dropout_mask(Index n, double p, Rng* rng) {
        if (!rng || p <= 0.0) return VecX<S>::Ones(n);
        VecX<S> m(n);
        const S scale = S(1.0 / (1.0 - p));
        for (Index i = 0; i < n; ++i) m[i] = rng->bernoulli(p) ? S(0) : scale;
        return m;
    }
    std::vector<FeatureSpec> specs_;
    Index classes_ = 0;
    NamConfig cfg_;
    std::vector<ContinuousFn<S>> mlps_;
    std::vector<VecX<S>> betas_;
    std::vector<VecX<S>> s_missing_;
};

// Stacked evaluation/training forward over a batch.
template <class S>
ContributionMatrix<S> nam_forward(NamFunctionBank<S>& bank,
                                  const std::vector<TabularSample<S>>& batch, bool training,
                                  Rng* rng = nullptr) {
    const Index n_feat = bank.features();
    for (const auto& s : batch)
        if (s.size() != n_feat || static_cast<Index>(s.missing.size()) != n_feat)
            throw InvalidInput("ragged batch: sample feature count " + std::to_string(s.size()) +
                               " != " + std::to_string(n_feat));
    ContributionMatrix<S> out(static_cast<Index>(batch.size()), n_feat, bank.classes());
    NamFeatureCache<S> scratch;
    for (Index b = 0; b < static_cast<Index>(batch.size()); ++b) {
        const auto& s = batch[static_cast<std::size_t>(b)];
        for (Index n = 0; n < n_feat; ++n) {
            if (training) {
                VecX<S> f = bank.forward_train_feature(n, s.values[n], s.is_missing(n), scratch,
                                                       rng, false);
                out.row(b, n) = f.cwiseProduct(scratch.out_mask).transpose();
            } else {
                out.row(b, n) =
                    bank.feature_contribution(n, s.values[n], s.is_missing(n)).transpose();
            }
        }
    }
    if (!all_finite(out.flat)) throw NumericError("non-finite tabular contribution");
    return out;
}

// Batch mean of the per-sample output penalty (1/C) sum_c sum_n f^2.
template <class S>
S tab_penalty(const ContributionMatrix<S>& contribs) {
    if (!all_finite(contribs.flat)) throw InvalidInput("non-finite contributions");
    if (contribs.batch == 0) return S(0);
    return contribs.flat.squaredNorm() / (S(contribs.classes) * S(contribs.batch));
}

// Per-feature mean/std computed over observed training values.
template <class S>
struct StandardStats {
    std::vector<std::string> names;
    std::vector<std::uint8_t> continuous;
    VecX<S> mean;
    VecX<S> stddev;

    KvMap to_kv() const {
        KvMap kv;
        for (std::size_t n = 0; n < names.size(); ++n) {
            if (!continuous[n]) continue;
            kv.set_double(names[n] + ".mean", static_cast<double>(mean[static_cast<Index>(n)]));
            kv.set_double(names[n] + ".std", static_cast<double>(stddev[static_cast<Index>(n)]));
        }
        return kv;
    }
    static StandardStats from_kv(const KvMap& kv, const std::vector<FeatureSpec>& specs) {
        StandardStats st;
        st.mean = VecX<S>::Zero(static_cast<Index>(specs.size()));
        st.stddev = VecX<S>::Ones(static_cast<Index>(specs.size()));
        for (std::size_t n = 0; n < specs.size(); ++n) {
            st.names.push_back(specs[n].name);
            const bool cont = specs[n].kind == FeatureKind::Continuous;
            st.continuous.push_back(cont ? 1 : 0);
            if (cont) {
                st.mean[static_cast<Index>(n)] = static_cast<S>(kv.get_double(specs[n].name + ".mean"));
                st.stddev[static_cast<Index>(n)] = static_cast<S>(kv.get_double(specs[n].name + ".std"));
            }
        }
        return st;
    }
};

template <class S>
StandardStats<S> compute_standard_stats(const std::vector<TabularSample<S>>& train,
                                        const std::vector<FeatureSpec>& specs) {
    const Index n_feat = static_cast<Index>(specs.size());
    StandardStats<S> st;
    st.mean = VecX<S>::Zero(n_feat);
    st.stddev = VecX<S>::Ones(n_feat);
    for (Index n = 0; n < n_feat; ++n) {
        st.names.push_back(specs[static_cast<std::size_t>(n)].name);
        const bool cont = specs[static_cast<std::size_t>(n)].kind == FeatureKind::Continuous;
        st.continuous.push_back(cont ? 1 : 0);
        if (!cont) continue;
        double sum = 0.0, sum2 = 0.0;
        long count = 0;
        for (const auto& s : train) {
            if (s.is_missing(n)) continue;
            const double x = static_cast<double>(s.values[n]);
            sum += x;
            sum2 += x * x;
            ++count;
        }
        if (count < 2)
            throw DataError("feature '" + st.names.back() +
                            "' has fewer than two observed training values");
        const double m = sum / count;
        const double var = (sum2 - count * m * m) / (count - 1);
        if (!(var > 0.0))
            throw DataError("degenerate feature '" + st.names.back() +
                            "': zero standard deviation on the training split");
        st.mean[n] = static_cast<S>(m);
        st.stddev[n] = static_cast<S>(std::sqrt(var));
    }
    return st;
}

template <class S>
std::vector<TabularSample<S>> standardize(const std::vector<TabularSample<S>>& raw,
                                          const StandardStats<S>& stats) {
    std::vector<TabularSample<S>> out = raw;
    for (auto& s : out) {
        for (Index n = 0; n < s.size(); ++n) {
            if (s.is_missing(n) || !stats.continuous[static_cast<std::size_t>(n)]) continue;
            s.values[n] = (s.values[n] - stats.mean[n]) / stats.stddev[n];
        }
    }
    return out;
}

}  // namespace panic::tab
