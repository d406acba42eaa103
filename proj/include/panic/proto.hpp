//
// Prototype similarity branch over backbone features: a 1x1x1-conv feature
// extractor, a 1x1x1-conv occurrence head producing per-(class, prototype)
// attention maps, occurrence-weighted average pooling into latent vectors,
// cosine scores against a bank of unit-length prototypes, the four image
// regularizers, prototype projection, and attention overlays.
//

#pragma once

#include <panic/conv.hpp>
#include <panic/resample.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace panic::img {

template <class S>
S stable_sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

template <class S>
S stable_softplus(S x) {
    return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

struct ProtoConfig {
    int classes = 3;
    int per_class = 2;   // K
    int latent = 64;     // L
    int hidden = 64;     // width of the head hidden layers
};

template <class S>
struct ProtoHeadsCache {
    FeatureMap<S> feat;
    FeatureMap<S> v_c1, v_h1, v_out;  // extractor: conv1 (pre-relu), relu'd, conv2
    FeatureMap<S> o_c1, o_h1, o_out;  // occurrence head, same stages
    MatX<S> sig;     // [C*K, V]  sigmoid occurrence maps
    MatX<S> sp;      // [L, V]    softplus extractor output
    MatX<S> z;       // [C*K, L]  pooled latents
    VecX<S> znorm;   // [C*K]
    MatX<S> scores;  // [C, K]
    int degenerate = 0;  // zero-norm latents encountered
};

template <class S>
struct ProtoGrads {
    Conv3dGrads<S> v1, v2, o1, o2;
    MatX<S> protos;  // [C*K, L]
    void zero() {
        v1.zero();
        v2.zero();
        o1.zero();
        o2.zero();
        protos.setZero();
    }
    void add(const ProtoGrads& o) {
        v1.add(o.v1);
        v2.add(o.v2);
        o1.add(o.o1);
        o2.add(o.o2);
        protos += o.protos;
    }
};

// Cosine similarity with a zero-norm guard: degenerate latent scores 0.
template <class S>
S similarity(const VecX<S>& prototype, const VecX<S>& latent, bool* degenerate = nullptr) {
    const S np = prototype.norm();
    const S nz = latent.norm();
    if (nz <= S(1e-12) || np <= S(1e-12)) {
        if (degenerate) *degenerate = true;
        return S(0);
    }
    return prototype.dot(latent) / (np * nz);
}

template <class S>
class ProtoBranch {
public:
    ProtoBranch() = default;

    ProtoBranch(const ProtoConfig& cfg, int in_channels, Rng& rng) : cfg_(cfg) {
        v1_.init(in_channels, cfg.hidden, 1, 1, true, rng);
        v2_.init(cfg.hidden, cfg.latent, 1, 1, true, rng);
        const int ck = cfg.classes * cfg.per_class;
        o1_.init(in_channels, cfg.hidden, 1, 1, true, rng);
        o2_.init(cfg.hidden, ck, 1, 1, true, rng);
        protos_.resize(ck, cfg.latent);
        rng.fill_normal<S>(protos_, 0.0, 1.0);
        renorm_prototypes();
    }

    const ProtoConfig& config() const { return cfg_; }
    MatX<S>& prototypes() { return protos_; }
    const MatX<S>& prototypes() const { return protos_; }
    Index proto_row(int c, int k) const { return Index(c) * cfg_.per_class + k; }

    void renorm_prototypes() {
        for (Index r = 0; r < protos_.rows(); ++r) {
            const S n = protos_.row(r).norm();
            if (n > S(1e-12)) protos_.row(r) /= n;
        }
    }

    // Heads + pooling + cosine scores for one sample's backbone features.
    void forward(const FeatureMap<S>& feat, ProtoHeadsCache<S>& c, ConvWorkspace<S>& ws) const {
        c.feat = feat;
        v1_.forward(feat, c.v_c1, ws);
        c.v_h1 = FeatureMap<S>{c.v_c1.grid, c.v_c1.chan.cwiseMax(S(0))};
        v2_.forward(c.v_h1, c.v_out, ws);
        o1_.forward(feat, c.o_c1, ws);
        c.o_h1 = FeatureMap<S>{c.o_c1.grid, c.o_c1.chan.cwiseMax(S(0))};
        o2_.forward(c.o_h1, c.o_out, ws);

        c.sig = c.o_out.chan.unaryExpr([](S x) { return stable_sigmoid(x); });
        c.sp = c.v_out.chan.unaryExpr([](S x) { return stable_softplus(x); });
        const S nvox = S(c.sig.cols());
        c.z.noalias() = c.sig * c.sp.transpose() / nvox;

        c.znorm = c.z.rowwise().norm();
        c.scores.resize(cfg_.classes, cfg_.per_class);
        c.degenerate = 0;
        for (int cc = 0; cc < cfg_.classes; ++cc)
            for (int k = 0; k < cfg_.per_class; ++k) {
                const Index r = proto_row(cc, k);
                bool degen = false;
                c.scores(cc, k) =
                    similarity<S>(protos_.row(r).transpose(), c.z.row(r).transpose(), &degen);
                if (degen) ++c.degenerate;
            }
    }

    // Backpropagate dL/d(scores) and an optional extra dL/d(sigmoid maps)
    // into head parameters, prototypes, and dL/d(features).
    // with_scores = false skips the score/extractor path (warped-branch use).
    void backward(const ProtoHeadsCache<S>& c, const MatX<S>* dscores, const MatX<S>* dsig_extra,
                  ProtoGrads<S>& g, MatX<S>& dfeat, ConvWorkspace<S>& ws) const {
        const S nvox = S(c.sig.cols());
        MatX<S> dsig = MatX<S>::Zero(c.sig.rows(), c.sig.cols());
        if (dsig_extra) dsig = *dsig_extra;

        bool need_extractor = false;
        if (dscores) {
            MatX<S> dz = MatX<S>::Zero(c.z.rows(), c.z.cols());
            for (int cc = 0; cc < cfg_.classes; ++cc)
                for (int k = 0; k < cfg_.per_class; ++k) {
                    const S ds = (*dscores)(cc, k);
                    if (ds == S(0)) continue;
                    const Index r = proto_row(cc, k);
                    const S nz = c.znorm[r];
                    const S np = protos_.row(r).norm();
                    if (nz <= S(1e-12) || np <= S(1e-12)) continue;  // score is constant 0
                    const S cosv = protos_.row(r).dot(c.z.row(r)) / (np * nz);
                    dz.row(r) += ds * (protos_.row(r) / (np * nz) - cosv * c.z.row(r) / (nz * nz));
                    g.protos.row(r) +=
                        ds * (c.z.row(r) / (np * nz) - cosv * protos_.row(r) / (np * np));
                    need_extractor = true;
                }
            if (need_extractor) {
                dsig.noalias() += dz * c.sp / nvox;
                MatX<S> dsp = dz.transpose() * c.sig / nvox;  // [L, V]
                // softplus' = sigmoid
                MatX<S> dvout = dsp.cwiseProduct(
                    c.v_out.chan.unaryExpr([](S x) { return stable_sigmoid(x); }));
                MatX<S> dvh1 = MatX<S>::Zero(c.v_h1.chan.rows(), c.v_h1.chan.cols());
                v2_.backward(c.v_h1, dvout, &dvh1, g.v2, ws);
                MatX<S> dvc1 =
                    dvh1.cwiseProduct((c.v_c1.chan.array() > S(0)).template cast<S>().matrix());
                v1_.backward(c.feat, dvc1, &dfeat, g.v1, ws);
            }
        }

        if (dsig.cwiseAbs().sum() > S(0)) {
            MatX<S> doout =
                dsig.cwiseProduct(c.sig.cwiseProduct((MatX<S>::Ones(c.sig.rows(), c.sig.cols()) -
                                                      c.sig)));
            MatX<S> doh1 = MatX<S>::Zero(c.o_h1.chan.rows(), c.o_h1.chan.cols());
            o2_.backward(c.o_h1, doout, &doh1, g.o2, ws);
            MatX<S> doc1 =
                doh1.cwiseProduct((c.o_c1.chan.array() > S(0)).template cast<S>().matrix());
            o1_.backward(c.feat, doc1, &dfeat, g.o1, ws);
        }
    }

    ProtoGrads<S> make_grads() const {
        ProtoGrads<S> g;
        g.v1 = v1_.make_grads();
        g.v2 = v2_.make_grads();
        g.o1 = o1_.make_grads();
        g.o2 = o2_.make_grads();
        g.protos = MatX<S>::Zero(protos_.rows(), protos_.cols());
        return g;
    }

    template <class Visitor>
    void visit_params(Visitor&& vis) {
        vis("proto.v1.w", v1_.w.data(), v1_.w.size(), true);
        vis("proto.v1.b", v1_.b.data(), v1_.b.size(), false);
        vis("proto.v2.w", v2_.w.data(), v2_.w.size(), true);
        vis("proto.v2.b", v2_.b.data(), v2_.b.size(), false);
        vis("proto.o1.w", o1_.w.data(), o1_.w.size(), true);
        vis("proto.o1.b", o1_.b.data(), o1_.b.size(), false);
        vis("proto.o2.w", o2_.w.data(), o2_.w.size(), true);
        vis("proto.o2.b", o2_.b.data(), o2_.b.size(), false);
        vis("proto.bank", protos_.data(), protos_.size(), false);
    }

    template <class Visitor>
    void visit_grads(ProtoGrads<S>& g, Visitor&& vis) const {
        vis("proto.v1.w", g.v1.w.data(), g.v1.w.size(), true);
        vis("proto.v1.b", g.v1.b.data(), g.v1.b.size(), false);
        vis("proto.v2.w", g.v2.w.data(), g.v2.w.size(), true);
        vis("proto.v2.b", g.v2.b.data(), g.v2.b.size(), false);
        vis("proto.o1.w", g.o1.w.data(), g.o1.w.size(), true);
        vis("proto.o1.b", g.o1.b.data(), g.o1.b.size(), false);
        vis("proto.o2.w", g.o2.w.data(), g.o2.w.size(), true);
        vis("proto.o2.b", g.o2.b.data(), g.o2.b.size(), false);
        vis("proto.bank", g.protos.data(), g.protos.size(), false);
    }

    Conv3d<S>& extractor1() { return v1_; }
    Conv3d<S>& extractor2() { return v2_; }
    Conv3d<S>& occurrence1() { return o1_; }
    Conv3d<S>& occurrence2() { return o2_; }

private:
    ProtoConfig cfg_;
    Conv3d<S> v1_, v2_;  // extractor
    Conv3d<S> o1_, o2_;  // occurrence
    MatX<S> protos_;     // [C*K, L], unit rows
};

// l1 mass of one sample's post-sigmoid occurrence maps (entries positive).
template <class S>
S occurrence_l1(const MatX<S>& sig) {
    return sig.sum();
}

// -max_k scores[y, k]; argmax_k reported for gradient routing.
template <class S>
S loss_cluster(const MatX<S>& scores, Index y, Index* argmax_k = nullptr) {
    Index best = 0;
    for (Index k = 1; k < scores.cols(); ++k)
        if (scores(y, k) > scores(y, best)) best = k;
    if (argmax_k) *argmax_k = best;
    return -scores(y, best);
}

// max over c != y, k of scores[c, k].
template <class S>
S loss_separation(const MatX<S>& scores, Index y, Index* argmax_c = nullptr,
                  Index* argmax_k = nullptr) {
    if (scores.rows() < 2)
        throw InvalidInput("separation loss undefined with a single class");
    bool have = false;
    Index bc = 0, bk = 0;
    for (Index c = 0; c < scores.rows(); ++c) {
        if (c == y) continue;
        for (Index k = 0; k < scores.cols(); ++k)
            if (!have || scores(c, k) > scores(bc, bk)) {
                bc = c;
                bk = k;
                have = true;
            }
    }
    if (argmax_c) *argmax_c = bc;
    if (argmax_k) *argmax_k = bk;
    return scores(bc, bk);
}

struct ProjectionEntry {
    int cls = 0;
    int k = 0;
    Index source = -1;  // index into the training set
    double similarity = 0.0;
};

struct ProjectionReport {
    std::vector<ProjectionEntry> entries;
};

// Replace each prototype with the same-class training latent of maximal
// cosine similarity, then renormalize. latents[i] is sample i's [C*K, L]
// pooled latent matrix in eval mode.
template <class S>
ProjectionReport project_prototypes(ProtoBranch<S>& branch, const std::vector<MatX<S>>& latents,
                                    const std::vector<int>& labels,
                                    const std::vector<std::string>* class_names = nullptr) {
    const auto& cfg = branch.config();
    ProjectionReport report;
    for (int c = 0; c < cfg.classes; ++c) {
        bool any = false;
        for (int l : labels)
            if (l == c) any = true;
        if (!any) {
            const std::string name =
                class_names ? (*class_names)[static_cast<std::size_t>(c)] : std::to_string(c);
            throw DataError("prototype projection: no training samples of class '" + name + "'");
        }
        for (int k = 0; k < cfg.per_class; ++k) {
            const Index r = branch.proto_row(c, k);
            const VecX<S> p = branch.prototypes().row(r).transpose();
            Index best = -1;
            S best_sim = S(0);
            for (std::size_t i = 0; i < latents.size(); ++i) {
                if (labels[i] != c) continue;
                const S sim = similarity<S>(p, latents[i].row(r).transpose());
                if (best < 0 || sim > best_sim) {
                    best = static_cast<Index>(i);
                    best_sim = sim;
                }
            }
            branch.prototypes().row(r) = latents[static_cast<std::size_t>(best)].row(r);
            report.entries.push_back(
                {c, k, best, static_cast<double>(best_sim)});
        }
    }
    branch.renorm_prototypes();
    return report;
}

template <class S>
struct AttentionOverlay {
    VecX<S> upsampled;               // occurrence map at target resolution
    std::vector<std::uint8_t> mask;  // 1 where value > threshold * max
    S threshold_value = S(0);
};

template <class S>
AttentionOverlay<S> attention_overlay(const VecX<S>& map, const Grid3& from, const Grid3& to,
                                      double threshold_fraction = 0.3) {
    AttentionOverlay<S> out;
    out.upsampled = upsample_trilinear<S>(map, from, to);
    const S mx = out.upsampled.maxCoeff();
    out.threshold_value = static_cast<S>(threshold_fraction) * mx;
    out.mask.resize(static_cast<std::size_t>(out.upsampled.size()));
    for (Index i = 0; i < out.upsampled.size(); ++i)
        out.mask[static_cast<std::size_t>(i)] = out.upsampled[i] > out.threshold_value ? 1 : 0;
    return out;
}

// Intersection over union of two voxel masks.
inline double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw InvalidInput("mask size mismatch in IoU");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool xa = a[i] != 0, xb = b[i] != 0;
        inter += (xa && xb) ? 1 : 0;
        uni += (xa || xb) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace panic::img
