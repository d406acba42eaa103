//
// The fused additive model: class logits are a bias plus per-feature tabular
// contributions plus per-prototype image similarity scores. Training couples
// cross-entropy with five regularizers; evaluation is deterministic and the
// logit is exactly the sum used by explanations.
//

#pragma once

#include <panic/backbone.hpp>
#include <panic/parallel.hpp>
#include <panic/proto.hpp>
#include <panic/resample.hpp>
#include <panic/rng.hpp>
#include <panic/tabular.hpp>
#include <panic/types.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace panic {

struct LossWeights {
    double tab = 0.01;        // lambda_1
    double cluster = 0.5;     // lambda_2
    double separation = 0.5;  // lambda_3
    double occurrence = 0.5;  // lambda_4
    double affine = 0.5;      // lambda_5

    void validate() const {
        if (tab < 0 || cluster < 0 || separation < 0 || occurrence < 0 || affine < 0)
            throw ConfigError("loss weights must be non-negative");
    }
};

struct ModelConfig {
    int classes = 3;
    bool use_tabular = true;
    bool use_image = true;
    Grid3 input_grid = Grid3::cube(32);
    tab::NamConfig nam;
    img::BackboneConfig backbone;
    img::ProtoConfig proto;  // proto.classes is forced to `classes`
};

template <class S>
VecX<S> softmax(const VecX<S>& logits) {
    const S mx = logits.maxCoeff();
    VecX<S> e = (logits.array() - mx).exp();
    return e / e.sum();
}

// Argmax with lowest-index tie-break.
template <class S>
int predict_class(const VecX<S>& logits) {
    int best = 0;
    for (Index c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[best]) best = static_cast<int>(c);
    return best;
}

// The one summation order shared by the forward pass and explanations:
// bias, then features in order, then prototypes k-major per class.
template <class S>
VecX<S> assemble_logits(const VecX<S>& bias, const MatX<S>* contribs, const MatX<S>* scores) {
    VecX<S> mu = bias;
    if (contribs)
        for (Index n = 0; n < contribs->rows(); ++n) mu += contribs->row(n).transpose();
    if (scores)
        for (Index c = 0; c < scores->rows(); ++c)
            for (Index k = 0; k < scores->cols(); ++k) mu[c] += (*scores)(c, k);
    return mu;
}

template <class S>
struct EvalDetail {
    MatX<S> contribs;  // [N, C]; empty when the tabular branch is off
    MatX<S> scores;    // [C, K]; empty when the image branch is off
    img::ProtoHeadsCache<S> heads;
    VecX<S> logits;
    VecX<S> probs;
    int degenerate_latents = 0;
};

template <class S>
struct PanicGrads {
    VecX<S> beta0;
    tab::NamGrads<S> nam;
    img::BackboneGrads<S> backbone;
    img::ProtoGrads<S> proto;
    bool has_tab = false, has_img = false;

    void zero() {
        beta0.setZero();
        if (has_tab) nam.zero();
        if (has_img) {
            backbone.zero();
            proto.zero();
        }
    }
    void add(const PanicGrads& o) {
        beta0 += o.beta0;
        if (has_tab) nam.add(o.nam);
        if (has_img) {
            backbone.add(o.backbone);
            proto.add(o.proto);
        }
    }
};

struct LossBreakdown {
    double ce = 0, tab = 0, cluster = 0, separation = 0, occurrence = 0, affine = 0;
    double total = 0;
    void finalize(const LossWeights& w) {
        total = ce + w.tab * tab + w.cluster * cluster + w.separation * separation +
                w.occurrence * occurrence + w.affine * affine;
    }
    void add(const LossBreakdown& o) {
        ce += o.ce;
        tab += o.tab;
        cluster += o.cluster;
        separation += o.separation;
        occurrence += o.occurrence;
        affine += o.affine;
    }
};

template <class S>
struct BatchSample {
    const tab::TabularSample<S>* tabular = nullptr;
    const Volume<S>* volume = nullptr;
    int label = 0;
};

template <class S>
class PanicModel {
public:
    PanicModel() = default;

    PanicModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.proto.classes = cfg_.classes;
        beta0_ = VecX<S>::Zero(cfg_.classes);
        if (cfg_.use_image) {
            backbone_ = img::Backbone<S>(cfg_.backbone, rng);
            proto_ = img::ProtoBranch<S>(cfg_.proto, cfg_.backbone.out_channels(), rng);
            feat_grid_ = backbone_.out_grid(cfg_.input_grid);
        }
        if (!cfg_.use_tabular && !cfg_.use_image)
            throw ConfigError("model needs at least one branch enabled");
    }

    void attach_tabular(std::vector<tab::FeatureSpec> specs, Rng& rng) {
        if (!cfg_.use_tabular) return;
        nam_ = tab::NamFunctionBank<S>(std::move(specs), cfg_.classes, cfg_.nam, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    Grid3 feature_grid() const { return feat_grid_; }
    VecX<S>& bias() { return beta0_; }
    const VecX<S>& bias() const { return beta0_; }
    tab::NamFunctionBank<S>& nam() { return nam_; }
    const tab::NamFunctionBank<S>& nam() const { return nam_; }
    img::Backbone<S>& backbone() { return backbone_; }
    const img::Backbone<S>& backbone() const { return backbone_; }
    img::ProtoBranch<S>& proto() { return proto_; }
    const img::ProtoBranch<S>& proto() const { return proto_; }

    void check_volume(const Volume<S>& v) const {
        if (v.grid.h != cfg_.input_grid.h || v.grid.d != cfg_.input_grid.d ||
            v.grid.w != cfg_.input_grid.w)
            throw InvalidInput("volume dims " + v.grid.str() + " do not match configured " +
                               cfg_.input_grid.str());
    }

    // Deterministic evaluation forward; fills contributions, scores, logits.
    void eval_forward(const tab::TabularSample<S>* sample, const Volume<S>* vol,
                      EvalDetail<S>& out, img::ConvWorkspace<S>& ws) const {
        const MatX<S>* contribs = nullptr;
        const MatX<S>* scores = nullptr;
        if (cfg_.use_tabular) {
            if (!sample) throw InvalidInput("tabular sample required");
            out.contribs.resize(nam_.features(), cfg_.classes);
            for (Index n = 0; n < nam_.features(); ++n)
                out.contribs.row(n) =
                    nam_.feature_contribution(n, sample->values[n], sample->is_missing(n))
                        .transpose();
            contribs = &out.contribs;
        }
        if (cfg_.use_image) {
            if (!vol) throw InvalidInput("volume required");
            check_volume(*vol);
            FeatureMap<S> feat = backbone_.forward(*vol, nullptr, ws);
            proto_.forward(feat, out.heads, ws);
            out.scores = out.heads.scores;
            out.degenerate_latents = out.heads.degenerate;
            scores = &out.scores;
        }
        out.logits = assemble_logits<S>(beta0_, contribs, scores);
        if (!all_finite(out.logits)) throw NumericError("non-finite logits");
        out.probs = softmax(out.logits);
    }

    // Pooled latents [C*K, L] of one volume in eval mode (projection input).
    MatX<S> eval_latents(const Volume<S>& vol, img::ConvWorkspace<S>& ws) const {
        FeatureMap<S> feat = backbone_.forward(vol, nullptr, ws);
        img::ProtoHeadsCache<S> heads;
        proto_.forward(feat, heads, ws);
        return heads.z;
    }

    PanicGrads<S> make_grads() const {
        PanicGrads<S> g;
        g.beta0 = VecX<S>::Zero(cfg_.classes);
        g.has_tab = cfg_.use_tabular;
        g.has_img = cfg_.use_image;
        if (cfg_.use_tabular) g.nam = nam_.make_grads();
        if (cfg_.use_image) {
            g.backbone = backbone_.make_grads();
            g.proto = proto_.make_grads();
        }
        return g;
    }

    // One training step over a batch: forward, loss, gradients.
    // image_phase=false freezes the image branch (gradients skipped there,
    // affine term still reported). The affine transform is shared batch-wide.
    // dropout_seed derives one private stream per sample.
    LossBreakdown train_batch(const std::vector<BatchSample<S>>& batch, const LossWeights& w,
                              std::uint64_t dropout_seed, const img::AffineSpec<S>& affine,
                              bool image_phase, PanicGrads<S>& grads) {
        const Index B = static_cast<Index>(batch.size());
        if (B == 0) throw InvalidInput("empty training batch");
        const double invB = 1.0 / static_cast<double>(B);
        const img::Mat3<S> aff_m = img::affine_matrix(affine);

        // one leading power-iteration step per spectral layer per step
        if (cfg_.use_tabular)
            for (Index n = 0; n < nam_.features(); ++n)
                if (nam_.spec(n).kind == tab::FeatureKind::Continuous) {
                    nam_.mlp(n).l1.power_step();
                    nam_.mlp(n).l2.power_step();
                    nam_.mlp(n).l3.power_step();
                }

        const int workers = worker_count();
        std::vector<PanicGrads<S>> slot_grads(static_cast<std::size_t>(workers));
        std::vector<LossBreakdown> slot_loss(static_cast<std::size_t>(workers));
        for (auto& g : slot_grads) g = make_grads();

        parallel_for(B, [&](long bi, int slot) {
            const auto& item = batch[static_cast<std::size_t>(bi)];
            auto& g = slot_grads[static_cast<std::size_t>(slot)];
            auto& loss = slot_loss[static_cast<std::size_t>(slot)];
            img::ConvWorkspace<S> ws;
            Rng drop_rng(hash_combine(dropout_seed, static_cast<std::uint64_t>(bi)));

            // ---- forwards ----
            tab::NamSampleCache<S> tc;
            MatX<S> masked_contribs;  // [N, C]
            if (cfg_.use_tabular) {
                const auto& ts = *item.tabular;
                tc.feats.resize(static_cast<std::size_t>(nam_.features()));
                masked_contribs.resize(nam_.features(), cfg_.classes);
                for (Index n = 0; n < nam_.features(); ++n) {
                    auto& fc = tc.feats[static_cast<std::size_t>(n)];
                    VecX<S> f = nam_.forward_train_feature(n, ts.values[n], ts.is_missing(n), fc,
                                                           &drop_rng, false);
                    masked_contribs.row(n) = f.cwiseProduct(fc.out_mask).transpose();
                    loss.tab += static_cast<double>(f.squaredNorm()) /
                                static_cast<double>(cfg_.classes) * invB;
                }
            }

            img::BackboneCache<S> bb1;
            img::ProtoHeadsCache<S> ph1;
            MatX<S> score_mask;  // [C, K] scaled output-dropout
            MatX<S> masked_scores;
            Volume<S> warped;
            img::BackboneCache<S> bb2;
            img::ProtoHeadsCache<S> ph2;
            MatX<S> warp_diff;  // warped original maps minus maps of warped input
            if (cfg_.use_image) {
                check_volume(*item.volume);
                FeatureMap<S> feat =
                    backbone_.forward(*item.volume, image_phase ? &bb1 : nullptr, ws);
                proto_.forward(feat, ph1, ws);
                score_mask.resize(cfg_.classes, cfg_.proto.per_class);
                const double p = cfg_.nam.output_dropout;
                for (Index c = 0; c < score_mask.rows(); ++c)
                    for (Index k = 0; k < score_mask.cols(); ++k)
                        score_mask(c, k) =
                            (p > 0.0 && drop_rng.bernoulli(p)) ? S(0) : S(1.0 / (1.0 - p));
                masked_scores = ph1.scores.cwiseProduct(score_mask);

                // affine-consistency pass on the warped input
                warped = img::warp_volume(*item.volume, aff_m);
                FeatureMap<S> feat2 = backbone_.forward(warped, image_phase ? &bb2 : nullptr, ws);
                proto_.forward(feat2, ph2, ws);
                FeatureMap<S> maps1{feat_grid_, ph1.sig};
                warp_diff = img::warp_feature_map(maps1, aff_m).chan - ph2.sig;

                // element means keep both L1 terms O(1) so the default
                // lambda weights balance against cross-entropy
                const double inv_elems = 1.0 / static_cast<double>(ph1.sig.size());
                loss.occurrence +=
                    static_cast<double>(img::occurrence_l1(ph1.sig)) * invB * inv_elems;
                loss.affine +=
                    static_cast<double>(warp_diff.cwiseAbs().sum()) * invB * inv_elems;
            }

            // ---- cross-entropy ----
            VecX<S> mu = assemble_logits<S>(beta0_, cfg_.use_tabular ? &masked_contribs : nullptr,
                                            cfg_.use_image ? &masked_scores : nullptr);
            VecX<S> pr = softmax(mu);
            const int y = item.label;
            loss.ce += -std::log(std::max(static_cast<double>(pr[y]), 1e-300)) * invB;

            VecX<S> dmu = pr;
            dmu[y] -= S(1);
            dmu *= S(invB);
            g.beta0 += dmu;

            // ---- cluster / separation on raw scores ----
            MatX<S> dscores;
            if (cfg_.use_image) {
                dscores = MatX<S>::Zero(cfg_.classes, cfg_.proto.per_class);
                Index kc = 0;
                loss.cluster += static_cast<double>(img::loss_cluster(ph1.scores, y, &kc)) * invB;
                if (cfg_.classes > 1) {
                    Index sc = 0, sk = 0;
                    loss.separation +=
                        static_cast<double>(img::loss_separation(ph1.scores, y, &sc, &sk)) * invB;
                    dscores(sc, sk) += S(w.separation * invB);
                }
                dscores(y, kc) -= S(w.cluster * invB);
            }

            // ---- tabular backward ----
            if (cfg_.use_tabular) {
                const S tab_coef = S(2.0 * w.tab * invB / static_cast<double>(cfg_.classes));
                for (Index n = 0; n < nam_.features(); ++n) {
                    const auto& fc = tc.feats[static_cast<std::size_t>(n)];
                    VecX<S> df = dmu.cwiseProduct(fc.out_mask) + tab_coef * fc.f;
                    nam_.backward_feature(n, df, fc, g.nam);
                }
            }

            // ---- image backward ----
            if (cfg_.use_image && image_phase) {
                // logits consumed masked scores; cluster/separation (already
                // in dscores) consumed the raw ones
                dscores += (dmu * VecX<S>::Ones(cfg_.proto.per_class).transpose())
                               .cwiseProduct(score_mask);

                const S inv_elems = S(1) / static_cast<S>(ph1.sig.size());
                MatX<S> dsig1 = MatX<S>::Constant(ph1.sig.rows(), ph1.sig.cols(),
                                                  S(w.occurrence * invB) * inv_elems);
                MatX<S> sgn = warp_diff.unaryExpr(
                    [](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
                img::warp_scatter_add<S>(MatX<S>(S(w.affine * invB) * inv_elems * sgn),
                                         feat_grid_, aff_m, dsig1);
                MatX<S> dsig2 = S(-w.affine * invB) * inv_elems * sgn;

                MatX<S> dfeat1 = MatX<S>::Zero(backbone_.out_channels(), feat_grid_.voxels());
                proto_.backward(ph1, &dscores, &dsig1, g.proto, dfeat1, ws);
                backbone_.backward(bb1, dfeat1, g.backbone, ws);

                MatX<S> dfeat2 = MatX<S>::Zero(backbone_.out_channels(), feat_grid_.voxels());
                proto_.backward(ph2, nullptr, &dsig2, g.proto, dfeat2, ws);
                backbone_.backward(bb2, dfeat2, g.backbone, ws);
            }
        });

        LossBreakdown total;
        grads.zero();
        for (int s = 0; s < workers; ++s) {
            total.add(slot_loss[static_cast<std::size_t>(s)]);
            grads.add(slot_grads[static_cast<std::size_t>(s)]);
        }
        total.finalize(w);
        if (!std::isfinite(total.total))
            throw NumericError("non-finite training loss");
        return total;
    }

    // Parameter registry. Visitor: (name, data pointer, size, decay, image_group).
    template <class Visitor>
    void visit_params(Visitor&& vis) {
        vis("bias", beta0_.data(), beta0_.size(), false, false);
        if (cfg_.use_tabular)
            nam_.visit_params([&](const std::string& n, S* p, Index sz, bool decay) {
                vis(n, p, sz, decay, false);
            });
        if (cfg_.use_image) {
            backbone_.visit_params([&](const std::string& n, S* p, Index sz, bool decay) {
                vis(n, p, sz, decay, true);
            });
            proto_.visit_params([&](const std::string& n, S* p, Index sz, bool decay) {
                vis(n, p, sz, decay, true);
            });
        }
    }

    template <class Visitor>
    void visit_grads(PanicGrads<S>& g, Visitor&& vis) {
        vis("bias", g.beta0.data(), g.beta0.size(), false, false);
        if (cfg_.use_tabular)
            nam_.visit_grads(g.nam, [&](const std::string& n, S* p, Index sz, bool decay) {
                vis(n, p, sz, decay, false);
            });
        if (cfg_.use_image) {
            backbone_.visit_grads(g.backbone,
                                  [&](const std::string& n, S* p, Index sz, bool decay) {
                                      vis(n, p, sz, decay, true);
                                  });
            proto_.visit_grads(g.proto, [&](const std::string& n, S* p, Index sz, bool decay) {
                vis(n, p, sz, decay, true);
            });
        }
    }

private:
    ModelConfig cfg_;
    VecX<S> beta0_;
    tab::NamFunctionBank<S> nam_;
    img::Backbone<S> backbone_;
    img::ProtoBranch<S> proto_;
    Grid3 feat_grid_{};
};

}  // namespace panic
