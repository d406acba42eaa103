//
// Training loop: alternating parameter groups per epoch, triangular cyclic
// learning rate, prototype projection at every epoch end followed by
// validation, best-validation snapshotting, and balanced-accuracy evaluation.
//

#pragma once

#include <panic/model.hpp>
#include <panic/optim.hpp>
#include <panic/parallel.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace panic {

struct TrainConfig {
    double lr = 0.002;
    double weight_decay = 0.0005;
    double cyclic_low = 0.1;
    long cyclic_period = 10;
    long epochs = 16;
    long batch_size = 32;
    long alternation_cadence = 1;  // epochs per phase before flipping
    long warmup_epochs = 0;        // backbone + linear-head warm-up

    void validate() const {
        if (lr <= 0 || weight_decay < 0) throw ConfigError("learning rates must be positive");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch size must be >= 1");
        if (alternation_cadence < 1) throw ConfigError("alternation cadence must be >= 1");
        if (cyclic_low <= 0 || cyclic_low > 1) throw ConfigError("cyclic low factor must be in (0,1]");
        if (warmup_epochs < 0) throw ConfigError("warm-up epochs must be >= 0");
    }
};

// One split's worth of model-ready data (tabular already standardized).
template <class S>
struct SplitView {
    std::vector<tab::TabularSample<S>> tabs;  // empty when tabular branch off
    std::vector<const Volume<S>*> vols;       // empty when image branch off
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

template <class S>
struct EvalResult {
    double bacc = 0.0;
    Eigen::MatrixXi confusion;  // rows: true class, cols: predicted
    std::vector<int> predictions;
    MatX<S> logits;  // [N, C]
};

// Mean per-class recall over classes that appear in the split.
inline double balanced_accuracy(const Eigen::MatrixXi& confusion) {
    double acc = 0.0;
    int present = 0;
    for (Index c = 0; c < confusion.rows(); ++c) {
        const long row = confusion.row(c).sum();
        if (row == 0) continue;
        acc += static_cast<double>(confusion(c, c)) / static_cast<double>(row);
        ++present;
    }
    return present ? acc / present : 0.0;
}

template <class S>
EvalResult<S> evaluate_split(const PanicModel<S>& model, const SplitView<S>& split) {
    const auto& cfg = model.config();
    const Index n = static_cast<Index>(split.size());
    EvalResult<S> res;
    res.predictions.assign(static_cast<std::size_t>(n), 0);
    res.logits.resize(n, cfg.classes);
    parallel_for(n, [&](long i, int) {
        img::ConvWorkspace<S> ws;
        EvalDetail<S> det;
        const tab::TabularSample<S>* ts =
            cfg.use_tabular ? &split.tabs[static_cast<std::size_t>(i)] : nullptr;
        const Volume<S>* vol = cfg.use_image ? split.vols[static_cast<std::size_t>(i)] : nullptr;
        model.eval_forward(ts, vol, det, ws);
        res.logits.row(i) = det.logits.transpose();
        res.predictions[static_cast<std::size_t>(i)] = predict_class(det.logits);
    });
    res.confusion = Eigen::MatrixXi::Zero(cfg.classes, cfg.classes);
    for (Index i = 0; i < n; ++i)
        res.confusion(split.labels[static_cast<std::size_t>(i)],
                      res.predictions[static_cast<std::size_t>(i)]) += 1;
    res.bacc = balanced_accuracy(res.confusion);
    return res;
}

// Eval-mode pooled latents for every sample (projection input).
template <class S>
std::vector<MatX<S>> eval_latents_all(const PanicModel<S>& model,
                                      const std::vector<const Volume<S>*>& vols) {
    std::vector<MatX<S>> out(vols.size());
    parallel_for(static_cast<long>(vols.size()), [&](long i, int) {
        img::ConvWorkspace<S> ws;
        out[static_cast<std::size_t>(i)] = model.eval_latents(*vols[static_cast<std::size_t>(i)], ws);
    });
    return out;
}

struct EpochRecord {
    long epoch = 0;
    bool image_phase = true;
    double lr_factor = 1.0;
    LossBreakdown loss;  // epoch mean per sample
    double val_bacc = 0.0;
    long projection_event = -1;  // monotonic event ids; projection < validation
    long validation_event = -1;
    double min_projection_similarity = 0.0;
    bool is_best = false;
};

struct TrainOutcome {
    std::vector<EpochRecord> history;
    double best_val_bacc = -1.0;
    long best_epoch = -1;
    img::ProjectionReport projection;  // report of the retained snapshot
    int degenerate_latents = 0;
};

namespace detail {

template <class S>
struct Snapshot {
    std::vector<VecX<S>> params;
    std::vector<VecX<S>> power;
};

template <class S>
Snapshot<S> take_snapshot(PanicModel<S>& model) {
    Snapshot<S> s;
    model.visit_params([&](const std::string&, S* p, Index n, bool, bool) {
        s.params.emplace_back(Eigen::Map<VecX<S>>(p, n));
    });
    if (model.config().use_tabular)
        model.nam().visit_power_state(
            [&](const std::string&, const VecX<S>& v) { s.power.push_back(v); });
    return s;
}

template <class S>
void restore_snapshot(PanicModel<S>& model, const Snapshot<S>& s) {
    std::size_t i = 0;
    model.visit_params([&](const std::string&, S* p, Index n, bool, bool) {
        Eigen::Map<VecX<S>>(p, n) = s.params[i++];
    });
    if (model.config().use_tabular) {
        std::size_t j = 0;
        model.nam().visit_power_state(
            [&](const std::string&, VecX<S>& v) { v = s.power[j++]; });
        model.nam().refresh_from_power_state();
    }
}

}  // namespace detail

// Optional pre-stage: fit the backbone with a temporary linear head on the
// flattened feature map, then discard the head. Keeping the head
// position-aware lets backbone cells stay local detectors instead of
// having to smear location into every channel.
template <class S>
void warmup_backbone(PanicModel<S>& model, const SplitView<S>& train, const TrainConfig& tc,
                     std::uint64_t root_seed, long fold) {
    if (tc.warmup_epochs <= 0 || !model.config().use_image) return;
    const int C = model.config().classes;
    const Index R = model.backbone().out_channels();
    const Index V = model.feature_grid().voxels();

    Rng init_rng(substream_seed(root_seed, "warmup-init", static_cast<std::uint64_t>(fold)));
    MatX<S> head_w(C, R * V);
    init_rng.fill_normal<S>(head_w, 0.0, std::sqrt(2.0 / static_cast<double>(R * V)));
    VecX<S> head_b = VecX<S>::Zero(C);
    MatX<S> g_head_w = MatX<S>::Zero(C, R * V);
    VecX<S> g_head_b = VecX<S>::Zero(C);
    auto bb_grads = model.backbone().make_grads();

    std::vector<ParamBinding<S>> bindings;
    std::vector<S*> grad_ptrs;
    model.backbone().visit_params([&](const std::string& n, S* p, Index sz, bool decay) {
        bindings.push_back(ParamBinding<S>{n, p, nullptr, sz, decay, false});
    });
    std::size_t bi = 0;
    model.backbone().visit_grads(bb_grads, [&](const std::string&, S* g, Index, bool) {
        bindings[bi++].grad = g;
    });
    bindings.push_back(ParamBinding<S>{"warmup.head.w", head_w.data(), g_head_w.data(),
                                       head_w.size(), true, false});
    bindings.push_back(ParamBinding<S>{"warmup.head.b", head_b.data(), g_head_b.data(),
                                       head_b.size(), false, false});
    AdamW<S> opt(std::move(bindings), {tc.lr, tc.weight_decay});

    const long n = static_cast<long>(train.size());
    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    const int workers = worker_count();

    for (long e = 0; e < tc.warmup_epochs; ++e) {
        Rng shuffle_rng(substream_seed(root_seed, "warmup-shuffle",
                                       static_cast<std::uint64_t>(fold),
                                       static_cast<std::uint64_t>(e)));
        shuffle_rng.shuffle(order);
        for (long start = 0; start < n; start += tc.batch_size) {
            const long stop = std::min(n, start + tc.batch_size);
            const long bsz = stop - start;
            const double invB = 1.0 / static_cast<double>(bsz);
            std::vector<img::BackboneGrads<S>> slot_bb(static_cast<std::size_t>(workers));
            std::vector<MatX<S>> slot_hw(static_cast<std::size_t>(workers));
            std::vector<VecX<S>> slot_hb(static_cast<std::size_t>(workers));
            for (int s = 0; s < workers; ++s) {
                slot_bb[static_cast<std::size_t>(s)] = model.backbone().make_grads();
                slot_hw[static_cast<std::size_t>(s)] = MatX<S>::Zero(C, R * V);
                slot_hb[static_cast<std::size_t>(s)] = VecX<S>::Zero(C);
            }
            parallel_for(bsz, [&](long b, int slot) {
                const long idx = order[static_cast<std::size_t>(start + b)];
                img::ConvWorkspace<S> ws;
                img::BackboneCache<S> cache;
                FeatureMap<S> feat = model.backbone().forward(
                    *train.vols[static_cast<std::size_t>(idx)], &cache, ws);
                Eigen::Map<const VecX<S>> flat(feat.chan.data(), feat.chan.size());
                VecX<S> mu = head_w * flat + head_b;
                VecX<S> pr = softmax(mu);
                VecX<S> dmu = pr;
                dmu[train.labels[static_cast<std::size_t>(idx)]] -= S(1);
                dmu *= S(invB);
                auto& hw = slot_hw[static_cast<std::size_t>(slot)];
                auto& hb = slot_hb[static_cast<std::size_t>(slot)];
                hw.noalias() += dmu * flat.transpose();
                hb += dmu;
                VecX<S> dflat = head_w.transpose() * dmu;
                MatX<S> dfeat = Eigen::Map<const MatX<S>>(dflat.data(), feat.chan.rows(),
                                                          feat.chan.cols());
                model.backbone().backward(cache, dfeat, slot_bb[static_cast<std::size_t>(slot)],
                                          ws);
            });
            bb_grads.zero();
            g_head_w.setZero();
            g_head_b.setZero();
            for (int s = 0; s < workers; ++s) {
                bb_grads.add(slot_bb[static_cast<std::size_t>(s)]);
                g_head_w += slot_hw[static_cast<std::size_t>(s)];
                g_head_b += slot_hb[static_cast<std::size_t>(s)];
            }
            opt.step(1.0, true);
        }
    }
}

// Full fit on one train/val split. The best post-projection-validation
// snapshot is applied to the model before returning.
template <class S>
TrainOutcome train_model(PanicModel<S>& model, const SplitView<S>& train,
                         const SplitView<S>& val, const TrainConfig& tc, const LossWeights& lw,
                         std::uint64_t root_seed, long fold) {
    tc.validate();
    lw.validate();
    const auto& cfg = model.config();
    const long n = static_cast<long>(train.size());
    if (n == 0) throw DataError("empty training split");
    for (int c = 0; c < cfg.classes; ++c) {
        if (std::find(train.labels.begin(), train.labels.end(), c) == train.labels.end())
            throw DataError("training split has no samples of class index " + std::to_string(c));
    }

    warmup_backbone(model, train, tc, root_seed, fold);

    auto grads = model.make_grads();
    AdamW<S> opt(bind_params(model, grads), {tc.lr, tc.weight_decay});

    std::vector<long> order(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainOutcome out;
    detail::Snapshot<S> best;
    img::ProjectionReport best_proj;
    long events = 0;

    for (long e = 0; e < tc.epochs; ++e) {
        const bool image_phase = ((e / tc.alternation_cadence) % 2) == 0;
        const double lrf = cyclic_lr_factor(e, tc.cyclic_period, tc.cyclic_low);

        Rng shuffle_rng(substream_seed(root_seed, "shuffle", static_cast<std::uint64_t>(fold),
                                       static_cast<std::uint64_t>(e)));
        shuffle_rng.shuffle(order);

        LossBreakdown sums;
        long step = 0;
        for (long start = 0; start < n; start += tc.batch_size, ++step) {
            const long stop = std::min(n, start + tc.batch_size);
            std::vector<BatchSample<S>> batch;
            batch.reserve(static_cast<std::size_t>(stop - start));
            for (long i = start; i < stop; ++i) {
                const long idx = order[static_cast<std::size_t>(i)];
                BatchSample<S> bs;
                if (cfg.use_tabular) bs.tabular = &train.tabs[static_cast<std::size_t>(idx)];
                if (cfg.use_image) bs.volume = train.vols[static_cast<std::size_t>(idx)];
                bs.label = train.labels[static_cast<std::size_t>(idx)];
                batch.push_back(bs);
            }
            Rng affine_rng(substream_seed(root_seed, "affine", static_cast<std::uint64_t>(fold),
                                          static_cast<std::uint64_t>(e),
                                          static_cast<std::uint64_t>(step)));
            const auto aff = img::random_affine<S>(affine_rng);
            const std::uint64_t drop_seed =
                substream_seed(root_seed, "dropout", static_cast<std::uint64_t>(fold),
                               static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(step));
            LossBreakdown bd = model.train_batch(batch, lw, drop_seed, aff, image_phase, grads);
            opt.step(lrf, image_phase);
            if (cfg.use_image && image_phase) model.proto().renorm_prototypes();

            const double f = static_cast<double>(stop - start);
            LossBreakdown scaled = bd;
            scaled.ce *= f;
            scaled.tab *= f;
            scaled.cluster *= f;
            scaled.separation *= f;
            scaled.occurrence *= f;
            scaled.affine *= f;
            sums.add(scaled);
        }

        EpochRecord rec;
        rec.epoch = e;
        rec.image_phase = image_phase;
        rec.lr_factor = lrf;
        rec.loss = sums;
        const double invN = 1.0 / static_cast<double>(n);
        rec.loss.ce *= invN;
        rec.loss.tab *= invN;
        rec.loss.cluster *= invN;
        rec.loss.separation *= invN;
        rec.loss.occurrence *= invN;
        rec.loss.affine *= invN;
        rec.loss.finalize(lw);

        if (cfg.use_tabular) model.nam().refresh_eval_weights(50);

        img::ProjectionReport proj;
        if (cfg.use_image) {
            auto latents = eval_latents_all(model, train.vols);
            proj = img::project_prototypes(model.proto(), latents, train.labels);
            rec.projection_event = ++events;
            rec.min_projection_similarity = 1.0;
            for (const auto& pe : proj.entries)
                rec.min_projection_similarity = std::min(rec.min_projection_similarity,
                                                         pe.similarity);
        } else {
            rec.projection_event = ++events;  // no-op projection point
            rec.min_projection_similarity = 1.0;
        }

        EvalResult<S> v = evaluate_split(model, val);
        rec.validation_event = ++events;
        rec.val_bacc = v.bacc;

        // Ties go to the later epoch: equal validation accuracy with more
        // training means better-settled prototypes and occurrence maps.
        if (v.bacc >= out.best_val_bacc) {
            out.best_val_bacc = v.bacc;
            out.best_epoch = e;
            best = detail::take_snapshot(model);
            best_proj = proj;
            rec.is_best = true;
        }
        out.history.push_back(rec);
    }

    detail::restore_snapshot(model, best);
    out.projection = best_proj;
    return out;
}

}  // namespace panic
