//
// Explanations with exact additivity, global importance tables, and
// per-feature log-odds curves with an in-operation closed-form check.
//

#pragma once

#include <panic/model.hpp>
#include <panic/parallel.hpp>
#include <panic/train.hpp>
#include <panic/types.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace panic::interpret {

template <class S>
struct Explanation {
    std::string sample_id;
    VecX<S> bias;
    MatX<S> contribs;  // [N, C], empty when tabular off
    MatX<S> scores;    // [C, K], empty when image off
    VecX<S> logits;        // from the model forward
    VecX<S> reconstructed; // bias + contributions + scores, same summation order
    VecX<S> probs;
    int predicted = 0;
    int true_label = -1;
    int degenerate_latents = 0;

    double fidelity_residual() const {
        return static_cast<double>((logits - reconstructed).cwiseAbs().maxCoeff());
    }
};

template <class S>
Explanation<S> explain_local(const PanicModel<S>& model, const std::string& sample_id,
                             const tab::TabularSample<S>* sample, const Volume<S>* vol,
                             int true_label = -1) {
    img::ConvWorkspace<S> ws;
    EvalDetail<S> det;
    model.eval_forward(sample, vol, det, ws);
    Explanation<S> ex;
    ex.sample_id = sample_id;
    ex.bias = model.bias();
    ex.contribs = det.contribs;
    ex.scores = det.scores;
    ex.logits = det.logits;
    ex.reconstructed = assemble_logits<S>(ex.bias, ex.contribs.size() ? &ex.contribs : nullptr,
                                          ex.scores.size() ? &ex.scores : nullptr);
    ex.probs = det.probs;
    ex.predicted = predict_class(det.logits);
    ex.true_label = true_label;
    ex.degenerate_latents = det.degenerate_latents;
    return ex;
}

// One row of the global importance table. proto_k == -1 marks either a
// tabular feature or the combined image entry (see image flag).
struct ImportanceEntry {
    std::string label;
    bool image = false;
    int proto_k = -1;
    std::vector<double> per_class;  // mean |contribution| per class
    double overall = 0.0;           // mean over classes
};

// Mean absolute contribution per function per class over a split. Sums are
// taken over sorted values so the result is independent of sample order.
template <class S>
std::vector<ImportanceEntry> global_importance(const PanicModel<S>& model,
                                               const SplitView<S>& split) {
    const auto& cfg = model.config();
    const std::size_t n = split.size();
    if (n == 0) throw InvalidInput("empty split for importance");
    const int C = cfg.classes;

    std::size_t n_rows = 0;
    std::vector<ImportanceEntry> entries;
    if (cfg.use_tabular) {
        for (Index f = 0; f < model.nam().features(); ++f) {
            ImportanceEntry e;
            e.label = model.nam().spec(f).name;
            entries.push_back(std::move(e));
        }
    }
    if (cfg.use_image) {
        ImportanceEntry comb;
        comb.label = "image(combined)";
        comb.image = true;
        entries.push_back(std::move(comb));
        for (int k = 0; k < cfg.proto.per_class; ++k) {
            ImportanceEntry e;
            e.label = "image(prototype " + std::to_string(k) + ")";
            e.image = true;
            e.proto_k = k;
            entries.push_back(std::move(e));
        }
    }
    n_rows = entries.size();

    // per (row, class) absolute contributions for every sample
    std::vector<std::vector<double>> vals(n_rows * static_cast<std::size_t>(C));
    for (auto& v : vals) v.resize(n);

    parallel_for(static_cast<long>(n), [&](long i, int) {
        img::ConvWorkspace<S> ws;
        EvalDetail<S> det;
        const tab::TabularSample<S>* ts =
            cfg.use_tabular ? &split.tabs[static_cast<std::size_t>(i)] : nullptr;
        const Volume<S>* vol = cfg.use_image ? split.vols[static_cast<std::size_t>(i)] : nullptr;
        model.eval_forward(ts, vol, det, ws);
        std::size_t row = 0;
        if (cfg.use_tabular)
            for (Index f = 0; f < det.contribs.rows(); ++f, ++row)
                for (int c = 0; c < C; ++c)
                    vals[row * C + c][static_cast<std::size_t>(i)] =
                        std::abs(static_cast<double>(det.contribs(f, c)));
        if (cfg.use_image) {
            for (int c = 0; c < C; ++c)
                vals[row * C + c][static_cast<std::size_t>(i)] =
                    std::abs(static_cast<double>(det.scores.row(c).sum()));
            ++row;
            for (int k = 0; k < cfg.proto.per_class; ++k, ++row)
                for (int c = 0; c < C; ++c)
                    vals[row * C + c][static_cast<std::size_t>(i)] =
                        std::abs(static_cast<double>(det.scores(c, k)));
        }
    });

    for (std::size_t row = 0; row < n_rows; ++row) {
        auto& e = entries[row];
        e.per_class.resize(static_cast<std::size_t>(C));
        double total = 0.0;
        for (int c = 0; c < C; ++c) {
            auto& v = vals[row * C + c];
            std::sort(v.begin(), v.end());
            double sum = 0.0;
            for (double x : v) sum += x;
            e.per_class[static_cast<std::size_t>(c)] = sum / static_cast<double>(n);
            total += e.per_class[static_cast<std::size_t>(c)];
        }
        e.overall = total / C;
    }
    return entries;
}

struct LogOddsCurve {
    std::string feature;
    Index feature_index = 0;
    int cls = 0;
    int ref_cls = 0;
    bool categorical = false;
    double x_ref = 0.0;  // raw units
    std::vector<double> grid;    // raw units
    std::vector<double> values;  // log-odds ratio vs (x_ref, ref class)
    // observed-distribution overlay
    double obs_min = 0, obs_q1 = 0, obs_median = 0, obs_q3 = 0, obs_max = 0;
    bool has_missing_point = false;
    double missing_value = 0.0;  // log-odds of the missing indicator
    double verify_max_err = 0.0; // closed form vs softmax-ratio check
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// f_n(x) per class in raw units, standardizing on the fly.
template <class S>
VecX<double> feature_value_raw(const PanicModel<S>& model, const tab::StandardStats<S>& stats,
                               Index n, double raw_x) {
    S x = static_cast<S>(raw_x);
    if (stats.continuous[static_cast<std::size_t>(n)])
        x = (x - stats.mean[n]) / stats.stddev[n];
    return model.nam().feature_contribution(n, x, false).template cast<double>();
}

// Closed-form log-odds curve for feature n, class cls against the reference
// class: [f^c(x) - f^c(x')] - [f^ref(x) - f^ref(x')]. Verified in-operation
// against the direct softmax-probability ratio on a background sample
// (logits assembled in double so the additive cancellation is exact).
template <class S>
LogOddsCurve log_odds_curve(const PanicModel<S>& model, const tab::StandardStats<S>& stats,
                            Index n, int cls, int ref_cls,
                            const std::vector<double>& observed_raw,
                            const tab::TabularSample<S>& background,
                            const MatX<S>* background_scores, int grid_points = 101) {
    if (cls == ref_cls)
        throw ConfigError("log-odds curve requested for the reference class itself");
    if (!model.config().use_tabular) throw ConfigError("log-odds curves need the tabular branch");
    if (observed_raw.empty())
        throw InvalidInput("no observed values for feature '" + model.nam().spec(n).name + "'");

    LogOddsCurve curve;
    curve.feature = model.nam().spec(n).name;
    curve.feature_index = n;
    curve.cls = cls;
    curve.ref_cls = ref_cls;
    curve.categorical = model.nam().spec(n).kind == tab::FeatureKind::Categorical;

    std::vector<double> sorted = observed_raw;
    std::sort(sorted.begin(), sorted.end());
    curve.obs_min = sorted.front();
    curve.obs_max = sorted.back();
    curve.obs_q1 = detail::quantile_sorted(sorted, 0.25);
    curve.obs_median = detail::quantile_sorted(sorted, 0.5);
    curve.obs_q3 = detail::quantile_sorted(sorted, 0.75);

    if (curve.categorical) {
        curve.x_ref = 0.0;
        for (std::size_t i = 0; i < sorted.size(); ++i)
            if (i == 0 || sorted[i] != sorted[i - 1]) curve.grid.push_back(sorted[i]);
        if (curve.grid.empty() || curve.grid.front() != 0.0)
            curve.grid.insert(curve.grid.begin(), 0.0);
    } else {
        double mean = 0.0;
        for (double v : observed_raw) mean += v;
        curve.x_ref = mean / static_cast<double>(observed_raw.size());
        const double lo = curve.obs_min, hi = curve.obs_max;
        for (int i = 0; i < grid_points; ++i)
            curve.grid.push_back(lo + (hi - lo) * static_cast<double>(i) /
                                          static_cast<double>(grid_points - 1));
    }

    const VecX<double> f_ref_point = feature_value_raw(model, stats, n, curve.x_ref);
    for (double x : curve.grid) {
        const VecX<double> f = feature_value_raw(model, stats, n, x);
        curve.values.push_back((f[cls] - f_ref_point[cls]) - (f[ref_cls] - f_ref_point[ref_cls]));
    }

    // missing-value indicator as an annotated point
    const VecX<double> s = model.nam()
                               .missing_indicator(n)
                               .template cast<double>();
    curve.has_missing_point = true;
    curve.missing_value =
        (s[cls] - f_ref_point[cls]) - (s[ref_cls] - f_ref_point[ref_cls]);

    // In-operation check: four softmax evaluations on the background sample.
    // Double-precision assembly keeps the additive cancellation exact.
    {
        MatX<double> base(model.nam().features(), model.config().classes);
        for (Index i = 0; i < model.nam().features(); ++i)
            base.row(i) = model.nam()
                              .feature_contribution(i, background.values[i],
                                                    background.is_missing(i))
                              .template cast<double>()
                              .transpose();
        VecX<double> bias = model.bias().template cast<double>();
        MatX<double> scores;
        if (background_scores) scores = background_scores->template cast<double>();

        auto log_odds_at = [&](double raw_x) {
            MatX<double> contribs = base;
            contribs.row(n) = feature_value_raw(model, stats, n, raw_x).transpose();
            VecX<double> mu = assemble_logits<double>(
                bias, &contribs, background_scores ? &scores : nullptr);
            VecX<double> p = softmax<double>(mu);
            return std::log(p[cls]) - std::log(p[ref_cls]);
        };
        const double anchor = log_odds_at(curve.x_ref);
        const std::size_t checks = std::min<std::size_t>(curve.grid.size(), 7);
        for (std::size_t i = 0; i < checks; ++i) {
            const std::size_t gi = i * (curve.grid.size() - 1) / std::max<std::size_t>(1, checks - 1);
            const double direct = log_odds_at(curve.grid[gi]) - anchor;
            curve.verify_max_err =
                std::max(curve.verify_max_err, std::abs(direct - curve.values[gi]));
        }
        if (curve.verify_max_err > 1e-6)
            throw NumericError("log-odds closed form deviates from direct evaluation by " +
                               std::to_string(curve.verify_max_err));
    }
    return curve;
}

}  // namespace panic::interpret
