// Interpretation: closed-form log-odds curves (exact zero at the reference
// point, linear categorical form, in-operation softmax verification,
// background independence), order-invariant global importance, and the
// quantile helper.

#include <panic/interpret.hpp>
#include <panic/model.hpp>
#include <panic/rng.hpp>
#include <panic/train.hpp>

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace panic;

namespace {

template <class S>
PanicModel<S> tab_model(std::uint64_t seed) {
    ModelConfig mc;
    mc.classes = 3;
    mc.use_image = false;
    mc.nam.hidden = 4;
    Rng rng(seed);
    PanicModel<S> m(mc, rng);
    m.attach_tabular({{"genotype", tab::FeatureKind::Categorical, 0},
                      {"volume_score", tab::FeatureKind::Continuous, 1}},
                     rng);
    m.nam().refresh_eval_weights(100);
    return m;
}

template <class S>
PanicModel<S> fused_model(std::uint64_t seed) {
    ModelConfig mc;
    mc.classes = 3;
    mc.input_grid = Grid3::cube(4);
    mc.nam.hidden = 4;
    mc.backbone.stem_channels = 2;
    mc.backbone.stage_channels = {2, 2, 2, 2};
    mc.backbone.stage_blocks = {1, 1, 1, 1};
    mc.backbone.stage_strides = {1, 1, 1, 1};
    mc.backbone.stem_stride = 1;
    mc.proto.per_class = 2;
    mc.proto.latent = 8;
    mc.proto.hidden = 4;
    Rng rng(seed);
    PanicModel<S> m(mc, rng);
    m.attach_tabular({{"genotype", tab::FeatureKind::Categorical, 0},
                      {"volume_score", tab::FeatureKind::Continuous, 1}},
                     rng);
    m.nam().refresh_eval_weights(100);
    return m;
}

template <class S>
tab::StandardStats<S> two_feature_stats(S mean1, S sd1) {
    tab::StandardStats<S> st;
    st.names = {"genotype", "volume_score"};
    st.continuous = {0, 1};
    st.mean = VecX<S>::Zero(2);
    st.stddev = VecX<S>::Ones(2);
    st.mean[1] = mean1;
    st.stddev[1] = sd1;
    return st;
}

template <class S>
tab::TabularSample<S> background_sample(S code, S cont) {
    tab::TabularSample<S> bg;
    bg.values.resize(2);
    bg.values << code, cont;
    bg.missing = {0, 0};
    return bg;
}

}  // namespace

TEST_CASE("quantile interpolation matches the reference convention") {
    std::vector<double> v{3, 1, 4, 1, 5, 9, 2, 6};
    std::sort(v.begin(), v.end());
    CHECK(interpret::detail::quantile_sorted(v, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(interpret::detail::quantile_sorted(v, 0.5) == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(interpret::detail::quantile_sorted(v, 0.75) == doctest::Approx(5.25).epsilon(1e-15));
    CHECK(interpret::detail::quantile_sorted(v, 0.0) == 1.0);
    CHECK(interpret::detail::quantile_sorted(v, 1.0) == 9.0);
    CHECK(interpret::detail::quantile_sorted({}, 0.5) == 0.0);
}

TEST_CASE("categorical curves are linear differences anchored at code zero") {
    auto model = tab_model<double>(5);
    model.nam().beta(0) << 0.8, -0.3, 0.1;
    auto stats = two_feature_stats<double>(0.0, 1.0);
    auto bg = background_sample<double>(1.0, 0.4);

    std::vector<double> observed{0.0, 1.0, 2.0, 1.0, 1.0};
    auto curve = interpret::log_odds_curve<double>(model, stats, 0, 0, 2, observed, bg, nullptr);

    CHECK(curve.categorical);
    CHECK(curve.x_ref == 0.0);
    REQUIRE(curve.grid == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(curve.values[0] == 0.0);  // reference code: exactly zero
    // (beta^c - beta^ref) * x for the rest
    CHECK(curve.values[1] == doctest::Approx((0.8 - 0.1) * 1.0).epsilon(1e-14));
    CHECK(curve.values[2] == doctest::Approx((0.8 - 0.1) * 2.0).epsilon(1e-14));
    CHECK(curve.verify_max_err <= 1e-12);

    // code zero is prepended when absent from the observations
    std::vector<double> no_zero{1.0, 2.0};
    auto curve2 = interpret::log_odds_curve<double>(model, stats, 0, 1, 2, no_zero, bg, nullptr);
    REQUIRE(curve2.grid == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(curve2.values[0] == 0.0);

    // the annotated missing point is the indicator's own log-odds
    const auto& s = model.nam().missing_indicator(0);
    CHECK(curve.missing_value == doctest::Approx(s[0] - s[2]).epsilon(1e-14));
    CHECK(curve.has_missing_point);
}

TEST_CASE("continuous curves vanish at the observed mean") {
    auto model = tab_model<double>(6);
    auto stats = two_feature_stats<double>(2.0, 1.5);
    auto bg = background_sample<double>(0.0, 0.0);

    std::vector<double> observed{1.0, 3.0};  // mean 2.0 == grid midpoint
    auto curve = interpret::log_odds_curve<double>(model, stats, 1, 0, 1, observed, bg, nullptr);
    CHECK_FALSE(curve.categorical);
    CHECK(curve.x_ref == 2.0);
    REQUIRE(curve.grid.size() == 101);
    CHECK(curve.grid.front() == 1.0);
    CHECK(curve.grid.back() == 3.0);
    CHECK(curve.grid[50] == 2.0);
    CHECK(curve.values[50] == 0.0);  // f(x_ref) cancels exactly
    CHECK(curve.obs_min == 1.0);
    CHECK(curve.obs_median == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(curve.obs_max == 3.0);
}

TEST_CASE("the in-operation softmax check holds across random models") {
    std::vector<double> observed{-1.2, 0.3, 0.9, 2.4, -0.7};
    for (std::uint64_t seed = 30; seed < 34; ++seed) {
        auto dm = tab_model<double>(seed);
        auto dstats = two_feature_stats<double>(0.3, 1.1);
        auto dbg = background_sample<double>(2.0, -0.5);
        auto dc = interpret::log_odds_curve<double>(dm, dstats, 1, 2, 0, observed, dbg, nullptr);
        CHECK(dc.verify_max_err <= 1e-12);

        auto fm = tab_model<float>(seed);
        auto fstats = two_feature_stats<float>(0.3f, 1.1f);
        auto fbg = background_sample<float>(2.0f, -0.5f);
        auto fc = interpret::log_odds_curve<float>(fm, fstats, 1, 2, 0, observed, fbg, nullptr);
        CHECK(fc.verify_max_err <= 1e-6);
    }

    // fused model: the background image scores ride along in the assembly
    auto fm = fused_model<float>(77);
    Volume<float> vol = Volume<float>::zero(Grid3::cube(4));
    Rng vrng(78);
    for (Index i = 0; i < vol.data.size(); ++i) vol.data[i] = static_cast<float>(vrng.normal());
    img::ConvWorkspace<float> ws;
    EvalDetail<float> det;
    auto bg = background_sample<float>(1.0f, 0.2f);
    fm.eval_forward(&bg, &vol, det, ws);
    auto stats = two_feature_stats<float>(0.0f, 1.0f);
    auto curve =
        interpret::log_odds_curve(fm, stats, 1, 0, 2, observed, bg, &det.scores);
    CHECK(curve.verify_max_err <= 1e-6);
}

TEST_CASE("curves do not depend on the background sample") {
    auto model = tab_model<double>(41);
    auto stats = two_feature_stats<double>(0.5, 2.0);
    std::vector<double> observed{-2.0, -0.5, 1.0, 2.5};

    auto a = interpret::log_odds_curve<double>(model, stats, 1, 0, 1, observed,
                                       background_sample<double>(0.0, 0.0), nullptr);
    auto b = interpret::log_odds_curve<double>(model, stats, 1, 0, 1, observed,
                                       background_sample<double>(2.0, -3.7), nullptr);
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
    CHECK(a.missing_value == b.missing_value);
}

TEST_CASE("invalid curve requests are rejected") {
    auto model = tab_model<double>(42);
    auto stats = two_feature_stats<double>(0.0, 1.0);
    auto bg = background_sample<double>(0.0, 0.0);
    std::vector<double> observed{1.0, 2.0};

    CHECK_THROWS_AS(
        (void)interpret::log_odds_curve<double>(model, stats, 1, 1, 1, observed, bg, nullptr),
        ConfigError);
    CHECK_THROWS_AS(
        (void)interpret::log_odds_curve<double>(model, stats, 1, 0, 1, std::vector<double>{}, bg,
                                        nullptr),
        InvalidInput);
}

TEST_CASE("global importance is exactly order-invariant") {
    auto model = fused_model<float>(55);
    Rng rng(56);

    std::vector<Volume<float>> store;
    SplitView<float> split;
    for (int i = 0; i < 6; ++i) {
        Volume<float> v = Volume<float>::zero(Grid3::cube(4));
        for (Index j = 0; j < v.data.size(); ++j) v.data[j] = static_cast<float>(rng.normal());
        store.push_back(std::move(v));
        tab::TabularSample<float> ts;
        ts.values.resize(2);
        ts.values << static_cast<float>(rng.uniform_index(3)), static_cast<float>(rng.normal());
        ts.missing = {0, static_cast<std::uint8_t>(i == 2 ? 1 : 0)};
        split.tabs.push_back(ts);
        split.labels.push_back(i % 3);
    }
    for (auto& v : store) split.vols.push_back(&v);

    SplitView<float> reversed;
    for (int i = 5; i >= 0; --i) {
        reversed.tabs.push_back(split.tabs[static_cast<std::size_t>(i)]);
        reversed.vols.push_back(split.vols[static_cast<std::size_t>(i)]);
        reversed.labels.push_back(split.labels[static_cast<std::size_t>(i)]);
    }

    auto fwd = interpret::global_importance(model, split);
    auto rev = interpret::global_importance(model, reversed);
    REQUIRE(fwd.size() == rev.size());
    for (std::size_t r = 0; r < fwd.size(); ++r) {
        CHECK(fwd[r].label == rev[r].label);
        CHECK(fwd[r].overall == rev[r].overall);  // sorted-before-sum: exact
        REQUIRE(fwd[r].per_class.size() == rev[r].per_class.size());
        for (std::size_t c = 0; c < fwd[r].per_class.size(); ++c)
            CHECK(fwd[r].per_class[c] == rev[r].per_class[c]);
    }

    // row layout: features, then combined image, then one row per prototype
    REQUIRE(fwd.size() == 2 + 1 + 2);
    CHECK(fwd[0].label == "genotype");
    CHECK_FALSE(fwd[0].image);
    CHECK(fwd[2].label == "image(combined)");
    CHECK(fwd[2].image);
    CHECK(fwd[2].proto_k == -1);
    CHECK(fwd[3].label == "image(prototype 0)");
    CHECK(fwd[3].proto_k == 0);
    CHECK(fwd[4].label == "image(prototype 1)");

    // single-sample split: rows reduce to that sample's absolute entries
    SplitView<float> one;
    one.tabs.push_back(split.tabs[0]);
    one.vols.push_back(split.vols[0]);
    one.labels.push_back(split.labels[0]);
    img::ConvWorkspace<float> ws;
    EvalDetail<float> det;
    model.eval_forward(&one.tabs[0], one.vols[0], det, ws);
    auto imp = interpret::global_importance(model, one);
    for (int c = 0; c < 3; ++c) {
        CHECK(imp[0].per_class[static_cast<std::size_t>(c)] ==
              doctest::Approx(std::abs(double(det.contribs(0, c)))).epsilon(1e-12));
        CHECK(imp[2].per_class[static_cast<std::size_t>(c)] ==
              doctest::Approx(std::abs(double(det.scores.row(c).sum()))).epsilon(1e-12));
        CHECK(imp[3].per_class[static_cast<std::size_t>(c)] ==
              doctest::Approx(std::abs(double(det.scores(c, 0)))).epsilon(1e-12));
    }

    SplitView<float> empty;
    CHECK_THROWS_AS((void)interpret::global_importance(model, empty), InvalidInput);
}
