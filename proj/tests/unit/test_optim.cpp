// Optimizer: frozen two-step reference values for the decoupled-decay
// adaptive update, the triangular learning-rate schedule, group freezing
// semantics (including the step counter), and registry-zip validation.

#include <panic/model.hpp>
#include <panic/optim.hpp>
#include <panic/rng.hpp>

#include <doctest.h>

#include <vector>

using namespace panic;

namespace {

AdamW<double>::Hyper oracle_hyper() {
    AdamW<double>::Hyper h;
    h.lr = 0.01;
    h.weight_decay = 0.1;
    return h;  // beta1 0.9, beta2 0.999, eps 1e-8
}

}  // namespace

TEST_CASE("two steps reproduce frozen reference values") {
    double p_decay = 0.5, p_free = -0.3;
    double g_decay = 0.0, g_free = 0.0;
    std::vector<ParamBinding<double>> bs{
        ParamBinding<double>{"a", &p_decay, &g_decay, 1, true, false},
        ParamBinding<double>{"b", &p_free, &g_free, 1, false, false}};
    AdamW<double> opt(bs, oracle_hyper());

    g_decay = g_free = 0.2;
    opt.step(1.0, true);
    CHECK(p_decay == doctest::Approx(0.48950000049999998).epsilon(1e-13));
    CHECK(p_free == doctest::Approx(-0.30999999950000001).epsilon(1e-13));

    g_decay = g_free = -0.1;
    opt.step(1.0, true);
    CHECK(p_decay == doctest::Approx(0.48634713027136756).epsilon(1e-13));
    CHECK(p_free == doctest::Approx(-0.31266336972813241).epsilon(1e-13));
}

TEST_CASE("decay acts even at zero gradient; zero factor freezes values") {
    double p_decay = 2.0, p_free = 2.0;
    double g0 = 0.0, g1 = 0.0;
    std::vector<ParamBinding<double>> bs{
        ParamBinding<double>{"a", &p_decay, &g0, 1, true, false},
        ParamBinding<double>{"b", &p_free, &g1, 1, false, false}};
    AdamW<double> opt(bs, oracle_hyper());
    opt.step(1.0, true);
    CHECK(p_decay == doctest::Approx(2.0 * (1.0 - 0.01 * 0.1)).epsilon(1e-15));
    CHECK(p_free == 2.0);  // zero gradient, no decay: bit-identical

    AdamW<double> opt2(bs, oracle_hyper());
    const double before = p_decay;
    g0 = g1 = 5.0;
    opt2.step(0.0, true);  // zero learning rate: nothing moves
    CHECK(p_decay == before);
    CHECK(p_free == 2.0);
}

TEST_CASE("triangular schedule hits the frozen waypoints") {
    CHECK(cyclic_lr_factor(0, 10, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(cyclic_lr_factor(1, 10, 0.1) == doctest::Approx(0.28).epsilon(1e-12));
    CHECK(cyclic_lr_factor(5, 10, 0.1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cyclic_lr_factor(9, 10, 0.1) == doctest::Approx(0.28).epsilon(1e-12));
    CHECK(cyclic_lr_factor(10, 10, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(cyclic_lr_factor(17, 10, 0.1) == cyclic_lr_factor(7, 10, 0.1));
    CHECK(cyclic_lr_factor(3, 1, 0.1) == 1.0);
    CHECK(cyclic_lr_factor(3, 0, 0.1) == 1.0);
}

TEST_CASE("frozen image group keeps its step counter") {
    // image parameter stepped once after two frozen rounds must match a
    // fresh optimizer's very first step, not a third step
    double p_img = 0.7, p_tab = 0.7;
    double g_img = 0.0, g_tab = 0.0;
    std::vector<ParamBinding<double>> bs{
        ParamBinding<double>{"t", &p_tab, &g_tab, 1, false, false},
        ParamBinding<double>{"i", &p_img, &g_img, 1, false, true}};
    AdamW<double> opt(bs, oracle_hyper());

    g_img = g_tab = 0.3;
    opt.step(1.0, false);
    CHECK(p_img == 0.7);  // untouched while frozen
    g_img = g_tab = -0.2;
    opt.step(1.0, false);
    CHECK(p_img == 0.7);
    g_img = g_tab = 0.15;
    opt.step(1.0, true);

    double q = 0.7, gq = 0.15;
    std::vector<ParamBinding<double>> ref{ParamBinding<double>{"q", &q, &gq, 1, false, false}};
    AdamW<double> fresh(ref, oracle_hyper());
    fresh.step(1.0, true);
    CHECK(p_img == q);  // bit-identical: the frozen rounds advanced nothing

    // while the unfrozen parameter took three genuine steps
    double r = 0.7, gr = 0.0;
    std::vector<ParamBinding<double>> ref3{ParamBinding<double>{"r", &r, &gr, 1, false, false}};
    AdamW<double> fresh3(ref3, oracle_hyper());
    gr = 0.3;
    fresh3.step(1.0, true);
    gr = -0.2;
    fresh3.step(1.0, true);
    gr = 0.15;
    fresh3.step(1.0, true);
    CHECK(p_tab == r);
}

TEST_CASE("binding zip validates names and sizes") {
    ModelConfig mc;
    mc.classes = 3;
    mc.use_image = false;
    mc.nam.hidden = 4;
    Rng rng(1);
    PanicModel<double> model(mc, rng);
    model.attach_tabular({{"age", tab::FeatureKind::Continuous, 0},
                          {"apoe", tab::FeatureKind::Categorical, 1}},
                         rng);
    auto grads = model.make_grads();
    auto bs = bind_params(model, grads);
    CHECK(bs.size() > 2);
    for (const auto& b : bs) {
        CHECK(b.param != nullptr);
        CHECK(b.grad != nullptr);
        CHECK(b.size > 0);
        CHECK_FALSE(b.image);  // image branch is off
    }

    // gradients from a differently-sized bank do not zip
    ModelConfig mc2 = mc;
    mc2.nam.hidden = 5;
    Rng rng2(2);
    PanicModel<double> other(mc2, rng2);
    other.attach_tabular({{"age", tab::FeatureKind::Continuous, 0},
                          {"apoe", tab::FeatureKind::Categorical, 1}},
                         rng2);
    auto grads2 = other.make_grads();
    CHECK_THROWS_AS(bind_params(model, grads2), ConfigError);
}
