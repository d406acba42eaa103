// Prototype branch: pooled-latent closed forms, cosine similarity edge
// cases, the four image-side loss terms, projection against a brute-force
// scan, attention overlays, and gradient checks on a 2-channel 4^3 toy.

#include <panic/proto.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace panic;
using namespace panic::img;

namespace {

template <class S>
FeatureMap<S> random_features(const Grid3& g, int channels, std::uint64_t seed) {
    Rng rng(seed);
    FeatureMap<S> m;
    m.grid = g;
    m.chan.resize(channels, g.voxels());
    rng.fill_normal<S>(m.chan, 0.0, 1.0);
    return m;
}

template <class S>
ProtoBranch<S> toy_branch(int classes, int per_class, int latent, int in_ch, std::uint64_t seed) {
    ProtoConfig cfg;
    cfg.classes = classes;
    cfg.per_class = per_class;
    cfg.latent = latent;
    cfg.hidden = 3;
    Rng rng(seed);
    return ProtoBranch<S>(cfg, in_ch, rng);
}

// Force both head networks to constant outputs: zero the 1x1 conv weights
// and set the output biases.
template <class S>
void set_constant_heads(ProtoBranch<S>& br, S occurrence_logit, S extractor_out) {
    br.extractor1().w.setZero();
    br.extractor1().b.setZero();
    br.extractor2().w.setZero();
    br.extractor2().b.setConstant(extractor_out);
    br.occurrence1().w.setZero();
    br.occurrence1().b.setZero();
    br.occurrence2().w.setZero();
    br.occurrence2().b.setConstant(occurrence_logit);
}

}  // namespace

TEST_CASE("cosine similarity closed forms and the zero-norm guard") {
    VecX<double> p(2), z(2);
    p << 1.0, 0.0;
    z << 1.0, 1.0;
    CHECK(similarity(p, z) == doctest::Approx(0.70710678118654746).epsilon(1e-15));

    z << 3.0, 0.0;
    CHECK(similarity(p, z) == doctest::Approx(1.0).epsilon(1e-15));
    z << 0.0, 5.0;
    CHECK(similarity(p, z) == doctest::Approx(0.0).epsilon(1e-15));
    z << -2.0, 0.0;
    CHECK(similarity(p, z) == doctest::Approx(-1.0).epsilon(1e-15));

    bool degen = false;
    z.setZero();
    CHECK(similarity(p, z, &degen) == 0.0);
    CHECK(degen);
}

TEST_CASE("pooled latents follow the sigmoid-softplus closed form") {
    const Grid3 g{2, 2, 2};
    auto br = toy_branch<double>(2, 2, 3, 2, 7);

    // occurrence logits 0, extractor output constant v -> z = 0.5*softplus(v)
    set_constant_heads(br, 0.0, -0.2);
    auto feat = random_features<double>(g, 2, 8);
    ProtoHeadsCache<double> cache;
    ConvWorkspace<double> ws;
    br.forward(feat, cache, ws);
    const double sp = std::log1p(std::exp(-0.2));
    for (Index r = 0; r < cache.z.rows(); ++r)
        for (Index l = 0; l < cache.z.cols(); ++l)
            CHECK(cache.z(r, l) == doctest::Approx(0.5 * sp).epsilon(1e-12));

    // extractor output 0 as well -> z = 0.5*softplus(0) = 0.5*ln 2
    set_constant_heads(br, 0.0, 0.0);
    br.forward(feat, cache, ws);
    CHECK(cache.z(0, 0) == doctest::Approx(0.34657359027997264).epsilon(1e-12));

    // occurrence logit 0.3 with extractor -0.2: z = sigmoid(0.3)*softplus(-0.2)
    set_constant_heads(br, 0.3, -0.2);
    br.forward(feat, cache, ws);
    CHECK(cache.z(1, 2) == doctest::Approx(0.34359639753044174).epsilon(1e-12));

    // strongly negative occurrence logits drive the latent toward zero
    set_constant_heads(br, -40.0, 1.0);
    br.forward(feat, cache, ws);
    CHECK(cache.z.cwiseAbs().maxCoeff() < 1e-12);

    // non-negativity holds for arbitrary heads
    Rng rw(91);
    rw.fill_normal<double>(br.extractor1().w, 0.0, 1.0);
    rw.fill_normal<double>(br.extractor2().w, 0.0, 1.0);
    rw.fill_normal<double>(br.occurrence1().w, 0.0, 1.0);
    rw.fill_normal<double>(br.occurrence2().w, 0.0, 1.0);
    br.forward(feat, cache, ws);
    CHECK(cache.z.minCoeff() >= 0.0);
    // scores are cosines
    CHECK(cache.scores.maxCoeff() <= 1.0 + 1e-12);
    CHECK(cache.scores.minCoeff() >= -1.0 - 1e-12);
}

TEST_CASE("occurrence loss counts post-sigmoid mass") {
    MatX<double> maps = MatX<double>::Zero(6, 64);  // C=3, K=2 -> 6 maps, V=64
    CHECK(occurrence_l1(maps) == 0.0);
    maps.setOnes();
    CHECK(occurrence_l1(maps) == doctest::Approx(3.0 * 2.0 * 64.0).epsilon(1e-15));

    // monotone: elementwise-larger maps give a strictly larger value
    Rng rng(17);
    MatX<double> base(6, 64);
    rng.fill_normal<double>(base, 0.0, 1.0);
    base = base.unaryExpr([](double x) { return stable_sigmoid(x); });
    CHECK(occurrence_l1(MatX<double>(base * 1.5)) > occurrence_l1(base));
}

TEST_CASE("cluster and separation losses match brute-force scans") {
    MatX<double> scores(3, 2);
    scores << 0.1, -0.4, 0.9, 0.3, -0.2, 0.8;

    Index kc = -1;
    CHECK(loss_cluster(scores, 1, &kc) == doctest::Approx(-0.9).epsilon(1e-15));
    CHECK(kc == 0);
    CHECK(loss_cluster(scores, 0) == doctest::Approx(-0.1).epsilon(1e-15));

    Index sc = -1, sk = -1;
    CHECK(loss_separation(scores, 1, &sc, &sk) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(sc == 2);
    CHECK(sk == 1);
    CHECK(loss_separation(scores, 2, &sc, &sk) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(sc == 1);
    CHECK(sk == 0);

    // perfect score on the labeled class -> -1; all-zero scores -> 0
    MatX<double> perfect = MatX<double>::Zero(2, 2);
    perfect(0, 1) = 1.0;
    CHECK(loss_cluster(perfect, 0) == -1.0);
    const MatX<double> zeros22 = MatX<double>::Zero(2, 2);
    CHECK(loss_cluster(zeros22, 0) == 0.0);

    // all off-class scores -1 -> separation -1
    MatX<double> off = MatX<double>::Constant(2, 2, -1.0);
    CHECK(loss_separation(off, 0) == -1.0);

    // single class: separation undefined
    const MatX<double> zeros12 = MatX<double>::Zero(1, 2);
    CHECK_THROWS_AS((void)loss_separation(zeros12, 0), InvalidInput);

    // random scores match exhaustive scans
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        MatX<double> s(4, 3);
        rng.fill_normal<double>(s, 0.0, 1.0);
        const Index y = static_cast<Index>(rng.uniform_index(4));
        double best_y = -1e30, best_off = -1e30;
        for (Index c = 0; c < 4; ++c)
            for (Index k = 0; k < 3; ++k) {
                if (c == y) best_y = std::max(best_y, s(c, k));
                else best_off = std::max(best_off, s(c, k));
            }
        CHECK(loss_cluster(s, y) == doctest::Approx(-best_y).epsilon(1e-15));
        CHECK(loss_separation(s, y) == doctest::Approx(best_off).epsilon(1e-15));
    }
}

TEST_CASE("projection matches a brute-force nearest-latent scan") {
    auto br = toy_branch<double>(3, 2, 5, 2, 31);
    const Index rows = 6;  // C*K

    Rng rng(32);
    std::vector<MatX<double>> latents;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
        MatX<double> z(rows, 5);
        rng.fill_normal<double>(z, 0.0, 1.0);
        z = z.cwiseAbs();  // pooled latents are non-negative
        latents.push_back(z);
        labels.push_back(i % 3);
    }

    const MatX<double> before = br.prototypes();
    auto report = project_prototypes(br, latents, labels);
    REQUIRE(report.entries.size() == 6);

    for (const auto& e : report.entries) {
        const Index r = br.proto_row(e.cls, e.k);
        // brute force over same-class candidates using the pre-projection bank
        Index want = -1;
        double want_sim = 0.0;
        for (std::size_t i = 0; i < latents.size(); ++i) {
            if (labels[i] != e.cls) continue;
            const double sim =
                similarity<double>(before.row(r).transpose(), latents[i].row(r).transpose());
            if (want < 0 || sim > want_sim) {
                want = static_cast<Index>(i);
                want_sim = sim;
            }
        }
        CHECK(e.source == want);
        CHECK(e.similarity == doctest::Approx(want_sim).epsilon(1e-12));

        // prototype replaced by the chosen latent, renormalized to unit norm
        CHECK(br.prototypes().row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
        const VecX<double> src = latents[static_cast<std::size_t>(want)].row(r).transpose();
        CHECK(similarity<double>(br.prototypes().row(r).transpose(), src) ==
              doctest::Approx(1.0).epsilon(1e-9));
    }

    // a planted exact-match candidate is selected with similarity 1
    auto br2 = toy_branch<double>(2, 1, 4, 2, 33);
    std::vector<MatX<double>> lat2;
    std::vector<int> lab2{0, 0, 1};
    for (int i = 0; i < 3; ++i) {
        MatX<double> z(2, 4);
        Rng r2(40 + static_cast<std::uint64_t>(i));
        r2.fill_normal<double>(z, 0.0, 1.0);
        z = z.cwiseAbs();
        lat2.push_back(z);
    }
    lat2[1].row(0) = br2.prototypes().row(0) * 3.0;  // same direction, class 0
    auto rep2 = project_prototypes(br2, lat2, lab2);
    CHECK(rep2.entries[0].source == 1);
    CHECK(rep2.entries[0].similarity == doctest::Approx(1.0).epsilon(1e-12));

    // class with no samples -> named error
    std::vector<int> lab3{0, 0, 0};
    try {
        std::vector<std::string> names{"CN", "Dementia"};
        (void)project_prototypes(br2, lat2, lab3, &names);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("Dementia") != std::string::npos);
    }
}

TEST_CASE("attention overlay thresholds at a fraction of the maximum") {
    const Grid3 from{4, 4, 4}, to{8, 8, 8};
    VecX<float> map = VecX<float>::Zero(from.voxels());
    map[from.index(2, 2, 2)] = 1.0f;
    map[from.index(1, 1, 1)] = 0.2f;

    auto ov = attention_overlay(map, from, to, 0.3);
    CHECK(ov.upsampled.size() == to.voxels());
    CHECK(ov.threshold_value == doctest::Approx(0.3f * ov.upsampled.maxCoeff()).epsilon(1e-6));
    long active = 0;
    for (auto b : ov.mask) active += b;
    CHECK(active > 0);
    CHECK(active < static_cast<long>(ov.mask.size()));

    // raising the threshold can only shrink the mask
    auto tight = attention_overlay(map, from, to, 0.6);
    long tight_active = 0;
    for (std::size_t i = 0; i < tight.mask.size(); ++i) {
        tight_active += tight.mask[i];
        if (tight.mask[i]) CHECK(ov.mask[i]);  // nested
    }
    CHECK(tight_active < active);

    // constant map: every voxel equals the max -> all true
    const VecX<float> const_map = VecX<float>::Constant(from.voxels(), 0.7f);
    auto flat = attention_overlay(const_map, from, to, 0.3);
    long n_on = 0;
    for (auto b : flat.mask) n_on += b;
    CHECK(n_on == static_cast<long>(flat.mask.size()));
}

TEST_CASE("mask IoU counts intersection over union") {
    std::vector<std::uint8_t> a{1, 1, 0, 0}, b{1, 0, 1, 0};
    CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(mask_iou(a, a) == 1.0);
    std::vector<std::uint8_t> zero{0, 0, 0, 0};
    CHECK(mask_iou(zero, zero) == 0.0);
    std::vector<std::uint8_t> bad{1};
    CHECK_THROWS_AS((void)mask_iou(a, bad), InvalidInput);
}

TEST_CASE("prototype rows are unit-norm after init and renorm") {
    auto br = toy_branch<float>(3, 2, 8, 2, 55);
    for (Index r = 0; r < br.prototypes().rows(); ++r)
        CHECK(br.prototypes().row(r).norm() == doctest::Approx(1.0f).epsilon(1e-5));
    br.prototypes() *= 7.5f;
    br.renorm_prototypes();
    for (Index r = 0; r < br.prototypes().rows(); ++r)
        CHECK(br.prototypes().row(r).norm() == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("branch gradients match finite differences on a 2-channel 4^3 toy") {
    const Grid3 g{4, 4, 4};
    auto br = toy_branch<double>(2, 2, 4, 2, 61);
    auto feat = random_features<double>(g, 2, 62);

    // fixed cotangents for scores and an extra occurrence-map term
    Rng rng(63);
    MatX<double> dscores(2, 2);
    rng.fill_normal<double>(dscores, 0.0, 1.0);
    const double occ_w = 0.37;

    auto loss = [&]() {
        ProtoHeadsCache<double> c;
        ConvWorkspace<double> ws;
        br.forward(feat, c, ws);
        double l = (c.scores.array() * dscores.array()).sum();
        l += occ_w * occurrence_l1(c.sig);
        return l;
    };

    ProtoHeadsCache<double> cache;
    ConvWorkspace<double> ws;
    br.forward(feat, cache, ws);
    auto grads = br.make_grads();
    MatX<double> dfeat = MatX<double>::Zero(2, g.voxels());
    MatX<double> docc = MatX<double>::Constant(cache.sig.rows(), cache.sig.cols(), occ_w);
    br.backward(cache, &dscores, &docc, grads, dfeat, ws);

    const double h = 1e-6;
    auto fd_check = [&](double* p, double analytic) {
        const double keep = *p;
        *p = keep + h;
        const double up = loss();
        *p = keep - h;
        const double dn = loss();
        *p = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - analytic) / std::max(1.0, std::abs(fd)) < 1e-3);
    };

    auto sweep = [&](MatX<double>& w, const MatX<double>& gw, Index step) {
        for (Index i = 0; i < w.size(); i += step) fd_check(w.data() + i, gw.data()[i]);
    };
    sweep(br.extractor1().w, grads.v1.w, 3);
    sweep(br.extractor2().w, grads.v2.w, 3);
    sweep(br.occurrence1().w, grads.o1.w, 3);
    sweep(br.occurrence2().w, grads.o2.w, 3);
    sweep(br.prototypes(), grads.protos, 2);
    for (Index i = 0; i < br.extractor2().b.size(); ++i)
        fd_check(&br.extractor2().b[i], grads.v2.b[i]);
    for (Index i = 0; i < br.occurrence2().b.size(); ++i)
        fd_check(&br.occurrence2().b[i], grads.o2.b[i]);
    // gradient w.r.t. input features (drives the backbone)
    for (Index i = 0; i < feat.chan.size(); i += 17) fd_check(feat.chan.data() + i, dfeat.data()[i]);
}

TEST_CASE("cluster and separation gradients route to the argmax entries") {
    // composite check through the branch: L = cluster + separation
    const Grid3 g{3, 3, 3};
    auto br = toy_branch<double>(3, 2, 4, 2, 71);
    auto feat = random_features<double>(g, 2, 72);
    const Index y = 1;

    auto loss = [&]() {
        ProtoHeadsCache<double> c;
        ConvWorkspace<double> ws;
        br.forward(feat, c, ws);
        return loss_cluster(c.scores, y) + loss_separation(c.scores, y);
    };

    ProtoHeadsCache<double> cache;
    ConvWorkspace<double> ws;
    br.forward(feat, cache, ws);
    Index kc = 0, sc = 0, sk = 0;
    loss_cluster(cache.scores, y, &kc);
    loss_separation(cache.scores, y, &sc, &sk);
    MatX<double> dscores = MatX<double>::Zero(3, 2);
    dscores(y, kc) -= 1.0;
    dscores(sc, sk) += 1.0;

    auto grads = br.make_grads();
    MatX<double> dfeat = MatX<double>::Zero(2, g.voxels());
    br.backward(cache, &dscores, nullptr, grads, dfeat, ws);

    const double h = 1e-6;
    for (Index i = 0; i < br.prototypes().size(); i += 3) {
        double* p = br.prototypes().data() + i;
        const double keep = *p;
        *p = keep + h;
        const double up = loss();
        *p = keep - h;
        const double dn = loss();
        *p = keep;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - grads.protos.data()[i]) / std::max(1.0, std::abs(fd)) < 1e-3);
    }
}
