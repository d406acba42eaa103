// Synthetic cohort generation, the on-disk dataset directory format, and
// stratified fold assignment: class apportionment, per-class marginals,
// recoverable tabular and image signal, bit-exact round trips, corruption
// reporting, and fold balance.

#include <panic/csv.hpp>
#include <panic/dataset.hpp>
#include <panic/folds.hpp>
#include <panic/kvtext.hpp>
#include <panic/synth.hpp>

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace panic;

namespace {

fs::path temp_dir(const std::string& leaf) {
    auto d = fs::temp_directory_path() / leaf;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Column layout of the generated feature vector (full schema order).
constexpr int kColAge = 0;
constexpr int kColEdu = 1;
constexpr int kColMmse = 2;
constexpr int kColMarker0 = 3;  // abeta, then tau, ptau, hippocampus/entorhinal L+R
constexpr int kColGender = 10;
constexpr int kColSnp01 = 11;

// 600-subject cohort on a small grid: the tabular checks ignore volume
// content, so keep the voxel work cheap.
const std::pair<data::Dataset<double>, synth::GroundTruth>& cohort600() {
    static const auto p = [] {
        synth::SyntheticSpec spec;
        spec.size = 600;
        spec.grid = Grid3::cube(12);
        spec.seed = 7;
        return synth::generate<double>(spec);
    }();
    return p;
}

// Small cohort at full volume resolution for image-signal checks.
const std::pair<data::Dataset<float>, synth::GroundTruth>& cohort45() {
    static const auto p = [] {
        synth::SyntheticSpec spec;
        spec.size = 45;
        spec.grid = Grid3::cube(32);
        spec.seed = 11;
        return synth::generate<float>(spec);
    }();
    return p;
}

// Per-class mean of a column, skipping missing entries.
template <class S>
double class_mean(const data::Dataset<S>& ds, int cls, int col) {
    double sum = 0;
    long n = 0;
    for (const auto& sub : ds.subjects) {
        if (sub.label != cls || sub.missing[static_cast<std::size_t>(col)]) continue;
        sum += static_cast<double>(sub.values[col]);
        ++n;
    }
    REQUIRE(n > 0);
    return sum / static_cast<double>(n);
}

double balanced_recall(const std::vector<int>& truth, const std::vector<int>& pred) {
    double acc = 0;
    for (int c = 0; c < 3; ++c) {
        long hit = 0, tot = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] != c) continue;
            ++tot;
            if (pred[i] == c) ++hit;
        }
        REQUIRE(tot > 0);
        acc += static_cast<double>(hit) / static_cast<double>(tot);
    }
    return acc / 3.0;
}

}  // namespace

TEST_CASE("class apportionment follows the cohort ratios with largest remainders") {
    CHECK(synth::detail::class_counts(600) == std::vector<long>{183, 123, 294});
    CHECK(synth::detail::class_counts(50) == std::vector<long>{15, 10, 25});
    for (long n = 10; n <= 40; ++n) {
        const auto c = synth::detail::class_counts(n);
        CHECK(c[0] + c[1] + c[2] == n);
        CHECK(c[0] >= 0);
        CHECK(c[1] >= 0);
        CHECK(c[2] >= 0);
    }
}

TEST_CASE("schema lists demographics, markers, and genotype columns in order") {
    const auto schema = synth::make_schema(Grid3::cube(32));
    CHECK(schema.class_names == std::vector<std::string>{"CN", "Dementia", "MCI"});
    REQUIRE(schema.features.size() == 42);
    CHECK(schema.features[0].name == "age");
    CHECK(schema.features[0].kind == tab::FeatureKind::Continuous);
    CHECK(schema.features[0].input);
    CHECK(schema.features[1].name == "education");
    CHECK(schema.features[2].name == "mmse");
    CHECK_FALSE(schema.features[2].input);  // recorded but not a model input
    CHECK(schema.features[kColMarker0].name == "abeta");
    CHECK(schema.features[9].name == "entorhinal_right");
    CHECK(schema.features[kColGender].name == "gender");
    CHECK(schema.features[kColGender].kind == tab::FeatureKind::Categorical);
    CHECK(schema.features[kColSnp01].name == "snp01");
    CHECK(schema.features[41].name == "snp31");
    CHECK(schema.grid.h == 32);

    // the input view skips mmse but keeps raw column indices
    const auto specs = schema.input_specs();
    REQUIRE(specs.size() == 41);
    CHECK(specs[0].name == "age");
    CHECK(specs[0].column_index == 0);
    CHECK(specs[2].name == "abeta");
    CHECK(specs[2].column_index == kColMarker0);
    CHECK(specs[40].name == "snp31");
    CHECK(specs[40].column_index == 41);

    CHECK(schema.class_index("MCI") == 2);
    CHECK_THROWS_AS((void)schema.class_index("bogus"), DataError);
}

TEST_CASE("generated cohort reproduces the per-class marginals") {
    const auto& [ds, gt] = cohort600();
    REQUIRE(ds.subjects.size() == 600);
    CHECK(ds.subjects[0].id == "S0000");
    CHECK(ds.subjects[599].id == "S0599");

    long counts[3] = {0, 0, 0};
    for (const auto& sub : ds.subjects) counts[sub.label] += 1;
    CHECK(counts[0] == 183);
    CHECK(counts[1] == 123);
    CHECK(counts[2] == 294);

    // demographic means per class (tolerances ~3 standard errors)
    const double age_mean[3] = {73.5, 74.5, 72.3};
    const double edu_mean[3] = {16.4, 15.4, 16.1};
    const double mmse_mean[3] = {29.0, 23.2, 27.8};
    const double female_frac[3] = {0.509, 0.406, 0.415};
    const double abeta_mean[3] = {1100, 700, 900};
    const double tau_mean[3] = {220, 350, 280};
    const double hippo_mean[3] = {3.7, 2.9, 3.3};
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(class_mean(ds, c, kColAge) - age_mean[c]) < 1.6);
        CHECK(std::abs(class_mean(ds, c, kColEdu) - edu_mean[c]) < 0.8);
        CHECK(std::abs(class_mean(ds, c, kColMmse) - mmse_mean[c]) < 0.75);
        CHECK(std::abs(class_mean(ds, c, kColGender) - female_frac[c]) < 0.13);
        CHECK(std::abs(class_mean(ds, c, kColMarker0) - abeta_mean[c]) < 50.0);
        CHECK(std::abs(class_mean(ds, c, kColMarker0 + 1) - tau_mean[c]) < 25.0);
        CHECK(std::abs(class_mean(ds, c, kColMarker0 + 3) - hippo_mean[c]) < 0.15);
    }

    // informative genotype columns track the class (mean allele count = 2*maf)
    const double snp01_maf[3] = {0.12, 0.48, 0.30};
    const double snp02_maf[3] = {0.45, 0.15, 0.30};
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(class_mean(ds, c, kColSnp01) - 2 * snp01_maf[c]) < 0.17);
        CHECK(std::abs(class_mean(ds, c, kColSnp01 + 1) - 2 * snp02_maf[c]) < 0.17);
    }
    // a non-informative genotype column stays flat across classes
    double snp07[3];
    for (int c = 0; c < 3; ++c) snp07[c] = class_mean(ds, c, kColSnp01 + 6);
    const double flat_gap = std::max({snp07[0], snp07[1], snp07[2]}) -
                            std::min({snp07[0], snp07[1], snp07[2]});
    CHECK(flat_gap < 0.3);
    // ...which is far below the informative spread
    CHECK(std::abs(class_mean(ds, 1, kColSnp01) - class_mean(ds, 0, kColSnp01)) > 0.5);

    // ground-truth record names what carries signal
    REQUIRE(gt.blobs.size() == 3);
    CHECK(gt.blobs[0].cls == "CN");
    CHECK(gt.blobs[1].cls == "Dementia");
    CHECK(gt.blobs[2].cls == "MCI");
    CHECK(gt.informative_continuous.size() == 7);
    CHECK(gt.informative_continuous.front() == "abeta");
    CHECK(gt.informative_categorical ==
          std::vector<std::string>{"snp01", "snp02", "snp03", "snp04", "snp05", "snp06"});
}

TEST_CASE("missingness hits continuous columns at the configured rate and zeroes values") {
    const auto& ds = cohort600().first;
    long missing = 0, cont_cells = 0;
    for (const auto& sub : ds.subjects) {
        for (std::size_t n = 0; n < ds.schema.features.size(); ++n) {
            if (ds.schema.features[n].kind == tab::FeatureKind::Categorical) {
                CHECK(sub.missing[n] == 0);  // categorical columns are never missing
                continue;
            }
            ++cont_cells;
            if (sub.missing[n]) {
                ++missing;
                CHECK(sub.values[static_cast<Index>(n)] == 0.0);
            }
        }
    }
    const double rate = static_cast<double>(missing) / static_cast<double>(cont_cells);
    CHECK(rate > 0.04);
    CHECK(rate < 0.06);

    // rate zero means fully observed
    synth::SyntheticSpec spec;
    spec.size = 10;
    spec.grid = Grid3::cube(8);
    spec.missing_rate = 0.0;
    const auto small = synth::generate<float>(spec).first;
    for (const auto& sub : small.subjects)
        for (auto m : sub.missing) CHECK(m == 0);
}

TEST_CASE("generation is a pure function of the seed") {
    synth::SyntheticSpec spec;
    spec.size = 10;
    spec.grid = Grid3::cube(8);
    spec.seed = 3;
    const auto a = synth::generate<float>(spec).first;
    const auto b = synth::generate<float>(spec).first;
    REQUIRE(a.subjects.size() == b.subjects.size());
    for (std::size_t i = 0; i < a.subjects.size(); ++i) {
        CHECK(a.subjects[i].id == b.subjects[i].id);
        CHECK(a.subjects[i].label == b.subjects[i].label);
        CHECK((a.subjects[i].values.array() == b.subjects[i].values.array()).all());
        CHECK(a.subjects[i].missing == b.subjects[i].missing);
        CHECK((a.subjects[i].volume.data.array() == b.subjects[i].volume.data.array()).all());
    }

    spec.seed = 4;
    const auto c = synth::generate<float>(spec).first;
    bool differs = false;
    for (std::size_t i = 0; i < a.subjects.size() && !differs; ++i)
        differs = (a.subjects[i].values.array() != c.subjects[i].values.array()).any() ||
                  (a.subjects[i].volume.data.array() != c.subjects[i].volume.data.array()).any();
    CHECK(differs);
}

TEST_CASE("volumes brighten inside the class signal region") {
    const auto& [ds, gt] = cohort45();
    const Grid3 g = ds.schema.grid;
    REQUIRE(gt.blobs.size() == 3);
    const double centers[3][3] = {{10, 10, 10}, {22, 22, 22}, {10, 22, 16}};
    for (int c = 0; c < 3; ++c) {
        CHECK(gt.blobs[c].radius == 7.0);
        CHECK(gt.blobs[c].intensity == 1.0);
        for (int i = 0; i < 3; ++i) CHECK(gt.blobs[c].center[i] == centers[c][i]);
    }

    // the mask is the Euclidean ball around the blob center; count it
    // independently with integer arithmetic
    std::vector<std::vector<std::uint8_t>> masks;
    for (int c = 0; c < 3; ++c) {
        masks.push_back(gt.class_mask(c, g));
        long expect = 0, got = 0;
        std::size_t v = 0;
        for (long i = 0; i < g.h; ++i)
            for (long j = 0; j < g.d; ++j)
                for (long k = 0; k < g.w; ++k, ++v) {
                    const long dx = i - static_cast<long>(centers[c][0]);
                    const long dy = j - static_cast<long>(centers[c][1]);
                    const long dz = k - static_cast<long>(centers[c][2]);
                    if (dx * dx + dy * dy + dz * dz <= 49) ++expect;
                    if (masks.back()[v]) ++got;
                    CHECK(masks.back()[v] == ((dx * dx + dy * dy + dz * dz <= 49) ? 1 : 0));
                }
        CHECK(expect == got);
        CHECK(expect > 1000);  // the ball fits inside the grid
    }

    long mask_count[3];
    for (int c = 0; c < 3; ++c)
        mask_count[c] = std::count(masks[static_cast<std::size_t>(c)].begin(),
                                   masks[static_cast<std::size_t>(c)].end(), std::uint8_t(1));

    // per class: average voxel value inside the own-class mask clears both
    // the outside level and the other-class regions
    for (int c = 0; c < 3; ++c) {
        double in_own = 0, out_own = 0, in_other[3] = {0, 0, 0};
        long n_in = 0, n_out = 0, n_sub = 0;
        for (const auto& sub : ds.subjects) {
            if (sub.label != c) continue;
            ++n_sub;
            for (Index v = 0; v < sub.volume.data.size(); ++v) {
                const double x = static_cast<double>(sub.volume.data[v]);
                if (masks[static_cast<std::size_t>(c)][static_cast<std::size_t>(v)]) {
                    in_own += x;
                    ++n_in;
                } else {
                    out_own += x;
                    ++n_out;
                }
                for (int o = 0; o < 3; ++o)
                    if (o != c && masks[static_cast<std::size_t>(o)][static_cast<std::size_t>(v)])
                        in_other[o] += x;
            }
        }
        REQUIRE(n_sub > 0);
        in_own /= static_cast<double>(n_in);
        out_own /= static_cast<double>(n_out);
        CHECK(in_own - out_own > 0.2);
        for (int o = 0; o < 3; ++o) {
            if (o == c) continue;
            const double other_mean =
                in_other[o] / static_cast<double>(n_sub * mask_count[o]);
            CHECK(in_own - other_mean > 0.15);
        }
    }
}

TEST_CASE("a nearest-centroid readout separates the classes from volumes alone") {
    const auto& ds = cohort45().first;
    const Index voxels = ds.schema.grid.voxels();

    // split each class by parity of its running index: even fits the
    // centroid, odd probes it
    Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(3, voxels);
    long fit_count[3] = {0, 0, 0};
    long seen[3] = {0, 0, 0};
    std::vector<std::size_t> probes;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        const int c = ds.subjects[i].label;
        if (seen[c]++ % 2 == 0) {
            centroid.row(c) += ds.subjects[i].volume.data.cast<double>().transpose();
            ++fit_count[c];
        } else {
            probes.push_back(i);
        }
    }
    for (int c = 0; c < 3; ++c) {
        REQUIRE(fit_count[c] > 0);
        centroid.row(c) /= static_cast<double>(fit_count[c]);
    }

    std::vector<int> truth, pred;
    for (std::size_t i : probes) {
        const Eigen::VectorXd x = ds.subjects[i].volume.data.cast<double>();
        int best = 0;
        double best_d = (x.transpose() - centroid.row(0)).squaredNorm();
        for (int c = 1; c < 3; ++c) {
            const double d = (x.transpose() - centroid.row(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        truth.push_back(ds.subjects[i].label);
        pred.push_back(best);
    }
    CHECK(balanced_recall(truth, pred) >= 0.9);
}

TEST_CASE("informative tabular columns linearly separate the classes") {
    const auto& ds = cohort600().first;
    const long n = static_cast<long>(ds.subjects.size());

    // the seven markers plus the six informative genotype columns,
    // standardized per column over observed entries, missing at zero
    std::vector<int> cols;
    for (int m = 0; m < 7; ++m) cols.push_back(kColMarker0 + m);
    for (int s = 0; s < 6; ++s) cols.push_back(kColSnp01 + s);
    const long f = static_cast<long>(cols.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, f + 1);
    X.col(f).setOnes();  // bias
    std::vector<int> y(static_cast<std::size_t>(n));
    for (long m = 0; m < f; ++m) {
        const int col = cols[static_cast<std::size_t>(m)];
        double mean = 0;
        long cnt = 0;
        for (const auto& sub : ds.subjects)
            if (!sub.missing[static_cast<std::size_t>(col)]) {
                mean += sub.values[col];
                ++cnt;
            }
        mean /= static_cast<double>(cnt);
        double var = 0;
        for (const auto& sub : ds.subjects)
            if (!sub.missing[static_cast<std::size_t>(col)]) {
                const double d = sub.values[col] - mean;
                var += d * d;
            }
        const double sd = std::sqrt(var / static_cast<double>(cnt));
        for (long i = 0; i < n; ++i) {
            const auto& sub = ds.subjects[static_cast<std::size_t>(i)];
            if (!sub.missing[static_cast<std::size_t>(col)])
                X(i, m) = (sub.values[col] - mean) / sd;
        }
    }
    for (long i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = ds.subjects[static_cast<std::size_t>(i)].label;

    // full-batch softmax regression by gradient descent
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(3, f + 1);
    for (int it = 0; it < 800; ++it) {
        Eigen::MatrixXd logits = X * W.transpose();  // [n,3]
        const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
        logits.colwise() -= row_max;
        Eigen::MatrixXd P = logits.array().exp().matrix();
        const Eigen::ArrayXd row_sum = P.rowwise().sum().array();
        P.array().colwise() /= row_sum;
        for (long i = 0; i < n; ++i) P(i, y[static_cast<std::size_t>(i)]) -= 1.0;
        W -= (0.5 / static_cast<double>(n)) * (P.transpose() * X);
    }

    std::vector<int> pred(static_cast<std::size_t>(n));
    const Eigen::MatrixXd logits = X * W.transpose();
    for (long i = 0; i < n; ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    CHECK(balanced_recall(y, pred) >= 0.85);
}

TEST_CASE("a dataset survives its directory format byte for byte") {
    synth::SyntheticSpec spec;
    spec.size = 12;
    spec.grid = Grid3::cube(6);
    spec.missing_rate = 0.3;  // exercise empty manifest cells
    spec.seed = 21;
    const auto [ds, gt] = synth::generate<float>(spec);

    const fs::path a = temp_dir("panic_data_rt_a");
    data::save_dataset(a.string(), ds);
    const auto back = data::load_dataset<float>(a.string());

    CHECK(back.schema.class_names == ds.schema.class_names);
    REQUIRE(back.schema.features.size() == ds.schema.features.size());
    for (std::size_t i = 0; i < ds.schema.features.size(); ++i) {
        CHECK(back.schema.features[i].name == ds.schema.features[i].name);
        CHECK(back.schema.features[i].kind == ds.schema.features[i].kind);
        CHECK(back.schema.features[i].input == ds.schema.features[i].input);
    }
    CHECK(back.schema.grid.h == 6);
    REQUIRE(back.subjects.size() == ds.subjects.size());
    bool any_missing = false;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
        CHECK(back.subjects[i].id == ds.subjects[i].id);
        CHECK(back.subjects[i].label == ds.subjects[i].label);
        CHECK((back.subjects[i].values.array() == ds.subjects[i].values.array()).all());
        CHECK(back.subjects[i].missing == ds.subjects[i].missing);
        CHECK((back.subjects[i].volume.data.array() ==
               ds.subjects[i].volume.data.array()).all());
        for (auto m : ds.subjects[i].missing) any_missing = any_missing || m;
    }
    CHECK(any_missing);  // the round trip actually covered empty cells

    // saving the reloaded dataset reproduces every byte
    const fs::path b = temp_dir("panic_data_rt_b");
    data::save_dataset(b.string(), back);
    CHECK(slurp(a / "schema.txt") == slurp(b / "schema.txt"));
    CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
    CHECK(slurp(a / "volumes/S0000.raw") == slurp(b / "volumes/S0000.raw"));
    CHECK(slurp(a / "volumes/S0000.raw.hdr") == slurp(b / "volumes/S0000.raw.hdr"));
    CHECK(KvMap::load((a / "volumes/S0000.raw.hdr").string()).get("subject") == "S0000");

    // ground truth record round-trips through json
    gt.save((a / "groundtruth.json").string());
    const auto gt2 = synth::GroundTruth::load((a / "groundtruth.json").string());
    REQUIRE(gt2.blobs.size() == gt.blobs.size());
    for (std::size_t i = 0; i < gt.blobs.size(); ++i) {
        CHECK(gt2.blobs[i].cls == gt.blobs[i].cls);
        CHECK(gt2.blobs[i].radius == gt.blobs[i].radius);
        CHECK(gt2.blobs[i].intensity == gt.blobs[i].intensity);
        for (int d = 0; d < 3; ++d) CHECK(gt2.blobs[i].center[d] == gt.blobs[i].center[d]);
    }
    CHECK(gt2.informative_continuous == gt.informative_continuous);
    CHECK(gt2.informative_categorical == gt.informative_categorical);
    CHECK(gt2.class_mask(0, Grid3::cube(32)) == gt.class_mask(0, Grid3::cube(32)));

    // extra files in the directory are ignored by the loader
    const auto again = data::load_dataset<float>(a.string());
    CHECK(again.subjects.size() == ds.subjects.size());

    // the model-input view maps columns through the schema
    const auto sample = back.input_sample(0);
    REQUIRE(sample.values.size() == 41);
    CHECK(sample.values[0] == back.subjects[0].values[kColAge]);
    CHECK(sample.values[2] == back.subjects[0].values[kColMarker0]);  // skips mmse
    CHECK(sample.missing[2] ==
          back.subjects[0].missing[static_cast<std::size_t>(kColMarker0)]);
    CHECK(back.find_subject("S0001") == 1);
    CHECK_THROWS_AS((void)back.find_subject("nope"), DataError);
}

TEST_CASE("volume and manifest corruption is reported with the failing file") {
    synth::SyntheticSpec spec;
    spec.size = 10;
    spec.grid = Grid3::cube(4);
    spec.seed = 5;
    const auto ds = synth::generate<float>(spec).first;

    auto fresh = [&](const std::string& leaf) {
        const fs::path d = temp_dir(leaf);
        data::save_dataset(d.string(), ds);
        return d;
    };
    auto expect_data_error = [](auto&& fn, const std::string& needle) {
        try {
            fn();
            FAIL_CHECK("expected DataError containing '" << needle << "'");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    SUBCASE("truncated volume file") {
        const fs::path d = fresh("panic_data_trunc");
        fs::resize_file(d / "volumes/S0000.raw", fs::file_size(d / "volumes/S0000.raw") - 4);
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "corrupt (truncated) volume file");
    }
    SUBCASE("oversized volume file") {
        const fs::path d = fresh("panic_data_over");
        std::ofstream out(d / "volumes/S0000.raw", std::ios::binary | std::ios::app);
        out.put('\0');
        out.close();
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "corrupt (oversized) volume file");
    }
    SUBCASE("volume header names a different subject") {
        const fs::path d = fresh("panic_data_hdr");
        KvMap hdr = KvMap::load((d / "volumes/S0000.raw.hdr").string());
        hdr.set("subject", "S9999");
        hdr.save((d / "volumes/S0000.raw.hdr").string());
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "does not match");
    }
    SUBCASE("unknown class label in the manifest") {
        const fs::path d = fresh("panic_data_label");
        CsvTable m = read_csv((d / "manifest.csv").string());
        m.rows[0][static_cast<std::size_t>(m.col("label"))] = "Bogus";
        write_csv((d / "manifest.csv").string(), m);
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "unknown class label 'Bogus'");
    }
    SUBCASE("non-numeric feature cell") {
        const fs::path d = fresh("panic_data_cell");
        CsvTable m = read_csv((d / "manifest.csv").string());
        m.rows[0][static_cast<std::size_t>(m.col("age"))] = "abc";
        write_csv((d / "manifest.csv").string(), m);
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "bad numeric cell 'abc' for feature 'age'");
    }
    SUBCASE("volume dimensions disagree with the schema") {
        const fs::path d = fresh("panic_data_dims");
        KvMap schema = KvMap::load((d / "schema.txt").string());
        schema.set_int("volume.h", 5);
        schema.save((d / "schema.txt").string());
        expect_data_error([&] { (void)data::load_dataset<float>(d.string()); },
                          "do not match schema");
    }
    SUBCASE("direct volume loads check the caller's subject") {
        const fs::path d = temp_dir("panic_data_vol");
        Volume<float> vol = Volume<float>::zero(Grid3::cube(2));
        vol.data.setLinSpaced(8, 0.0f, 7.0f);
        data::save_volume((d / "v.raw").string(), vol, "X");
        const auto same = data::load_volume<float>((d / "v.raw").string(), "X");
        CHECK((same.data.array() == vol.data.array()).all());
        expect_data_error([&] { (void)data::load_volume<float>((d / "v.raw").string(), "Y"); },
                          "does not match");
        expect_data_error(
            [&] { data::save_volume((d / "no_such_dir/v.raw").string(), vol, "X"); },
            "cannot write volume file");
        expect_data_error(
            [&] { (void)synth::GroundTruth::load((d / "absent.json").string()); },
            "cannot open ground truth");
    }
}

TEST_CASE("synthetic spec rejects out-of-range parameters") {
    synth::SyntheticSpec spec;
    CHECK_NOTHROW(spec.validate());
    spec.size = 9;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.size = 10;
    spec.missing_rate = 1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.missing_rate = -0.01;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.missing_rate = 0.05;
    spec.blob_radius = 0.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.blob_radius = 7.0;
    spec.noise_sd = -0.1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("quartile bins follow interpolated population quartiles") {
    const std::vector<double> five = {1, 2, 3, 4, 5};  // quartiles 2, 3, 4
    CHECK(data::quartile_bin(0.0, five) == 0);
    CHECK(data::quartile_bin(2.0, five) == 0);
    CHECK(data::quartile_bin(2.5, five) == 1);
    CHECK(data::quartile_bin(3.0, five) == 1);
    CHECK(data::quartile_bin(3.9, five) == 2);
    CHECK(data::quartile_bin(4.0, five) == 2);
    CHECK(data::quartile_bin(4.5, five) == 3);
    CHECK(data::quartile_bin(9.0, five) == 3);

    const std::vector<double> four = {1, 2, 3, 4};  // quartiles 1.75, 2.5, 3.25
    CHECK(data::quartile_bin(1.75, four) == 0);
    CHECK(data::quartile_bin(1.8, four) == 1);
    CHECK(data::quartile_bin(2.5, four) == 1);
    CHECK(data::quartile_bin(2.6, four) == 2);
    CHECK(data::quartile_bin(3.25, four) == 2);
    CHECK(data::quartile_bin(3.3, four) == 3);
}

TEST_CASE("stratified folds balance class shares and role splits") {
    const auto& ds = cohort600().first;
    const std::size_t n = ds.subjects.size();
    std::vector<int> labels(n), sexes(n);
    std::vector<double> ages(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = ds.subjects[i].label;
        sexes[i] = static_cast<int>(ds.subjects[i].values[kColGender]);
        ages[i] = ds.subjects[i].values[kColAge];
    }

    const auto fa = data::stratified_folds(labels, sexes, ages, 5, 42);
    REQUIRE(fa.k == 5);
    REQUIRE(fa.fold_of.size() == n);
    REQUIRE(fa.roles.size() == 5);

    const double global_frac[3] = {183.0 / 600.0, 123.0 / 600.0, 294.0 / 600.0};
    std::vector<int> test_seen(n, 0);
    for (int f = 0; f < 5; ++f) {
        long fold_size = 0, cls[3] = {0, 0, 0};
        long n_train = 0, n_val = 0, n_test = 0;
        long val_cls[3] = {0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const auto role = fa.roles[static_cast<std::size_t>(f)][i];
            CHECK((fa.fold_of[i] == f) == (role == data::Role::Test));
            if (fa.fold_of[i] == f) {
                ++fold_size;
                cls[labels[i]] += 1;
                ++test_seen[i];
            }
            if (role == data::Role::Train) ++n_train;
            if (role == data::Role::Val) {
                ++n_val;
                val_cls[labels[i]] += 1;
            }
            if (role == data::Role::Test) ++n_test;
        }
        CHECK(std::abs(fold_size - 120) <= 4);
        CHECK(n_train + n_val + n_test == static_cast<long>(n));
        // test:val:train near 20:16:64
        CHECK(n_val >= 84);
        CHECK(n_val <= 108);
        CHECK(n_train >= 366);
        CHECK(n_train <= 402);
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(static_cast<double>(cls[c]) / static_cast<double>(fold_size) -
                           global_frac[c]) < 0.05);
            CHECK(std::abs(static_cast<double>(val_cls[c]) / static_cast<double>(n_val) -
                           global_frac[c]) < 0.08);
        }
        // role listings partition the cohort
        const auto tr = fa.ids_with_role(f, data::Role::Train);
        const auto va = fa.ids_with_role(f, data::Role::Val);
        const auto te = fa.ids_with_role(f, data::Role::Test);
        CHECK(static_cast<long>(tr.size()) == n_train);
        CHECK(static_cast<long>(va.size()) == n_val);
        CHECK(static_cast<long>(te.size()) == n_test);
    }
    for (std::size_t i = 0; i < n; ++i) CHECK(test_seen[i] == 1);  // each subject tests once

    // deterministic in the seed
    const auto fb = data::stratified_folds(labels, sexes, ages, 5, 42);
    CHECK(fb.fold_of == fa.fold_of);
    const auto fc = data::stratified_folds(labels, sexes, ages, 5, 43);
    CHECK(fc.fold_of != fa.fold_of);

    // validation
    std::vector<int> short_sexes(n - 1, 0);
    CHECK_THROWS_AS((void)data::stratified_folds(labels, short_sexes, ages, 5, 0), InvalidInput);
    CHECK_THROWS_AS((void)data::stratified_folds(labels, sexes, ages, 1, 0), ConfigError);
}
