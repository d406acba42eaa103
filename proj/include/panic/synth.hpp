//
// Synthetic cohort generator: three diagnostic classes with realistic
// tabular statistics, an informative subset of features carrying class
// signal, random missingness on continuous columns, and 3D volumes of
// smoothed noise plus a class-specific Gaussian blob. A ground-truth record
// stores where the signal lives so tests can measure recoverability.
//

#pragma once

#include <panic/dataset.hpp>
#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace panic::synth {

struct SyntheticSpec {
    long size = 600;
    Grid3 grid = Grid3::cube(32);
    double missing_rate = 0.05;       // continuous columns, completely at random
    double noise_sd = 0.3;            // smoothed background noise level
    double noise_smooth_sigma = 1.5;  // Gaussian blur of the noise field
    double blob_intensity = 1.0;
    double blob_radius = 7.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (size < 10) throw ConfigError("synthetic size must be >= 10");
        if (missing_rate < 0 || missing_rate >= 1)
            throw ConfigError("missing rate must be in [0,1)");
        if (noise_sd < 0 || blob_radius <= 0 || blob_intensity < 0)
            throw ConfigError("noise/blob parameters must be non-negative");
    }
};

struct ClassSignal {
    std::string cls;
    double center[3] = {0, 0, 0};
    double radius = 0;
    double intensity = 0;
};

struct GroundTruth {
    std::vector<ClassSignal> blobs;  // one per class
    std::vector<std::string> informative_continuous;
    std::vector<std::string> informative_categorical;

    std::vector<std::uint8_t> class_mask(int cls, const Grid3& g) const {
        const auto& b = blobs[static_cast<std::size_t>(cls)];
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(g.voxels()), 0);
        Index v = 0;
        for (Index i = 0; i < g.h; ++i)
            for (Index j = 0; j < g.d; ++j)
                for (Index k = 0; k < g.w; ++k, ++v) {
                    const double dx = static_cast<double>(i) - b.center[0];
                    const double dy = static_cast<double>(j) - b.center[1];
                    const double dz = static_cast<double>(k) - b.center[2];
                    if (std::sqrt(dx * dx + dy * dy + dz * dz) <= b.radius)
                        mask[static_cast<std::size_t>(v)] = 1;
                }
        return mask;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& b : blobs)
            j["blobs"].push_back({{"class", b.cls},
                                  {"center", {b.center[0], b.center[1], b.center[2]}},
                                  {"radius", b.radius},
                                  {"intensity", b.intensity}});
        j["informative_continuous"] = informative_continuous;
        j["informative_categorical"] = informative_categorical;
        return j;
    }

    static GroundTruth from_json(const nlohmann::json& j) {
        GroundTruth gt;
        for (const auto& bj : j.at("blobs")) {
            ClassSignal b;
            b.cls = bj.at("class").get<std::string>();
            for (int i = 0; i < 3; ++i) b.center[i] = bj.at("center")[static_cast<std::size_t>(i)];
            b.radius = bj.at("radius");
            b.intensity = bj.at("intensity");
            gt.blobs.push_back(std::move(b));
        }
        gt.informative_continuous =
            j.at("informative_continuous").get<std::vector<std::string>>();
        gt.informative_categorical =
            j.at("informative_categorical").get<std::vector<std::string>>();
        return gt;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write ground truth: " + path);
        out << to_json().dump(2) << '\n';
    }
    static GroundTruth load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open ground truth: " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

namespace detail {

// Cohort proportions and per-class marginals the generator reproduces.
inline const char* kClassNames[3] = {"CN", "Dementia", "MCI"};
inline const double kClassCounts[3] = {379, 256, 610};

struct ClassStats {
    double age_mean, age_sd;
    double female_frac;
    double edu_mean, edu_sd;
    double mmse_mean, mmse_sd;
};
inline const ClassStats kStats[3] = {
    {73.5, 5.9, 0.509, 16.4, 2.7, 29.0, 1.2},   // CN
    {74.5, 7.9, 0.406, 15.4, 2.8, 23.2, 2.2},   // Dementia
    {72.3, 7.3, 0.415, 16.1, 2.7, 27.8, 1.7},   // MCI
};

struct ContinuousMarker {
    const char* name;
    double mean[3];
    double sd[3];
};
// CSF and regional-volume style markers with roughly 1-sigma class shifts.
inline const ContinuousMarker kMarkers[] = {
    {"abeta", {1100, 700, 900}, {200, 180, 190}},
    {"tau", {220, 350, 280}, {60, 80, 70}},
    {"ptau", {21, 34, 27}, {6, 8, 7}},
    {"hippocampus_left", {3.7, 2.9, 3.3}, {0.35, 0.40, 0.38}},
    {"hippocampus_right", {3.7, 2.9, 3.3}, {0.35, 0.40, 0.38}},
    {"entorhinal_left", {1.9, 1.5, 1.7}, {0.25, 0.28, 0.26}},
    {"entorhinal_right", {1.9, 1.5, 1.7}, {0.25, 0.28, 0.26}},
};

struct SnpSignal {
    int index;  // which snp column carries signal
    double maf[3];
};
inline const SnpSignal kInformativeSnps[] = {
    {1, {0.12, 0.48, 0.30}}, {2, {0.45, 0.15, 0.30}}, {3, {0.10, 0.40, 0.22}},
    {4, {0.50, 0.20, 0.35}}, {5, {0.15, 0.45, 0.28}}, {6, {0.40, 0.12, 0.25}},
};
inline constexpr int kSnpCount = 31;

inline const double kBlobCenters[3][3] = {{10, 10, 10}, {22, 22, 22}, {10, 22, 16}};

// Largest-remainder apportionment of `size` subjects to the class ratios.
inline std::vector<long> class_counts(long size) {
    double total = 0;
    for (double c : kClassCounts) total += c;
    std::vector<long> out(3);
    std::vector<std::pair<double, int>> rema;
    long assigned = 0;
    for (int c = 0; c < 3; ++c) {
        const double quota = static_cast<double>(size) * kClassCounts[c] / total;
        out[static_cast<std::size_t>(c)] = static_cast<long>(quota);
        assigned += out[static_cast<std::size_t>(c)];
        rema.push_back({quota - std::floor(quota), c});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (long i = 0; i < size - assigned; ++i)
        out[static_cast<std::size_t>(rema[static_cast<std::size_t>(i) % 3].second)] += 1;
    return out;
}

// Separable Gaussian blur along one axis.
template <class S>
void blur_axis(Volume<S>& vol, int axis, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0;
    for (int t = -radius; t <= radius; ++t) {
        kernel[static_cast<std::size_t>(t + radius)] =
            std::exp(-0.5 * (t * t) / (sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(t + radius)];
    }
    for (auto& kv : kernel) kv /= ksum;
    const Grid3 g = vol.grid;
    VecX<S> out(vol.data.size());
    Index v = 0;
    for (Index i = 0; i < g.h; ++i)
        for (Index j = 0; j < g.d; ++j)
            for (Index k = 0; k < g.w; ++k, ++v) {
                double acc = 0;
                for (int t = -radius; t <= radius; ++t) {
                    Index ii = i, jj = j, kk = k;
                    if (axis == 0) ii += t;
                    if (axis == 1) jj += t;
                    if (axis == 2) kk += t;
                    if (ii < 0 || ii >= g.h || jj < 0 || jj >= g.d || kk < 0 || kk >= g.w)
                        continue;
                    acc += kernel[static_cast<std::size_t>(t + radius)] *
                           static_cast<double>(vol.data[g.index(ii, jj, kk)]);
                }
                out[v] = static_cast<S>(acc);
            }
    vol.data = out;
}

}  // namespace detail

inline data::DatasetSchema make_schema(const Grid3& grid) {
    data::DatasetSchema schema;
    schema.class_names = {detail::kClassNames[0], detail::kClassNames[1],
                          detail::kClassNames[2]};
    schema.grid = grid;
    auto cont = [&](const std::string& name, bool input) {
        schema.features.push_back({name, tab::FeatureKind::Continuous, input});
    };
    auto cat = [&](const std::string& name) {
        schema.features.push_back({name, tab::FeatureKind::Categorical, true});
    };
    cont("age", true);
    cont("education", true);
    cont("mmse", false);  // recorded for realism, not a model input
    for (const auto& m : detail::kMarkers) cont(m.name, true);
    cat("gender");
    for (int s = 1; s <= detail::kSnpCount; ++s) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "snp%02d", s);
        cat(buf);
    }
    return schema;
}

template <class S>
std::pair<data::Dataset<S>, GroundTruth> generate(const SyntheticSpec& spec) {
    spec.validate();
    data::Dataset<S> ds;
    ds.schema = make_schema(spec.grid);
    const auto counts = detail::class_counts(spec.size);

    GroundTruth gt;
    for (int c = 0; c < 3; ++c) {
        ClassSignal b;
        b.cls = detail::kClassNames[c];
        for (int i = 0; i < 3; ++i) b.center[i] = detail::kBlobCenters[c][i];
        b.radius = spec.blob_radius;
        b.intensity = spec.blob_intensity;
        gt.blobs.push_back(b);
    }
    for (const auto& m : detail::kMarkers) gt.informative_continuous.push_back(m.name);
    for (const auto& s : detail::kInformativeSnps) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "snp%02d", s.index);
        gt.informative_categorical.push_back(buf);
    }

    // non-informative snp allele frequencies, shared across classes
    Rng maf_rng(substream_seed(spec.seed, "snp-maf"));
    std::vector<double> base_maf(detail::kSnpCount);
    for (int s = 0; s < detail::kSnpCount; ++s) base_maf[static_cast<std::size_t>(s)] =
        maf_rng.uniform(0.1, 0.5);

    long subject_index = 0;
    for (int cls = 0; cls < 3; ++cls) {
        const auto& st = detail::kStats[cls];
        for (long i = 0; i < counts[static_cast<std::size_t>(cls)]; ++i, ++subject_index) {
            data::Subject<S> sub;
            char idbuf[32];
            std::snprintf(idbuf, sizeof idbuf, "S%04ld", subject_index);
            sub.id = idbuf;
            sub.label = cls;

            Rng rng(substream_seed(spec.seed, "subject",
                                   static_cast<std::uint64_t>(subject_index)));
            std::vector<double> vals;
            vals.push_back(rng.normal(st.age_mean, st.age_sd));
            vals.push_back(rng.normal(st.edu_mean, st.edu_sd));
            vals.push_back(rng.normal(st.mmse_mean, st.mmse_sd));
            for (const auto& m : detail::kMarkers)
                vals.push_back(rng.normal(m.mean[cls], m.sd[cls]));
            vals.push_back(rng.bernoulli(st.female_frac) ? 1.0 : 0.0);  // gender
            for (int s = 1; s <= detail::kSnpCount; ++s) {
                double maf = base_maf[static_cast<std::size_t>(s - 1)];
                for (const auto& inf : detail::kInformativeSnps)
                    if (inf.index == s) maf = inf.maf[cls];
                const int alleles = (rng.bernoulli(maf) ? 1 : 0) + (rng.bernoulli(maf) ? 1 : 0);
                vals.push_back(static_cast<double>(alleles));
            }

            sub.values.resize(static_cast<Index>(vals.size()));
            sub.missing.assign(vals.size(), 0);
            for (std::size_t n = 0; n < vals.size(); ++n)
                sub.values[static_cast<Index>(n)] = static_cast<S>(vals[n]);
            // missingness on continuous columns only
            for (std::size_t n = 0; n < ds.schema.features.size(); ++n)
                if (ds.schema.features[n].kind == tab::FeatureKind::Continuous &&
                    rng.bernoulli(spec.missing_rate)) {
                    sub.missing[n] = 1;
                    sub.values[static_cast<Index>(n)] = S(0);
                }

            // volume: smoothed noise plus the class blob
            Rng vrng(substream_seed(spec.seed, "volume",
                                    static_cast<std::uint64_t>(subject_index)));
            Volume<S> vol = Volume<S>::zero(spec.grid);
            for (Index v = 0; v < vol.data.size(); ++v)
                vol.data[v] = static_cast<S>(vrng.normal(0.0, 1.0));
            if (spec.noise_smooth_sigma > 0)
                for (int axis = 0; axis < 3; ++axis)
                    detail::blur_axis(vol, axis, spec.noise_smooth_sigma);
            // renormalize the blurred field to the requested noise level
            const double mean = static_cast<double>(vol.data.mean());
            double var = 0;
            for (Index v = 0; v < vol.data.size(); ++v) {
                const double d = static_cast<double>(vol.data[v]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(vol.data.size());
            const double scale = var > 0 ? spec.noise_sd / std::sqrt(var) : 0.0;
            for (Index v = 0; v < vol.data.size(); ++v)
                vol.data[v] = static_cast<S>((static_cast<double>(vol.data[v]) - mean) * scale);

            const auto& blob = gt.blobs[static_cast<std::size_t>(cls)];
            const double sig = blob.radius / 2.0;
            Index v = 0;
            for (Index bi = 0; bi < spec.grid.h; ++bi)
                for (Index bj = 0; bj < spec.grid.d; ++bj)
                    for (Index bk = 0; bk < spec.grid.w; ++bk, ++v) {
                        const double dx = static_cast<double>(bi) - blob.center[0];
                        const double dy = static_cast<double>(bj) - blob.center[1];
                        const double dz = static_cast<double>(bk) - blob.center[2];
                        const double r2 = dx * dx + dy * dy + dz * dz;
                        vol.data[v] += static_cast<S>(blob.intensity *
                                                      std::exp(-0.5 * r2 / (sig * sig)));
                    }
            sub.volume = std::move(vol);
            ds.subjects.push_back(std::move(sub));
        }
    }
    return {std::move(ds), std::move(gt)};
}

}  // namespace panic::synth
