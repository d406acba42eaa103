//
// On-disk dataset layout and in-memory representation.
//
//   <dir>/schema.txt      key = value schema (classes, features, volume dims)
//   <dir>/manifest.csv    subject id, label, one column per feature, volume file
//   <dir>/volumes/*.raw   little-endian float32, W-fastest, with .hdr sidecar
//   <dir>/groundtruth.json generator signal record (optional)
//
// Missing tabular values are empty manifest cells. Numeric cells use %.17g
// so round-trips are bit-exact.
//

#pragma once

#include <panic/csv.hpp>
#include <panic/kvtext.hpp>
#include <panic/tabular.hpp>
#include <panic/types.hpp>

#include <bit>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace panic::data {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

struct SchemaFeature {
    std::string name;
    tab::FeatureKind kind = tab::FeatureKind::Continuous;
    bool input = true;  // false: recorded in the manifest but not a model input
};

struct DatasetSchema {
    std::vector<std::string> class_names;
    std::vector<SchemaFeature> features;
    Grid3 grid{};

    int class_index(const std::string& name) const {
        for (std::size_t i = 0; i < class_names.size(); ++i)
            if (class_names[i] == name) return static_cast<int>(i);
        throw DataError("unknown class label '" + name + "'");
    }

    // Specs for the model-input subset; column_index points into the full
    // feature vector as stored per subject.
    std::vector<tab::FeatureSpec> input_specs() const {
        std::vector<tab::FeatureSpec> specs;
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (!features[i].input) continue;
            specs.push_back({features[i].name, features[i].kind, static_cast<int>(i)});
        }
        return specs;
    }

    KvMap to_kv() const {
        KvMap kv;
        std::string cls;
        for (std::size_t i = 0; i < class_names.size(); ++i)
            cls += (i ? "," : "") + class_names[i];
        kv.set("classes", cls);
        kv.set_int("volume.h", grid.h);
        kv.set_int("volume.d", grid.d);
        kv.set_int("volume.w", grid.w);
        kv.set_int("feature.count", static_cast<long long>(features.size()));
        for (std::size_t i = 0; i < features.size(); ++i) {
            const std::string base = "feature." + std::to_string(i);
            kv.set(base + ".name", features[i].name);
            kv.set(base + ".kind",
                   features[i].kind == tab::FeatureKind::Continuous ? "continuous" : "categorical");
            kv.set_bool(base + ".input", features[i].input);
        }
        return kv;
    }

    static DatasetSchema from_kv(const KvMap& kv) {
        DatasetSchema s;
        std::string cls = kv.get("classes");
        std::size_t pos = 0;
        while (pos <= cls.size()) {
            const std::size_t comma = cls.find(',', pos);
            s.class_names.push_back(cls.substr(pos, comma == std::string::npos ? std::string::npos
                                                                               : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        s.grid = Grid3{static_cast<int>(kv.get_int("volume.h")), static_cast<int>(kv.get_int("volume.d")),
                       static_cast<int>(kv.get_int("volume.w"))};
        const long long n = kv.get_int("feature.count");
        for (long long i = 0; i < n; ++i) {
            const std::string base = "feature." + std::to_string(i);
            SchemaFeature f;
            f.name = kv.get(base + ".name");
            const std::string kind = kv.get(base + ".kind");
            if (kind == "continuous")
                f.kind = tab::FeatureKind::Continuous;
            else if (kind == "categorical")
                f.kind = tab::FeatureKind::Categorical;
            else
                throw DataError("unknown feature kind '" + kind + "' in schema");
            f.input = kv.get_bool_or(base + ".input", true);
            s.features.push_back(std::move(f));
        }
        return s;
    }
};

template <class S>
struct Subject {
    std::string id;
    int label = 0;
    VecX<S> values;                      // all schema features, raw units
    std::vector<std::uint8_t> missing;   // aligned with values
    Volume<S> volume;
};

template <class S>
struct Dataset {
    DatasetSchema schema;
    std::vector<Subject<S>> subjects;

    // Model-input view of subject i (input features only, raw units).
    tab::TabularSample<S> input_sample(std::size_t i) const {
        const auto specs = schema.input_specs();
        tab::TabularSample<S> t;
        t.values.resize(static_cast<Index>(specs.size()));
        t.missing.resize(specs.size());
        for (std::size_t n = 0; n < specs.size(); ++n) {
            const auto col = static_cast<Index>(specs[n].column_index);
            t.values[static_cast<Index>(n)] = subjects[i].values[col];
            t.missing[n] = subjects[i].missing[static_cast<std::size_t>(col)];
        }
        return t;
    }

    std::vector<tab::TabularSample<S>> input_samples() const {
        std::vector<tab::TabularSample<S>> out;
        out.reserve(subjects.size());
        for (std::size_t i = 0; i < subjects.size(); ++i) out.push_back(input_sample(i));
        return out;
    }

    std::size_t find_subject(const std::string& id) const {
        for (std::size_t i = 0; i < subjects.size(); ++i)
            if (subjects[i].id == id) return i;
        throw DataError("subject '" + id + "' not found in dataset");
    }
};

// ---- volume files ----

template <class S>
void save_volume(const std::string& raw_path, const Volume<S>& vol, const std::string& subject) {
    std::ofstream out(raw_path, std::ios::binary);
    if (!out) throw DataError("cannot write volume file: " + raw_path);
    for (Index i = 0; i < vol.data.size(); ++i) {
        const float f = static_cast<float>(vol.data[i]);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    if (!out) throw DataError("failed writing volume file: " + raw_path);
    KvMap hdr;
    hdr.set_int("h", vol.grid.h);
    hdr.set_int("d", vol.grid.d);
    hdr.set_int("w", vol.grid.w);
    hdr.set("subject", subject);
    hdr.save(raw_path + ".hdr");
}

template <class S>
Volume<S> load_volume(const std::string& raw_path, const std::string& expect_subject = "") {
    KvMap hdr = KvMap::load(raw_path + ".hdr");
    Volume<S> vol;
    vol.grid = Grid3{static_cast<int>(hdr.get_int("h")), static_cast<int>(hdr.get_int("d")),
                     static_cast<int>(hdr.get_int("w"))};
    if (!expect_subject.empty() && hdr.get("subject") != expect_subject)
        throw DataError("volume header subject '" + hdr.get("subject") + "' does not match '" +
                        expect_subject + "' in " + raw_path);
    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw DataError("cannot open volume file: " + raw_path);
    const Index n = vol.grid.voxels();
    vol.data.resize(n);
    for (Index i = 0; i < n; ++i) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), sizeof f);
        if (!in) throw DataError("corrupt (truncated) volume file: " + raw_path);
        vol.data[i] = static_cast<S>(f);
    }
    char extra = 0;
    if (in.read(&extra, 1))
        throw DataError("corrupt (oversized) volume file: " + raw_path);
    return vol;
}

// ---- dataset directory ----

template <class S>
void save_dataset(const std::string& dir, const Dataset<S>& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "volumes");
    ds.schema.to_kv().save((fs::path(dir) / "schema.txt").string());

    CsvTable manifest;
    manifest.header = {"subject_id", "label"};
    for (const auto& f : ds.schema.features) manifest.header.push_back(f.name);
    manifest.header.push_back("volume");
    for (const auto& sub : ds.subjects) {
        std::vector<std::string> row;
        row.push_back(sub.id);
        row.push_back(ds.schema.class_names[static_cast<std::size_t>(sub.label)]);
        for (std::size_t n = 0; n < ds.schema.features.size(); ++n)
            row.push_back(sub.missing[n] ? ""
                                         : csv_double(static_cast<double>(
                                               sub.values[static_cast<Index>(n)])));
        const std::string volfile = "volumes/" + sub.id + ".raw";
        row.push_back(volfile);
        manifest.rows.push_back(std::move(row));
        save_volume((fs::path(dir) / volfile).string(), sub.volume, sub.id);
    }
    write_csv((fs::path(dir) / "manifest.csv").string(), manifest);
}

template <class S>
Dataset<S> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset<S> ds;
    ds.schema = DatasetSchema::from_kv(KvMap::load((fs::path(dir) / "schema.txt").string()));
    CsvTable manifest = read_csv((fs::path(dir) / "manifest.csv").string());

    const Index id_col = manifest.col("subject_id");
    const Index label_col = manifest.col("label");
    const Index vol_col = manifest.col("volume");
    std::vector<Index> feat_cols;
    for (const auto& f : ds.schema.features) feat_cols.push_back(manifest.col(f.name));

    for (const auto& row : manifest.rows) {
        Subject<S> sub;
        sub.id = row[static_cast<std::size_t>(id_col)];
        sub.label = ds.schema.class_index(row[static_cast<std::size_t>(label_col)]);
        sub.values.resize(static_cast<Index>(feat_cols.size()));
        sub.missing.resize(feat_cols.size());
        for (std::size_t n = 0; n < feat_cols.size(); ++n) {
            const std::string& cell = row[static_cast<std::size_t>(feat_cols[n])];
            if (cell.empty()) {
                sub.missing[n] = 1;
                sub.values[static_cast<Index>(n)] = S(0);
            } else {
                sub.missing[n] = 0;
                char* end = nullptr;
                sub.values[static_cast<Index>(n)] =
                    static_cast<S>(std::strtod(cell.c_str(), &end));
                if (end == cell.c_str())
                    throw DataError("bad numeric cell '" + cell + "' for feature '" +
                                    ds.schema.features[n].name + "'");
            }
        }
        sub.volume = load_volume<S>(
            (fs::path(dir) / row[static_cast<std::size_t>(vol_col)]).string(), sub.id);
        if (sub.volume.grid.h != ds.schema.grid.h || sub.volume.grid.d != ds.schema.grid.d ||
            sub.volume.grid.w != ds.schema.grid.w)
            throw DataError("volume dims " + sub.volume.grid.str() + " do not match schema " +
                            ds.schema.grid.str() + " for subject " + sub.id);
        ds.subjects.push_back(std::move(sub));
    }
    return ds;
}

}  // namespace panic::data
