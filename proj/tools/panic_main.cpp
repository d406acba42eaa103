//
// Command-line entry point: dataset generation, cross-validated training,
// evaluation, and explanation export. Configuration is resolved as
// defaults < --config file < dotted-key flags, and every run directory
// stores its resolved configuration before any work happens.
//

#include <panic/checkpoint.hpp>
#include <panic/config.hpp>
#include <panic/csv.hpp>
#include <panic/dataset.hpp>
#include <panic/folds.hpp>
#include <panic/interpret.hpp>
#include <panic/model.hpp>
#include <panic/render.hpp>
#include <panic/synth.hpp>
#include <panic/train.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using panic::Real;

namespace {

struct CommandArgs {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::string checkpoint_path;
    std::vector<std::string> subjects;
    std::map<std::string, std::string> overrides;  // dotted config keys
};

// Register --config/--out/--data/--checkpoint plus one flag per dotted
// configuration key (same names as in the config file).
void add_common_options(CLI::App* cmd, CommandArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--data", args.data_dir, "dataset directory");
    cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint file");
    const panic::KvMap defaults = panic::default_config();  // keep alive for items()
    for (const auto& [key, value] : defaults.items()) {
        const std::string name = "--" + key;
        const std::string help = "config override (default " + value + ")";
        cmd->add_option_function<std::string>(
               name, [&args, k = key](const std::string& v) { args.overrides[k] = v; }, help)
            ->group("Config overrides");
    }
}

panic::KvMap resolve(const CommandArgs& args) {
    std::vector<std::pair<std::string, std::string>> ov(args.overrides.begin(),
                                                        args.overrides.end());
    return panic::resolve_config(args.config_path, ov);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw panic::ConfigError(what);
}

std::string pct(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
    return buf;
}

std::string mean_sd(double m, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f (%.1f)", m, sd);
    return buf;
}

Eigen::Index schema_column(const panic::data::DatasetSchema& schema, const std::string& name) {
    for (std::size_t i = 0; i < schema.features.size(); ++i)
        if (schema.features[i].name == name) return static_cast<Eigen::Index>(i);
    throw panic::DataError("dataset schema lacks required column '" + name + "'");
}

// ---------------------------------------------------------------- generate

int cmd_generate(const CommandArgs& args) {
    require(!args.out_dir.empty(), "generate needs --out");
    panic::KvMap kv = resolve(args);
    const auto spec = panic::synth_spec_from(kv);

    fs::create_directories(args.out_dir);
    kv.save((fs::path(args.out_dir) / "config.txt").string());

    auto [ds, gt] = panic::synth::generate<Real>(spec);
    panic::data::save_dataset(args.out_dir, ds);
    gt.save((fs::path(args.out_dir) / "groundtruth.json").string());

    // cohort summary in the style of a baseline-characteristics table
    const auto& schema = ds.schema;
    const auto age_c = schema_column(schema, "age");
    const auto edu_c = schema_column(schema, "education");
    const auto mmse_c = schema_column(schema, "mmse");
    const auto sex_c = schema_column(schema, "gender");
    std::printf("%-10s %5s  %-12s %-8s %-12s %-12s\n", "class", "N", "age", "female%",
                "education", "mmse");
    for (std::size_t c = 0; c < schema.class_names.size(); ++c) {
        long n = 0, fem = 0;
        auto acc = [&](Eigen::Index col) {
            double s = 0, s2 = 0;
            long k = 0;
            for (const auto& sub : ds.subjects) {
                if (sub.label != static_cast<int>(c)) continue;
                if (sub.missing[static_cast<std::size_t>(col)]) continue;
                const double v = static_cast<double>(sub.values[col]);
                s += v;
                s2 += v * v;
                ++k;
            }
            const double m = k ? s / k : 0.0;
            const double var = k > 1 ? (s2 - k * m * m) / (k - 1) : 0.0;
            return std::pair<double, double>(m, std::sqrt(std::max(0.0, var)));
        };
        for (const auto& sub : ds.subjects)
            if (sub.label == static_cast<int>(c)) {
                ++n;
                if (sub.values[sex_c] > Real(0.5)) ++fem;
            }
        const auto [am, asd] = acc(age_c);
        const auto [em, esd] = acc(edu_c);
        const auto [mm, msd] = acc(mmse_c);
        std::printf("%-10s %5ld  %-12s %-8s %-12s %-12s\n", schema.class_names[c].c_str(), n,
                    mean_sd(am, asd).c_str(), pct(n ? double(fem) / n : 0).c_str(),
                    mean_sd(em, esd).c_str(), mean_sd(mm, msd).c_str());
    }
    std::printf("wrote %zu subjects to %s\n", ds.subjects.size(), args.out_dir.c_str());
    return 0;
}

// ------------------------------------------------------------------- train

struct FoldData {
    panic::SplitView<Real> train, val, test;
    std::vector<std::string> test_ids;
    std::vector<std::size_t> train_ids;
    panic::tab::StandardStats<Real> stats;
};

FoldData build_fold(const panic::data::Dataset<Real>& ds, const panic::data::FoldAssignment& fa,
                    int fold, const std::vector<panic::tab::FeatureSpec>& specs, bool use_image) {
    FoldData fd;
    const auto tr = fa.ids_with_role(fold, panic::data::Role::Train);
    const auto va = fa.ids_with_role(fold, panic::data::Role::Val);
    const auto te = fa.ids_with_role(fold, panic::data::Role::Test);
    fd.train_ids = tr;

    std::vector<panic::tab::TabularSample<Real>> raw;
    raw.reserve(tr.size());
    for (auto i : tr) raw.push_back(ds.input_sample(i));
    fd.stats = panic::tab::compute_standard_stats(raw, specs);

    auto build = [&](const std::vector<std::size_t>& ids, panic::SplitView<Real>& out,
                     std::vector<std::string>* names) {
        std::vector<panic::tab::TabularSample<Real>> r;
        r.reserve(ids.size());
        for (auto i : ids) r.push_back(ds.input_sample(i));
        out.tabs = panic::tab::standardize(r, fd.stats);
        for (auto i : ids) {
            if (use_image) out.vols.push_back(&ds.subjects[i].volume);
            out.labels.push_back(ds.subjects[i].label);
            if (names) names->push_back(ds.subjects[i].id);
        }
    };
    build(tr, fd.train, nullptr);
    build(va, fd.val, nullptr);
    build(te, fd.test, &fd.test_ids);
    return fd;
}

void write_history(const std::string& path, const std::vector<panic::EpochRecord>& history) {
    panic::CsvTable t;
    t.header = {"epoch",      "image_phase",      "lr_factor",
                "loss_total", "loss_ce",          "loss_tab",
                "loss_cluster", "loss_separation", "loss_occurrence",
                "loss_affine", "val_bacc",        "projection_event",
                "validation_event", "min_projection_similarity", "best"};
    for (const auto& r : history) {
        t.rows.push_back({std::to_string(r.epoch), r.image_phase ? "1" : "0",
                          panic::csv_double(r.lr_factor), panic::csv_double(r.loss.total),
                          panic::csv_double(r.loss.ce), panic::csv_double(r.loss.tab),
                          panic::csv_double(r.loss.cluster),
                          panic::csv_double(r.loss.separation),
                          panic::csv_double(r.loss.occurrence),
                          panic::csv_double(r.loss.affine), panic::csv_double(r.val_bacc),
                          std::to_string(r.projection_event), std::to_string(r.validation_event),
                          panic::csv_double(r.min_projection_similarity), r.is_best ? "1" : "0"});
    }
    panic::write_csv(path, t);
}

void write_predictions(const std::string& path, const std::vector<std::string>& ids,
                       const std::vector<int>& labels, const panic::EvalResult<Real>& ev,
                       const std::vector<std::string>& class_names) {
    panic::CsvTable t;
    t.header = {"subject", "true_class", "predicted_class"};
    for (const auto& c : class_names) t.header.push_back("logit_" + c);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<std::string> row = {ids[i],
                                        class_names[static_cast<std::size_t>(labels[i])],
                                        class_names[static_cast<std::size_t>(ev.predictions[i])]};
        for (Eigen::Index c = 0; c < ev.logits.cols(); ++c)
            row.push_back(panic::csv_double(
                static_cast<double>(ev.logits(static_cast<Eigen::Index>(i), c))));
        t.rows.push_back(std::move(row));
    }
    panic::write_csv(path, t);
}

int cmd_train(const CommandArgs& args) {
    require(!args.data_dir.empty(), "train needs --data");
    require(!args.out_dir.empty(), "train needs --out");
    panic::KvMap kv = resolve(args);
    const auto tc = panic::train_config_from(kv);
    const auto lw = panic::loss_weights_from(kv);
    const auto root_seed = static_cast<std::uint64_t>(kv.get_int("seed"));
    const int k_folds = static_cast<int>(kv.get_int("train.folds"));
    const long only_fold = kv.get_int("train.fold");
    if (k_folds < 2) throw panic::ConfigError("train.folds must be >= 2");
    if (only_fold >= k_folds)
        throw panic::ConfigError("train.fold out of range for " + std::to_string(k_folds) +
                                 " folds");

    fs::create_directories(args.out_dir);
    kv.save((fs::path(args.out_dir) / "config.txt").string());

    const auto ds = panic::data::load_dataset<Real>(args.data_dir);
    const auto specs = ds.schema.input_specs();
    const int classes = static_cast<int>(ds.schema.class_names.size());
    const auto mc = panic::model_config_from(kv, classes, ds.schema.grid);

    // stratification cells: class x sex x age quartile
    std::vector<int> labels, sexes;
    std::vector<double> ages;
    const auto age_c = schema_column(ds.schema, "age");
    const auto sex_c = schema_column(ds.schema, "gender");
    for (const auto& sub : ds.subjects) {
        labels.push_back(sub.label);
        sexes.push_back(sub.values[sex_c] > Real(0.5) ? 1 : 0);
        ages.push_back(static_cast<double>(sub.values[age_c]));
    }
    const auto fa = panic::data::stratified_folds(labels, sexes, ages, k_folds, root_seed);

    std::vector<double> fold_val, fold_test;
    std::vector<long> fold_best_epoch;
    std::vector<int> fold_ids;
    for (int f = 0; f < k_folds; ++f) {
        if (only_fold >= 0 && f != only_fold) continue;
        fold_ids.push_back(f);
        const auto fd = build_fold(ds, fa, f, specs, mc.use_image);

        panic::Rng init_rng(panic::substream_seed(root_seed, "init", f, 0, 0));
        panic::PanicModel<Real> model(mc, init_rng);
        model.attach_tabular(specs, init_rng);

        if (mc.use_image && tc.warmup_epochs > 0)
            panic::warmup_backbone(model, fd.train, tc, root_seed, f);
        auto outcome = panic::train_model(model, fd.train, fd.val, tc, lw, root_seed, f);
        const auto test_ev = panic::evaluate_split(model, fd.test);

        const fs::path fold_dir = fs::path(args.out_dir) / ("fold" + std::to_string(f));
        fs::create_directories(fold_dir);
        write_history((fold_dir / "history.csv").string(), outcome.history);
        write_predictions((fold_dir / "predictions.csv").string(), fd.test_ids, fd.test.labels,
                          test_ev, ds.schema.class_names);

        std::vector<panic::PrototypeSource> sources;
        for (const auto& e : outcome.projection.entries)
            sources.push_back({e.cls, e.k,
                               ds.subjects[fd.train_ids[static_cast<std::size_t>(e.source)]].id,
                               e.similarity});
        panic::save_checkpoint((fold_dir / "checkpoint.bin").string(), model, kv, ds.schema,
                               fd.stats, sources);

        fold_val.push_back(outcome.best_val_bacc);
        fold_test.push_back(test_ev.bacc);
        fold_best_epoch.push_back(outcome.best_epoch);
        std::printf("fold %d: val BAcc %.4f (best epoch %ld), test BAcc %.4f\n", f,
                    outcome.best_val_bacc, outcome.best_epoch, test_ev.bacc);
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    auto sd_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean_of(v);
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    panic::CsvTable mt;
    mt.header = {"fold", "best_epoch", "val_bacc", "test_bacc"};
    for (std::size_t i = 0; i < fold_ids.size(); ++i)
        mt.rows.push_back({std::to_string(fold_ids[i]), std::to_string(fold_best_epoch[i]),
                           panic::csv_double(fold_val[i]), panic::csv_double(fold_test[i])});
    mt.rows.push_back(
        {"mean", "", panic::csv_double(mean_of(fold_val)), panic::csv_double(mean_of(fold_test))});
    mt.rows.push_back(
        {"sd", "", panic::csv_double(sd_of(fold_val)), panic::csv_double(sd_of(fold_test))});
    panic::write_csv((fs::path(args.out_dir) / "metrics.csv").string(), mt);

    std::printf("val BAcc %.4f +/- %.4f | test BAcc %.4f +/- %.4f (%zu fold%s)\n",
                mean_of(fold_val), sd_of(fold_val), mean_of(fold_test), sd_of(fold_test),
                fold_ids.size(), fold_ids.size() == 1 ? "" : "s");
    return 0;
}

// -------------------------------------------------------------- evaluate

struct LoadedBundle {
    panic::LoadedModel<Real> ck;
    panic::data::Dataset<Real> ds;
    panic::SplitView<Real> split;
    std::vector<std::string> ids;
};

LoadedBundle load_bundle(const CommandArgs& args) {
    require(!args.checkpoint_path.empty(), "this command needs --checkpoint");
    require(!args.data_dir.empty(), "this command needs --data");
    LoadedBundle b{panic::load_checkpoint<Real>(args.checkpoint_path),
                   panic::data::load_dataset<Real>(args.data_dir),
                   {},
                   {}};
    if (b.ck.schema.to_kv().serialize() != b.ds.schema.to_kv().serialize())
        throw panic::DataError("dataset schema does not match the checkpoint's schema");

    std::vector<panic::tab::TabularSample<Real>> raw;
    raw.reserve(b.ds.subjects.size());
    for (std::size_t i = 0; i < b.ds.subjects.size(); ++i) raw.push_back(b.ds.input_sample(i));
    b.split.tabs = panic::tab::standardize(raw, b.ck.stats);
    for (const auto& sub : b.ds.subjects) {
        if (b.ck.model.config().use_image) b.split.vols.push_back(&sub.volume);
        b.split.labels.push_back(sub.label);
        b.ids.push_back(sub.id);
    }
    return b;
}

int cmd_evaluate(const CommandArgs& args) {
    LoadedBundle b = load_bundle(args);
    const auto ev = panic::evaluate_split(b.ck.model, b.split);
    std::printf("subjects %zu, balanced accuracy %.6f\n", b.ids.size(), ev.bacc);
    std::printf("confusion (rows true, cols predicted):\n");
    for (Eigen::Index r = 0; r < ev.confusion.rows(); ++r) {
        std::printf("  %-10s", b.ds.schema.class_names[static_cast<std::size_t>(r)].c_str());
        for (Eigen::Index c = 0; c < ev.confusion.cols(); ++c)
            std::printf(" %5d", ev.confusion(r, c));
        std::printf("\n");
    }
    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        write_predictions((fs::path(args.out_dir) / "predictions.csv").string(), b.ids,
                          b.split.labels, ev, b.ds.schema.class_names);
        panic::CsvTable mt;
        mt.header = {"metric", "value"};
        mt.rows.push_back({"balanced_accuracy", panic::csv_double(ev.bacc)});
        mt.rows.push_back({"subjects", std::to_string(b.ids.size())});
        panic::write_csv((fs::path(args.out_dir) / "metrics.csv").string(), mt);
    }
    return 0;
}

// --------------------------------------------------------------- explain

int cmd_explain(const CommandArgs& args) {
    require(!args.out_dir.empty(), "explain needs --out");
    require(!args.subjects.empty(), "explain needs at least one --subject");
    LoadedBundle b = load_bundle(args);
    const auto& model = b.ck.model;
    const auto& names = b.ds.schema.class_names;
    const bool use_tab = model.config().use_tabular;
    const bool use_img = model.config().use_image;

    for (const auto& id : args.subjects) {
        std::size_t idx = b.ids.size();
        for (std::size_t i = 0; i < b.ids.size(); ++i)
            if (b.ids[i] == id) idx = i;
        if (idx == b.ids.size())
            throw panic::DataError("subject '" + id + "' not found in " + args.data_dir);

        const auto* ts = use_tab ? &b.split.tabs[idx] : nullptr;
        const auto* vol = use_img ? &b.ds.subjects[idx].volume : nullptr;
        const auto ex = panic::interpret::explain_local(model, id, ts, vol,
                                                        b.ds.subjects[idx].label);

        const fs::path dir = fs::path(args.out_dir) / id;
        fs::create_directories(dir);

        // structured text: every numeric field, exact round-trip formatting
        panic::KvMap out;
        out.set("sample", id);
        out.set("predicted", names[static_cast<std::size_t>(ex.predicted)]);
        out.set("true", names[static_cast<std::size_t>(ex.true_label)]);
        out.set_double("fidelity_residual", ex.fidelity_residual());
        out.set_int("degenerate_latents", ex.degenerate_latents);
        for (std::size_t c = 0; c < names.size(); ++c) {
            out.set_double("bias." + names[c], static_cast<double>(ex.bias[static_cast<Eigen::Index>(c)]));
            out.set_double("logit." + names[c],
                           static_cast<double>(ex.logits[static_cast<Eigen::Index>(c)]));
            out.set_double("prob." + names[c],
                           static_cast<double>(ex.probs[static_cast<Eigen::Index>(c)]));
        }
        if (use_tab)
            for (Eigen::Index n = 0; n < ex.contribs.rows(); ++n)
                for (std::size_t c = 0; c < names.size(); ++c)
                    out.set_double("contrib." + model.nam().spec(n).name + "." + names[c],
                                   static_cast<double>(
                                       ex.contribs(n, static_cast<Eigen::Index>(c))));
        if (use_img)
            for (std::size_t c = 0; c < names.size(); ++c)
                for (Eigen::Index k = 0; k < ex.scores.cols(); ++k)
                    out.set_double("score." + names[c] + "." + std::to_string(k),
                                   static_cast<double>(
                                       ex.scores(static_cast<Eigen::Index>(c), k)));
        out.save((dir / "explanation.txt").string());

        // CSV of the same breakdown
        panic::CsvTable ct;
        ct.header = {"term", "class", "value"};
        for (std::size_t c = 0; c < names.size(); ++c)
            ct.rows.push_back({"bias", names[c],
                               panic::csv_double(static_cast<double>(
                                   ex.bias[static_cast<Eigen::Index>(c)]))});
        if (use_tab)
            for (Eigen::Index n = 0; n < ex.contribs.rows(); ++n)
                for (std::size_t c = 0; c < names.size(); ++c)
                    ct.rows.push_back({model.nam().spec(n).name, names[c],
                                       panic::csv_double(static_cast<double>(
                                           ex.contribs(n, static_cast<Eigen::Index>(c))))});
        if (use_img)
            for (std::size_t c = 0; c < names.size(); ++c)
                for (Eigen::Index k = 0; k < ex.scores.cols(); ++k)
                    ct.rows.push_back({"prototype " + std::to_string(k), names[c],
                                       panic::csv_double(static_cast<double>(ex.scores(
                                           static_cast<Eigen::Index>(c), k)))});
        panic::write_csv((dir / "explanation.csv").string(), ct);

        // waterfall-style chart of contributions to the predicted class
        std::vector<panic::render::BarItem> items;
        if (use_tab)
            for (Eigen::Index n = 0; n < ex.contribs.rows(); ++n)
                items.push_back({model.nam().spec(n).name,
                                 static_cast<double>(ex.contribs(n, ex.predicted))});
        if (use_img)
            for (Eigen::Index k = 0; k < ex.scores.cols(); ++k)
                items.push_back({"image prototype " + std::to_string(k),
                                 static_cast<double>(ex.scores(ex.predicted, k))});
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            return std::abs(a.value) > std::abs(b.value);
        });
        char foot[160];
        std::snprintf(foot, sizeof foot, "bias %.4f | logit %.4f | prob %.4f",
                      static_cast<double>(ex.bias[ex.predicted]),
                      static_cast<double>(ex.logits[ex.predicted]),
                      static_cast<double>(ex.probs[ex.predicted]));
        panic::render::render_bars(
            (dir / "waterfall.png").string(),
            id + ": contributions to " + names[static_cast<std::size_t>(ex.predicted)], items,
            {foot});

        // attention for the best-scoring prototype of the predicted class
        if (use_img) {
            panic::img::ConvWorkspace<Real> ws;
            panic::EvalDetail<Real> det;
            model.eval_forward(ts, vol, det, ws);
            Eigen::Index best_k = 0;
            for (Eigen::Index k = 1; k < det.scores.cols(); ++k)
                if (det.scores(ex.predicted, k) > det.scores(ex.predicted, best_k)) best_k = k;
            const Eigen::Index row = model.proto().proto_row(ex.predicted, static_cast<int>(best_k));
            const panic::VecX<Real> map = det.heads.sig.row(row).transpose();
            const auto overlay = panic::img::attention_overlay<Real>(
                map, model.feature_grid(), b.ds.schema.grid, 0.3);
            panic::Volume<Real> att(b.ds.schema.grid, overlay.upsampled);
            panic::data::save_volume((dir / "attention.raw").string(), att, id);
            std::vector<float> vox(att.data.data(), att.data.data() + att.data.size());
            panic::render::render_attention_montage(
                (dir / "montage.png").string(),
                id + " prototype " + std::to_string(best_k) + " (" +
                    names[static_cast<std::size_t>(ex.predicted)] + ")",
                b.ds.schema.grid, vox, overlay.mask);
        }
        std::printf("%s: predicted %s, fidelity residual %.3g\n", id.c_str(),
                    names[static_cast<std::size_t>(ex.predicted)].c_str(),
                    ex.fidelity_residual());
    }
    return 0;
}

// ------------------------------------------------------------ importance

int cmd_importance(const CommandArgs& args) {
    require(!args.out_dir.empty(), "importance needs --out");
    LoadedBundle b = load_bundle(args);
    auto entries = panic::interpret::global_importance(b.ck.model, b.split);
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& c) { return a.overall > c.overall; });

    fs::create_directories(args.out_dir);
    panic::CsvTable t;
    t.header = {"function", "kind", "overall"};
    for (const auto& c : b.ds.schema.class_names) t.header.push_back("class_" + c);
    for (const auto& e : entries) {
        std::vector<std::string> row = {
            e.label,
            e.image ? (e.proto_k < 0 ? "image-combined" : "image-prototype") : "tabular",
            panic::csv_double(e.overall)};
        for (double v : e.per_class) row.push_back(panic::csv_double(v));
        t.rows.push_back(std::move(row));
    }
    panic::write_csv((fs::path(args.out_dir) / "importance.csv").string(), t);

    std::vector<panic::render::BarItem> items;
    for (std::size_t i = 0; i < entries.size() && i < 15; ++i)
        items.push_back({entries[i].label, entries[i].overall});
    panic::render::render_bars((fs::path(args.out_dir) / "importance.png").string(),
                               "mean |contribution| (top functions)", items, {});
    std::printf("wrote %zu functions to %s/importance.csv\n", entries.size(),
                args.out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------- curves

int cmd_curves(const CommandArgs& args) {
    require(!args.out_dir.empty(), "curves needs --out");
    LoadedBundle b = load_bundle(args);
    const auto& model = b.ck.model;
    if (!model.config().use_tabular)
        throw panic::ConfigError("log-odds curves need the tabular branch");
    const panic::KvMap& kv = b.ck.config;
    const int ref_cls = static_cast<int>(kv.get_int_or("interpret.reference_class", 0));
    const int grid_points = static_cast<int>(kv.get_int_or("interpret.grid_points", 101));
    const auto& names = b.ds.schema.class_names;
    if (ref_cls < 0 || ref_cls >= static_cast<int>(names.size()))
        throw panic::ConfigError("interpret.reference_class out of range");

    // background sample: first subject (the additive cancellation makes the
    // curve background-independent; this is verified inside the operation)
    panic::MatX<Real> bg_scores;
    const panic::MatX<Real>* bg_scores_ptr = nullptr;
    if (model.config().use_image) {
        panic::img::ConvWorkspace<Real> ws;
        panic::EvalDetail<Real> det;
        model.eval_forward(&b.split.tabs[0], b.split.vols[0], det, ws);
        bg_scores = det.scores;
        bg_scores_ptr = &bg_scores;
    }

    const fs::path curve_dir = fs::path(args.out_dir) / "curves";
    fs::create_directories(curve_dir);
    const auto specs = b.ds.schema.input_specs();
    long written = 0;
    for (std::size_t n = 0; n < specs.size(); ++n) {
        // observed raw (unstandardized) values over the provided split
        std::vector<double> observed;
        const auto col = static_cast<Eigen::Index>(specs[n].column_index);
        for (const auto& sub : b.ds.subjects)
            if (!sub.missing[static_cast<std::size_t>(col)])
                observed.push_back(static_cast<double>(sub.values[col]));

        for (int c = 0; c < static_cast<int>(names.size()); ++c) {
            if (c == ref_cls) continue;
            const auto curve = panic::interpret::log_odds_curve(
                model, b.ck.stats, static_cast<Eigen::Index>(n), c, ref_cls, observed,
                b.split.tabs[0], bg_scores_ptr, grid_points);

            panic::CsvTable t;
            t.header = {"x", "log_odds"};
            for (std::size_t i = 0; i < curve.grid.size(); ++i)
                t.rows.push_back(
                    {panic::csv_double(curve.grid[i]), panic::csv_double(curve.values[i])});
            const std::string base = curve.feature + "_" + names[static_cast<std::size_t>(c)];
            panic::write_csv((curve_dir / (base + ".csv")).string(), t);

            panic::render::CurvePlot plot;
            plot.title = curve.feature + " vs " + names[static_cast<std::size_t>(ref_cls)];
            plot.xlabel = curve.feature;
            plot.ylabel = "log-odds " + names[static_cast<std::size_t>(c)];
            plot.x = curve.grid;
            plot.y = curve.values;
            plot.has_band = !curve.categorical;
            plot.band_lo = curve.obs_q1;
            plot.band_hi = curve.obs_q3;
            plot.has_marker = true;
            plot.marker_x = curve.x_ref;
            plot.marker_y = 0.0;
            char note[120];
            std::snprintf(note, sizeof note, "missing-value contribution: %.5g",
                          curve.missing_value);
            plot.footer = {note};
            panic::render::render_curve((curve_dir / (base + ".png")).string(), plot);
            ++written;
        }
    }
    std::printf("wrote %ld curves to %s\n", written, curve_dir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"additive tabular + volumetric-prototype classifier"};
    app.require_subcommand(1);

    CommandArgs gen_args, train_args, eval_args, explain_args, imp_args, curves_args;
    auto* gen = app.add_subcommand("generate", "create a synthetic dataset directory");
    add_common_options(gen, gen_args);
    auto* train = app.add_subcommand("train", "cross-validated training run");
    add_common_options(train, train_args);
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    add_common_options(eval, eval_args);
    auto* explain = app.add_subcommand("explain", "export per-subject explanations");
    add_common_options(explain, explain_args);
    explain->add_option("--subject", explain_args.subjects, "subject id (repeatable)");
    auto* importance = app.add_subcommand("importance", "global importance table");
    add_common_options(importance, imp_args);
    auto* curves = app.add_subcommand("curves", "per-feature log-odds curves");
    add_common_options(curves, curves_args);

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_evaluate(eval_args);
        if (explain->parsed()) return cmd_explain(explain_args);
        if (importance->parsed()) return cmd_importance(imp_args);
        if (curves->parsed()) return cmd_curves(curves_args);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const panic::PanicError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
