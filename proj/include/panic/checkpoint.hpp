//
// Versioned binary checkpoint. Stores the resolved configuration, dataset
// schema, standardization statistics, every model parameter, the spectral
// power-iteration vectors, and prototype provenance. A reloaded model
// reproduces evaluation outputs bit-exactly: evaluation weights are rebuilt
// from the stored power vectors with no further iteration.
//
// Layout (little-endian throughout, checksum = FNV-1a 64 of all prior bytes):
//   magic "PANCKPT1" | u32 version | str config | str schema | str stats
//   | u32 scalar_width | sources | params | power vectors | u64 checksum
//

#pragma once

#include <panic/config.hpp>
#include <panic/dataset.hpp>
#include <panic/kvtext.hpp>
#include <panic/model.hpp>
#include <panic/types.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace panic {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct PrototypeSource {
    int cls = 0;
    int k = 0;
    std::string subject_id;
    double similarity = 0.0;
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'P', 'A', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}
inline void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}
inline void put_f64(std::string& out, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}
inline void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out.append(s);
}
template <class T>
void put_raw(std::string& out, const T* p, std::size_t n) {
    out.append(reinterpret_cast<const char*>(p), n * sizeof(T));
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("corrupt checkpoint: truncated record");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        if (n > buf.size()) throw DataError("corrupt checkpoint: oversized string");
        need(static_cast<std::size_t>(n));
        std::string s = buf.substr(pos, static_cast<std::size_t>(n));
        pos += static_cast<std::size_t>(n);
        return s;
    }
    template <class T>
    void raw(T* p, std::size_t n) {
        need(n * sizeof(T));
        std::memcpy(p, buf.data() + pos, n * sizeof(T));
        pos += n * sizeof(T);
    }
};

}  // namespace ckpt_detail

template <class S>
void save_checkpoint(const std::string& path, PanicModel<S>& model, const KvMap& config,
                     const data::DatasetSchema& schema, const tab::StandardStats<S>& stats,
                     const std::vector<PrototypeSource>& sources) {
    using namespace ckpt_detail;
    std::string buf;
    buf.append(kMagic, 8);
    put_u32(buf, kVersion);
    put_str(buf, config.serialize());
    put_str(buf, schema.to_kv().serialize());
    put_str(buf, stats.to_kv().serialize());
    put_u32(buf, static_cast<std::uint32_t>(sizeof(S)));

    put_u64(buf, sources.size());
    for (const auto& src : sources) {
        put_u32(buf, static_cast<std::uint32_t>(src.cls));
        put_u32(buf, static_cast<std::uint32_t>(src.k));
        put_str(buf, src.subject_id);
        put_f64(buf, src.similarity);
    }

    std::uint64_t n_params = 0;
    model.visit_params([&](const std::string&, S*, Index, bool, bool) { ++n_params; });
    put_u64(buf, n_params);
    model.visit_params([&](const std::string& name, S* p, Index sz, bool, bool) {
        put_str(buf, name);
        put_u64(buf, static_cast<std::uint64_t>(sz));
        put_raw(buf, p, static_cast<std::size_t>(sz));
    });

    std::uint64_t n_power = 0;
    if (model.config().use_tabular)
        model.nam().visit_power_state([&](const std::string&, VecX<S>&) { ++n_power; });
    put_u64(buf, n_power);
    if (model.config().use_tabular)
        model.nam().visit_power_state([&](const std::string& name, VecX<S>& v) {
            put_str(buf, name);
            put_u64(buf, static_cast<std::uint64_t>(v.size()));
            put_raw(buf, v.data(), static_cast<std::size_t>(v.size()));
        });

    put_u64(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write saving checkpoint: " + path);
}

template <class S>
struct LoadedModel {
    KvMap config;
    data::DatasetSchema schema;
    tab::StandardStats<S> stats;
    std::vector<PrototypeSource> sources;
    PanicModel<S> model;
};

template <class S>
LoadedModel<S> load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 8 + 4 + 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    const std::uint64_t stored_sum = [&] {
        std::uint64_t v;
        std::memcpy(&v, buf.data() + buf.size() - 8, 8);
        return v;
    }();
    if (fnv1a64(buf.data(), buf.size() - 8) != stored_sum)
        throw DataError("corrupt checkpoint: checksum mismatch in " + path);

    Cursor cur{buf, 8};
    const std::uint32_t version = cur.u32();
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    const auto parse_kv = [](const std::string& text, const char* origin) {
        KvMap kv;
        kv.parse(text, origin);
        return kv;
    };
    LoadedModel<S> out;
    out.config = parse_kv(cur.str(), "<checkpoint config>");
    out.schema = data::DatasetSchema::from_kv(parse_kv(cur.str(), "<checkpoint schema>"));
    const KvMap stats_kv = parse_kv(cur.str(), "<checkpoint stats>");
    const auto specs = out.schema.input_specs();
    out.stats = tab::StandardStats<S>::from_kv(stats_kv, specs);

    const std::uint32_t width = cur.u32();
    if (width != sizeof(S))
        throw DataError("checkpoint scalar width " + std::to_string(width) + " != built width " +
                        std::to_string(sizeof(S)));

    const std::uint64_t n_sources = cur.u64();
    for (std::uint64_t i = 0; i < n_sources; ++i) {
        PrototypeSource src;
        src.cls = static_cast<int>(cur.u32());
        src.k = static_cast<int>(cur.u32());
        src.subject_id = cur.str();
        src.similarity = cur.f64();
        out.sources.push_back(std::move(src));
    }

    const int classes = static_cast<int>(out.schema.class_names.size());
    ModelConfig mc = model_config_from(out.config, classes, out.schema.grid);
    Rng init_rng(0);  // initial weights are overwritten below
    out.model = PanicModel<S>(mc, init_rng);
    out.model.attach_tabular(specs, init_rng);

    const std::uint64_t n_params = cur.u64();
    std::uint64_t seen = 0;
    out.model.visit_params([&](const std::string& name, S* p, Index sz, bool, bool) {
        if (seen++ >= n_params) throw DataError("checkpoint parameter list too short");
        const std::string stored_name = cur.str();
        const std::uint64_t stored_sz = cur.u64();
        if (stored_name != name || stored_sz != static_cast<std::uint64_t>(sz))
            throw DataError("checkpoint parameter mismatch: stored '" + stored_name + "' (" +
                            std::to_string(stored_sz) + "), model expects '" + name + "' (" +
                            std::to_string(sz) + ")");
        cur.raw(p, static_cast<std::size_t>(sz));
    });
    if (seen != n_params) throw DataError("checkpoint parameter list too long");

    const std::uint64_t n_power = cur.u64();
    std::uint64_t seen_p = 0;
    if (out.model.config().use_tabular)
        out.model.nam().visit_power_state([&](const std::string& name, VecX<S>& v) {
            if (seen_p++ >= n_power) throw DataError("checkpoint power-state list too short");
            const std::string stored_name = cur.str();
            const std::uint64_t stored_sz = cur.u64();
            if (stored_name != name || stored_sz != static_cast<std::uint64_t>(v.size()))
                throw DataError("checkpoint power-state mismatch at '" + stored_name + "'");
            cur.raw(v.data(), static_cast<std::size_t>(v.size()));
        });
    if (seen_p != n_power) throw DataError("checkpoint power-state list too long");
    if (out.model.config().use_tabular) out.model.nam().refresh_from_power_state();

    if (cur.pos != buf.size() - 8) throw DataError("corrupt checkpoint: trailing bytes");
    return out;
}

}  // namespace panic
