#include "qtun/pipeline.hpp"

#include "qtun/afterpulse.hpp"
#include "qtun/digest.hpp"
#include "qtun/encoder.hpp"
#include "qtun/randomness.hpp"
#include "qtun/rng.hpp"
#include "qtun/source.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>

namespace qtun {

namespace {

struct Default {
    const char* key;
    const char* value;
    const char* help;
};

// Order here is the order of to_kv() and of the help text.
constexpr Default kDefaults[] = {
    {"mode", "simulate", "simulate | ingest"},
    {"input", "", "interval file to ingest (mode=ingest)"},
    {"count", "1000000", "intervals to simulate"},
    {"p0", "0.001", "per-period tunneling probability"},
    {"ap_a", "5e-05", "after-pulse amplitude A"},
    {"ap_b", "0.01", "after-pulse decay B per period"},
    {"clock_period", "2e-09", "seconds per period"},
    {"holdoff_periods", "9", "dead periods after each detection"},
    {"k", "10", "bits per symbol"},
    {"block", "1000000", "extractor input bits m"},
    {"margin", "100", "security margin in bits"},
    {"engine", "clmul", "naive | packed | clmul"},
    {"seed", "1", "master seed"},
    {"seed_simulate", "", "simulation seed (default: seed)"},
    {"seed_preselect", "", "pre-selection seed (default: seed + 1)"},
    {"seed_toeplitz", "", "Toeplitz seed stream (default: seed + 2)"},
    {"alpha", "0.01", "battery significance; pass rule alpha <= p <= 1 - alpha"},
    {"seq_len", "1000000", "battery sequence length in bits"},
    {"out", "run", "output directory"},
};

constexpr std::pair<const char*, const char*> kArtifacts[] = {
    {"intervals", "intervals.bin"},     {"dcr", "dcr.csv"},
    {"fit", "fit.txt"},                 {"log_quotient", "log_quotient.csv"},
    {"bins", "bins.txt"},               {"selected", "selected.bin"},
    {"selection", "selection.txt"},     {"symbols", "symbols.sym"},
    {"histogram", "histogram.csv"},     {"entropy", "entropy.txt"},
    {"extracted", "extracted.bits"},    {"tests", "tests.txt"},
    {"pvalues", "pvalues.csv"},
};

constexpr const char* kManifestPrefixes[] = {"artifact.", "result.", "timing.", "run."};

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::ConfigError, msg); }

template <class F>
auto as_config(const std::string& key, F&& parse) {
    try {
        return parse();
    } catch (const Error& e) {
        if (e.code() == Errc::ConfigError) {
            throw;
        }
        config_error("bad value for " + key + ": " + e.what());
    }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

} // namespace

std::vector<PipelineConfig::Artifact> PipelineConfig::default_artifacts() {
    std::vector<Artifact> out;
    for (auto [key, file] : kArtifacts) {
        out.push_back({key, file});
    }
    return out;
}

PipelineConfig PipelineConfig::from_kv(const KeyValues& kv) {
    std::set<std::string> known;
    for (const auto& d : kDefaults) {
        known.insert(d.key);
    }
    for (auto [key, file] : kArtifacts) {
        known.insert(std::string("path.") + key);
    }
    for (const auto& key : kv.keys()) {
        const bool manifest_only = std::any_of(std::begin(kManifestPrefixes), std::end(kManifestPrefixes),
                                               [&](const char* p) { return key.rfind(p, 0) == 0; });
        if (!manifest_only && !known.count(key)) {
            config_error("unknown config key '" + key + "'");
        }
    }

    PipelineConfig c;
    auto real = [&](const char* key, double fallback) {
        return as_config(key, [&] { return kv.real_or(key, fallback); });
    };
    auto whole = [&](const char* key, std::uint64_t fallback) {
        return as_config(key, [&] { return kv.contains(key) ? kv.unsigned_integer(key) : fallback; });
    };
    c.mode = kv.str_or("mode", c.mode);
    c.input = kv.str_or("input", "");
    c.count = whole("count", c.count);
    c.p0 = real("p0", c.p0);
    c.ap_a = real("ap_a", c.ap_a);
    c.ap_b = real("ap_b", c.ap_b);
    c.clock_period = real("clock_period", c.clock_period);
    const auto holdoff = whole("holdoff_periods", c.holdoff_periods);
    if (holdoff > 1'000'000) {
        config_error("holdoff_periods too large");
    }
    c.holdoff_periods = static_cast<std::uint32_t>(holdoff);
    const auto k = whole("k", c.k);
    if (k < 1 || k > 16) {
        config_error("k must lie in [1, 16]");
    }
    c.k = static_cast<unsigned>(k);
    c.block = whole("block", c.block);
    c.margin = whole("margin", c.margin);
    c.engine = kv.str_or("engine", c.engine);
    c.seed = whole("seed", c.seed);
    c.seed_simulate = whole("seed_simulate", c.seed);
    c.seed_preselect = whole("seed_preselect", c.seed + 1);
    c.seed_toeplitz = whole("seed_toeplitz", c.seed + 2);
    c.alpha = real("alpha", c.alpha);
    c.seq_len = whole("seq_len", c.seq_len);
    c.out = kv.str_or("out", c.out.string());
    for (auto& a : c.artifacts) {
        a.path = kv.str_or("path." + a.key, a.path.string());
    }
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    KeyValues kv;
    try {
        kv = KeyValues::load(path);
    } catch (const Error& e) {
        config_error(std::string("cannot read config: ") + e.what());
    }
    return from_kv(kv);
}

KeyValues PipelineConfig::to_kv() const {
    KeyValues kv;
    kv.set("mode", mode);
    kv.set("input", input.string());
    kv.set("count", count);
    kv.set("p0", p0);
    kv.set("ap_a", ap_a);
    kv.set("ap_b", ap_b);
    kv.set("clock_period", clock_period);
    kv.set("holdoff_periods", static_cast<std::uint64_t>(holdoff_periods));
    kv.set("k", static_cast<std::uint64_t>(k));
    kv.set("block", block);
    kv.set("margin", margin);
    kv.set("engine", engine);
    kv.set("seed", seed);
    kv.set("seed_simulate", seed_simulate);
    kv.set("seed_preselect", seed_preselect);
    kv.set("seed_toeplitz", seed_toeplitz);
    kv.set("alpha", alpha);
    kv.set("seq_len", seq_len);
    kv.set("out", out.string());
    for (const auto& a : artifacts) {
        kv.set("path." + a.key, a.path.string());
    }
    return kv;
}

void PipelineConfig::validate() const {
    if (mode != "simulate" && mode != "ingest") {
        config_error("mode must be simulate or ingest");
    }
    if (mode == "ingest" && input.empty()) {
        config_error("mode=ingest needs input=<interval file>");
    }
    if (mode == "simulate" && count < 1) {
        config_error("count must be >= 1");
    }
    as_config("source model", [&] {
        source_model(*this).validate();
        return 0;
    });
    if (block < 1) {
        config_error("block must be >= 1");
    }
    if (!(alpha > 0.0 && alpha < 0.5)) {
        config_error("alpha must lie in (0, 0.5)");
    }
    if (seq_len < 128) {
        config_error("seq_len must be >= 128");
    }
    (void)extraction_engine();
    std::set<std::filesystem::path> seen;
    for (const auto& a : artifacts) {
        if (a.path.empty()) {
            config_error("empty path for artifact " + a.key);
        }
        const auto full = artifact(a.key).lexically_normal();
        if (!seen.insert(full).second) {
            config_error("artifact paths must be distinct; " + a.key + " repeats " + full.string());
        }
    }
}

std::filesystem::path PipelineConfig::artifact(const std::string& key) const {
    for (const auto& a : artifacts) {
        if (a.key == key) {
            return a.path.is_absolute() ? a.path : out / a.path;
        }
    }
    config_error("no artifact named " + key);
}

Engine PipelineConfig::extraction_engine() const {
    if (engine == "naive") {
        return Engine::Naive;
    }
    if (engine == "packed") {
        return Engine::Packed;
    }
    if (engine == "clmul") {
        return Engine::Clmul;
    }
    config_error("engine must be naive, packed or clmul");
}

std::string pipeline_config_help() {
    std::string out = "Config file: key=value lines, '#' comments. Keys and defaults:\n";
    char line[160];
    for (const auto& d : kDefaults) {
        std::snprintf(line, sizeof line, "  %-16s = %-10s %s\n", d.key, d.value, d.help);
        out += line;
    }
    out += "  path.<artifact>  output file relative to out; artifacts and defaults:\n";
    for (auto [key, file] : kArtifacts) {
        std::snprintf(line, sizeof line, "    path.%-12s = %s\n", key, file);
        out += line;
    }
    return out;
}

StageError::StageError(std::string stage, const Error& cause)
    : Error(cause.code(), "stage " + stage + " failed: " + cause.what(), Verbatim{}), stage_(std::move(stage)) {}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".qtun.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
        throw Error(Errc::IoError, "cannot take lock " + path_.string() + " (another pipeline running?)");
    }
    std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

BitStream toeplitz_seed_bits(std::uint64_t seed, std::uint64_t bits) {
    Xoshiro256pp g(seed);
    BitStream out;
    out.reserve(bits);
    for (std::uint64_t i = 0; i < bits; i += 64) {
        const auto take = static_cast<unsigned>(std::min<std::uint64_t>(64, bits - i));
        out.append_bits(g() >> (64 - take), take);
    }
    return out;
}

SourceModel source_model(const PipelineConfig& config) {
    SourceModel m;
    m.p0 = config.p0;
    m.ap_amplitude = config.ap_a;
    m.ap_decay = config.ap_b;
    m.clock_period = config.clock_period;
    m.holdoff_periods = config.holdoff_periods;
    return m;
}

BinTable bin_table_for(const AfterpulseFit& fit, const StreamMetadata& meta, unsigned k) {
    const double period = 1.0 / meta.clock_hz;
    return build_bin_table(fit.model(SourceModel::holdoff_from_ns(meta.holdoff_ns, period), period), k);
}

KeyValues entropy_artifact(const EntropyReport& report, const ToeplitzSpec& plan) {
    KeyValues kv = report.to_kv();
    kv.set("m", plan.m);
    kv.set("n", plan.n);
    kv.set("security_margin", plan.security_margin);
    return kv;
}

ToeplitzSpec plan_from_entropy_artifact(const KeyValues& kv) {
    ToeplitzSpec plan;
    plan.m = kv.unsigned_integer("m");
    plan.n = kv.unsigned_integer("n");
    plan.security_margin = kv.unsigned_integer("security_margin");
    plan.validate();
    return plan;
}

Extraction extract_symbols(const SymbolStream& symbols, const ToeplitzSpec& plan, std::uint64_t seed, Engine engine) {
    const auto spec = seed_from_stream(toeplitz_seed_bits(seed, plan.seed_length()), plan,
                                       "xoshiro256++;seed=" + std::to_string(seed));
    const auto input = bits_from_symbols(symbols);
    const ToeplitzExtractor extractor(spec);
    Extraction out;
    const auto t0 = Clock::now();
    out.bits = extractor.apply_all(input, engine);
    out.seconds = seconds_since(t0);
    out.seed = spec.seed;
    return out;
}

KeyValues run_pipeline(const PipelineConfig& config, const std::function<void(const std::string&)>& progress) {
    config.validate();
    std::filesystem::create_directories(config.out);
    DirectoryLock lock(config.out);
    for (const auto& a : config.artifacts) {
        std::filesystem::create_directories(config.artifact(a.key).parent_path());
    }

    KeyValues manifest = config.to_kv();
    manifest.set("run.format", std::string("qtun-manifest-1"));
    std::vector<std::pair<std::string, double>> timings;

    auto stage = [&](const std::string& name, auto&& body) {
        if (progress) {
            progress(name);
        }
        const auto t0 = Clock::now();
        try {
            body();
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            throw StageError(name, e);
        } catch (const std::exception& e) {
            throw StageError(name, Error(Errc::IoError, e.what()));
        }
        timings.emplace_back(name, seconds_since(t0));
    };

    const auto path = [&](const char* key) { return config.artifact(key); };

    IntervalStream stream;
    if (config.mode == "simulate") {
        stage("simulate", [&] {
            stream = sample_intervals(source_model(config), config.count, config.seed_simulate);
            write_intervals(path("intervals"), stream);
        });
    } else {
        stage("ingest", [&] {
            stream = ingest_intervals(config.input);
            write_intervals(path("intervals"), stream);
        });
    }
    manifest.set("result.intervals", static_cast<std::uint64_t>(stream.size()));

    stage("dcr", [&] { write_dcr_csv(path("dcr"), dcr_per_second(stream)); });

    AfterpulseFit fit;
    stage("fit", [&] {
        fit = fit_afterpulse(stream);
        fit.save(path("fit"));
        write_log_quotient_csv(path("log_quotient"), log_quotient(stream, fit));
    });
    manifest.set("result.p0_hat", fit.p0_hat);
    manifest.set("result.A_hat", fit.A_hat);
    manifest.set("result.B_hat", fit.B_hat);

    std::optional<BinTable> table;
    stage("bins", [&] {
        table = bin_table_for(fit, stream.meta, config.k);
        table->save(path("bins"));
    });

    Selection selection;
    stage("preselect", [&] {
        selection = preselect(stream, fit, config.seed_preselect);
        write_intervals(path("selected"), selection.stream);
        selection.report.to_kv().save(path("selection"));
    });
    manifest.set("result.keep_fraction", selection.report.keep_fraction);

    SymbolStream raw_symbols;
    SymbolStream symbols;
    stage("encode", [&] {
        raw_symbols = encode(stream, *table);
        symbols = encode(selection.stream, *table);
        write_symbols(path("symbols"), symbols);
        write_histogram_csv(path("histogram"), symbol_histogram(symbols), *table);
    });

    EntropyReport selected_report;
    ToeplitzSpec plan;
    stage("entropy", [&] {
        const auto raw_report = min_entropy(symbol_histogram(raw_symbols), config.k);
        selected_report = min_entropy(symbol_histogram(symbols), config.k);
        plan = plan_extraction(selected_report, config.block, config.margin);
        entropy_artifact(selected_report, plan).save(path("entropy"));
        // Without pre-selection, for comparison only.
        manifest.set("result.min_entropy_raw", raw_report.min_entropy_per_symbol);
    });
    manifest.set("result.min_entropy_selected", selected_report.min_entropy_per_symbol);
    manifest.set("result.n", plan.n);

    BitStream extracted;
    double extract_seconds = 0.0;
    stage("extract", [&] {
        auto x = extract_symbols(symbols, plan, config.seed_toeplitz, config.extraction_engine());
        write_bits(path("extracted"), x.bits, x.seed);
        extracted = std::move(x.bits);
        extract_seconds = x.seconds;
    });
    manifest.set("result.extracted_bits", extracted.size());
    manifest.set("result.blocks", plan.n ? extracted.size() / plan.n : 0);
    if (extract_seconds > 0.0 && !extracted.empty()) {
        manifest.set("result.throughput_MBps", static_cast<double>(extracted.size()) / 8e6 / extract_seconds);
    }

    stage("test", [&] {
        const auto report = nist::run_battery(extracted, config.seq_len, config.alpha);
        std::ofstream(path("tests")) << report.table();
        report.write_csv(path("pvalues"));
        manifest.set("result.sequences", report.sequence_count);
        manifest.set("result.battery_passed", std::string(report.all_passed() ? "true" : "false"));
    });

    for (const auto& a : config.artifacts) {
        const auto p = config.artifact(a.key);
        manifest.set("artifact." + a.key + ".sha256", sha256_file(p));
        const auto sidecar = metadata_path(p);
        if (std::filesystem::exists(sidecar)) {
            manifest.set("artifact." + a.key + ".meta.sha256", sha256_file(sidecar));
        }
    }
    for (const auto& [name, s] : timings) {
        manifest.set("timing." + name + "_s", s);
    }
    manifest.save(config.out / "manifest.txt");
    return manifest;
}

} // namespace qtun
