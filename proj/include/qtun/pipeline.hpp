#pragma once

#include "qtun/afterpulse.hpp"
#include "qtun/encoder.hpp"
#include "qtun/entropy.hpp"
#include "qtun/error.hpp"
#include "qtun/kv.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace qtun {

/// Every knob of one pipeline run. Artifact paths are relative to `out`
/// unless absolute.
struct PipelineConfig {
    std::string mode = "simulate"; // simulate | ingest
    std::filesystem::path input;   // ingest only
    std::uint64_t count = 1'000'000;

    double p0 = 1e-3;
    double ap_a = 5e-5;
    double ap_b = 0.01;
    double clock_period = 2e-9;
    std::uint32_t holdoff_periods = 9;

    unsigned k = 10;
    std::uint64_t block = 1'000'000;
    std::uint64_t margin = 100;
    std::string engine = "clmul"; // naive | packed | clmul

    std::uint64_t seed = 1;
    std::uint64_t seed_simulate = 1;  // default: seed
    std::uint64_t seed_preselect = 2; // default: seed + 1
    std::uint64_t seed_toeplitz = 3;  // default: seed + 2

    double alpha = 0.01;
    std::uint64_t seq_len = 1'000'000;

    std::filesystem::path out = "run";

    struct Artifact {
        std::string key;               // "intervals", "fit", ...
        std::filesystem::path path;    // as configured
    };
    std::vector<Artifact> artifacts = default_artifacts();

    static std::vector<Artifact> default_artifacts();

    /// Unknown keys raise ConfigError, apart from the manifest-only prefixes
    /// artifact., result., timing. and run., so a manifest is a valid config.
    static PipelineConfig from_kv(const KeyValues& kv);
    static PipelineConfig load(const std::filesystem::path& path);
    KeyValues to_kv() const;

    /// Throws ConfigError.
    void validate() const;

    std::filesystem::path artifact(const std::string& key) const;
    Engine extraction_engine() const;
};

/// Documented defaults, one `key=value  # meaning` line each.
std::string pipeline_config_help();

/// A stage failed; what() carries the stage name and the original message,
/// code() the original error code.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Exclusive per-directory lock (`<dir>/.qtun.lock`), released on destruction.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

/// simulate|ingest, dcr, fit, bins, preselect, encode, entropy, plan,
/// extract, test. Writes every artifact and `<out>/manifest.txt`, and
/// returns the manifest: the effective config, artifact paths and SHA-256
/// hashes, results, per-stage timings and extraction throughput.
/// `progress` (optional) is called with each stage name as it starts.
KeyValues run_pipeline(const PipelineConfig& config,
                       const std::function<void(const std::string&)>& progress = {});

/// Toeplitz seed bits from the xoshiro256++ stream for `seed`.
BitStream toeplitz_seed_bits(std::uint64_t seed, std::uint64_t bits);

// Stage bodies shared by run_pipeline and the standalone subcommands.

SourceModel source_model(const PipelineConfig& config);

/// Equal-mass bins for the geometric law with the fitted p0 and the hold-off
/// and clock recorded in the stream metadata.
BinTable bin_table_for(const AfterpulseFit& fit, const StreamMetadata& meta, unsigned k);

/// Entropy artifact: the min-entropy report plus the extraction plan m, n,
/// security_margin.
KeyValues entropy_artifact(const EntropyReport& report, const ToeplitzSpec& plan);
ToeplitzSpec plan_from_entropy_artifact(const KeyValues& kv);

struct Extraction {
    BitStream bits;
    BitStream seed;
    double seconds = 0.0; // matrix products only
};

/// Symbols to bits, seeded with toeplitz_seed_bits(seed), every complete
/// block through the chosen engine.
Extraction extract_symbols(const SymbolStream& symbols, const ToeplitzSpec& plan, std::uint64_t seed, Engine engine);

} // namespace qtun
