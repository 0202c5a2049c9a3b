#include "qtun/source.hpp"

#include "qtun/error.hpp"
#include "qtun/kv.hpp"
#include "qtun/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace qtun {

namespace {

constexpr char kIntervalMagic[8] = {'Q', 'T', 'U', 'N', 'I', 'N', 'T', '1'};

// Beyond this n the excess is below 1e-18 p0 and log1p(-p0 - e) == log1p(-p0)
// in double precision.
std::uint64_t excess_cutoff(const SourceModel& m) {
    if (m.ap_amplitude <= 0.0) {
        return 0;
    }
    const double n = std::log(m.ap_amplitude / (m.p0 * 1e-18)) / m.ap_decay;
    return n <= 0.0 ? 0 : static_cast<std::uint64_t>(std::ceil(n));
}

// Geometric on {1, 2, ...} by inversion; U in (0, 1].
std::uint64_t geometric(Xoshiro256pp& rng, double log_fail) {
    const double g = std::floor(std::log(rng.uniform_open0()) / log_fail);
    if (!(g < 1.8e19)) {
        return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(g) + 1;
}

std::uint32_t checked_interval(std::uint64_t n) {
    if (n > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(Errc::DomainError, "interval exceeds the 32-bit file range; p0 too small");
    }
    return static_cast<std::uint32_t>(n);
}

void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

} // namespace

void SourceModel::validate() const {
    if (!(p0 > 0.0 && p0 <= 1.0)) {
        throw Error(Errc::InvalidModel, "p0 must lie in (0, 1]");
    }
    if (!(ap_amplitude >= 0.0) || !std::isfinite(ap_amplitude)) {
        throw Error(Errc::InvalidModel, "after-pulse amplitude must be >= 0");
    }
    if (!(ap_decay > 0.0) || !std::isfinite(ap_decay)) {
        throw Error(Errc::InvalidModel, "after-pulse decay must be > 0");
    }
    if (p0 + ap_amplitude > 1.0 + 1e-15) {
        throw Error(Errc::InvalidModel, "p0 + A must not exceed 1");
    }
    if (!(clock_period > 0.0) || !std::isfinite(clock_period)) {
        throw Error(Errc::InvalidModel, "clock period must be > 0");
    }
}

double SourceModel::excess(std::uint64_t n) const {
    return ap_amplitude == 0.0 ? 0.0 : ap_amplitude * std::exp(-ap_decay * static_cast<double>(n));
}

double SourceModel::hazard(std::uint64_t n) const {
    if (n <= holdoff_periods) {
        return 0.0;
    }
    return std::min(1.0, p0 + excess(n));
}

std::uint32_t SourceModel::holdoff_from_ns(double holdoff_ns, double period) {
    const double periods = holdoff_ns * 1e-9 / period;
    // 17 ns / 2 ns = 8.5 -> 9; tolerate representation error on exact multiples
    return static_cast<std::uint32_t>(std::ceil(periods - 1e-9));
}

void IntervalStream::validate() const {
    if (!(meta.clock_hz > 0.0)) {
        throw Error(Errc::FormatError, "clock_hz must be > 0");
    }
    for (auto v : intervals) {
        if (v == 0) {
            throw Error(Errc::FormatError, "intervals must be >= 1");
        }
    }
}

double interval_log_pmf(const SourceModel& model, std::uint64_t n) {
    model.validate();
    if (n < 1) {
        throw Error(Errc::DomainError, "interval must be >= 1");
    }
    if (n <= model.holdoff_periods) {
        return -INFINITY;
    }
    const std::uint64_t first = model.holdoff_periods + 1;
    const std::uint64_t cutoff = std::max(excess_cutoff(model), first);
    double log_survival = 0.0;
    std::uint64_t i = first;
    for (; i < n && i <= cutoff; ++i) {
        log_survival += std::log1p(-model.hazard(i));
    }
    if (i < n) {
        log_survival += static_cast<double>(n - i) * std::log1p(-model.p0);
    }
    return std::log(model.hazard(n)) + log_survival;
}

double interval_pmf(const SourceModel& model, std::uint64_t n) { return std::exp(interval_log_pmf(model, n)); }

std::vector<double> interval_pmf_table(const SourceModel& model, std::uint64_t n_max) {
    model.validate();
    std::vector<double> pmf(n_max + 1, 0.0);
    double log_survival = 0.0;
    for (std::uint64_t n = 1; n <= n_max; ++n) {
        const double h = model.hazard(n);
        if (h > 0.0) {
            pmf[n] = std::exp(std::log(h) + log_survival);
        }
        log_survival += std::log1p(-h);
    }
    return pmf;
}

StreamMetadata simulated_metadata(const SourceModel& model) {
    StreamMetadata meta;
    meta.clock_hz = model.clock_hz();
    meta.holdoff_ns = model.holdoff_periods * model.clock_period * 1e9;
    meta.bias_voltage = "simulated";
    meta.source = "simulated";
    return meta;
}

IntervalStream sample_intervals(const SourceModel& model, std::size_t count, std::uint64_t seed) {
    model.validate();
    if (count < 1) {
        throw Error(Errc::DomainError, "count must be >= 1");
    }
    IntervalStream out;
    out.meta = simulated_metadata(model);
    out.intervals.reserve(count);
    Xoshiro256pp rng(seed);

    const std::uint64_t holdoff = model.holdoff_periods;
    const bool certain = model.p0 >= 1.0;
    const double log_fail = certain ? 0.0 : std::log1p(-model.p0);
    const bool after_pulse = model.ap_amplitude > 0.0 && !certain;
    // after-pulse component probability e(n) / (1 - p0), decreasing in n
    auto component = [&](std::uint64_t n) { return model.excess(n) / (1.0 - model.p0); };

    for (std::size_t k = 0; k < count; ++k) {
        const std::uint64_t base = certain ? holdoff + 1 : holdoff + geometric(rng, log_fail);
        std::uint64_t detection = base;
        if (after_pulse) {
            std::uint64_t n = holdoff;
            double bound = component(holdoff + 1);
            while (bound > 0.0) {
                const std::uint64_t step = bound >= 1.0 ? 1 : geometric(rng, std::log1p(-bound));
                if (step >= base - n) {
                    break;
                }
                n += step;
                if (rng.uniform01() * bound < component(n)) {
                    detection = n;
                    break;
                }
                bound = component(n + 1);
            }
        }
        out.intervals.push_back(checked_interval(detection));
    }
    return out;
}

IntervalStream sample_intervals_per_period(const SourceModel& model, std::size_t count, std::uint64_t seed) {
    model.validate();
    if (count < 1) {
        throw Error(Errc::DomainError, "count must be >= 1");
    }
    IntervalStream out;
    out.meta = simulated_metadata(model);
    out.intervals.reserve(count);
    Xoshiro256pp rng(seed);
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t n = 0;
        while (true) {
            ++n;
            if (n <= model.holdoff_periods) {
                continue; // after-pulse clock advances, detector is dead
            }
            if (rng.uniform01() < model.hazard(n)) {
                break;
            }
        }
        out.intervals.push_back(checked_interval(n));
    }
    return out;
}

std::filesystem::path metadata_path(const std::filesystem::path& path) {
    auto meta = path;
    meta += ".meta";
    return meta;
}

void write_intervals(const std::filesystem::path& path, const IntervalStream& stream) {
    stream.validate();
    std::string bytes(kIntervalMagic, sizeof(kIntervalMagic));
    bytes.reserve(8 + 4 * stream.size());
    for (auto v : stream.intervals) {
        put_u32le(bytes, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

    KeyValues kv;
    kv.set("clock_hz", stream.meta.clock_hz);
    kv.set("holdoff_ns", stream.meta.holdoff_ns);
    kv.set("bias_voltage", stream.meta.bias_voltage);
    kv.set("source", stream.meta.source);
    kv.save(metadata_path(path));
}

IntervalStream ingest_intervals(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kIntervalMagic, 8) != 0) {
        throw Error(Errc::FormatError, "bad interval file magic in " + path.string());
    }
    const std::size_t payload = bytes.size() - 8;
    if (payload == 0) {
        throw Error(Errc::FormatError, "empty interval payload");
    }
    if (payload % 4 != 0) {
        throw Error(Errc::FormatError, "truncated interval payload");
    }

    IntervalStream stream;
    stream.intervals.resize(payload / 4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 8;
    for (std::size_t i = 0; i < stream.intervals.size(); ++i, p += 4) {
        stream.intervals[i] = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                              (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    const auto meta_file = metadata_path(path);
    if (!std::filesystem::exists(meta_file)) {
        throw Error(Errc::MetadataMissing, "missing sidecar " + meta_file.string());
    }
    const auto kv = KeyValues::load(meta_file);
    try {
        stream.meta.clock_hz = kv.real("clock_hz");
        stream.meta.holdoff_ns = kv.real("holdoff_ns");
        stream.meta.bias_voltage = kv.str("bias_voltage");
        stream.meta.source = kv.str("source");
    } catch (const Error& e) {
        throw Error(Errc::MetadataMissing, e.what());
    }
    stream.validate();
    return stream;
}

std::vector<SecondCount> dcr_per_second(const IntervalStream& stream) {
    std::vector<SecondCount> out;
    if (stream.empty()) {
        return out;
    }
    const double hz = stream.meta.clock_hz;
    std::uint64_t elapsed = 0;
    for (auto v : stream.intervals) {
        elapsed += v;
        const auto second = static_cast<std::uint64_t>(std::floor(static_cast<double>(elapsed) / hz));
        while (out.size() <= second) {
            out.push_back({out.size(), 0, false});
        }
        ++out[second].count;
    }
    out.back().partial = true;
    return out;
}

void write_dcr_csv(const std::filesystem::path& path, const std::vector<SecondCount>& counts) {
    std::ofstream out(path);
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    out << "second,count,partial\n";
    for (const auto& c : counts) {
        out << c.second << ',' << c.count << ',' << (c.partial ? 1 : 0) << '\n';
    }
}

} // namespace qtun
