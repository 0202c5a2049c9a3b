#include "qtun/encoder.hpp"

#include "qtun/digest.hpp"
#include "qtun/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace qtun {

namespace {

constexpr char kSymbolMagic[8] = {'Q', 'T', 'U', 'N', 'S', 'Y', 'M', '1'};
constexpr unsigned kMaxBits = 16;

void check_k(unsigned k) {
    if (k < 1 || k > kMaxBits) {
        throw Error(Errc::InvalidParams, "k must lie in [1, 16]");
    }
}

// 1 - (1-p0)^m for m periods past the hold-off.
double geometric_cdf(double log_fail, std::uint64_t m) {
    if (m == 0) {
        return 0.0;
    }
    if (std::isinf(log_fail)) {
        return 1.0;
    }
    return -std::expm1(static_cast<double>(m) * log_fail);
}

std::string join(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) {
            out.push_back(',');
        }
        out += std::to_string(v[i]);
    }
    return out;
}

} // namespace

BinTable::BinTable(unsigned k, std::vector<std::uint64_t> boundaries, SourceModel model)
    : k_(k), boundaries_(std::move(boundaries)), model_(model) {
    check_k(k);
    model_.validate();
    if (boundaries_.size() != bins() - 1) {
        throw Error(Errc::InvalidParams, "bin table needs 2^k - 1 boundaries");
    }
    for (std::size_t i = 1; i < boundaries_.size(); ++i) {
        if (boundaries_[i] <= boundaries_[i - 1]) {
            throw Error(Errc::ResolutionError, "bin boundaries must be strictly increasing");
        }
    }
}

std::uint16_t BinTable::symbol(std::uint64_t n) const {
    const auto it = std::lower_bound(boundaries_.begin(), boundaries_.end(), n);
    return static_cast<std::uint16_t>(it - boundaries_.begin());
}

double BinTable::cdf(std::uint64_t n) const {
    const std::uint64_t h = model_.holdoff_periods;
    return n <= h ? 0.0 : geometric_cdf(std::log1p(-model_.p0), n - h);
}

double BinTable::bin_mass(std::size_t j) const {
    if (j >= bins()) {
        throw Error(Errc::InvalidParams, "bin index out of range");
    }
    const double hi = j + 1 < bins() ? cdf(boundaries_[j]) : 1.0;
    const double lo = j == 0 ? 0.0 : cdf(boundaries_[j - 1]);
    return hi - lo;
}

double BinTable::max_relative_mass_error() const {
    double worst = 0.0;
    const double scale = static_cast<double>(bins());
    for (std::size_t j = 0; j + 1 < bins(); ++j) {
        worst = std::max(worst, std::fabs(scale * bin_mass(j) - 1.0));
    }
    return worst;
}

std::string BinTable::hash() const { return sha256_hex(to_kv().to_string()); }

KeyValues BinTable::to_kv() const {
    KeyValues kv;
    kv.set("k", static_cast<std::uint64_t>(k_));
    kv.set("p0", model_.p0);
    kv.set("holdoff_periods", static_cast<std::uint64_t>(model_.holdoff_periods));
    kv.set("clock_period", model_.clock_period);
    kv.set("boundaries", join(boundaries_));
    return kv;
}

BinTable BinTable::from_kv(const KeyValues& kv) {
    SourceModel model;
    model.p0 = kv.real("p0");
    model.holdoff_periods = static_cast<std::uint32_t>(kv.unsigned_integer("holdoff_periods"));
    model.clock_period = kv.real_or("clock_period", model.clock_period);
    const auto k = static_cast<unsigned>(kv.unsigned_integer("k"));

    std::vector<std::uint64_t> boundaries;
    std::stringstream ss(kv.str("boundaries"));
    std::string item;
    while (std::getline(ss, item, ',')) {
        boundaries.push_back(parse_unsigned(trim(item)));
    }
    return BinTable(k, std::move(boundaries), model);
}

void BinTable::save(const std::filesystem::path& path) const { to_kv().save(path); }

BinTable BinTable::load(const std::filesystem::path& path) { return from_kv(KeyValues::load(path)); }

BinTable build_bin_table(const SourceModel& model, unsigned k) {
    check_k(k);
    model.validate();
    const double log_fail = std::log1p(-model.p0);
    const std::size_t count = (std::size_t{1} << k) - 1;
    const double scale = std::ldexp(1.0, -static_cast<int>(k));

    std::vector<std::uint64_t> boundaries(count);
    for (std::size_t j = 1; j <= count; ++j) {
        const double target = static_cast<double>(j) * scale; // exact
        // Start from the closed-form root, then correct for rounding.
        std::uint64_t m = 1;
        if (!std::isinf(log_fail)) {
            const double guess = std::ceil(std::log1p(-target) / log_fail);
            if (guess > 1.0) {
                m = static_cast<std::uint64_t>(guess);
            }
        }
        while (m > 1 && geometric_cdf(log_fail, m - 1) >= target) {
            --m;
        }
        while (geometric_cdf(log_fail, m) < target) {
            ++m;
        }
        boundaries[j - 1] = model.holdoff_periods + m;
        if (j > 1 && boundaries[j - 1] == boundaries[j - 2]) {
            throw Error(Errc::ResolutionError,
                        "boundaries " + std::to_string(j - 1) + " and " + std::to_string(j) +
                            " coincide; p0 too large for k = " + std::to_string(k));
        }
    }
    return BinTable(k, std::move(boundaries), model);
}

SymbolStream encode(const IntervalStream& stream, const BinTable& table) {
    SymbolStream out;
    out.k = table.k();
    out.provenance = stream.meta.source + ";table=" + table.hash();
    out.symbols.resize(stream.size());
    std::transform(stream.intervals.begin(), stream.intervals.end(), out.symbols.begin(),
                   [&](std::uint32_t n) { return table.symbol(n); });
    return out;
}

std::vector<std::uint64_t> symbol_histogram(const SymbolStream& stream) {
    check_k(stream.k);
    std::vector<std::uint64_t> hist(std::size_t{1} << stream.k, 0);
    for (auto s : stream.symbols) {
        if (s >= hist.size()) {
            throw Error(Errc::FormatError, "symbol exceeds alphabet");
        }
        ++hist[s];
    }
    return hist;
}

void write_symbols(const std::filesystem::path& path, const SymbolStream& stream) {
    check_k(stream.k);
    std::string bytes(kSymbolMagic, 8);
    bytes.push_back(static_cast<char>(stream.k));
    bytes.reserve(bytes.size() + 2 * stream.size());
    for (auto s : stream.symbols) {
        bytes.push_back(static_cast<char>(s & 0xFF));
        bytes.push_back(static_cast<char>(s >> 8));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    KeyValues meta;
    meta.set("provenance", stream.provenance);
    meta.save(metadata_path(path));
}

SymbolStream read_symbols(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 9 || std::memcmp(bytes.data(), kSymbolMagic, 8) != 0) {
        throw Error(Errc::FormatError, "bad symbol file magic in " + path.string());
    }
    SymbolStream out;
    out.k = static_cast<unsigned char>(bytes[8]);
    check_k(out.k);
    const std::size_t payload = bytes.size() - 9;
    if (payload % 2 != 0) {
        throw Error(Errc::FormatError, "truncated symbol payload");
    }
    out.symbols.resize(payload / 2);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 9;
    const std::size_t limit = std::size_t{1} << out.k;
    for (std::size_t i = 0; i < out.symbols.size(); ++i, p += 2) {
        out.symbols[i] = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        if (out.symbols[i] >= limit) {
            throw Error(Errc::FormatError, "symbol exceeds alphabet");
        }
    }
    const auto meta = metadata_path(path);
    if (std::filesystem::exists(meta)) {
        out.provenance = KeyValues::load(meta).str_or("provenance", "");
    }
    return out;
}

void write_histogram_csv(const std::filesystem::path& path, const std::vector<std::uint64_t>& histogram,
                         const BinTable& table) {
    if (histogram.size() != table.bins()) {
        throw Error(Errc::ShapeMismatch, "histogram size does not match the bin table");
    }
    std::uint64_t total = 0;
    for (auto c : histogram) {
        total += c;
    }
    std::ofstream out(path);
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
    out << "symbol,count,expected\n";
    for (std::size_t j = 0; j < histogram.size(); ++j) {
        out << j << ',' << histogram[j] << ',' << format_real(static_cast<double>(total) * table.bin_mass(j))
            << '\n';
    }
}

} // namespace qtun
