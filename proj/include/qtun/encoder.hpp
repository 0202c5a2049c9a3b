#pragma once

#include "qtun/kv.hpp"
#include "qtun/source.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qtun {

/// Interval thresholds splitting the hold-off-conditioned geometric law
/// (1-p0)^(n-H-1) p0, n > H, into 2^k bins of (nominally) equal mass.
/// Bin j holds intervals in (boundary[j-1], boundary[j]]; the last bin is the
/// unbounded tail.
class BinTable {
public:
    BinTable(unsigned k, std::vector<std::uint64_t> boundaries, SourceModel model);

    unsigned k() const { return k_; }
    std::size_t bins() const { return std::size_t{1} << k_; }
    const std::vector<std::uint64_t>& boundaries() const { return boundaries_; }
    const SourceModel& model() const { return model_; }

    /// First bin whose upper boundary is >= n.
    std::uint16_t symbol(std::uint64_t n) const;

    /// Target-law CDF at n (0 for n <= hold-off).
    double cdf(std::uint64_t n) const;

    /// Theoretical probability of bin j.
    double bin_mass(std::size_t j) const;

    /// max over non-tail bins of |2^k mass - 1|.
    double max_relative_mass_error() const;

    /// SHA-256 of the canonical key=value form.
    std::string hash() const;

    KeyValues to_kv() const;
    static BinTable from_kv(const KeyValues& kv);
    void save(const std::filesystem::path& path) const;
    static BinTable load(const std::filesystem::path& path);

private:
    unsigned k_;
    std::vector<std::uint64_t> boundaries_;
    SourceModel model_;
};

/// Boundary j (1-based) is the smallest n > H with CDF(n) >= j / 2^k.
/// ResolutionError when two boundaries coincide (p0 too large for k).
BinTable build_bin_table(const SourceModel& model, unsigned k);

struct SymbolStream {
    std::vector<std::uint16_t> symbols;
    unsigned k = 10;
    std::string provenance; // "<source>;table=<sha256>"

    std::size_t size() const { return symbols.size(); }
};

SymbolStream encode(const IntervalStream& stream, const BinTable& table);

std::vector<std::uint64_t> symbol_histogram(const SymbolStream& stream);

/// Symbol file: magic "QTUNSYM1", one byte k, little-endian u16 symbols.
void write_symbols(const std::filesystem::path& path, const SymbolStream& stream);
SymbolStream read_symbols(const std::filesystem::path& path);

/// CSV `symbol,count,expected` with expected = total * bin_mass.
void write_histogram_csv(const std::filesystem::path& path, const std::vector<std::uint64_t>& histogram,
                         const BinTable& table);

} // namespace qtun
