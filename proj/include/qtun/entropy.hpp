#pragma once

#include "qtun/bitstream.hpp"
#include "qtun/encoder.hpp"
#include "qtun/kv.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qtun {

struct EntropyReport {
    unsigned k = 10;
    std::uint64_t sample_count = 0;
    double max_probability = 1.0;
    double min_entropy_per_symbol = 0.0; // -log2(max_probability)
    double min_entropy_per_bit = 0.0;

    KeyValues to_kv() const;
};

/// Min-entropy of the empirical symbol distribution. Throws EmptyHistogram
/// (no samples) or ShapeMismatch (size != 2^k).
EntropyReport min_entropy(std::span<const std::uint64_t> histogram, unsigned k);

/// Toeplitz hashing matrix T (n x m) over GF(2) with
///   T[i][j] = seed[i - j + m - 1],  0 <= i < n, 0 <= j < m,
/// so the first row is seed[m-1], seed[m-2], ..., seed[0] and the first
/// column is seed[m-1 .. m-1+n). Equivalently output bit i is the
/// coefficient of z^(i + m - 1) in S(z) X(z) with S(z) = sum seed[k] z^k and
/// X(z) = sum x[j] z^j.
struct ToeplitzSpec {
    std::uint64_t m = 1'000'000;
    std::uint64_t n = 0;
    std::uint64_t security_margin = 100;
    BitStream seed; // m + n - 1 bits once seeded
    std::string seed_provenance;

    std::uint64_t seed_length() const { return m + n - 1; }
    /// Throws InvalidParams (dimensions) or InsufficientSeed (seed length).
    void validate() const;
};

/// n = floor(m * min_entropy_per_bit) - margin. Throws BlockTooSmall if n <= 0.
ToeplitzSpec plan_extraction(const EntropyReport& report, std::uint64_t m, std::uint64_t margin = 100);

/// Takes the first m + n - 1 bits of `source`. Throws InsufficientSeed.
ToeplitzSpec seed_from_stream(const BitStream& source, ToeplitzSpec dims, std::string provenance = "");

enum class Engine {
    Naive,  // row-wise AND and parity
    Packed, // shift-accumulate of 64-bit columns
    Clmul,  // carry-less Toeplitz-Karatsuba product
};

const char* engine_name(Engine e);

/// Matrix-vector products for one seeded spec. Immutable after construction
/// apart from lazily built column tables; apply() is safe to call from one
/// thread at a time per engine.
class ToeplitzExtractor {
public:
    explicit ToeplitzExtractor(ToeplitzSpec spec);
    ~ToeplitzExtractor();
    ToeplitzExtractor(ToeplitzExtractor&&) noexcept;
    ToeplitzExtractor& operator=(ToeplitzExtractor&&) noexcept;

    const ToeplitzSpec& spec() const { return spec_; }

    /// One m-bit block to n bits. Throws LengthMismatch.
    BitStream apply(const BitStream& block, Engine engine = Engine::Clmul) const;

    /// Every complete m-bit block of `bits`, outputs concatenated in order;
    /// a trailing partial block is dropped.
    BitStream apply_all(const BitStream& bits, Engine engine = Engine::Clmul) const;

private:
    struct Tables;
    ToeplitzSpec spec_;
    std::vector<std::uint64_t> seed_words_; // LSB-first, padded by two words
    mutable std::unique_ptr<Tables> tables_;
};

BitStream extract(const BitStream& block, const ToeplitzSpec& spec, Engine engine = Engine::Clmul);

/// Concatenates each k-bit symbol most significant bit first.
BitStream bits_from_symbols(const SymbolStream& symbols);

/// Extracted-bits file: magic "QTUNBIT1", u64 LE payload bit count, u64 LE
/// seed bit count, seed bytes, payload bytes.
void write_bits(const std::filesystem::path& path, const BitStream& payload, const BitStream& seed);

struct BitsFile {
    BitStream payload;
    BitStream seed;
};
BitsFile read_bits(const std::filesystem::path& path);

} // namespace qtun
