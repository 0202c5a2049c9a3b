#include "qtun/entropy.hpp"

#include "qtun/error.hpp"
#include "qtun/gf2poly.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

namespace qtun {

namespace {

constexpr char kBitsMagic[8] = {'Q', 'T', 'U', 'N', 'B', 'I', 'T', '1'};

using Word = std::uint64_t;

// Bits [shift, shift + 64 count) of `src` realigned to word boundaries; src
// must extend one word past the last word read.
void shifted_copy(const Word* src, std::uint64_t shift, std::size_t count, Word* dst) {
    const std::size_t q = shift / 64;
    const unsigned r = shift % 64;
    if (r == 0) {
        std::copy(src + q, src + q + count, dst);
        return;
    }
    for (std::size_t k = 0; k < count; ++k) {
        dst[k] = (src[q + k] >> r) | (src[q + k + 1] << (64 - r));
    }
}

void mask_tail(std::vector<Word>& words, std::uint64_t bits) {
    if (bits % 64 != 0 && !words.empty()) {
        words.back() &= (Word{1} << (bits % 64)) - 1;
    }
}

void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

} // namespace

KeyValues EntropyReport::to_kv() const {
    KeyValues kv;
    kv.set("k", static_cast<std::uint64_t>(k));
    kv.set("sample_count", sample_count);
    kv.set("max_probability", max_probability);
    kv.set("min_entropy_per_symbol", min_entropy_per_symbol);
    kv.set("min_entropy_per_bit", min_entropy_per_bit);
    return kv;
}

EntropyReport min_entropy(std::span<const std::uint64_t> histogram, unsigned k) {
    if (k < 1 || k > 16 || histogram.size() != (std::size_t{1} << k)) {
        throw Error(Errc::ShapeMismatch, "histogram must have 2^k entries");
    }
    std::uint64_t total = 0;
    std::uint64_t top = 0;
    for (auto c : histogram) {
        total += c;
        top = std::max(top, c);
    }
    if (total == 0) {
        throw Error(Errc::EmptyHistogram, "histogram holds no samples");
    }
    EntropyReport r;
    r.k = k;
    r.sample_count = total;
    r.max_probability = static_cast<double>(top) / static_cast<double>(total);
    r.min_entropy_per_symbol = top == total ? 0.0 : -std::log2(r.max_probability);
    r.min_entropy_per_bit = r.min_entropy_per_symbol / k;
    return r;
}

void ToeplitzSpec::validate() const {
    if (n < 1 || n > m) {
        throw Error(Errc::InvalidParams, "Toeplitz dimensions need 1 <= n <= m");
    }
}

ToeplitzSpec plan_extraction(const EntropyReport& report, std::uint64_t m, std::uint64_t margin) {
    if (!(report.min_entropy_per_bit >= 0.0 && report.min_entropy_per_bit <= 1.0 + 1e-12)) {
        throw Error(Errc::InvalidParams, "min-entropy per bit must lie in [0, 1]");
    }
    // The small guard keeps products such as 10^6 * 0.979 from flooring to
    // 978999 through binary rounding.
    const double product = static_cast<double>(m) * std::min(1.0, report.min_entropy_per_bit);
    const auto raw = static_cast<std::uint64_t>(std::floor(product + 1e-6));
    if (raw <= margin) {
        throw Error(Errc::BlockTooSmall, "block of " + std::to_string(m) + " bits holds no entropy beyond the " +
                                             std::to_string(margin) + "-bit margin");
    }
    ToeplitzSpec spec;
    spec.m = m;
    spec.n = std::min(m, raw - margin);
    spec.security_margin = margin;
    return spec;
}

ToeplitzSpec seed_from_stream(const BitStream& source, ToeplitzSpec dims, std::string provenance) {
    dims.validate();
    if (source.size() < dims.seed_length()) {
        throw Error(Errc::InsufficientSeed, "seed needs " + std::to_string(dims.seed_length()) + " bits, source has " +
                                                std::to_string(source.size()));
    }
    dims.seed = source.slice(0, dims.seed_length());
    dims.seed_provenance = std::move(provenance);
    return dims;
}

const char* engine_name(Engine e) {
    switch (e) {
    case Engine::Naive:
        return "naive";
    case Engine::Packed:
        return "packed";
    case Engine::Clmul:
        return "clmul";
    }
    return "?";
}

struct ToeplitzExtractor::Tables {
    std::once_flag once;
    // shifted[r][k] = seed bits [r + 64k, r + 64k + 64)
    std::vector<std::vector<Word>> shifted;
    std::once_flag diag_once;
    // Diagonal vector of the matrix embedded in a square Toeplitz of
    // 64 * words bits: diag[t] = seed[t - 64 words + m].
    std::vector<Word> diag;
    std::size_t words = 0;
};

ToeplitzExtractor::ToeplitzExtractor(ToeplitzSpec spec) : spec_(std::move(spec)), tables_(std::make_unique<Tables>()) {
    spec_.validate();
    if (spec_.seed.size() != spec_.seed_length()) {
        throw Error(Errc::InsufficientSeed, "seed must hold exactly m + n - 1 bits");
    }
    seed_words_ = spec_.seed.to_words(0, spec_.seed.size());
    seed_words_.resize(seed_words_.size() + 2, 0);
}

ToeplitzExtractor::~ToeplitzExtractor() = default;
ToeplitzExtractor::ToeplitzExtractor(ToeplitzExtractor&&) noexcept = default;
ToeplitzExtractor& ToeplitzExtractor::operator=(ToeplitzExtractor&&) noexcept = default;

BitStream ToeplitzExtractor::apply(const BitStream& block, Engine engine) const {
    const std::uint64_t m = spec_.m;
    const std::uint64_t n = spec_.n;
    if (block.size() != m) {
        throw Error(Errc::LengthMismatch,
                    "block has " + std::to_string(block.size()) + " bits, spec expects " + std::to_string(m));
    }
    const std::size_t mw = (m + 63) / 64;
    const std::size_t nw = (n + 63) / 64;
    const Word* seed = seed_words_.data();
    std::vector<Word> out(nw, 0);

    switch (engine) {
    case Engine::Naive: {
        // Row i is seed[i .. i+m) against x reversed.
        std::vector<Word> xr(mw, 0);
        for (std::uint64_t j = 0; j < m; ++j) {
            if (block.bit(j)) {
                const std::uint64_t p = m - 1 - j;
                xr[p / 64] |= Word{1} << (p % 64);
            }
        }
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::size_t q = i / 64;
            const unsigned r = i % 64;
            Word acc = 0;
            if (r == 0) {
                for (std::size_t k = 0; k < mw; ++k) {
                    acc ^= seed[q + k] & xr[k];
                }
            } else {
                for (std::size_t k = 0; k < mw; ++k) {
                    acc ^= ((seed[q + k] >> r) | (seed[q + k + 1] << (64 - r))) & xr[k];
                }
            }
            out[i / 64] |= static_cast<Word>(std::popcount(acc) & 1) << (i % 64);
        }
        break;
    }
    case Engine::Packed: {
        // Column j is seed[m-1-j .. m-1-j+n); XOR the columns selected by x.
        std::call_once(tables_->once, [&] {
            const std::size_t len = seed_words_.size() - 1;
            tables_->shifted.assign(64, std::vector<Word>(len, 0));
            for (unsigned r = 0; r < 64; ++r) {
                shifted_copy(seed, r, len - 1, tables_->shifted[r].data());
            }
        });
        const auto x = block.to_words(0, m);
        for (std::size_t w = 0; w < x.size(); ++w) {
            Word bits = x[w];
            while (bits) {
                const std::uint64_t j = 64 * w + static_cast<unsigned>(std::countr_zero(bits));
                bits &= bits - 1;
                const std::uint64_t o = m - 1 - j;
                const Word* col = tables_->shifted[o % 64].data() + o / 64;
                for (std::size_t k = 0; k < nw; ++k) {
                    out[k] ^= col[k];
                }
            }
        }
        break;
    }
    case Engine::Clmul: {
        std::call_once(tables_->diag_once, [&] {
            const std::size_t w = gf2::toeplitz_words(std::max(mw, nw));
            const std::uint64_t offset = 64 * w - m;
            const std::size_t q = offset / 64;
            const unsigned r = offset % 64;
            tables_->words = w;
            tables_->diag.assign(2 * w + 1, 0);
            for (std::size_t k = 0; k + 2 < seed_words_.size(); ++k) {
                tables_->diag[q + k] |= seed[k] << r;
                if (r != 0) {
                    tables_->diag[q + k + 1] |= seed[k] >> (64 - r);
                }
            }
            tables_->diag.resize(2 * w);
        });
        const std::size_t w = tables_->words;
        auto x = block.to_words(0, m);
        x.resize(w, 0);
        std::vector<Word> y(w, 0);
        gf2::toeplitz_multiply(tables_->diag, x, y);
        std::copy_n(y.begin(), nw, out.begin());
        break;
    }
    }
    mask_tail(out, n);
    return BitStream::from_words(out, n);
}

BitStream ToeplitzExtractor::apply_all(const BitStream& bits, Engine engine) const {
    BitStream out;
    const std::uint64_t blocks = bits.size() / spec_.m;
    out.reserve(blocks * spec_.n);
    for (std::uint64_t b = 0; b < blocks; ++b) {
        out.append(apply(bits.slice(b * spec_.m, spec_.m), engine));
    }
    return out;
}

BitStream extract(const BitStream& block, const ToeplitzSpec& spec, Engine engine) {
    return ToeplitzExtractor(spec).apply(block, engine);
}

BitStream bits_from_symbols(const SymbolStream& symbols) {
    const unsigned k = symbols.k;
    if (k < 1 || k > 16) {
        throw Error(Errc::InvalidParams, "k must lie in [1, 16]");
    }
    const std::uint64_t total = static_cast<std::uint64_t>(symbols.size()) * k;
    std::vector<std::uint8_t> bytes;
    bytes.reserve((total + 7) / 8);
    std::uint64_t acc = 0;
    unsigned held = 0;
    for (auto s : symbols.symbols) {
        acc = (acc << k) | (s & ((1u << k) - 1));
        held += k;
        while (held >= 8) {
            held -= 8;
            bytes.push_back(static_cast<std::uint8_t>(acc >> held));
        }
        acc &= (std::uint64_t{1} << held) - 1;
    }
    if (held) {
        bytes.push_back(static_cast<std::uint8_t>(acc << (8 - held)));
    }
    return BitStream(std::move(bytes), total);
}

void write_bits(const std::filesystem::path& path, const BitStream& payload, const BitStream& seed) {
    std::string head(kBitsMagic, 8);
    put_u64le(head, payload.size());
    put_u64le(head, seed.size());
    std::ofstream out(path, std::ios::binary);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(reinterpret_cast<const char*>(seed.bytes().data()), static_cast<std::streamsize>(seed.bytes().size()));
    out.write(reinterpret_cast<const char*>(payload.bytes().data()),
              static_cast<std::streamsize>(payload.bytes().size()));
    if (!out) {
        throw Error(Errc::IoError, "cannot write " + path.string());
    }
}

BitsFile read_bits(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, "cannot open " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kBitsMagic, 8) != 0) {
        throw Error(Errc::FormatError, "bad bits file header in " + path.string());
    }
    const std::uint64_t payload_bits = get_u64le(bytes.data() + 8);
    const std::uint64_t seed_bits = get_u64le(bytes.data() + 16);
    const std::uint64_t seed_bytes = (seed_bits + 7) / 8;
    const std::uint64_t payload_bytes = (payload_bits + 7) / 8;
    if (bytes.size() - 24 != seed_bytes + payload_bytes) {
        throw Error(Errc::FormatError, "bits file length does not match its header");
    }
    const auto* p = bytes.data() + 24;
    BitsFile f;
    f.seed = BitStream(std::vector<std::uint8_t>(p, p + seed_bytes), seed_bits);
    f.payload = BitStream(std::vector<std::uint8_t>(p + seed_bytes, p + seed_bytes + payload_bytes), payload_bits);
    return f;
}

} // namespace qtun
