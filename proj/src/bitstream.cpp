#include "qtun/bitstream.hpp"

#include "qtun/error.hpp"

#include <array>

namespace qtun {

namespace {

constexpr std::array<std::uint8_t, 256> make_reverse() {
    std::array<std::uint8_t, 256> t{};
    for (unsigned v = 0; v < 256; ++v) {
        unsigned r = 0;
        for (unsigned b = 0; b < 8; ++b) {
            r |= ((v >> b) & 1u) << (7 - b);
        }
        t[v] = static_cast<std::uint8_t>(r);
    }
    return t;
}

constexpr auto kReverse = make_reverse();

} // namespace

BitStream::BitStream(std::vector<std::uint8_t> bytes, std::uint64_t bit_count)
    : bytes_(std::move(bytes)), bits_(bit_count) {
    const std::uint64_t need = (bit_count + 7) / 8;
    if (bytes_.size() < need) {
        throw Error(Errc::FormatError, "bit stream shorter than its bit count");
    }
    for (std::uint64_t i = need; i < bytes_.size(); ++i) {
        if (bytes_[i] != 0) {
            throw Error(Errc::FormatError, "non-zero pad byte");
        }
    }
    bytes_.resize(need);
    if (bit_count % 8 != 0 && (bytes_.back() & (0xFFu >> (bit_count % 8))) != 0) {
        throw Error(Errc::FormatError, "non-zero pad bits");
    }
}

void BitStream::push_back(bool b) {
    if ((bits_ & 7) == 0) {
        bytes_.push_back(0);
    }
    if (b) {
        bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ & 7));
    }
    ++bits_;
}

void BitStream::append_bits(std::uint64_t value, unsigned count) {
    for (unsigned i = count; i-- > 0;) {
        push_back((value >> i) & 1);
    }
}

void BitStream::append(const BitStream& other) {
    if ((bits_ & 7) == 0) {
        bytes_.insert(bytes_.end(), other.bytes_.begin(), other.bytes_.end());
        bits_ += other.bits_;
        return;
    }
    for (std::uint64_t i = 0; i < other.bits_; ++i) {
        push_back(other.bit(i));
    }
}

BitStream BitStream::slice(std::uint64_t first, std::uint64_t count) const {
    if (first + count > bits_ || first + count < first) {
        throw Error(Errc::LengthMismatch, "slice exceeds the bit stream");
    }
    if ((first & 7) == 0) {
        std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(first / 8),
                                      bytes_.begin() + static_cast<std::ptrdiff_t>((first + count + 7) / 8));
        if (count % 8 != 0) {
            out.back() &= static_cast<std::uint8_t>(0xFF00u >> (count % 8));
        }
        return BitStream(std::move(out), count);
    }
    BitStream out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        out.push_back(bit(first + i));
    }
    return out;
}

std::vector<std::uint64_t> BitStream::to_words(std::uint64_t first, std::uint64_t count) const {
    if (first + count > bits_ || first + count < first) {
        throw Error(Errc::LengthMismatch, "range exceeds the bit stream");
    }
    std::vector<std::uint64_t> words((count + 63) / 64, 0);
    if ((first & 7) == 0) {
        const std::uint64_t base = first / 8;
        const std::uint64_t whole = count / 8;
        for (std::uint64_t k = 0; k < whole; ++k) {
            words[k / 8] |= static_cast<std::uint64_t>(kReverse[bytes_[base + k]]) << (8 * (k % 8));
        }
        for (std::uint64_t i = 8 * whole; i < count; ++i) {
            words[i / 64] |= static_cast<std::uint64_t>(bit(first + i)) << (i % 64);
        }
        return words;
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        words[i / 64] |= static_cast<std::uint64_t>(bit(first + i)) << (i % 64);
    }
    return words;
}

BitStream BitStream::from_words(std::span<const std::uint64_t> words, std::uint64_t count) {
    if (words.size() * 64 < count) {
        throw Error(Errc::LengthMismatch, "too few words for the bit count");
    }
    std::vector<std::uint8_t> bytes((count + 7) / 8, 0);
    for (std::uint64_t k = 0; k < bytes.size(); ++k) {
        bytes[k] = kReverse[(words[k / 8] >> (8 * (k % 8))) & 0xFF];
    }
    if (count % 8 != 0) {
        bytes.back() &= static_cast<std::uint8_t>(0xFF00u >> (count % 8));
    }
    return BitStream(std::move(bytes), count);
}

} // namespace qtun
