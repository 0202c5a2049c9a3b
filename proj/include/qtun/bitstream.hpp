#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qtun {

/// Packed bits, most significant bit of byte 0 first. Pad bits after
/// bit_count are always zero.
class BitStream {
public:
    BitStream() = default;
    /// Throws FormatError if `bytes` is too short or a pad bit is set.
    BitStream(std::vector<std::uint8_t> bytes, std::uint64_t bit_count);

    std::uint64_t size() const { return bits_; }
    bool empty() const { return bits_ == 0; }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

    bool bit(std::uint64_t i) const { return (bytes_[i >> 3] >> (7 - (i & 7))) & 1; }
    void push_back(bool b);
    /// Appends the low `count` bits of `value`, most significant first.
    void append_bits(std::uint64_t value, unsigned count);
    void append(const BitStream& other);
    void reserve(std::uint64_t bits) { bytes_.reserve((bits + 7) / 8); }

    BitStream slice(std::uint64_t first, std::uint64_t count) const;

    /// Bits [first, first + count) as little-endian words (bit i of the
    /// range in word i / 64, position i % 64).
    std::vector<std::uint64_t> to_words(std::uint64_t first, std::uint64_t count) const;
    static BitStream from_words(std::span<const std::uint64_t> words, std::uint64_t count);

    bool operator==(const BitStream&) const = default;

private:
    std::vector<std::uint8_t> bytes_;
    std::uint64_t bits_ = 0;
};

} // namespace qtun
