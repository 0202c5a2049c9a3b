#pragma once

#include <cstdint>
#include <span>

namespace qtun::gf2 {

/// Polynomials over GF(2) packed little-endian: bit i of word k is the
/// coefficient of z^(64k + i).
using Word = std::uint64_t;

enum class Kernel {
    Auto,     // PCLMULQDQ when the CPU has it
    Software, // portable shift-and-xor
};

bool hardware_clmul_available();

/// out = a * b; out.size() must be >= a.size() + b.size(). Karatsuba over a
/// schoolbook base case.
void multiply(std::span<const Word> a, std::span<const Word> b, std::span<Word> out, Kernel kernel = Kernel::Auto);

/// Word count >= `words` of the form b * 2^L with b <= 16, the sizes
/// toeplitz_multiply accepts.
std::size_t toeplitz_words(std::size_t words);

/// Square Toeplitz product over N = 64 w bits:
///   y[i] = sum_j diag[i - j + N - 1] x[j],  0 <= i, j < N,
/// i.e. bits [N-1, 2N-1) of diag(z) x(z). x and y hold w words, diag 2w,
/// and w must come from toeplitz_words. Three half-size products per level.
void toeplitz_multiply(std::span<const Word> diag, std::span<const Word> x, std::span<Word> y,
                       Kernel kernel = Kernel::Auto);

/// Quadratic reference product, bit by bit.
void multiply_reference(std::span<const Word> a, std::span<const Word> b, std::span<Word> out);

} // namespace qtun::gf2
