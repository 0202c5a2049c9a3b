#include "qtun/gf2poly.hpp"

#include "qtun/error.hpp"

#include <algorithm>
#include <array>
#include <utility>
#include <vector>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define QTUN_X86 1
#endif

namespace qtun::gf2 {

namespace {

constexpr std::size_t kBaseWords = 8;

using BaseFn = void (*)(const Word*, std::size_t, const Word*, std::size_t, Word*);

// out[0 .. na+nb) ^= a * b
void base_software(const Word* a, std::size_t na, const Word* b, std::size_t nb, Word* out) {
    for (std::size_t i = 0; i < na; ++i) {
        const Word x = a[i];
        if (x == 0) {
            continue;
        }
        for (std::size_t j = 0; j < nb; ++j) {
            const Word y = b[j];
            Word lo = 0;
            Word hi = 0;
            for (unsigned s = 0; s < 64; ++s) {
                const Word mask = Word{0} - ((y >> s) & 1);
                lo ^= (x << s) & mask;
                hi ^= s ? (x >> (64 - s)) & mask : 0;
            }
            out[i + j] ^= lo;
            out[i + j + 1] ^= hi;
        }
    }
}

#ifdef QTUN_X86
// Fixed-size product: the 128-bit partial products of each anti-diagonal
// are summed in registers before being split into words.
template <std::size_t N>
__attribute__((target("pclmul,sse4.1"), always_inline)) inline void square_clmul(const Word* a, const Word* b,
                                                                                  Word* out) {
    __m128i va[N];
    __m128i vb[N];
    for (std::size_t i = 0; i < N; ++i) {
        va[i] = _mm_cvtsi64_si128(static_cast<long long>(a[i]));
        vb[i] = _mm_cvtsi64_si128(static_cast<long long>(b[i]));
    }
    __m128i carry = _mm_setzero_si128();
    for (std::size_t d = 0; d < 2 * N - 1; ++d) {
        __m128i acc = carry;
        const std::size_t lo = d < N ? 0 : d - N + 1;
        const std::size_t hi = d < N ? d : N - 1;
        for (std::size_t i = lo; i <= hi; ++i) {
            acc = _mm_xor_si128(acc, _mm_clmulepi64_si128(va[i], vb[d - i], 0x00));
        }
        out[d] ^= static_cast<Word>(_mm_cvtsi128_si64(acc));
        carry = _mm_srli_si128(acc, 8);
    }
    out[2 * N - 1] ^= static_cast<Word>(_mm_cvtsi128_si64(carry));
}

// y[k] = bits [64w - 1, 128w - 1) of diag * x, from the anti-diagonal
// sums v_p, p in [w-2, 2w-1], only.
template <std::size_t W>
__attribute__((target("pclmul,sse4.1"))) void middle_clmul(const Word* d, const Word* x,
                                                                                  Word* y) {
    __m128i vd[2 * W];
    __m128i vx[W];
    for (std::size_t i = 0; i < 2 * W; ++i) {
        vd[i] = _mm_cvtsi64_si128(static_cast<long long>(d[i]));
    }
    for (std::size_t i = 0; i < W; ++i) {
        vx[i] = _mm_cvtsi64_si128(static_cast<long long>(x[i]));
    }
    Word prod[W + 3] = {};
    constexpr std::size_t first = W >= 2 ? W - 2 : 0;
    for (std::size_t p = first; p < 2 * W; ++p) {
        __m128i acc = _mm_setzero_si128();
        const std::size_t b_lo = p >= 2 * W - 1 ? p - (2 * W - 1) : 0;
        const std::size_t b_hi = p < W - 1 ? p : W - 1;
        for (std::size_t b = b_lo; b <= b_hi; ++b) {
            acc = _mm_xor_si128(acc, _mm_clmulepi64_si128(vd[p - b], vx[b], 0x00));
        }
        // word p - (W - 2) of the window [W-2, 2W]
        const std::size_t at = p + 2 - W;
        prod[at] ^= static_cast<Word>(_mm_cvtsi128_si64(acc));
        prod[at + 1] ^= static_cast<Word>(_mm_cvtsi128_si64(_mm_srli_si128(acc, 8)));
    }
    // prod[1 + k] is product word W - 1 + k.
    for (std::size_t k = 0; k < W; ++k) {
        y[k] = (prod[1 + k] >> 63) | (prod[2 + k] << 1);
    }
}

template <std::size_t... I>
constexpr auto middle_table(std::index_sequence<I...>) {
    return std::array<void (*)(const Word*, const Word*, Word*), sizeof...(I)>{&middle_clmul<I + 1>...};
}

__attribute__((target("pclmul,sse4.1"))) void middle_hw(const Word* d, const Word* x, std::size_t w, Word* y) {
    static constexpr auto table = middle_table(std::make_index_sequence<16>{});
    table[w - 1](d, x, y);
}

__attribute__((target("pclmul,sse4.1"))) void base_clmul(const Word* a, std::size_t na, const Word* b, std::size_t nb,
                                                         Word* out) {
    if (na == nb) {
        switch (na) {
        case 1:
            square_clmul<1>(a, b, out);
            return;
        case 2:
            square_clmul<2>(a, b, out);
            return;
        case 3:
            square_clmul<3>(a, b, out);
            return;
        case 4:
            square_clmul<4>(a, b, out);
            return;
        case 5:
            square_clmul<5>(a, b, out);
            return;
        case 6:
            square_clmul<6>(a, b, out);
            return;
        case 7:
            square_clmul<7>(a, b, out);
            return;
        case 8:
            square_clmul<8>(a, b, out);
            return;
        default: break;
        }
    }
    for (std::size_t i = 0; i < na; ++i) {
        const __m128i x = _mm_cvtsi64_si128(static_cast<long long>(a[i]));
        __m128i carry = _mm_setzero_si128();
        for (std::size_t j = 0; j < nb; ++j) {
            const __m128i y = _mm_cvtsi64_si128(static_cast<long long>(b[j]));
            const __m128i p = _mm_xor_si128(_mm_clmulepi64_si128(x, y, 0x00), carry);
            out[i + j] ^= static_cast<Word>(_mm_cvtsi128_si64(p));
            carry = _mm_srli_si128(p, 8);
        }
        out[i + nb] ^= static_cast<Word>(_mm_cvtsi128_si64(carry));
    }
}
#endif

void xor_into(Word* dst, const Word* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] ^= src[i];
    }
}

// out[0 .. 2n) = a * b for n-word operands; out must be zeroed. scratch
// holds at least 4n words.
void karatsuba(const Word* a, const Word* b, std::size_t n, Word* out, Word* scratch, BaseFn base) {
    if (n <= kBaseWords) {
        base(a, n, b, n, out);
        return;
    }
    const std::size_t h = (n + 1) / 2;
    const std::size_t l = n - h;

    karatsuba(a, b, h, out, scratch, base);
    karatsuba(a + h, b + h, l, out + 2 * h, scratch, base);

    Word* sa = scratch;
    Word* sb = scratch + h;
    Word* mid = scratch + 2 * h;
    std::copy(a, a + h, sa);
    std::copy(b, b + h, sb);
    xor_into(sa, a + h, l);
    xor_into(sb, b + h, l);
    std::fill(mid, mid + 2 * h, Word{0});
    karatsuba(sa, sb, h, mid, scratch + 4 * h, base);

    xor_into(mid, out, 2 * h);
    xor_into(mid, out + 2 * h, 2 * l);
    xor_into(out + h, mid, 2 * h);
}

std::size_t scratch_words(std::size_t n) {
    std::size_t total = 0;
    while (n > kBaseWords) {
        const std::size_t h = (n + 1) / 2;
        total += 4 * h;
        n = h;
    }
    return total + 1;
}

BaseFn pick(Kernel kernel) {
#ifdef QTUN_X86
    if (kernel == Kernel::Auto && hardware_clmul_available()) {
        return base_clmul;
    }
#else
    (void)kernel;
#endif
    return base_software;
}

using MiddleFn = void (*)(const Word*, const Word*, std::size_t, Word*);

void middle_software(const Word* d, const Word* x, std::size_t w, Word* y) {
    Word prod[3 * 16 + 1] = {};
    base_software(d, 2 * w, x, w, prod);
    for (std::size_t k = 0; k < w; ++k) {
        y[k] = (prod[w - 1 + k] >> 63) | (prod[w + k] << 1);
    }
}

constexpr std::size_t kToeplitzBase = 16;

// Toeplitz T = [[A, B], [C, A]] on halves:
//   y0 = A (x0 + x1) + (B + A) x1,  y1 = A (x0 + x1) + (C + A) x0.
// Diagonals of A, B, C are the word slices diag[h..3h), diag[0..2h),
// diag[2h..4h). scratch holds at least 8w words.
void toeplitz_rec(const Word* d, const Word* x, std::size_t w, Word* y, Word* scratch, MiddleFn base) {
    if (w <= kToeplitzBase) {
        base(d, x, w, y);
        return;
    }
    const std::size_t h = w / 2;
    Word* xs = scratch;
    Word* ds = scratch + h;
    Word* part = scratch + 3 * h;
    Word* next = scratch + 4 * h;

    for (std::size_t i = 0; i < h; ++i) {
        xs[i] = x[i] ^ x[h + i];
    }
    toeplitz_rec(d + h, xs, h, y, next, base);
    std::copy(y, y + h, y + h);

    for (std::size_t i = 0; i < 2 * h; ++i) {
        ds[i] = d[i] ^ d[h + i];
    }
    toeplitz_rec(ds, x + h, h, part, next, base);
    xor_into(y, part, h);

    for (std::size_t i = 0; i < 2 * h; ++i) {
        ds[i] = d[2 * h + i] ^ d[h + i];
    }
    toeplitz_rec(ds, x, h, part, next, base);
    xor_into(y + h, part, h);
}

} // namespace

bool hardware_clmul_available() {
#ifdef QTUN_X86
    static const bool available = __builtin_cpu_supports("pclmul");
    return available;
#else
    return false;
#endif
}

void multiply(std::span<const Word> a, std::span<const Word> b, std::span<Word> out, Kernel kernel) {
    if (out.size() < a.size() + b.size()) {
        throw Error(Errc::LengthMismatch, "product buffer too small");
    }
    std::fill(out.begin(), out.end(), Word{0});
    if (a.size() < b.size()) {
        std::swap(a, b);
    }
    const std::size_t nb = b.size();
    if (nb == 0) {
        return;
    }
    const BaseFn base = pick(kernel);
    if (nb <= kBaseWords) {
        base(a.data(), a.size(), b.data(), nb, out.data());
        return;
    }

    // Cut the longer operand into nb-word chunks; each chunk is a square product.
    std::vector<Word> chunk(nb);
    std::vector<Word> prod(2 * nb);
    std::vector<Word> scratch(scratch_words(nb));
    for (std::size_t off = 0; off < a.size(); off += nb) {
        const std::size_t len = std::min(nb, a.size() - off);
        std::copy(a.begin() + static_cast<std::ptrdiff_t>(off), a.begin() + static_cast<std::ptrdiff_t>(off + len),
                  chunk.begin());
        std::fill(chunk.begin() + static_cast<std::ptrdiff_t>(len), chunk.end(), Word{0});
        std::fill(prod.begin(), prod.end(), Word{0});
        karatsuba(chunk.data(), b.data(), nb, prod.data(), scratch.data(), base);
        xor_into(out.data() + off, prod.data(), std::min(2 * nb, out.size() - off));
    }
}

std::size_t toeplitz_words(std::size_t words) {
    std::size_t levels = 0;
    while ((words + (std::size_t{1} << levels) - 1) >> levels > kToeplitzBase) {
        ++levels;
    }
    const std::size_t base = std::max<std::size_t>(1, (words + (std::size_t{1} << levels) - 1) >> levels);
    return base << levels;
}

void toeplitz_multiply(std::span<const Word> diag, std::span<const Word> x, std::span<Word> y, Kernel kernel) {
    const std::size_t w = x.size();
    if (w == 0 || toeplitz_words(w) != w || diag.size() != 2 * w || y.size() != w) {
        throw Error(Errc::LengthMismatch, "toeplitz_multiply needs |x| = |y| = toeplitz_words(|x|), |diag| = 2|x|");
    }
    MiddleFn base = middle_software;
#ifdef QTUN_X86
    if (kernel == Kernel::Auto && hardware_clmul_available()) {
        base = middle_hw;
    }
#else
    (void)kernel;
#endif
    std::vector<Word> scratch(8 * w + 8);
    toeplitz_rec(diag.data(), x.data(), w, y.data(), scratch.data(), base);
}

void multiply_reference(std::span<const Word> a, std::span<const Word> b, std::span<Word> out) {
    if (out.size() < a.size() + b.size()) {
        throw Error(Errc::LengthMismatch, "product buffer too small");
    }
    std::fill(out.begin(), out.end(), Word{0});
    for (std::size_t i = 0; i < 64 * a.size(); ++i) {
        if (!((a[i / 64] >> (i % 64)) & 1)) {
            continue;
        }
        for (std::size_t j = 0; j < 64 * b.size(); ++j) {
            if ((b[j / 64] >> (j % 64)) & 1) {
                out[(i + j) / 64] ^= Word{1} << ((i + j) % 64);
            }
        }
    }
}

} // namespace qtun::gf2
