#include "qtun/randomness.hpp"

#include <doctest.h>

#include <openssl/evp.h>

#include <memory>

using namespace qtun;

namespace {

// AES-128-CTR keystream under a fixed key: a deterministic generator of
// cryptographic quality.
BitStream aes_ctr_bits(std::uint64_t bits) {
    const unsigned char key[16] = {0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6,
                                   0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c};
    const unsigned char iv[16] = {};
    std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(EVP_CIPHER_CTX_new(), EVP_CIPHER_CTX_free);
    REQUIRE(EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ctr(), nullptr, key, iv) == 1);
    const std::size_t bytes = (bits + 7) / 8;
    std::vector<std::uint8_t> zeros(bytes, 0), out(bytes + 16);
    int len = 0;
    REQUIRE(EVP_EncryptUpdate(ctx.get(), out.data(), &len, zeros.data(), static_cast<int>(bytes)) == 1);
    out.resize(bytes);
    return BitStream(std::move(out), bytes * 8);
}

} // namespace

TEST_CASE("reference generator pass proportions fall inside the interval") {
    const auto bits = aes_ctr_bits(1000ull * 1'000'000);
    const auto report = nist::run_battery(bits, 1'000'000, 0.01);
    MESSAGE(report.table());
    CHECK(report.sequence_count == 1000);
    for (const auto& row : report.rows) {
        CAPTURE(row.name);
        CHECK(row.passed);
        CHECK(row.uniformity_p > 1e-4);
    }
}
