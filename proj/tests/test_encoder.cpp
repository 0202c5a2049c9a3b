#include "qtun/encoder.hpp"
#include "qtun/error.hpp"
#include "qtun/special.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace qtun;

namespace {

SourceModel geometric(double p0, std::uint32_t holdoff = 0) {
    SourceModel m;
    m.p0 = p0;
    m.holdoff_periods = holdoff;
    return m;
}

// Boundaries by running pmf summation in long double.
std::vector<std::uint64_t> summation_boundaries(double p0, unsigned k, std::uint32_t holdoff) {
    const std::size_t bins = std::size_t{1} << k;
    std::vector<std::uint64_t> out;
    long double cdf = 0.0L;
    long double term = p0;
    std::uint64_t n = holdoff;
    std::size_t j = 1;
    while (j < bins) {
        ++n;
        cdf += term;
        term *= 1.0L - p0;
        while (j < bins && cdf >= static_cast<long double>(j) / bins) {
            out.push_back(n);
            ++j;
        }
    }
    return out;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("qtun_test_encoder_" + name);
}

} // namespace

TEST_CASE("bin table examples") {
    SUBCASE("k = 1, p0 = 0.5 splits at n = 1") {
        const auto t = build_bin_table(geometric(0.5), 1);
        CHECK(t.boundaries() == std::vector<std::uint64_t>{1});
        CHECK(t.symbol(1) == 0);
        CHECK(t.symbol(2) == 1);
        CHECK(t.symbol(1000) == 1);
        CHECK(t.bin_mass(0) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("k = 2, p0 = 0.5 has coinciding boundaries") {
        try {
            build_bin_table(geometric(0.5), 2);
            FAIL("expected ResolutionError");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::ResolutionError);
        }
    }
    SUBCASE("k = 1 and 2 at p0 = 1e-3") {
        CHECK(build_bin_table(geometric(1e-3), 1).boundaries() == std::vector<std::uint64_t>{693});
        CHECK(build_bin_table(geometric(1e-3), 2).boundaries() == std::vector<std::uint64_t>{288, 693, 1386});
        CHECK(build_bin_table(geometric(1e-3, 10), 2).boundaries() ==
              std::vector<std::uint64_t>{298, 703, 1396});
    }
    SUBCASE("invalid inputs") {
        CHECK_THROWS_AS(build_bin_table(geometric(0.0), 4), Error);
        CHECK_THROWS_AS(build_bin_table(geometric(1e-3), 0), Error);
        CHECK_THROWS_AS(build_bin_table(geometric(1e-3), 17), Error);
    }
}

TEST_CASE("k = 10 tables agree with pmf summation") {
    for (auto [p0, holdoff] : {std::pair{1e-3, 0u}, {1e-5, 0u}, {1e-5, 7u}, {3e-4, 25u}}) {
        const auto t = build_bin_table(geometric(p0, holdoff), 10);
        CHECK(t.boundaries() == summation_boundaries(p0, 10, holdoff));
    }
    // mpmath summation at 40 digits.
    const auto t3 = build_bin_table(geometric(1e-3), 10);
    CHECK(t3.boundaries().front() == 1);
    CHECK(t3.boundaries().back() == 6929);
    CHECK(std::accumulate(t3.boundaries().begin(), t3.boundaries().end(), std::uint64_t{0}) == 1019609);
    const auto t5 = build_bin_table(geometric(1e-5), 10);
    CHECK(t5.boundaries().front() == 98);
    CHECK(t5.boundaries().back() == 693144);
    CHECK(std::accumulate(t5.boundaries().begin(), t5.boundaries().end(), std::uint64_t{0}) == 101961515);
}

TEST_CASE("bin masses") {
    SUBCASE("within 2 percent of 2^-k once bins span many periods") {
        for (double p0 : {1e-5, 2e-5}) {
            const auto t = build_bin_table(geometric(p0, 3), 10);
            CHECK(t.max_relative_mass_error() <= 0.02);
            double total = 0.0;
            for (std::size_t j = 0; j < t.bins(); ++j) {
                total += t.bin_mass(j);
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
        CHECK(build_bin_table(geometric(1e-5), 10).max_relative_mass_error() ==
              doctest::Approx(0.008685374288801768).epsilon(1e-9));
    }
    SUBCASE("p0 = 1e-3, k = 10 is resolution limited") {
        // Each period carries about one bin of mass, so integer boundaries
        // cannot equalize bins: frozen mpmath values.
        const auto t = build_bin_table(geometric(1e-3), 10);
        double hi = 0.0;
        double lo = 1.0;
        int outside = 0;
        for (std::size_t j = 0; j < t.bins(); ++j) {
            hi = std::max(hi, t.bin_mass(j) * 1024);
            lo = std::min(lo, t.bin_mass(j) * 1024);
            if (j + 1 < t.bins() && std::fabs(t.bin_mass(j) * 1024 - 1) > 0.02) {
                ++outside;
            }
        }
        CHECK(hi == doctest::Approx(1.9509951312516185).epsilon(1e-9));
        CHECK(lo == doctest::Approx(0.5154955014079103).epsilon(1e-9));
        CHECK(outside == 845);
        CHECK(t.bin_mass(1023) * 1024 == doctest::Approx(0.99900548905328).epsilon(1e-9));
    }
}

TEST_CASE("encode") {
    const BinTable t(1, {1}, geometric(0.5));
    IntervalStream s;
    s.intervals = {1, 2, 9};
    const auto sym = encode(s, t);
    CHECK(sym.symbols == std::vector<std::uint16_t>{0, 1, 1});
    CHECK(sym.k == 1);
    CHECK(sym.provenance == "simulated;table=" + t.hash());

    SUBCASE("monotone") {
        const auto big = build_bin_table(geometric(2e-4, 4), 8);
        std::uint16_t prev = 0;
        for (std::uint64_t n = 1; n < 60000; ++n) {
            const auto v = big.symbol(n);
            CHECK_LE(prev, v);
            prev = v;
        }
        CHECK(prev == 255);
    }
    SUBCASE("deterministic table and hash") {
        const auto a = build_bin_table(geometric(1e-3, 5), 10);
        const auto b = build_bin_table(geometric(1e-3, 5), 10);
        CHECK(a.boundaries() == b.boundaries());
        CHECK(a.hash() == b.hash());
        CHECK(a.hash().size() == 64);
        CHECK(a.hash() != build_bin_table(geometric(1e-3, 6), 10).hash());
    }
}

TEST_CASE("symbol frequencies") {
    SUBCASE("p0 = 1e-3: 10^6 draws match the exact bin masses") {
        const auto model = geometric(1e-3);
        const auto t = build_bin_table(model, 10);
        const auto hist = symbol_histogram(encode(sample_intervals(model, 1'000'000, 11), t));
        std::vector<double> obs(hist.begin(), hist.end());
        std::vector<double> expd(t.bins());
        for (std::size_t j = 0; j < t.bins(); ++j) {
            expd[j] = 1e6 * t.bin_mass(j);
        }
        CHECK(stats::chi_square_gof(obs, expd).p_value > 1e-3);
        // Uniformity is rejected outright at this resolution.
        CHECK(stats::chi_square_gof(obs, std::vector<double>(t.bins(), 1e6 / 1024)).p_value < 1e-10);
    }
    SUBCASE("p0 = 1e-5: uniform, and 10^7 draws within 5 sd of the bin masses") {
        const auto model = geometric(1e-5);
        const auto t = build_bin_table(model, 10);
        const double n = 1e7;
        const auto hist = symbol_histogram(encode(sample_intervals(model, 10'000'000, 12), t));
        double worst = 0.0;
        for (std::size_t j = 0; j < t.bins(); ++j) {
            const double p = t.bin_mass(j);
            worst = std::max(worst, std::fabs(static_cast<double>(hist[j]) - n * p) / std::sqrt(n * p * (1 - p)));
        }
        CHECK(worst < 5.0);
        const auto small = symbol_histogram(encode(sample_intervals(model, 1'000'000, 13), t));
        std::vector<double> obs(small.begin(), small.end());
        CHECK(stats::chi_square_gof(obs, std::vector<double>(t.bins(), 1e6 / 1024)).p_value > 1e-3);
    }
}

TEST_CASE("files") {
    SUBCASE("bin table round trip") {
        const auto t = build_bin_table(geometric(1e-3, 4), 10);
        const auto path = temp_file("table.txt");
        t.save(path);
        const auto back = BinTable::load(path);
        CHECK(back.boundaries() == t.boundaries());
        CHECK(back.k() == 10);
        CHECK(back.model().p0 == t.model().p0);
        CHECK(back.hash() == t.hash());
        std::filesystem::remove(path);
    }
    SUBCASE("symbol file round trip") {
        SymbolStream s;
        s.k = 10;
        s.symbols = {0, 1023, 512, 7};
        s.provenance = "simulated;table=abc";
        const auto path = temp_file("sym.bin");
        write_symbols(path, s);
        const auto back = read_symbols(path);
        CHECK(back.symbols == s.symbols);
        CHECK(back.k == 10);
        CHECK(back.provenance == s.provenance);

        std::ofstream(path, std::ios::binary | std::ios::app).put('\x01');
        CHECK_THROWS_AS(read_symbols(path), Error);
        std::filesystem::remove(path);
        std::filesystem::remove(metadata_path(path));
    }
    SUBCASE("symbol outside the alphabet") {
        SymbolStream s;
        s.k = 2;
        s.symbols = {4};
        CHECK_THROWS_AS(symbol_histogram(s), Error);
    }
    SUBCASE("histogram csv") {
        const BinTable t(1, {1}, geometric(0.5));
        const auto path = temp_file("hist.csv");
        write_histogram_csv(path, {3, 1}, t);
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(text == "symbol,count,expected\n0,3,2\n1,1,2\n");
        CHECK_THROWS_AS(write_histogram_csv(path, {1, 2, 3}, t), Error);
        std::filesystem::remove(path);
    }
}
