#include "qtun/afterpulse.hpp"
#include "qtun/encoder.hpp"
#include "qtun/entropy.hpp"
#include "qtun/pipeline.hpp"
#include "qtun/randomness.hpp"
#include "qtun/source.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace qtun;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

// Config file plus flag overrides, resolved through PipelineConfig so every
// subcommand sees the same defaults and validation.
struct Settings {
    std::optional<std::string> config;
    std::optional<double> p0, ap_a, ap_b, alpha;
    std::optional<std::uint64_t> k, block, margin, seed, count, holdoff;
    std::optional<std::string> engine;

    PipelineConfig resolve(const char* seed_key = "seed") const {
        KeyValues kv;
        if (config) {
            try {
                kv = KeyValues::load(*config);
            } catch (const Error& e) {
                throw Error(Errc::ConfigError, std::string("cannot read config: ") + e.what());
            }
        }
        if (p0) kv.set("p0", *p0);
        if (ap_a) kv.set("ap_a", *ap_a);
        if (ap_b) kv.set("ap_b", *ap_b);
        if (alpha) kv.set("alpha", *alpha);
        if (k) kv.set("k", *k);
        if (block) kv.set("block", *block);
        if (margin) kv.set("margin", *margin);
        if (seed) kv.set(seed_key, *seed);
        if (count) kv.set("count", *count);
        if (holdoff) kv.set("holdoff_periods", *holdoff);
        if (engine) kv.set("engine", *engine);
        return PipelineConfig::from_kv(kv);
    }
};

void add_config(CLI::App* cmd, Settings& s) {
    cmd->add_option("--config", s.config, "key=value config file (see qtun --help)");
}
void add_model(CLI::App* cmd, Settings& s) {
    cmd->add_option("--p0", s.p0, "per-period tunneling probability [0.001]");
    cmd->add_option("--ap-a", s.ap_a, "after-pulse amplitude A [5e-5]");
    cmd->add_option("--ap-b", s.ap_b, "after-pulse decay B per period [0.01]");
    cmd->add_option("--holdoff", s.holdoff, "hold-off periods [9]");
}

template <class F>
void run_stage(const std::string& name, F&& body) {
    try {
        body();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        if (e.code() == Errc::ConfigError) {
            throw;
        }
        throw StageError(name, e);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"qtun: tunneling-interval random numbers, from intervals to tested bits"};
    app.require_subcommand(1);
    app.footer(pipeline_config_help() +
               "\nFlags override config values. Exit codes: 0 success, 1 stage failure, 2 config or usage error.");

    Settings s;
    std::string in, out, fit_path, bins_path, entropy_path, csv_path, report_path;
    std::uint64_t seq_len = 1'000'000;
    std::function<void()> action;

    auto* simulate = app.add_subcommand("simulate", "sample an interval file from the source model");
    add_config(simulate, s);
    add_model(simulate, s);
    simulate->add_option("--count", s.count, "intervals [1000000]");
    simulate->add_option("--seed", s.seed, "simulation seed [1]");
    simulate->add_option("--out", out, "interval file")->required();
    simulate->callback([&] {
        action = [&] {
            const auto c = s.resolve("seed_simulate");
            run_stage("simulate", [&] {
                write_intervals(out, sample_intervals(source_model(c), c.count, c.seed_simulate));
            });
            std::cout << "wrote " << c.count << " intervals to " << out << "\n";
        };
    });

    auto* ingest = app.add_subcommand("ingest", "validate a hardware interval file and rewrite it");
    ingest->add_option("--in", in, "interval file with .meta sidecar")->required();
    ingest->add_option("--out", out, "interval file")->required();
    ingest->callback([&] {
        action = [&] {
            run_stage("ingest", [&] {
                const auto stream = ingest_intervals(in);
                write_intervals(out, stream);
                std::cout << stream.size() << " intervals, clock_hz=" << format_real(stream.meta.clock_hz)
                          << " holdoff_ns=" << format_real(stream.meta.holdoff_ns)
                          << " source=" << stream.meta.source << "\n";
            });
        };
    });

    auto* dcr = app.add_subcommand("dcr", "detections per wall-clock second");
    dcr->add_option("--in", in, "interval file")->required();
    dcr->add_option("--out", out, "CSV second,count,partial")->required();
    dcr->callback([&] {
        action = [&] { run_stage("dcr", [&] { write_dcr_csv(out, dcr_per_second(ingest_intervals(in))); }); };
    });

    auto* fit = app.add_subcommand("fit", "fit the after-pulse model");
    fit->add_option("--in", in, "interval file")->required();
    fit->add_option("--out", out, "fit report")->required();
    fit->add_option("--csv", csv_path, "log-quotient CSV");
    fit->callback([&] {
        action = [&] {
            run_stage("fit", [&] {
                const auto stream = ingest_intervals(in);
                const auto f = fit_afterpulse(stream);
                f.save(out);
                if (!csv_path.empty()) {
                    write_log_quotient_csv(csv_path, log_quotient(stream, f));
                }
                std::cout << "p0=" << format_real(f.p0_hat) << " A=" << format_real(f.A_hat)
                          << " B=" << format_real(f.B_hat) << "\n";
            });
        };
    });

    auto* bins = app.add_subcommand("bins", "equal-mass interval bins");
    add_config(bins, s);
    bins->add_option("--k", s.k, "bits per symbol [10]");
    bins->add_option("--fit", fit_path, "fit report (p0 from the fit)");
    bins->add_option("--in", in, "interval file whose metadata gives clock and hold-off (with --fit)");
    bins->add_option("--p0", s.p0, "p0 when no fit is given [0.001]");
    bins->add_option("--holdoff", s.holdoff, "hold-off periods when no fit is given [9]");
    bins->add_option("--out", out, "bin table")->required();
    bins->callback([&] {
        action = [&] {
            const auto c = s.resolve();
            if (!fit_path.empty() && in.empty()) {
                throw Error(Errc::ConfigError, "bins --fit needs --in for the stream metadata");
            }
            run_stage("bins", [&] {
                const auto table = fit_path.empty()
                                       ? build_bin_table(
                                             [&] {
                                                 auto m = source_model(c);
                                                 m.ap_amplitude = 0.0;
                                                 return m;
                                             }(),
                                             c.k)
                                       : bin_table_for(AfterpulseFit::load(fit_path), ingest_intervals(in).meta, c.k);
                table.save(out);
                std::cout << table.bins() << " bins, table " << table.hash() << "\n";
            });
        };
    });

    auto* pre = app.add_subcommand("preselect", "after-pulse rejection sampling");
    pre->add_option("--in", in, "interval file")->required();
    pre->add_option("--fit", fit_path, "fit report")->required();
    pre->add_option("--seed", s.seed, "selection seed [2]");
    pre->add_option("--out", out, "selected interval file")->required();
    pre->add_option("--report", report_path, "selection report");
    pre->callback([&] {
        action = [&] {
            const auto c = s.resolve("seed_preselect");
            run_stage("preselect", [&] {
                const auto sel = preselect(ingest_intervals(in), AfterpulseFit::load(fit_path), c.seed_preselect);
                write_intervals(out, sel.stream);
                if (!report_path.empty()) {
                    sel.report.to_kv().save(report_path);
                }
                std::cout << "kept " << sel.report.kept_count << " of " << sel.report.input_count << "\n";
            });
        };
    });

    auto* enc = app.add_subcommand("encode", "intervals to k-bit symbols");
    enc->add_option("--in", in, "interval file")->required();
    enc->add_option("--bins", bins_path, "bin table")->required();
    enc->add_option("--out", out, "symbol file")->required();
    enc->add_option("--histogram", csv_path, "histogram CSV");
    enc->callback([&] {
        action = [&] {
            run_stage("encode", [&] {
                const auto table = BinTable::load(bins_path);
                const auto symbols = encode(ingest_intervals(in), table);
                write_symbols(out, symbols);
                if (!csv_path.empty()) {
                    write_histogram_csv(csv_path, symbol_histogram(symbols), table);
                }
                std::cout << symbols.size() << " symbols\n";
            });
        };
    });

    auto* ent = app.add_subcommand("entropy", "min-entropy and extraction plan");
    add_config(ent, s);
    ent->add_option("--in", in, "symbol file")->required();
    ent->add_option("--block", s.block, "extractor input bits m [1000000]");
    ent->add_option("--margin", s.margin, "security margin bits [100]");
    ent->add_option("--out", out, "entropy report")->required();
    ent->callback([&] {
        action = [&] {
            const auto c = s.resolve();
            run_stage("entropy", [&] {
                const auto symbols = read_symbols(in);
                const auto report = min_entropy(symbol_histogram(symbols), symbols.k);
                const auto plan = plan_extraction(report, c.block, c.margin);
                entropy_artifact(report, plan).save(out);
                std::cout << "min-entropy " << format_real(report.min_entropy_per_symbol) << " bits/symbol, n="
                          << plan.n << "\n";
            });
        };
    });

    auto* ext = app.add_subcommand("extract", "Toeplitz extraction");
    add_config(ext, s);
    ext->add_option("--in", in, "symbol file")->required();
    ext->add_option("--entropy", entropy_path, "entropy report with the plan")->required();
    ext->add_option("--seed", s.seed, "Toeplitz seed stream [3]");
    ext->add_option("--engine", s.engine, "naive | packed | clmul [clmul]");
    ext->add_option("--out", out, "extracted bits file")->required();
    ext->callback([&] {
        action = [&] {
            const auto c = s.resolve("seed_toeplitz");
            run_stage("extract", [&] {
                const auto plan = plan_from_entropy_artifact(KeyValues::load(entropy_path));
                const auto x = extract_symbols(read_symbols(in), plan, c.seed_toeplitz, c.extraction_engine());
                write_bits(out, x.bits, x.seed);
                std::cout << x.bits.size() << " bits";
                if (x.seconds > 0.0) {
                    std::cout << ", " << format_real(static_cast<double>(x.bits.size()) / 8e6 / x.seconds) << " MB/s";
                }
                std::cout << "\n";
            });
        };
    });

    auto* tst = app.add_subcommand("test", "statistical battery");
    add_config(tst, s);
    tst->add_option("--in", in, "extracted bits file")->required();
    tst->add_option("--alpha", s.alpha, "significance [0.01]");
    tst->add_option("--seq-len", seq_len, "sequence length in bits [1000000]");
    tst->add_option("--out", out, "report table")->required();
    tst->add_option("--csv", csv_path, "per-sequence p-values");
    tst->callback([&] {
        action = [&] {
            const auto c = s.resolve();
            run_stage("test", [&] {
                const auto report = nist::run_battery(read_bits(in).payload, seq_len, c.alpha);
                std::ofstream(out) << report.table();
                if (!csv_path.empty()) {
                    report.write_csv(csv_path);
                }
                std::cout << report.table();
            });
        };
    });

    auto* pipe = app.add_subcommand("pipeline", "every stage, with a manifest");
    add_config(pipe, s);
    add_model(pipe, s);
    pipe->add_option("--count", s.count, "intervals to simulate [1000000]");
    pipe->add_option("--k", s.k, "bits per symbol [10]");
    pipe->add_option("--block", s.block, "extractor input bits m [1000000]");
    pipe->add_option("--margin", s.margin, "security margin bits [100]");
    pipe->add_option("--seed", s.seed, "master seed [1]");
    pipe->add_option("--alpha", s.alpha, "significance [0.01]");
    pipe->add_option("--engine", s.engine, "naive | packed | clmul [clmul]");
    pipe->add_option("--out", out, "output directory [run]");
    pipe->callback([&] {
        action = [&] {
            auto c = s.resolve();
            if (!out.empty()) {
                c.out = out;
                c.validate();
            }
            const auto manifest = run_pipeline(c, [](const std::string& stage) { std::cerr << "[" << stage << "]\n"; });
            for (const auto& key : manifest.keys()) {
                if (key.rfind("result.", 0) == 0) {
                    std::cout << key.substr(7) << " = " << manifest.str(key) << "\n";
                }
            }
            std::cout << "manifest " << (c.out / "manifest.txt").string() << "\n";
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        action();
    } catch (const Error& e) {
        std::cerr << "qtun: " << e.what() << "\n";
        return e.code() == Errc::ConfigError ? kExitConfig : kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "qtun: " << e.what() << "\n";
        return kExitStage;
    }
    return 0;
}
