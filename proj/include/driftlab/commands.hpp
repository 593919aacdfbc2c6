#pragma once

// Command implementations behind the driftlab executable. Each command writes
// its files under run.output_dir plus a flat key=value manifest.

#include <Eigen/Core>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "driftlab/asymptotics.hpp"
#include "driftlab/config.hpp"
#include "driftlab/errors.hpp"
#include "driftlab/filters.hpp"
#include "driftlab/market.hpp"
#include "driftlab/model.hpp"
#include "driftlab/montecarlo.hpp"
#include "driftlab/sweeps.hpp"

namespace driftlab {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitPropertyFailure = 1, kExitConfigError = 2, kExitIoError = 3 };

struct CommandResult {
    int exit_code = kExitOk;
    std::vector<std::string> files;
};

namespace detail {

/// Shortest round-trip decimal, used for file names.
inline std::string short_number(double x) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    (void)ec;
    return std::string(buf, end);
}

class CsvWriter {
  public:
    explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    CsvWriter& cell(double x) {
        sep();
        line_ += fmt17(x);
        return *this;
    }
    CsvWriter& cell(const std::string& s) {
        sep();
        line_ += s;
        return *this;
    }
    CsvWriter& empty() {
        sep();
        return *this;
    }
    void end_row() {
        out_ << line_ << '\n';
        line_.clear();
        first_ = true;
        if (!out_) throw IoError("write failed: " + path_.string());
    }
    void header(const std::vector<std::string>& cols) {
        for (const auto& c : cols) cell(c);
        end_row();
    }

  private:
    void sep() {
        if (!first_) line_ += ',';
        first_ = false;
    }
    std::filesystem::path path_;
    std::ofstream out_;
    std::string line_;
    bool first_ = true;
};

inline std::filesystem::path prepare_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create output directory " + dir + (ec ? ": " + ec.message() : std::string()));
    }
    return std::filesystem::path(dir);
}

inline void vector_columns(std::vector<std::string>& cols, const std::string& base, int d) {
    if (d == 1) {
        cols.push_back(base);
        return;
    }
    for (int i = 1; i <= d; ++i) cols.push_back(base + "_" + std::to_string(i));
}

/// Upper triangle, row by row: q_11, q_12, ..., q_dd.
inline void matrix_columns(std::vector<std::string>& cols, const std::string& base, int d) {
    if (d == 1) {
        cols.push_back(base);
        return;
    }
    for (int i = 1; i <= d; ++i)
        for (int j = i; j <= d; ++j) cols.push_back(base + "_" + std::to_string(i) + std::to_string(j));
}

inline void vector_cells(CsvWriter& w, const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) w.cell(v(i));
}

inline void matrix_cells(CsvWriter& w, const SymMatrix& q) {
    const Matrix& m = q.matrix();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = i; j < m.cols(); ++j) w.cell(m(i, j));
}

inline MCConfig mc_config(const ScenarioConfig& c) {
    MCConfig mc;
    mc.n_paths = c.run.n_paths;
    mc.lambdas = c.run.lambdas;
    std::sort(mc.lambdas.begin(), mc.lambdas.end());
    mc.lambdas.erase(std::unique(mc.lambdas.begin(), mc.lambdas.end()), mc.lambdas.end());
    mc.dt_max = c.run.dt_max;
    mc.eval_times = c.run.eval_times;
    mc.delta = c.run.delta;
    mc.seed = c.run.seed;
    mc.regimes = c.run.regimes;
    mc.workers = c.run.workers;
    return mc;
}

inline std::vector<double> positive_sorted(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    return xs;
}

/// One seeded path at the largest intensity; every smaller lambda is a thinning of it.
inline MarketPath common_path(const ScenarioConfig& c, const Model& model, double lambda_max) {
    PathSpec spec;
    spec.dt_max = c.run.dt_max;
    spec.lambda = lambda_max;
    spec.seed = c.run.seed;
    spec.path_index = 0;
    return simulate_market_path(model, spec);
}

}  // namespace detail

/// Writes manifest.txt: one key=value per line.
inline std::string write_manifest(const ScenarioConfig& c, const std::string& command, const CommandResult& r) {
    const auto dir = detail::prepare_dir(c.run.output_dir);
    const auto path = dir / "manifest.txt";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(serialize_config(c))));
    out << "command=" << command << '\n';
    out << "config_hash=fnv1a64:" << hash << '\n';
    out << "seed=" << c.run.seed << '\n';
    out << "driftlab_version=" << kVersion << '\n';
    out << "eigen_version=" << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION
        << '\n';
#if defined(__VERSION__)
    out << "compiler=" << __VERSION__ << '\n';
#endif
    out << "cxx_standard=" << __cplusplus << '\n';
    out << "exit_code=" << r.exit_code << '\n';
    std::string files;
    for (const auto& f : r.files) files += (files.empty() ? "" : ";") + f;
    out << "files=" << files << '\n';
    if (!out) throw IoError("write failed: " + path.string());
    return path.string();
}

/// One seeded path per lambda: path_<lambda>.csv and events_<lambda>.csv.
inline CommandResult cmd_simulate(const ScenarioConfig& c, std::ostream& log) {
    const Model model(c.model);
    const auto lambdas = detail::positive_sorted(c.run.lambdas);
    if (lambdas.empty()) throw ConfigError("simulate needs at least one lambda");
    const auto dir = detail::prepare_dir(c.run.output_dir);
    const int d = model.dim();
    const MarketPath full = detail::common_path(c, model, lambdas.back());
    const FilterPath r = run_r_filter(full, model);

    CommandResult res;
    for (double lambda : lambdas) {
        const MarketPath zpath = lambda == lambdas.back() ? full : thin_expert_events(full, lambda);
        const FilterPath z = run_z_filter(zpath, model);
        FilterPath j = r;
        if (lambda > 0.0) {
            const MarketPath jpath = detail::with_continuous_expert(full, model, lambda);
            j = run_j_filter(jpath, model, lambda);
        }

        const std::string tag = detail::short_number(lambda);
        std::vector<std::string> cols{"t"};
        detail::vector_columns(cols, "mu", d);
        for (const char* h : {"r", "z", "j"}) {
            detail::vector_columns(cols, std::string("m_") + h, d);
            detail::matrix_columns(cols, std::string("q_") + h, d);
        }
        cols.push_back("arrival_flag");
        const auto path_file = dir / ("path_" + tag + ".csv");
        {
            detail::CsvWriter w(path_file);
            w.header(cols);
            for (std::size_t k = 0; k < full.grid.size(); ++k) {
                w.cell(full.grid.points[k]);
                detail::vector_cells(w, full.mu[k]);
                for (const FilterPath* f : {&r, static_cast<const FilterPath*>(&z), static_cast<const FilterPath*>(&j)}) {
                    detail::vector_cells(w, f->states[k].m);
                    detail::matrix_cells(w, f->states[k].q);
                }
                w.cell(zpath.grid.is_arrival(k) ? "1" : "0");
                w.end_row();
            }
        }
        const auto events_file = dir / ("events_" + tag + ".csv");
        {
            detail::CsvWriter w(events_file);
            std::vector<std::string> ecols{"k", "t_k"};
            detail::vector_columns(ecols, "z_k", d);
            w.header(ecols);
            std::size_t k = 1;
            for (const auto& ev : zpath.expert_events) {
                w.cell(std::to_string(k++)).cell(ev.t);
                detail::vector_cells(w, ev.z);
                w.end_row();
            }
        }
        log << "lambda=" << tag << ": " << zpath.expert_events.size() << " expert opinions, tr Q^Z(T)="
            << detail::fmt17(z.states.back().q.matrix().trace())
            << ", tr Q^R(T)=" << detail::fmt17(r.states.back().q.matrix().trace()) << '\n';
        res.files.push_back(path_file.string());
        res.files.push_back(events_file.string());
    }
    return res;
}

/// Monte Carlo convergence table: convergence.csv.
inline CommandResult cmd_convergence(const ScenarioConfig& c, std::ostream& log) {
    const Model model(c.model);
    const MCConfig mc = detail::mc_config(c);
    const auto dir = detail::prepare_dir(c.run.output_dir);
    const MCResult result = convergence_study(mc, model);
    const auto file = dir / "convergence.csv";
    detail::CsvWriter w(file);
    w.header({"regime", "lambda", "t", "trq_mean", "trq_stderr", "mse_mean", "mse_stderr", "bound", "slope",
              "gated"});
    for (const MCEntry& e : result.entries) {
        w.cell(regime_name(e.regime)).cell(e.lambda).cell(e.t);
        w.cell(e.trq_mean).cell(e.trq_stderr).cell(e.mse_mean).cell(e.mse_stderr);
        if (e.bound) {
            w.cell(*e.bound);
        } else {
            w.empty();
        }
        const auto slope = e.regime == Regime::R ? std::nullopt : result.slope(e.regime, e.t);
        if (slope) {
            w.cell(*slope);
        } else {
            w.empty();
        }
        if (e.gated) {
            w.cell(*e.gated ? "true" : "false");
        } else {
            w.empty();
        }
        w.end_row();
    }
    for (const SlopeFit& s : result.slopes) {
        log << regime_name(s.regime) << " t=" << detail::short_number(s.t) << ": slope " << detail::fmt17(s.slope)
            << " +- " << detail::fmt17(s.slope_stderr) << '\n';
    }
    CommandResult res;
    res.files.push_back(file.string());
    return res;
}

inline constexpr double kScaledDelta1 = 0.1;
inline constexpr double kScaledDelta2 = 0.5;

/// Text report of the bound constants plus scaled_variance.csv.
inline CommandResult cmd_bounds(const ScenarioConfig& c, std::ostream& log) {
    const Model model(c.model);
    const double delta = c.run.delta;
    const ZGate g = z_gate(model, delta);
    const auto dir = detail::prepare_dir(c.run.output_dir);

    std::ostringstream rep;
    rep << "delta = " << detail::fmt17(delta) << '\n';
    rep << "C^Z(delta) = " << detail::fmt17(g.constants.c_z) << '\n';
    rep << "C^J(delta) = " << detail::fmt17(g.constants.c_j) << '\n';
    rep << "a_alpha = " << detail::fmt17(g.constants.a_alpha) << '\n';
    rep << "b_alpha_bar = " << detail::fmt17(g.constants.b_alpha_bar) << '\n';
    rep << "b_alpha = " << detail::fmt17(g.constants.b_alpha) << " (fraction " << kDefaultBFraction << ")\n";
    rep << "lambda0 = " << detail::fmt17(g.constants.lambda0) << '\n';
    rep << "lambda_star = " << detail::fmt17(g.lambda_star) << '\n';
    rep << "lambda_Q = " << detail::fmt17(g.lambda_q) << " (max of lambda0, lambda_star)\n";
    rep << "note: the gate as literally stated uses min(lambda0, lambda_star) = " << detail::fmt17(g.lambda_q_min)
        << "; the Z bound is only claimed here for lambda >= lambda_Q\n";
    if (model.horizon() >= kScaledDelta2) {
        rep << "C^J(" << kScaledDelta1 << ") = " << detail::fmt17(bound_constant_j(model, kScaledDelta1)) << '\n';
        rep << "C^J(" << kScaledDelta2 << ") = " << detail::fmt17(bound_constant_j(model, kScaledDelta2)) << '\n';
    }
    log << rep.str();

    CommandResult res;
    const auto report_file = dir / "bounds.txt";
    {
        std::ofstream out(report_file);
        if (!out) throw IoError("cannot write " + report_file.string());
        out << rep.str();
        if (!out) throw IoError("write failed: " + report_file.string());
    }
    res.files.push_back(report_file.string());

    if (model.horizon() < kScaledDelta2) throw ConfigError("scaled_variance.csv needs horizon >= 0.5");
    const double cj1 = bound_constant_j(model, kScaledDelta1);
    const double cj2 = bound_constant_j(model, kScaledDelta2);
    std::vector<double> lambdas;
    for (double l : detail::positive_sorted(c.run.lambdas)) {
        if (l > 0.0) lambdas.push_back(l);
    }
    const auto file = dir / "scaled_variance.csv";
    detail::CsvWriter w(file);
    w.header({"lambda", "t", "sqrtlambda_q_j", "sqrtlambda_q_z", "c_j_delta1", "c_j_delta2"});
    if (!lambdas.empty()) {
        const MarketPath full = detail::common_path(c, model, lambdas.back());
        for (double lambda : lambdas) {
            const MarketPath zpath = lambda == lambdas.back() ? full : thin_expert_events(full, lambda);
            const FilterPath z = run_z_filter(zpath, model);
            const auto qj = solve_riccati(make_riccati_j(model, lambda), model.q0(), full.grid);
            const double s = std::sqrt(lambda);
            for (std::size_t k = 0; k < full.grid.size(); ++k) {
                w.cell(lambda).cell(full.grid.points[k]);
                w.cell(s * trace(qj[k])).cell(s * trace(z.states[k].q));
                w.cell(cj1).cell(cj2);
                w.end_row();
            }
        }
    }
    res.files.push_back(file.string());
    return res;
}

inline constexpr std::size_t kCheckSamples = 1000;
inline constexpr std::size_t kCheckPaths = 100;

/// Serializes the offending sample of a failed check for replay.
inline std::string write_failure(const std::filesystem::path& dir, const std::string& name,
                                 const SweepSample& s) {
    const auto path = dir / "check_failure.yaml";
    ScenarioConfig sc;
    sc.model = s.params;
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "check" << YAML::Value << name;
    out << YAML::Key << "what" << YAML::Value << s.what;
    if (s.a.size() > 0) detail::emit_matrix(out, "a", s.a);
    if (s.b.size() > 0) detail::emit_matrix(out, "b", s.b);
    out << YAML::Key << "lambda" << YAML::Value << detail::fmt17(s.lambda);
    out << YAML::Key << "r" << YAML::Value << detail::fmt17(s.r);
    out << YAML::Key << "b_fraction" << YAML::Value << detail::fmt17(s.b_fraction);
    out << YAML::Key << "scenario" << YAML::Value << YAML::Literal << serialize_config(sc);
    out << YAML::EndMap;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << out.c_str() << '\n';
    if (!f) throw IoError("write failed: " + path.string());
    return path.string();
}

/// Matrix property suite, trace-inequality sweeps and covariance ordering on
/// sampled paths. Exit 1 on the first failing group, with its sample saved.
inline CommandResult cmd_check(const ScenarioConfig& c, std::ostream& log) {
    const Model model(c.model);
    const auto dir = detail::prepare_dir(c.run.output_dir);
    const std::uint64_t seed = c.run.seed;
    std::vector<SweepReport> reports;
    for (int d : {1, 2, 3, 5}) reports.push_back(sweep_trace_properties(d, kCheckSamples, seed));

    std::vector<Model> models{model};
    for (int d : {1, 2, 3}) {
        Rng rng = make_stream(seed, 1000 + static_cast<std::uint64_t>(d), StreamTag::sampling);
        models.emplace_back(random_model_params(d, rng));
    }
    const double delta = std::min(c.run.delta, model.horizon());
    for (const Model& m : models) {
        const double dm = std::min(delta, m.horizon());
        reports.push_back(sweep_z_inequality(m, dm, kCheckSamples, seed));
        reports.push_back(sweep_j_inequality(m, dm, kCheckSamples, seed));
    }

    for (double lambda : detail::positive_sorted(c.run.lambdas)) {
        if (!(lambda > 0.0)) continue;
        const std::size_t n = std::min(c.run.n_paths, kCheckPaths);
        const OrderingReport o =
            check_covariance_ordering(model, lambda, n, c.run.dt_max, seed, 1e-9, {}, c.run.workers);
        SweepReport rep;
        rep.name = "covariance ordering lambda=" + detail::short_number(lambda);
        rep.samples = o.points_checked;
        rep.min_scaled_margin = std::min(o.min_eig_z, o.min_eig_j);
        rep.passed = o.ok;
        rep.worst = SweepSample{c.model, Matrix(), Matrix(), lambda, 0.0, 0.0,
                                "path_index=" + std::to_string(o.worst_path) + " seed=" + std::to_string(seed) +
                                    " dt_max=" + detail::fmt17(c.run.dt_max)};
        reports.push_back(rep);
    }

    CommandResult res;
    const SweepReport* failed = nullptr;
    for (const auto& r : reports) {
        log << (r.passed ? "PASS " : "FAIL ") << r.name << ": samples=" << r.samples
            << " min_margin=" << detail::fmt17(r.min_scaled_margin) << '\n';
        if (!r.passed && !failed) failed = &r;
    }
    if (failed) {
        res.exit_code = kExitPropertyFailure;
        if (failed->worst) res.files.push_back(write_failure(dir, failed->name, *failed->worst));
    }
    return res;
}

/// Runs the command, writes the manifest and maps errors onto exit codes.
inline int run_command(Mode mode, const ScenarioConfig& c, std::ostream& log, std::ostream& err) {
    CommandResult res;
    try {
        switch (mode) {
            case Mode::simulate: res = cmd_simulate(c, log); break;
            case Mode::convergence: res = cmd_convergence(c, log); break;
            case Mode::bounds: res = cmd_bounds(c, log); break;
            case Mode::check: res = cmd_check(c, log); break;
        }
        write_manifest(c, mode_name(mode), res);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const ArgumentError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIoError;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitPropertyFailure;
    }
    return res.exit_code;
}

}  // namespace driftlab
