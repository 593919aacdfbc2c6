#pragma once

// Scenario files: YAML with a `model:` and a `run:` section. Matrices are
// written row-major as a list of rows; a flat list of d*d numbers or a single
// scalar (meaning scalar * I) is also accepted on input. Omitted model keys
// take the baseline values, placed on the diagonal when d > 1.

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/filters.hpp"
#include "driftlab/model.hpp"

namespace driftlab {

enum class Mode { simulate, convergence, bounds, check };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::simulate: return "simulate";
        case Mode::convergence: return "convergence";
        case Mode::bounds: return "bounds";
        case Mode::check: return "check";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s) {
    if (s == "simulate") return Mode::simulate;
    if (s == "convergence") return Mode::convergence;
    if (s == "bounds") return Mode::bounds;
    if (s == "check") return Mode::check;
    throw ConfigError("unknown mode '" + s + "'");
}

inline Regime parse_regime(const std::string& s) {
    if (s == "R" || s == "r") return Regime::R;
    if (s == "Z" || s == "z") return Regime::Z;
    if (s == "J" || s == "j") return Regime::J;
    throw ConfigError("unknown regime '" + s + "'");
}

struct RunConfig {
    Mode mode = Mode::simulate;
    std::vector<double> lambdas{5.0, 20.0, 2000.0};
    std::size_t n_paths = 10000;
    double dt_max = 1e-3;
    double delta = 0.5;
    std::vector<double> eval_times{0.25, 0.5, 0.75, 1.0};
    std::uint64_t seed = 1;
    std::vector<Regime> regimes{Regime::R, Regime::Z, Regime::J};
    std::string output_dir = "out";
    unsigned workers = 0;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ScenarioConfig {
    ModelParams model = ModelParams::baseline();
    RunConfig run;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

/// Baseline values scaled to dimension d (scalars on the diagonal).
inline ModelParams default_params(int d) {
    check_dim(d);
    const ModelParams t = ModelParams::baseline();
    if (d == 1) return t;
    const Matrix id = Matrix::Identity(d, d);
    ModelParams p;
    p.d = d;
    p.kappa = t.kappa(0, 0) * id;
    p.mu_bar = Vector::Constant(d, t.mu_bar(0));
    p.sigma_mu = t.sigma_mu(0, 0) * id;
    p.sigma_R = t.sigma_R(0, 0) * id;
    p.gamma = t.gamma(0, 0) * id;
    p.sigma_j_bar = t.sigma_j_bar(0, 0) * id;
    p.m0 = Vector::Constant(d, t.m0(0));
    p.q0 = t.q0(0, 0) * id;
    p.m0_prior = Vector::Constant(d, t.m0_prior(0));
    p.q0_prior = t.q0_prior(0, 0) * id;
    p.horizon = t.horizon;
    return p;
}

namespace detail {

template <class T>
T scalar_as(const YAML::Node& n, const std::string& key) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("'" + key + "' has the wrong type");
    }
}

inline double finite_as(const YAML::Node& n, const std::string& key) {
    const double v = scalar_as<double>(n, key);
    if (!std::isfinite(v)) throw ConfigError("'" + key + "' must be finite");
    return v;
}

inline Matrix read_matrix(const YAML::Node& n, int d, const std::string& key) {
    Matrix m(d, d);
    if (n.IsScalar()) {
        m = finite_as(n, key) * Matrix::Identity(d, d);
        return m;
    }
    if (!n.IsSequence()) throw ConfigError("'" + key + "' must be a matrix");
    if (n.size() == static_cast<std::size_t>(d) && n[0].IsSequence()) {
        for (int i = 0; i < d; ++i) {
            if (!n[i].IsSequence() || n[i].size() != static_cast<std::size_t>(d)) {
                throw ConfigError("'" + key + "' row " + std::to_string(i) + " must have " + std::to_string(d) +
                                  " entries");
            }
            for (int j = 0; j < d; ++j) m(i, j) = finite_as(n[i][j], key);
        }
        return m;
    }
    if (n.size() == static_cast<std::size_t>(d * d)) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = finite_as(n[i * d + j], key);
        return m;
    }
    throw ConfigError("'" + key + "' must be " + std::to_string(d) + "x" + std::to_string(d));
}

inline Vector read_vector(const YAML::Node& n, int d, const std::string& key) {
    Vector v(d);
    if (n.IsScalar()) {
        v.setConstant(finite_as(n, key));
        return v;
    }
    if (!n.IsSequence() || n.size() != static_cast<std::size_t>(d)) {
        throw ConfigError("'" + key + "' must have " + std::to_string(d) + " entries");
    }
    for (int i = 0; i < d; ++i) v(i) = finite_as(n[i], key);
    return v;
}

inline std::vector<double> read_list(const YAML::Node& n, const std::string& key) {
    std::vector<double> out;
    if (n.IsScalar()) {
        out.push_back(finite_as(n, key));
        return out;
    }
    if (!n.IsSequence()) throw ConfigError("'" + key + "' must be a list");
    for (const auto& x : n) out.push_back(finite_as(x, key));
    return out;
}

inline void check_keys(const YAML::Node& n, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void emit_number(YAML::Emitter& out, double x) { out << YAML::Value << fmt17(x); }

inline void emit_matrix(YAML::Emitter& out, const char* key, const Matrix& m) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << YAML::Flow << YAML::BeginSeq;
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << fmt17(m(i, j));
        out << YAML::EndSeq;
    }
    out << YAML::EndSeq;
}

inline void emit_list(YAML::Emitter& out, const char* key, const auto& xs) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double x : xs) out << fmt17(x);
    out << YAML::EndSeq;
}

}  // namespace detail

inline ModelParams parse_model(const YAML::Node& n) {
    using namespace detail;
    if (!n || n.IsNull()) return ModelParams::baseline();
    if (!n.IsMap()) throw ConfigError("'model' must be a mapping");
    check_keys(n,
               {"d", "kappa", "mu_bar", "sigma_mu", "sigma_R", "gamma", "sigma_j_bar", "m0", "q0", "m0_prior",
                "q0_prior", "horizon"},
               "model");
    const int d = n["d"] ? scalar_as<int>(n["d"], "d") : 1;
    if (d < 1 || d > kMaxDim) throw ConfigError("'d' must lie in [1, " + std::to_string(kMaxDim) + "]");
    ModelParams p = default_params(d);
    auto mat = [&](const char* key, Matrix& dst) {
        if (n[key]) dst = read_matrix(n[key], d, key);
    };
    auto vec = [&](const char* key, Vector& dst) {
        if (n[key]) dst = read_vector(n[key], d, key);
    };
    mat("kappa", p.kappa);
    vec("mu_bar", p.mu_bar);
    mat("sigma_mu", p.sigma_mu);
    mat("sigma_R", p.sigma_R);
    mat("gamma", p.gamma);
    mat("sigma_j_bar", p.sigma_j_bar);
    // The prior defaults to the filter start and vice versa when only one is given.
    const bool has_m0 = n["m0"].IsDefined(), has_m0p = n["m0_prior"].IsDefined();
    const bool has_q0 = n["q0"].IsDefined(), has_q0p = n["q0_prior"].IsDefined();
    vec("m0", p.m0);
    vec("m0_prior", p.m0_prior);
    mat("q0", p.q0);
    mat("q0_prior", p.q0_prior);
    if (has_m0 && !has_m0p) p.m0_prior = p.m0;
    if (has_m0p && !has_m0) p.m0 = p.m0_prior;
    if (has_q0 && !has_q0p) p.q0_prior = p.q0;
    if (has_q0p && !has_q0) p.q0 = p.q0_prior;
    if (n["horizon"]) p.horizon = finite_as(n["horizon"], "horizon");
    return p;
}

inline RunConfig parse_run(const YAML::Node& n) {
    using namespace detail;
    RunConfig r;
    if (!n || n.IsNull()) return r;
    if (!n.IsMap()) throw ConfigError("'run' must be a mapping");
    check_keys(n,
               {"mode", "lambdas", "n_paths", "dt_max", "delta", "eval_times", "seed", "regimes", "output_dir",
                "workers"},
               "run");
    if (n["mode"]) r.mode = parse_mode(scalar_as<std::string>(n["mode"], "mode"));
    if (n["lambdas"]) r.lambdas = read_list(n["lambdas"], "lambdas");
    if (n["n_paths"]) {
        const auto v = scalar_as<long long>(n["n_paths"], "n_paths");
        if (v < 1) throw ConfigError("'n_paths' must be positive");
        r.n_paths = static_cast<std::size_t>(v);
    }
    if (n["dt_max"]) r.dt_max = finite_as(n["dt_max"], "dt_max");
    if (n["delta"]) r.delta = finite_as(n["delta"], "delta");
    if (n["eval_times"]) r.eval_times = read_list(n["eval_times"], "eval_times");
    if (n["seed"]) r.seed = scalar_as<std::uint64_t>(n["seed"], "seed");
    if (n["regimes"]) {
        r.regimes.clear();
        const YAML::Node& g = n["regimes"];
        if (g.IsScalar()) {
            r.regimes.push_back(parse_regime(g.as<std::string>()));
        } else {
            for (const auto& x : g) r.regimes.push_back(parse_regime(scalar_as<std::string>(x, "regimes")));
        }
    }
    if (n["output_dir"]) r.output_dir = scalar_as<std::string>(n["output_dir"], "output_dir");
    if (n["workers"]) r.workers = scalar_as<unsigned>(n["workers"], "workers");
    if (!(r.dt_max > 0.0)) throw ConfigError("'dt_max' must be positive");
    if (!(r.delta > 0.0)) throw ConfigError("'delta' must be positive");
    for (double l : r.lambdas) {
        if (l < 0.0) throw ConfigError("'lambdas' must be nonnegative");
    }
    return r;
}

/// Parses and validates; an inadmissible model is a configuration error.
inline ScenarioConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    ScenarioConfig c;
    if (!root || root.IsNull()) return c;
    if (!root.IsMap()) throw ConfigError("config must be a mapping with 'model' and 'run' sections");
    detail::check_keys(root, {"model", "run"}, "top level");
    c.model = parse_model(root["model"]);
    c.run = parse_run(root["run"]);
    try {
        Model check(c.model);
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("invalid model: ") + e.what());
    }
    return c;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot read config file " + path);
    std::string text;
    char buf[4096];
    std::size_t k;
    while ((k = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, k);
    std::fclose(f);
    return parse_config(text);
}

/// Emits every field with 17 significant digits so parsing reproduces it exactly.
inline std::string serialize_config(const ScenarioConfig& c) {
    using namespace detail;
    const ModelParams& p = c.model;
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "d" << YAML::Value << p.d;
    emit_matrix(out, "kappa", p.kappa);
    emit_list(out, "mu_bar", p.mu_bar);
    emit_matrix(out, "sigma_mu", p.sigma_mu);
    emit_matrix(out, "sigma_R", p.sigma_R);
    emit_matrix(out, "gamma", p.gamma);
    emit_matrix(out, "sigma_j_bar", p.sigma_j_bar);
    emit_list(out, "m0", p.m0);
    emit_matrix(out, "q0", p.q0);
    emit_list(out, "m0_prior", p.m0_prior);
    emit_matrix(out, "q0_prior", p.q0_prior);
    out << YAML::Key << "horizon";
    emit_number(out, p.horizon);
    out << YAML::EndMap;

    const RunConfig& r = c.run;
    out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "mode" << YAML::Value << mode_name(r.mode);
    emit_list(out, "lambdas", r.lambdas);
    out << YAML::Key << "n_paths" << YAML::Value << r.n_paths;
    out << YAML::Key << "dt_max";
    emit_number(out, r.dt_max);
    out << YAML::Key << "delta";
    emit_number(out, r.delta);
    emit_list(out, "eval_times", r.eval_times);
    out << YAML::Key << "seed" << YAML::Value << r.seed;
    out << YAML::Key << "regimes" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (Regime g : r.regimes) out << regime_name(g);
    out << YAML::EndSeq;
    out << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << r.output_dir;
    out << YAML::Key << "workers" << YAML::Value << r.workers;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace driftlab
