#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "driftlab/commands.hpp"
#include "driftlab/config.hpp"

namespace fs = std::filesystem;
using namespace driftlab;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("driftlab_test_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(cell);
        if (!line.empty() && line.back() == ',') row.push_back("");
        rows.push_back(row);
    }
    return rows;
}

std::string join(const std::vector<std::string>& xs) {
    std::string s;
    for (const auto& x : xs) s += (s.empty() ? "" : ",") + x;
    return s;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    ADD_FAILURE() << "missing column " << name;
    return 0;
}

std::map<std::string, std::string> read_manifest(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DRIFTLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ScenarioConfig small_config(const fs::path& dir) {
    ScenarioConfig c;
    c.run.output_dir = dir.string();
    c.run.workers = 1;
    return c;
}

}  // namespace

TEST(Config, EmptyTextGivesBaseline) {
    const ScenarioConfig c = parse_config("");
    EXPECT_EQ(c, ScenarioConfig{});
    EXPECT_EQ(c.model, ModelParams::baseline());
    EXPECT_EQ(c.run.lambdas, (std::vector<double>{5.0, 20.0, 2000.0}));
    EXPECT_EQ(c.run.n_paths, 10000u);
    EXPECT_EQ(c.run.seed, 1u);
    EXPECT_EQ(c.run.mode, Mode::simulate);
}

TEST(Config, PartialSectionsKeepDefaults) {
    const ScenarioConfig c = parse_config("run:\n  seed: 7\n  lambdas: [1, 2]\n");
    EXPECT_EQ(c.model, ModelParams::baseline());
    EXPECT_EQ(c.run.seed, 7u);
    EXPECT_EQ(c.run.lambdas, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(c.run.dt_max, 1e-3);
}

TEST(Config, RoundTripIsIdentity) {
    const std::string text = R"(
model:
  d: 2
  kappa: [[3, 0.5], [-0.25, 2]]
  mu_bar: [0.1, 0.05]
  sigma_mu: [[1, 0], [0.3, 0.7]]
  sigma_R: 0.25
  gamma: [0.05, 0.01, 0.01, 0.08]
  sigma_j_bar: [[0.05, 0], [0, 0.07]]
  m0: [0.2, 0]
  q0: [[0.1666666666666667, 0.01], [0.01, 0.2]]
  horizon: 1.5
run:
  mode: convergence
  lambdas: [0, 3.25, 1e4]
  n_paths: 123
  dt_max: 0.002
  delta: 0.3
  eval_times: [0.1, 0.7]
  seed: 18446744073709551615
  regimes: [J, R]
  output_dir: some/dir
  workers: 3
)";
    const ScenarioConfig a = parse_config(text);
    const std::string s1 = serialize_config(a);
    const ScenarioConfig b = parse_config(s1);
    EXPECT_EQ(a, b);
    EXPECT_EQ(s1, serialize_config(b));

    EXPECT_EQ(a.model.d, 2);
    EXPECT_EQ(a.model.kappa(0, 1), 0.5);
    EXPECT_EQ(a.model.kappa(1, 0), -0.25);
    EXPECT_EQ(a.model.gamma(0, 1), 0.01);
    EXPECT_EQ(a.model.m0_prior, a.model.m0);
    EXPECT_EQ(a.model.q0_prior, a.model.q0);
    EXPECT_EQ(a.run.seed, 18446744073709551615ull);
    EXPECT_EQ(a.run.regimes, (std::vector<Regime>{Regime::J, Regime::R}));
    EXPECT_EQ(a.run.mode, Mode::convergence);
}

TEST(Config, RoundTripKeepsAwkwardDoubles) {
    ScenarioConfig c;
    c.model.kappa(0, 0) = 0.1 + 0.2;
    c.model.q0(0, 0) = 1.0 / 3.0;
    c.model.q0_prior(0, 0) = 1.0 / 7.0;
    c.run.delta = std::nextafter(0.5, 1.0);
    c.run.lambdas = {1e-300, 12345.678901234567};
    EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, ScalarMatrixMeansMultipleOfIdentity) {
    const ScenarioConfig c = parse_config("model:\n  d: 3\n  gamma: 0.2\n");
    EXPECT_TRUE(c.model.gamma.isApprox(0.2 * Matrix::Identity(3, 3), 0.0));
    EXPECT_EQ(c.model.kappa.rows(), 3);
    EXPECT_EQ(c.model.mu_bar.size(), 3);
}

TEST(Config, Rejections) {
    EXPECT_THROW(parse_config("model:\n  kapa: 3\n"), ConfigError);
    EXPECT_THROW(parse_config("runs: {}\n"), ConfigError);
    EXPECT_THROW(parse_config("run:\n  mode: plot\n"), ConfigError);
    EXPECT_THROW(parse_config("run:\n  regimes: [R, X]\n"), ConfigError);
    EXPECT_THROW(parse_config("run:\n  n_paths: 0\n"), ConfigError);
    EXPECT_THROW(parse_config("run:\n  dt_max: -1\n"), ConfigError);
    EXPECT_THROW(parse_config("run:\n  lambdas: [5, -1]\n"), ConfigError);
    EXPECT_THROW(parse_config("model:\n  d: 2\n  kappa: [1, 2, 3]\n"), ConfigError);
    EXPECT_THROW(parse_config("model: [1, 2\n"), ConfigError);
    EXPECT_THROW(parse_config("- 1\n- 2\n"), ConfigError);
    EXPECT_THROW(parse_config("model:\n  horizon: .nan\n"), ConfigError);
}

TEST(Config, InadmissibleModelIsConfigError) {
    EXPECT_THROW(parse_config("model:\n  gamma: -0.05\n"), ConfigError);
    EXPECT_THROW(parse_config("model:\n  d: 2\n  gamma: [[0.05, 0.1], [0.1, 0.05]]\n"), ConfigError);
}

TEST(Config, MissingFileIsIoError) {
    EXPECT_THROW(load_config("/nonexistent/driftlab/config.yaml"), IoError);
}

TEST(Config, LoadFromFile) {
    const auto dir = fresh_dir("load");
    fs::create_directories(dir);
    const auto file = dir / "c.yaml";
    std::ofstream(file) << "run:\n  seed: 42\n";
    EXPECT_EQ(load_config(file.string()).run.seed, 42u);
}

TEST(Simulate, HeadersAndLambdaZero) {
    const auto dir = fresh_dir("sim1");
    ScenarioConfig c = small_config(dir);
    c.run.lambdas = {0.0, 20.0, 200.0};
    c.run.dt_max = 1e-2;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0) << err.str();

    for (const char* tag : {"0", "20", "200"}) {
        const auto rows = read_csv(dir / (std::string("path_") + tag + ".csv"));
        ASSERT_GT(rows.size(), 100u);
        EXPECT_EQ(join(rows[0]), "t,mu,m_r,q_r,m_z,q_z,m_j,q_j,arrival_flag");
        const auto ev = read_csv(dir / (std::string("events_") + tag + ".csv"));
        EXPECT_EQ(join(ev[0]), "k,t_k,z_k");
        std::size_t flags = 0;
        for (std::size_t k = 1; k < rows.size(); ++k) flags += rows[k].back() == "1";
        EXPECT_EQ(flags, ev.size() - 1) << tag;
        EXPECT_EQ(std::stod(rows[1][0]), 0.0);
        EXPECT_EQ(std::stod(rows.back()[0]), 1.0);
    }

    // No expert information at lambda = 0: Z and J coincide with R to the last digit.
    const auto rows = read_csv(dir / "path_0.csv");
    const auto& h = rows[0];
    for (std::size_t k = 1; k < rows.size(); ++k) {
        EXPECT_EQ(rows[k][column(h, "q_z")], rows[k][column(h, "q_r")]);
        EXPECT_EQ(rows[k][column(h, "m_z")], rows[k][column(h, "m_r")]);
        EXPECT_EQ(rows[k][column(h, "q_j")], rows[k][column(h, "q_r")]);
        EXPECT_EQ(rows[k].back(), "0");
    }
    EXPECT_EQ(read_csv(dir / "events_0.csv").size(), 1u);

    // Thinned event sets are nested: every lambda=20 opinion also appears at lambda=200.
    const auto e20 = read_csv(dir / "events_20.csv");
    const auto e200 = read_csv(dir / "events_200.csv");
    EXPECT_LT(e20.size(), e200.size());
    for (std::size_t i = 1; i < e20.size(); ++i) {
        bool found = false;
        for (std::size_t j = 1; j < e200.size(); ++j) {
            found = found || (e200[j][1] == e20[i][1] && e200[j][2] == e20[i][2]);
        }
        EXPECT_TRUE(found) << "t=" << e20[i][1];
    }

    // The R column does not depend on lambda.
    const auto p20 = read_csv(dir / "path_20.csv");
    const auto p200 = read_csv(dir / "path_200.csv");
    for (std::size_t k = 1; k < p20.size(); ++k) EXPECT_EQ(p20[k][3], p200[k][3]);
}

TEST(Simulate, TwoDimensionalColumns) {
    const auto dir = fresh_dir("sim2");
    ScenarioConfig c = small_config(dir);
    c.model = parse_config("model:\n  d: 2\n").model;
    c.run.lambdas = {10.0};
    c.run.dt_max = 1e-2;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0) << err.str();
    const auto rows = read_csv(dir / "path_10.csv");
    EXPECT_EQ(join(rows[0]),
              "t,mu_1,mu_2,m_r_1,m_r_2,q_r_11,q_r_12,q_r_22,m_z_1,m_z_2,q_z_11,q_z_12,q_z_22,"
              "m_j_1,m_j_2,q_j_11,q_j_12,q_j_22,arrival_flag");
    for (std::size_t k = 1; k < rows.size(); ++k) EXPECT_EQ(rows[k].size(), rows[0].size());
    EXPECT_EQ(join(read_csv(dir / "events_10.csv")[0]), "k,t_k,z_k_1,z_k_2");
}

TEST(Simulate, DeterministicForSeed) {
    const auto d1 = fresh_dir("det1");
    const auto d2 = fresh_dir("det2");
    const auto d3 = fresh_dir("det3");
    ScenarioConfig c = small_config(d1);
    c.run.lambdas = {50.0};
    c.run.dt_max = 1e-2;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0);
    c.run.output_dir = d2.string();
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0);
    c.run.output_dir = d3.string();
    c.run.seed = 2;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0);
    EXPECT_EQ(slurp(d1 / "path_50.csv"), slurp(d2 / "path_50.csv"));
    EXPECT_EQ(slurp(d1 / "events_50.csv"), slurp(d2 / "events_50.csv"));
    EXPECT_NE(slurp(d1 / "path_50.csv"), slurp(d3 / "path_50.csv"));
}

TEST(Simulate, ManifestContents) {
    const auto dir = fresh_dir("manifest");
    ScenarioConfig c = small_config(dir);
    c.run.lambdas = {5.0};
    c.run.dt_max = 1e-2;
    c.run.seed = 99;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0);
    const auto kv = read_manifest(dir / "manifest.txt");
    EXPECT_EQ(kv.at("command"), "simulate");
    EXPECT_EQ(kv.at("seed"), "99");
    EXPECT_EQ(kv.at("exit_code"), "0");
    EXPECT_EQ(kv.at("driftlab_version"), kVersion);
    EXPECT_EQ(kv.at("config_hash").rfind("fnv1a64:", 0), 0u);
    EXPECT_EQ(kv.at("config_hash").size(), 8u + 16u);
    EXPECT_NE(kv.at("files").find("path_5.csv"), std::string::npos);
    EXPECT_NE(kv.at("files").find("events_5.csv"), std::string::npos);
    EXPECT_TRUE(kv.count("eigen_version"));

    // The hash follows the configuration.
    const auto dir2 = fresh_dir("manifest2");
    c.run.output_dir = dir2.string();
    c.run.seed = 100;
    ASSERT_EQ(run_command(Mode::simulate, c, log, err), 0);
    EXPECT_NE(read_manifest(dir2 / "manifest.txt").at("config_hash"), kv.at("config_hash"));
}

TEST(Convergence, TableColumnsBoundsAndGate) {
    const auto dir = fresh_dir("conv");
    ScenarioConfig c = small_config(dir);
    c.run.lambdas = {20.0, 200.0, 2000.0};
    c.run.n_paths = 8;
    c.run.delta = 0.1;
    c.run.eval_times = {0.5, 1.0};
    c.run.dt_max = 1e-3;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::convergence, c, log, err), 0) << err.str();
    const auto rows = read_csv(dir / "convergence.csv");
    ASSERT_EQ(join(rows[0]), "regime,lambda,t,trq_mean,trq_stderr,mse_mean,mse_stderr,bound,slope,gated");
    const auto& h = rows[0];
    const std::size_t ib = column(h, "bound"), ig = column(h, "gated"), is = column(h, "slope");

    // Bound oracle: C^J(0.1) / sqrt(lambda) with C^J(0.1) = sqrt(0.05 (1 + (1/6) / (0.1 e))).
    const double cj = std::sqrt(0.05 * (1.0 + (1.0 / 6.0) / (0.1 * std::exp(1.0))));
    const double lambda_q = z_gate(Model(c.model), 0.1).lambda_q;
    ASSERT_GT(lambda_q, 200.0);
    ASSERT_LT(lambda_q, 2000.0);
    int seen_j = 0, seen_r = 0, seen_z = 0;
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const auto& r = rows[k];
        ASSERT_EQ(r.size(), h.size());
        const double lambda = std::stod(r[1]);
        const double t = std::stod(r[2]);
        if (r[0] == "R") {
            ++seen_r;
            EXPECT_EQ(r[ib], "");
            EXPECT_EQ(r[is], "");
            EXPECT_EQ(r[ig], "");
        } else if (r[0] == "J") {
            ++seen_j;
            EXPECT_NEAR(std::stod(r[ib]), cj / std::sqrt(lambda), 1e-12);
            EXPECT_NE(r[is], "");
            EXPECT_LE(std::stod(r[3]), std::stod(r[ib]) + 1e-12);
            if (lambda == 2000.0 && t == 0.5) EXPECT_NEAR(std::stod(r[ib]), 0.0063505, 1e-7);
            EXPECT_EQ(r[ig], "true");
            // The J covariance is deterministic.
            EXPECT_EQ(std::stod(r[4]), 0.0);
        } else {
            ASSERT_EQ(r[0], "Z");
            ++seen_z;
            // Z and J share the constant at this Gamma = Sigma_J_bar; the gate only flags rows.
            EXPECT_NEAR(std::stod(r[ib]), cj / std::sqrt(lambda), 1e-12);
            EXPECT_EQ(r[ig], lambda >= lambda_q ? "true" : "false");
        }
    }
    EXPECT_EQ(seen_r, 6);
    EXPECT_EQ(seen_j, 6);
    EXPECT_EQ(seen_z, 6);
}

TEST(Convergence, ZRowsGatedAboveThreshold) {
    const auto dir = fresh_dir("conv_gate");
    ScenarioConfig c = small_config(dir);
    c.run.lambdas = {10.0, 100.0, 1000.0};
    c.run.n_paths = 4;
    c.run.delta = 0.5;
    c.run.eval_times = {0.5};
    c.run.regimes = {Regime::Z};
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::convergence, c, log, err), 0) << err.str();
    const auto rows = read_csv(dir / "convergence.csv");
    ASSERT_EQ(rows.size(), 4u);
    const double cz = std::sqrt(0.05 * (1.0 + (1.0 / 6.0) / (0.5 * std::exp(1.0))));
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const double lambda = std::stod(rows[k][1]);
        if (lambda < 561.0) {
            EXPECT_EQ(rows[k][9], "false");
        } else {
            EXPECT_EQ(rows[k][9], "true");
        }
        EXPECT_NEAR(std::stod(rows[k][7]), cz / std::sqrt(lambda), 1e-12);
    }
}

TEST(Bounds, ReportAndScaledVariance) {
    const auto dir = fresh_dir("bounds");
    ScenarioConfig c = small_config(dir);
    c.run.lambdas = {5.0, 2000.0};
    c.run.dt_max = 1e-2;
    std::ostringstream log, err;
    ASSERT_EQ(run_command(Mode::bounds, c, log, err), 0) << err.str();
    const std::string rep = slurp(dir / "bounds.txt");
    EXPECT_EQ(rep, log.str());
    EXPECT_NE(rep.find("C^Z(delta) = 0.23692"), std::string::npos) << rep;
    EXPECT_NE(rep.find("C^J(delta) = 0.23692"), std::string::npos) << rep;
    EXPECT_NE(rep.find("C^J(0.1) = 0.28400"), std::string::npos) << rep;
    EXPECT_NE(rep.find("lambda0 = 561.31"), std::string::npos) << rep;

    const auto rows = read_csv(dir / "scaled_variance.csv");
    EXPECT_EQ(join(rows[0]), "lambda,t,sqrtlambda_q_j,sqrtlambda_q_z,c_j_delta1,c_j_delta2");
    ASSERT_GT(rows.size(), 3u);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const double t = std::stod(rows[k][1]);
        EXPECT_NEAR(std::stod(rows[k][4]), 0.28400, 5e-6);
        EXPECT_NEAR(std::stod(rows[k][5]), 0.23692, 5e-6);
        if (t >= 0.1) EXPECT_LE(std::stod(rows[k][2]), std::stod(rows[k][4]) + 1e-6);
        if (t >= 0.5) EXPECT_LE(std::stod(rows[k][2]), std::stod(rows[k][5]) + 1e-6);
    }
}

TEST(Bounds, ZeroInitialCovarianceIsDeltaFree) {
    std::string c1, c2;
    for (double delta : {0.1, 0.9}) {
        const auto dir = fresh_dir("bounds_q0");
        ScenarioConfig c = parse_config("model:\n  q0: 0\n");
        c.run.output_dir = dir.string();
        c.run.delta = delta;
        c.run.lambdas = {};
        std::ostringstream log, err;
        ASSERT_EQ(run_command(Mode::bounds, c, log, err), 0) << err.str();
        const std::string rep = log.str();
        const auto z = rep.find("C^Z(delta)");
        const auto line = rep.substr(z, rep.find('\n', z) - z);
        (delta == 0.1 ? c1 : c2) = line;
    }
    EXPECT_EQ(c1, c2);
    EXPECT_EQ(c1, "C^Z(delta) = " + detail::fmt17(std::sqrt(0.05)));
}

TEST(Check, PassesAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto dir = fresh_dir("check");
        ScenarioConfig c = small_config(dir);
        c.run.seed = seed;
        c.run.lambdas = {20.0};
        c.run.dt_max = 1e-2;
        std::ostringstream log, err;
        EXPECT_EQ(run_command(Mode::check, c, log, err), 0) << "seed " << seed << "\n" << log.str() << err.str();
        EXPECT_EQ(log.str().find("FAIL"), std::string::npos);
        EXPECT_FALSE(fs::exists(dir / "check_failure.yaml"));
    }
}

TEST(Check, FailureFileReplaysScenario) {
    const auto dir = fresh_dir("failure");
    fs::create_directories(dir);
    SweepSample s{ModelParams::baseline(), Matrix::Identity(1, 1), Matrix(), 20.0, 0.5, 0.9, "example"};
    const std::string path = write_failure(dir, "demo", s);
    const YAML::Node n = YAML::LoadFile(path);
    EXPECT_EQ(n["check"].as<std::string>(), "demo");
    EXPECT_EQ(n["lambda"].as<double>(), 20.0);
    EXPECT_EQ(parse_config(n["scenario"].as<std::string>()).model, ModelParams::baseline());
}

TEST(ExitCodes, ThroughRunCommand) {
    std::ostringstream log, err;
    ScenarioConfig c;
    c.run.output_dir = "/proc/driftlab_cannot_create";
    c.run.lambdas = {5.0};
    EXPECT_EQ(run_command(Mode::simulate, c, log, err), kExitIoError);
    EXPECT_NE(err.str().find("I/O error"), std::string::npos);

    const auto dir = fresh_dir("exit_cfg");
    c.run.output_dir = dir.string();
    c.run.lambdas = {};
    EXPECT_EQ(run_command(Mode::simulate, c, log, err), kExitConfigError);

    c.run.lambdas = {5.0};
    c.run.delta = 2.0;
    EXPECT_EQ(run_command(Mode::bounds, c, log, err), kExitConfigError);
}

TEST(ExitCodes, ThroughBinary) {
    const auto dir = fresh_dir("binary");
    fs::create_directories(dir);
    const auto good = dir / "good.yaml";
    std::ofstream(good) << "run:\n  lambdas: [5]\n  dt_max: 0.01\n";
    const auto bad = dir / "bad.yaml";
    std::ofstream(bad) << "model:\n  gamma: -0.05\n";
    const auto unknown = dir / "unknown.yaml";
    std::ofstream(unknown) << "run:\n  sed: 3\n";
    const std::string out = (dir / "out").string();

    EXPECT_EQ(run_cli("simulate --config " + good.string() + " --out " + out), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "path_5.csv"));
    EXPECT_EQ(read_manifest(dir / "out" / "manifest.txt").at("seed"), "1");
    EXPECT_EQ(run_cli("simulate --config " + good.string() + " --seed 12 --out " + out), 0);
    EXPECT_EQ(read_manifest(dir / "out" / "manifest.txt").at("seed"), "12");

    EXPECT_EQ(run_cli("simulate --config " + bad.string() + " --out " + out), 2);
    EXPECT_EQ(run_cli("simulate --config " + unknown.string() + " --out " + out), 2);
    EXPECT_EQ(run_cli("plot --out " + out), 2);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("simulate --seed notanumber"), 2);
    EXPECT_EQ(run_cli("simulate --config " + (dir / "missing.yaml").string()), 3);
    EXPECT_EQ(run_cli("simulate --config " + good.string() + " --out /proc/driftlab_nope"), 3);
}
