#include "daebayes/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace daebayes;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("daebayes_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Config, DefaultsFollowCaseStudyTuning) {
    const RunConfig c = config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.noise.rho, 0.02);
    EXPECT_EQ(c.noise.kappa_freq, 15.0);
    EXPECT_EQ(c.noise.kappa_volt, 5.0);
    EXPECT_EQ(c.noise.snr_db, 25.0);
    EXPECT_EQ(c.mcmc.adapt.a_target, 0.24);
    EXPECT_EQ(c.fidelity.exact.decim, 16);
    EXPECT_EQ(c.fidelity.coarse.decim, 24);
    EXPECT_EQ(c.mode, RunMode::Joint);
    RunConfig full = c;
    apply_budget(full, "full");
    EXPECT_EQ(full.mcmc.n_burn, 3000);
    EXPECT_EQ(full.mcmc.n_samp, 2000);
    EXPECT_EQ(full.mcmc.n_thin, 2);
    EXPECT_EQ(c.mcmc.total_iterations(), 500);
    EXPECT_EQ(c.monitored_buses, (std::vector<Index>{1, 3, 4, 5, 6, 7, 8}));
}

TEST(Config, UnknownKeysAreErrors) {
    EXPECT_THROW(config_from_json({{"sead", 3}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"noise", {{"rho", 0.02}, {"kapa_volt", 5}}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"mcmc", {{"burn", 10}}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"prior", {{"width", {{"H", 0.3}}}}}}), InvalidInput);
}

TEST(Config, InvalidValuesAreErrors) {
    EXPECT_THROW(config_from_json({{"mode", "sideways"}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"mcmc", {{"budget", "medium"}}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"mcmc", {{"kernel", "slow"}}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"frozen_blocks", {"dyn", "res", "rea"}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"frozen_blocks", {"gen"}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"seed", "one"}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"fidelity", {{"coarse", {{"decim", 8}}}}}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"snr_db", "loud"}}), InvalidInput);
    EXPECT_THROW(config_from_json({{"mcmc", {{"n_samp", 5}}}}), InvalidInput);
}

TEST(Config, EchoRoundTripsAndHashIsStable) {
    nlohmann::json j{{"seed", 42},
                     {"snr_db", "inf"},
                     {"mode", "decoupled"},
                     {"mcmc", {{"budget", "full"}, {"kernel", "exact"}, {"n_samp", 100}}},
                     {"prior", {{"width", {{"D", 0.5}}}}},
                     {"monitored_buses", {5, 7, 9}}};
    const RunConfig a = config_from_json(j);
    EXPECT_EQ(a.monitored_buses, (std::vector<Index>{4, 6, 8}));
    EXPECT_EQ(a.mcmc.n_burn, 3000);
    EXPECT_EQ(a.mcmc.n_samp, 100);
    const RunConfig b = config_from_json(config_to_json(a));
    EXPECT_EQ(config_to_json(a), config_to_json(b));
    EXPECT_EQ(config_hash(a), config_hash(b));
    RunConfig c = a;
    c.out = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(c));
    c.seed = 43;
    EXPECT_NE(config_hash(a), config_hash(c));
    const std::string h = csv_header_line(a);
    EXPECT_EQ(h.rfind("# daebayes ", 0), 0u);
    EXPECT_NE(h.find("config_hash=" + config_hash(a)), std::string::npos);
    EXPECT_NE(h.find("seed=42"), std::string::npos);
}

TEST(Config, Fnv1aReferenceValues) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ull);
    EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

TEST(Simulate, WritesFourExperimentFilesWithHeaders) {
    RunConfig cfg;
    cfg.out = scratch("sim").string();
    cmd_simulate(cfg);
    for (int e = 1; e <= 4; ++e) {
        std::ifstream in(std::filesystem::path(cfg.out) / ("exp" + std::to_string(e) + ".csv"));
        std::string line;
        std::getline(in, line);
        EXPECT_EQ(line, csv_header_line(cfg));
        std::getline(in, line);
        EXPECT_EQ(line.rfind("t,Vr2,Vi2", 0), 0u);
        int rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            EXPECT_EQ(std::count(line.begin(), line.end(), ','), 17);
        }
        EXPECT_EQ(rows, 63);
    }
    const std::string first = read_file(std::filesystem::path(cfg.out) / "exp2.csv");
    cmd_simulate(cfg);
    EXPECT_EQ(read_file(std::filesystem::path(cfg.out) / "exp2.csv"), first);
}

TEST(Simulate, InfiniteSnrAndReload) {
    RunConfig cfg = config_from_json({{"snr_db", "inf"}});
    cfg.out = scratch("sim_inf").string();
    cmd_simulate(cfg);
    const auto path = std::filesystem::path(cfg.out) / "measurements.json";
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    EXPECT_EQ(j.at("header").at("config_hash"), config_hash(cfg));
    for (const auto& e : j.at("experiments")) EXPECT_EQ(e.at("y"), e.at("clean"));

    RunConfig again = cfg;
    again.data = path.string();
    const Problem a = build_problem(cfg), b = build_problem(again);
    ASSERT_EQ(a.data.size(), b.data.size());
    for (std::size_t e = 0; e < a.data.size(); ++e) {
        EXPECT_EQ(a.data[e].y, b.data[e].y);
        EXPECT_EQ(a.data[e].sigma_eff, b.data[e].sigma_eff);
    }
    EXPECT_EQ(a.truth.theta_true.flat(), b.truth.theta_true.flat());
}

TEST(Problem, InfeasibleTruthIsSolverFailure) {
    RunConfig cfg;
    cfg.case_name = std::string(DAEBAYES_SOURCE_DIR) + "/tests/fixtures/ieee9_overloaded.json";
    cfg.table_generators = false;
    EXPECT_THROW(build_problem(cfg), SolverFailure);
    cfg.case_name = "/nonexistent/case.json";
    EXPECT_THROW(build_problem(cfg), InvalidInput);
}

TEST(Ablation, MedianShift) {
    Summary a, b;
    a.theta_mean = Eigen::Vector3d(1.0, 2.0, 3.0);
    b.theta_mean = Eigen::Vector3d(1.1, 2.0, 3.3);
    EXPECT_NEAR(median_mean_shift(a, b), 0.1 / 1.1, 1e-15);
    EXPECT_NEAR(median_mean_shift(a, b, {true, true, false}), 0.5 * 0.1 / 1.1, 1e-15);
}

TEST(Report, RequiresResults) {
    RunConfig cfg;
    cfg.out = scratch("empty").string();
    EXPECT_THROW(cmd_report(cfg), InvalidInput);
    std::filesystem::create_directories(cfg.out);
    EXPECT_THROW(cmd_report(cfg), InvalidInput);
}

TEST(Report, RendersIdentifyOutput) {
    RunConfig cfg = config_from_json({{"snr_db", "inf"}, {"init", {{"stagewise", false}}}});
    cfg.out = scratch("ident").string();
    cmd_identify(cfg);
    const auto csv = read_file(std::filesystem::path(cfg.out) / "coid.csv");
    EXPECT_EQ(csv.rfind(csv_header_line(cfg), 0), 0u);
    const nlohmann::json j = nlohmann::json::parse(read_file(std::filesystem::path(cfg.out) / "identify.json"));
    const Matrix I = matrix_from_json(j.at("coid"));
    EXPECT_LT((I - I.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    for (Index k = 0; k < 4; ++k) EXPECT_EQ(I(k, k), 1.0);
    const std::string md = cmd_report(cfg);
    EXPECT_NE(md.find("Co-identifiability"), std::string::npos);
}

TEST(Config, ShippedConfigsParse) {
    const std::string dir = std::string(DAEBAYES_SOURCE_DIR) + "/configs/";
    const RunConfig d = load_config_file(dir + "default.json");
    RunConfig expected;
    expected.out = d.out;
    EXPECT_EQ(config_to_json(d), config_to_json(expected));
    EXPECT_EQ(load_config_file(dir + "decoupled.json").mode, RunMode::Decoupled);
    EXPECT_EQ(load_config_file(dir + "full.json").mcmc.total_iterations(), 7000);
}
