#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "slowtransfer/experiment.hpp"
#include "test_support.hpp"

using namespace slowtransfer;
using namespace slowtransfer::experiment;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c;
    c.output_dir = out.string();
    c.seed = 11;
    c.workspace.image_size = 16;
    c.workspace.max_steps = 40;
    c.dqn.episodes = 4;
    c.dqn.learn_start = 40;
    c.dqn.eval_every = 2;
    c.source_configs = 3;
    c.eval_configs = 3;
    c.extract_episodes = 4;
    c.k = 4;
    c.config_counts = {2};
    c.transfer_seeds = {1};
    c.transfer_episodes = 2;
    c.heatmap_grid = 4;
    c.heatmap_units = 2;
    return c;
}

void run_all(const ExperimentConfig& c) {
    std::ostringstream log;
    cmd_train_source(c, log);
    cmd_extract(c, log);
    cmd_transfer_matrix(c, log);
    cmd_analyze(c, log);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SLOWTRANSFER_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config JSON round trip and presets") {
    for (const auto& c : {ExperimentConfig::desk(), ExperimentConfig::paper(), tiny_config("x")}) {
        CHECK_NOTHROW(c.validate());
        CHECK(config_from_json(to_json(c)) == c);
    }
    CHECK(ExperimentConfig::paper().arch().hidden.back() == 512);
    CHECK(load_config(std::string(SLOWTRANSFER_SOURCE_DIR) + "/configs/desk.json") == ExperimentConfig::desk());
    CHECK(load_config(std::string(SLOWTRANSFER_SOURCE_DIR) + "/configs/paper.json") == ExperimentConfig::paper());
}

TEST_CASE("config validation rejects bad input") {
    const json base = to_json(ExperimentConfig::desk());
    auto rejects = [&](auto edit) {
        json j = base;
        edit(j);
        CHECK_THROWS_AS(config_from_json(j), ConfigError);
    };
    rejects([](json& j) { j["epsiodes"] = 3; });
    rejects([](json& j) { j["dqn"]["gama"] = 0.9; });
    rejects([](json& j) { j["workspace"]["colour"] = 1; });
    rejects([](json& j) { j["workspace"]["tau"] = 0.3; });
    rejects([](json& j) { j.erase("seed"); });
    rejects([](json& j) { j["k"] = 129; });
    rejects([](json& j) { j["k"] = 0; });
    rejects([](json& j) { j["modes"] = {"none", "ica"}; });
    rejects([](json& j) { j["modes"] = {"sfa", "sfa"}; });
    rejects([](json& j) { j["scale"] = "huge"; });
    rejects([](json& j) { j["dqn"]["gamma"] = 1.5; });
    rejects([](json& j) { j["config_counts"] = {0}; });
    rejects([](json& j) { j["seed"] = "one"; });
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("derived seeds are distinct and track the master seed") {
    ExperimentConfig a, b;
    b.seed = 2;
    std::set<std::uint64_t> seen;
    for (auto s : {SeedStream::source_configs, SeedStream::eval_configs, SeedStream::source_init, SeedStream::source_train,
                   SeedStream::extract_configs, SeedStream::extract_rollouts, SeedStream::transfer_eval}) {
        CHECK(seen.insert(derived_seed(a, s)).second);
        CHECK(derived_seed(a, s) != derived_seed(b, s));
    }
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a) == config_hash(ExperimentConfig::desk()));
}

TEST_CASE("rollout dump round trip is exact") {
    const auto dir = testing::scratch_dir("rollouts");
    env::WorkspaceConfig ws;
    ws.image_size = 16;
    ws.max_steps = 25;
    for (auto task : {env::TaskKind::primary, env::TaskKind::obstacle_free}) {
        const auto tws = env::task_workspace(task, ws);
        const auto net = nn::Network::build(nn::ArchSpec::desk(16), 5);
        const auto configs = env::sample_configurations(3, task, 6, tws);
        const auto col = dqn::collect_trajectories(net, tws, configs, 3, 7);
        const auto path = (dir / "r.csv").string();
        write_rollouts(col, path);
        const auto back = read_rollouts(path);
        REQUIRE(back.info.size() == col.info.size());
        for (std::size_t e = 0; e < col.info.size(); ++e) {
            CHECK(back.activations.trajectories[e] == col.activations.trajectories[e]);
            REQUIRE(back.info[e].size() == col.info[e].size());
            for (std::size_t t = 0; t < col.info[e].size(); ++t) {
                for (std::size_t f = 0; f < analysis::kFeatureNames.size(); ++f) {
                    CHECK(analysis::feature_value(back.info[e][t], f) == analysis::feature_value(col.info[e][t], f));
                }
            }
        }
    }
    std::ofstream(dir / "bad.csv") << "episode,step,x\n";
    CHECK_THROWS_AS(read_rollouts((dir / "bad.csv").string()), FormatError);
}

TEST_CASE("manifest records and verifies checksums") {
    const auto dir = testing::scratch_dir("manifest");
    const Layout layout{dir};
    std::ofstream(dir / "a.txt") << "alpha";
    std::ofstream(dir / "b.txt") << "beta";
    const auto cfg = ExperimentConfig::desk();
    update_manifest(layout, cfg, "one", {"a.txt"});
    update_manifest(layout, cfg, "two", {"b.txt"});
    CHECK(verify_manifest(dir).empty());
    const auto m = json::parse(slurp(layout.manifest()));
    CHECK(m.at("artifacts").size() == 2);
    CHECK(m.at("config_hash") == to_hex(config_hash(cfg)));
    Fnv1a h;
    h.update(std::string("alpha"));
    CHECK(m.at("artifacts").at("a.txt").at("fnv1a64") == to_hex(h.digest()));

    std::ofstream(dir / "a.txt") << "alphA";
    fs::remove(dir / "b.txt");
    const auto bad = verify_manifest(dir);
    CHECK(bad == std::vector<std::string>{"a.txt", "b.txt"});
}

TEST_CASE("pipeline end to end is reproducible and guarded") {
    const auto d1 = testing::scratch_dir("pipeline1");
    const auto d2 = testing::scratch_dir("pipeline2");
    run_all(tiny_config(d1));
    run_all(tiny_config(d2));
    CHECK(verify_manifest(d1).empty());

    const auto m = json::parse(slurp(d1 / "manifest.json"));
    std::size_t compared = 0;
    for (const auto& [rel, _] : m.at("artifacts").items()) {
        if (rel == "config.json") continue;
        CHECK_MESSAGE(slurp(d1 / rel) == slurp(d2 / rel), rel);
        ++compared;
    }
    // source 4 + extract 4 + transfer (4 curves, results, summary) + analyze (1 + 11 + 3*2*3*2)
    CHECK(compared == 4 + 4 + 6 + 12 + 36);
    for (const char* cmd : {"train-source", "extract", "transfer-matrix", "analyze"}) CHECK(m.at("commands").contains(cmd));

    // A feature model fitted on other activations must be refused.
    features::ActivationDataset wrong;
    wrong.x = features::Matrix::Random(50, 7);
    features::save_model(features::fit_pca(wrong, 3), Layout{d2}.pca_model().string());
    std::ostringstream log;
    CHECK_THROWS_AS(cmd_analyze(tiny_config(d2), log), ShapeError);

    const auto empty = testing::scratch_dir("pipeline_empty");
    CHECK_THROWS_AS(cmd_extract(tiny_config(empty), log), IoError);
}

TEST_CASE("cli exit codes") {
    const auto dir = testing::scratch_dir("cli");
    CHECK(run_cli("print-config --preset paper") == 0);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("train-source --bogus") == 2);
    std::ofstream(dir / "bad.json") << R"({"seed": 1, "episodes": 3})";
    CHECK(run_cli("extract --config " + (dir / "bad.json").string()) == 2);
    CHECK(run_cli("extract --out " + (dir / "nothing").string()) == 3);
    CHECK(run_cli("verify " + (dir / "nothing").string()) == 3);
}
