#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slowtransfer/analysis.hpp"
#include "slowtransfer/dqn.hpp"
#include "slowtransfer/env.hpp"
#include "slowtransfer/features.hpp"
#include "slowtransfer/nn.hpp"
#include "slowtransfer/transfer.hpp"

namespace slowtransfer::experiment {

// Every tunable of the pipeline. All seeds derive from `seed`.
struct ExperimentConfig {
    std::string scale = "desk";  // desk | paper
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    env::WorkspaceConfig workspace;
    dqn::DQNConfig dqn;  // source training; transfer runs reuse it with transfer_episodes
    int source_configs = 20;
    int eval_configs = 50;
    int extract_episodes = 100;
    std::size_t k = 16;
    std::vector<std::string> modes{"none", "full", "pca", "sfa"};
    std::vector<int> config_counts{10, 20};
    std::vector<std::uint64_t> transfer_seeds{1, 2};
    int transfer_episodes = 300;
    bool scale_pca = true;
    std::size_t heatmap_grid = 16;
    std::size_t heatmap_units = 20;

    void validate() const;
    nn::ArchSpec arch() const;
    bool operator==(const ExperimentConfig&) const = default;

    static ExperimentConfig desk();
    static ExperimentConfig paper();
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Rejects unknown keys and invalid values with ConfigError. `seed` is required.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Derived seed streams.
enum class SeedStream : std::uint64_t { source_configs = 1, eval_configs, source_init, source_train, extract_configs, extract_rollouts, transfer_eval };
std::uint64_t derived_seed(const ExperimentConfig& cfg, SeedStream stream);

// Output layout under the run directory.
struct Layout {
    std::filesystem::path root;
    std::filesystem::path source_dir() const { return root / "source"; }
    std::filesystem::path features_dir() const { return root / "features"; }
    std::filesystem::path transfer_dir() const { return root / "transfer"; }
    std::filesystem::path analysis_dir() const { return root / "analysis"; }
    std::filesystem::path source_net() const { return source_dir() / "source.stnn"; }
    std::filesystem::path pca_model() const { return features_dir() / "pca.stfx"; }
    std::filesystem::path sfa_model() const { return features_dir() / "sfa.stfx"; }
    std::filesystem::path rollouts() const { return features_dir() / "rollouts.csv"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
};

void cmd_train_source(const ExperimentConfig& cfg, std::ostream& log);
void cmd_extract(const ExperimentConfig& cfg, std::ostream& log);
void cmd_transfer_matrix(const ExperimentConfig& cfg, std::ostream& log);
void cmd_analyze(const ExperimentConfig& cfg, std::ostream& log);

// Rollout dump: one row per step with the high-level features and the tap activation.
void write_rollouts(const dqn::TrajectoryCollection& col, const std::string& path);
dqn::TrajectoryCollection read_rollouts(const std::string& path);

std::uint64_t file_checksum(const std::filesystem::path& path);
// Records the artifacts (paths relative to the run root) produced by `command`.
void update_manifest(const Layout& layout, const ExperimentConfig& cfg, const std::string& command,
                     const std::vector<std::filesystem::path>& artifacts);
// Paths whose checksum no longer matches the manifest (or that are missing).
std::vector<std::string> verify_manifest(const std::filesystem::path& root);

}  // namespace slowtransfer::experiment
