#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "slowtransfer/dqn.hpp"
#include "slowtransfer/env.hpp"
#include "slowtransfer/features.hpp"
#include "slowtransfer/nn.hpp"

namespace slowtransfer::transfer {

struct ModeNone {};
struct ModeFull {};
struct ModePCA {
    features::PCAModel model;
    bool scale = true;  // divide each component by sqrt(eigenvalue)
};
struct ModeSFA {
    features::SFAModel model;
};
using TransferMode = std::variant<ModeNone, ModeFull, ModePCA, ModeSFA>;

enum class ModeKind { none, full, pca, sfa };
std::string to_string(ModeKind kind);
ModeKind mode_from_string(const std::string& name);
ModeKind kind_of(const TransferMode& mode);

// y = (h - offset) * matrix, applied to row-stacked source taps.
struct AffineExtractor {
    Eigen::RowVectorXd offset;
    features::Matrix matrix;  // D x k
};

// PCA/SFA as an affine map of the source tap; nullopt for None/Full.
std::optional<AffineExtractor> extractor_for(const TransferMode& mode);

struct AugmentedNetwork {
    std::shared_ptr<const nn::Network> source;
    ModeKind kind = ModeKind::none;
    std::shared_ptr<const AffineExtractor> extractor;
    nn::Network target;

    std::size_t extra_width() const { return target.extra_head_inputs(); }
    std::size_t head_input_width() const { return target.head_input_width(); }
};

// Fresh target network (seeded) whose Q head also receives the mode's
// source features.
AugmentedNetwork build_transfer_network(std::shared_ptr<const nn::Network> source, const TransferMode& mode,
                                        nn::ArchSpec target_arch, std::uint64_t seed);

// Source features concatenated at the Q head, shape (B, extra_width).
Tensor source_features(const AugmentedNetwork& aug, const Tensor& obs_batch);
Tensor forward_augmented(const AugmentedNetwork& aug, const Tensor& obs_batch);

std::uint64_t source_hash(const AugmentedNetwork& aug);

// QModel adapter: only the target network is trainable.
inline std::size_t side_width(const AugmentedNetwork& aug) { return aug.extra_width(); }
inline Tensor side_features(const AugmentedNetwork& aug, const Tensor& obs) { return source_features(aug, obs); }
inline Tensor q_values(const AugmentedNetwork& aug, const Tensor& obs, const Tensor& side) {
    return nn::forward(aug.target, obs, aug.extra_width() > 0 ? &side : nullptr);
}
inline Tensor q_forward_train(const AugmentedNetwork& aug, const Tensor& obs, const Tensor& side,
                              nn::ForwardCache& cache) {
    return nn::forward_train(aug.target, obs, aug.extra_width() > 0 ? &side : nullptr, cache);
}
inline nn::Gradients q_backward(const AugmentedNetwork& aug, const nn::ForwardCache& cache, const Tensor& grad) {
    return nn::backward(aug.target, cache, grad);
}
inline nn::AdamState make_adam(const AugmentedNetwork& aug, double learning_rate) {
    return nn::AdamState::for_network(aug.target, learning_rate);
}
inline void apply_gradients(AugmentedNetwork& aug, nn::AdamState& adam, const nn::Gradients& grads) {
    nn::adam_step(aug.target, adam, grads);
}
inline std::uint64_t parameter_hash(const AugmentedNetwork& aug) { return nn::parameter_hash(aug.target); }

static_assert(dqn::QModel<AugmentedNetwork>);
static_assert(dqn::QModel<nn::Network>);

struct MatrixSpec {
    std::vector<ModeKind> modes{ModeKind::none, ModeKind::full, ModeKind::pca, ModeKind::sfa};
    std::vector<int> config_counts{10, 20};
    std::vector<std::uint64_t> seeds{1, 2};
    dqn::DQNConfig dqn;
    nn::ArchSpec target_arch = nn::ArchSpec::desk();
    env::WorkspaceConfig workspace = env::task_workspace(env::TaskKind::secondary);
    int eval_configs = 50;
    std::uint64_t eval_seed = 0xe1a1;
    bool scale_pca = true;
};

struct CellResult {
    ModeKind mode = ModeKind::none;
    int config_count = 0;
    std::uint64_t seed = 0;
    std::size_t head_input_width = 0;
    std::vector<dqn::EvalReport> curve;
    double final_mean = 0.0;
    double best_mean = 0.0;
    std::uint64_t source_hash_before = 0;
    std::uint64_t source_hash_after = 0;
    std::uint64_t target_hash = 0;
};

using CellProgress = std::function<void(const CellResult&)>;

// One secondary-task training run per (mode, config_count, seed). Training
// configurations depend only on (config_count, seed), so every mode sees the
// same set.
std::vector<CellResult> run_condition_matrix(const nn::Network& source, const std::optional<features::PCAModel>& pca,
                                             const std::optional<features::SFAModel>& sfa, const MatrixSpec& spec,
                                             const CellProgress& progress = {});

std::vector<env::EnvConfiguration> cell_training_configs(const MatrixSpec& spec, int config_count, std::uint64_t seed);

void write_results_csv(const std::vector<CellResult>& cells, const std::string& path);
void write_curve_csv(const CellResult& cell, const std::string& path);
std::string cell_name(const CellResult& cell);

}  // namespace slowtransfer::transfer
