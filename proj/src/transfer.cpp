#include "slowtransfer/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace slowtransfer::transfer {

std::string to_string(ModeKind kind) {
    switch (kind) {
        case ModeKind::none: return "none";
        case ModeKind::full: return "full";
        case ModeKind::pca: return "pca";
        case ModeKind::sfa: return "sfa";
    }
    return "none";
}

ModeKind mode_from_string(const std::string& name) {
    if (name == "none") return ModeKind::none;
    if (name == "full") return ModeKind::full;
    if (name == "pca") return ModeKind::pca;
    if (name == "sfa") return ModeKind::sfa;
    throw ConfigError("unknown transfer mode '" + name + "' (expected none, full, pca or sfa)");
}

ModeKind kind_of(const TransferMode& mode) { return static_cast<ModeKind>(mode.index()); }

std::optional<AffineExtractor> extractor_for(const TransferMode& mode) {
    if (const auto* p = std::get_if<ModePCA>(&mode)) {
        AffineExtractor ex{p->model.mean.transpose(), p->model.components};
        if (p->scale) {
            const double top = p->model.eigenvalues.size() > 0 ? p->model.eigenvalues.maxCoeff() : 0.0;
            for (Eigen::Index j = 0; j < ex.matrix.cols(); ++j) {
                const double lambda = p->model.eigenvalues(j);
                // Directions without variance carry no signal; zeroing them avoids blowing up noise.
                const double s = lambda > features::kWhiteningCutoff * top && lambda > 0.0 ? 1.0 / std::sqrt(lambda) : 0.0;
                ex.matrix.col(j) *= s;
            }
        }
        return ex;
    }
    if (const auto* s = std::get_if<ModeSFA>(&mode)) return AffineExtractor{s->model.mean.transpose(), s->model.combined};
    return std::nullopt;
}

AugmentedNetwork build_transfer_network(std::shared_ptr<const nn::Network> source, const TransferMode& mode,
                                        nn::ArchSpec target_arch, std::uint64_t seed) {
    if (!source) throw UsageError("transfer needs a source network");
    if (target_arch.input_shape != source->input_shape()) {
        throw ShapeError("target input shape " + Tensor::shape_string(target_arch.input_shape) +
                         " differs from source input shape " + Tensor::shape_string(source->input_shape()));
    }
    const std::size_t d = source->tap_width();
    AugmentedNetwork aug;
    aug.kind = kind_of(mode);
    std::size_t extra = 0;
    switch (aug.kind) {
        case ModeKind::none: break;
        case ModeKind::full: extra = d; break;
        case ModeKind::pca:
        case ModeKind::sfa: {
            auto ex = extractor_for(mode);
            if (static_cast<std::size_t>(ex->matrix.rows()) != d || static_cast<std::size_t>(ex->offset.size()) != d) {
                throw ShapeError("feature model input dimension " + std::to_string(ex->matrix.rows()) +
                                 " does not match source tap width " + std::to_string(d));
            }
            extra = static_cast<std::size_t>(ex->matrix.cols());
            aug.extractor = std::make_shared<const AffineExtractor>(std::move(*ex));
            break;
        }
    }
    aug.source = std::move(source);
    target_arch.extra_head_inputs = extra;
    aug.target = nn::Network::build(target_arch, seed);
    return aug;
}

Tensor source_features(const AugmentedNetwork& aug, const Tensor& obs_batch) {
    const std::size_t b = obs_batch.dim(0);
    if (aug.kind == ModeKind::none) return Tensor({b, 0});
    Tensor tap = nn::hidden_activations(*aug.source, obs_batch);
    if (aug.kind == ModeKind::full) return tap;
    const auto d = static_cast<Eigen::Index>(aug.source->tap_width());
    features::Matrix h(static_cast<Eigen::Index>(b), d);
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        for (Eigen::Index c = 0; c < d; ++c) h(r, c) = tap.data[static_cast<std::size_t>(r * d + c)];
    }
    h.rowwise() -= aug.extractor->offset;
    const features::Matrix y = h * aug.extractor->matrix;
    Tensor out({b, static_cast<std::size_t>(y.cols())});
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) out.data[static_cast<std::size_t>(r * y.cols() + c)] = y(r, c);
    }
    return out;
}

Tensor forward_augmented(const AugmentedNetwork& aug, const Tensor& obs_batch) {
    return q_values(aug, obs_batch, source_features(aug, obs_batch));
}

std::uint64_t source_hash(const AugmentedNetwork& aug) { return nn::parameter_hash(*aug.source); }

std::vector<env::EnvConfiguration> cell_training_configs(const MatrixSpec& spec, int config_count, std::uint64_t seed) {
    return env::sample_configurations(config_count, env::TaskKind::secondary,
                                      mix_seed(seed, 0xc0f16ULL + static_cast<std::uint64_t>(config_count)),
                                      spec.workspace);
}

std::vector<CellResult> run_condition_matrix(const nn::Network& source, const std::optional<features::PCAModel>& pca,
                                             const std::optional<features::SFAModel>& sfa, const MatrixSpec& spec,
                                             const CellProgress& progress) {
    spec.dqn.validate();
    spec.workspace.validate();
    if (spec.modes.empty() || spec.config_counts.empty() || spec.seeds.empty()) {
        throw ConfigError("condition matrix needs at least one mode, config count and seed");
    }
    for (ModeKind m : spec.modes) {
        if (m == ModeKind::pca && !pca) throw UsageError("pca mode requested without a fitted PCA model");
        if (m == ModeKind::sfa && !sfa) throw UsageError("sfa mode requested without a fitted SFA model");
    }
    for (int c : spec.config_counts) {
        if (c <= 0) throw ConfigError("config counts must be positive");
    }
    const auto shared_source = std::make_shared<const nn::Network>(source);
    const auto held_out = env::sample_configurations(spec.eval_configs, env::TaskKind::secondary, spec.eval_seed,
                                                     spec.workspace);
    std::vector<CellResult> cells;
    for (ModeKind kind : spec.modes) {
        TransferMode mode;
        switch (kind) {
            case ModeKind::none: mode = ModeNone{}; break;
            case ModeKind::full: mode = ModeFull{}; break;
            case ModeKind::pca: mode = ModePCA{*pca, spec.scale_pca}; break;
            case ModeKind::sfa: mode = ModeSFA{*sfa}; break;
        }
        for (int count : spec.config_counts) {
            for (std::uint64_t seed : spec.seeds) {
                CellResult cell;
                cell.mode = kind;
                cell.config_count = count;
                cell.seed = seed;
                AugmentedNetwork aug = build_transfer_network(shared_source, mode, spec.target_arch, mix_seed(seed, 0x7a46));
                cell.head_input_width = aug.head_input_width();
                cell.source_hash_before = source_hash(aug);
                auto result = dqn::train(spec.workspace, cell_training_configs(spec, count, seed), std::move(aug),
                                         spec.dqn, seed, held_out);
                cell.source_hash_after = source_hash(result.model);
                cell.target_hash = parameter_hash(result.model);
                cell.curve = std::move(result.evals);
                if (!cell.curve.empty()) {
                    cell.final_mean = cell.curve.back().mean;
                    for (const auto& e : cell.curve) cell.best_mean = std::max(cell.best_mean, e.mean);
                }
                if (progress) progress(cell);
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

std::string cell_name(const CellResult& cell) {
    return to_string(cell.mode) + "_n" + std::to_string(cell.config_count) + "_s" + std::to_string(cell.seed);
}

void write_results_csv(const std::vector<CellResult>& cells, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << std::setprecision(17);
    f << "mode,config_count,seed,checkpoint_episode,mean_path_covered,success_rate\n";
    for (const auto& c : cells) {
        for (const auto& e : c.curve) {
            f << to_string(c.mode) << ',' << c.config_count << ',' << c.seed << ',' << e.episode << ',' << e.mean << ','
              << e.success_rate << '\n';
        }
    }
    if (!f) throw IoError("failed writing " + path);
}

void write_curve_csv(const CellResult& cell, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << std::setprecision(17);
    f << "checkpoint_episode,mean_path_covered,success_rate\n";
    for (const auto& e : cell.curve) f << e.episode << ',' << e.mean << ',' << e.success_rate << '\n';
    if (!f) throw IoError("failed writing " + path);
}

}  // namespace slowtransfer::transfer
