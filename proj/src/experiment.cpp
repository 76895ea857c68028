#include "slowtransfer/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace slowtransfer::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
            throw ConfigError("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json dqn_to_json(const dqn::DQNConfig& c) {
    return {{"episodes", c.episodes},
            {"gamma", c.gamma},
            {"batch_size", c.batch_size},
            {"epsilon_start", c.epsilon_start},
            {"epsilon_end", c.epsilon_end},
            {"epsilon_decay_fraction", c.epsilon_decay_fraction},
            {"target_update_every", c.target_update_every},
            {"learn_start", c.learn_start},
            {"eval_every", c.eval_every},
            {"replay_capacity", c.replay_capacity},
            {"learning_rate", c.learning_rate}};
}

dqn::DQNConfig dqn_from_json(const json& j) {
    const std::string where = "dqn";
    check_keys(j,
               {"episodes", "gamma", "batch_size", "epsilon_start", "epsilon_end", "epsilon_decay_fraction",
                "target_update_every", "learn_start", "eval_every", "replay_capacity", "learning_rate"},
               where);
    dqn::DQNConfig c;
    read(j, "episodes", c.episodes, where);
    read(j, "gamma", c.gamma, where);
    read(j, "batch_size", c.batch_size, where);
    read(j, "epsilon_start", c.epsilon_start, where);
    read(j, "epsilon_end", c.epsilon_end, where);
    read(j, "epsilon_decay_fraction", c.epsilon_decay_fraction, where);
    read(j, "target_update_every", c.target_update_every, where);
    read(j, "learn_start", c.learn_start, where);
    read(j, "eval_every", c.eval_every, where);
    read(j, "replay_capacity", c.replay_capacity, where);
    read(j, "learning_rate", c.learning_rate, where);
    return c;
}

env::WorkspaceConfig task_ws(const ExperimentConfig& cfg, env::TaskKind task) {
    return env::task_workspace(task, cfg.workspace);
}

fs::path ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
    return p;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + path.string());
}

void require_file(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run " + producer + " first)");
}

nn::Network load_source(const ExperimentConfig& cfg, const Layout& layout) {
    require_file(layout.source_net(), "train-source");
    return nn::load(layout.source_net().string(), nn::Network::build(cfg.arch(), 0));
}

void check_model_width(std::size_t model_dim, const nn::Network& net, const std::string& what) {
    if (model_dim != net.tap_width()) {
        throw ShapeError(what + " expects " + std::to_string(model_dim) + "-dimensional activations but the source tap width is " +
                         std::to_string(net.tap_width()));
    }
}

std::vector<fs::path> relative(const Layout& layout, const std::vector<fs::path>& paths) {
    std::vector<fs::path> out;
    for (const auto& p : paths) out.push_back(fs::relative(p, layout.root));
    return out;
}

void write_config_copy(const ExperimentConfig& cfg, const Layout& layout) {
    write_json(to_json(cfg), layout.root / "config.json");
}

}  // namespace

void ExperimentConfig::validate() const {
    if (scale != "desk" && scale != "paper") throw ConfigError("scale must be 'desk' or 'paper'");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    workspace.validate();
    dqn.validate();
    if (source_configs <= 0) throw ConfigError("source_configs must be positive");
    if (eval_configs <= 0) throw ConfigError("eval_configs must be positive");
    if (extract_episodes <= 0) throw ConfigError("extract_episodes must be positive");
    if (transfer_episodes <= 0) throw ConfigError("transfer_episodes must be positive");
    if (heatmap_grid < 4) throw ConfigError("heatmap_grid must be at least 4");
    if (modes.empty()) throw ConfigError("modes must not be empty");
    std::set<std::string> seen;
    for (const auto& m : modes) {
        transfer::mode_from_string(m);
        if (!seen.insert(m).second) throw ConfigError("mode '" + m + "' listed twice");
    }
    if (config_counts.empty()) throw ConfigError("config_counts must not be empty");
    for (int c : config_counts) {
        if (c <= 0) throw ConfigError("config_counts must be positive");
    }
    if (transfer_seeds.empty()) throw ConfigError("transfer_seeds must not be empty");
    const auto a = arch();
    if (k == 0 || k > a.hidden.back()) {
        throw ConfigError("k must lie in [1, " + std::to_string(a.hidden.back()) + "]");
    }
}

nn::ArchSpec ExperimentConfig::arch() const {
    if (workspace.observation == env::ObservationMode::vector) {
        return nn::ArchSpec::for_vector(env::observation_shape(workspace).at(0));
    }
    if (scale == "paper") {
        if (workspace.image_size != 64) throw ConfigError("paper scale needs image_size 64");
        return nn::ArchSpec::paper();
    }
    return nn::ArchSpec::desk(static_cast<std::size_t>(workspace.image_size));
}

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::paper() {
    ExperimentConfig c;
    c.scale = "paper";
    c.output_dir = "out-paper";
    c.workspace.image_size = 64;
    c.dqn.episodes = 2000;
    c.dqn.replay_capacity = 50000;
    c.dqn.eval_every = 500;
    c.source_configs = 200;
    c.eval_configs = 100;
    c.extract_episodes = 100;
    c.k = 100;
    c.config_counts = {20, 50, 100, 200};
    c.transfer_seeds = {1, 2, 3};
    c.transfer_episodes = 2000;
    return c;
}

json to_json(const ExperimentConfig& cfg) {
    json ws = env::workspace_to_json(cfg.workspace);
    ws.erase("tau");
    return {{"scale", cfg.scale},
            {"output_dir", cfg.output_dir},
            {"seed", cfg.seed},
            {"workspace", ws},
            {"dqn", dqn_to_json(cfg.dqn)},
            {"source_configs", cfg.source_configs},
            {"eval_configs", cfg.eval_configs},
            {"extract_episodes", cfg.extract_episodes},
            {"k", cfg.k},
            {"modes", cfg.modes},
            {"config_counts", cfg.config_counts},
            {"transfer_seeds", cfg.transfer_seeds},
            {"transfer_episodes", cfg.transfer_episodes},
            {"scale_pca", cfg.scale_pca},
            {"heatmap_grid", cfg.heatmap_grid},
            {"heatmap_units", cfg.heatmap_units}};
}

ExperimentConfig config_from_json(const json& j) {
    const std::string where = "config";
    check_keys(j,
               {"scale", "output_dir", "seed", "workspace", "dqn", "source_configs", "eval_configs", "extract_episodes",
                "k", "modes", "config_counts", "transfer_seeds", "transfer_episodes", "scale_pca", "heatmap_grid",
                "heatmap_units"},
               where);
    if (!j.contains("seed")) throw ConfigError("config must set 'seed' explicitly");
    ExperimentConfig c;
    read(j, "scale", c.scale, where);
    read(j, "output_dir", c.output_dir, where);
    read(j, "seed", c.seed, where);
    if (j.contains("workspace")) {
        if (j.at("workspace").contains("tau")) throw ConfigError("workspace.tau is fixed per task and cannot be set");
        c.workspace = env::workspace_from_json(j.at("workspace"));
    }
    if (j.contains("dqn")) c.dqn = dqn_from_json(j.at("dqn"));
    read(j, "source_configs", c.source_configs, where);
    read(j, "eval_configs", c.eval_configs, where);
    read(j, "extract_episodes", c.extract_episodes, where);
    read(j, "k", c.k, where);
    read(j, "modes", c.modes, where);
    read(j, "config_counts", c.config_counts, where);
    read(j, "transfer_seeds", c.transfer_seeds, where);
    read(j, "transfer_episodes", c.transfer_episodes, where);
    read(j, "scale_pca", c.scale_pca, where);
    read(j, "heatmap_grid", c.heatmap_grid, where);
    read(j, "heatmap_units", c.heatmap_units, where);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    Fnv1a h;
    h.update(to_json(cfg).dump());
    return h.digest();
}

std::uint64_t derived_seed(const ExperimentConfig& cfg, SeedStream stream) {
    return mix_seed(cfg.seed, static_cast<std::uint64_t>(stream));
}

void write_rollouts(const dqn::TrajectoryCollection& col, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << std::setprecision(17);
    const std::size_t d = col.activations.dim();
    f << "episode,step";
    for (const char* name : analysis::kFeatureNames) f << ',' << name;
    for (std::size_t i = 0; i < d; ++i) f << ",h" << i;
    f << '\n';
    for (std::size_t e = 0; e < col.info.size(); ++e) {
        const auto& h = col.activations.trajectories[e];
        for (std::size_t t = 0; t < col.info[e].size(); ++t) {
            f << e << ',' << t;
            for (std::size_t feat = 0; feat < analysis::kFeatureNames.size(); ++feat) {
                f << ',' << analysis::feature_value(col.info[e][t], feat);
            }
            for (Eigen::Index c = 0; c < h.cols(); ++c) f << ',' << h(static_cast<Eigen::Index>(t), c);
            f << '\n';
        }
    }
    if (!f) throw IoError("failed writing " + path);
}

dqn::TrajectoryCollection read_rollouts(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path + ": empty rollout file");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    const std::size_t fixed = 2 + analysis::kFeatureNames.size();
    if (columns <= fixed) throw FormatError(path + ": rollout header has no activation columns");
    const std::size_t d = columns - fixed;

    dqn::TrajectoryCollection col;
    std::vector<std::vector<double>> rows;
    std::size_t current = 0, line_no = 1;
    auto flush = [&] {
        if (rows.empty()) return;
        features::Matrix h(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
        col.activations.trajectories.push_back(std::move(h));
        rows.clear();
    };
    std::vector<double> values(columns);
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t i = 0;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (i < columns) {
            const char* comma = std::find(p, end, ',');
            std::string_view cell(p, static_cast<std::size_t>(comma - p));
            if (cell == "inf") {
                values[i] = std::numeric_limits<double>::infinity();
            } else {
                auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), values[i]);
                if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                    throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + std::string(cell) + "'");
                }
            }
            ++i;
            if (comma == end) break;
            p = comma + 1;
        }
        if (i != columns) throw FormatError(path + ":" + std::to_string(line_no) + ": wrong column count");
        const auto episode = static_cast<std::size_t>(values[0]);
        if (col.info.empty() || episode != current) {
            flush();
            col.info.emplace_back();
            current = episode;
        }
        env::HighLevelFeatures info;
        info.tip = {values[2], values[3]};
        info.d_goal = values[4];
        info.d_obstacle = values[5];
        info.path_blocked = static_cast<int>(values[6]);
        info.theta1 = values[7];
        info.theta2 = values[8];
        info.rel_goal = {values[9], values[10]};
        info.rel_obstacle = {values[11], values[12]};
        col.info.back().push_back(info);
        rows.emplace_back(values.begin() + static_cast<std::ptrdiff_t>(fixed), values.end());
    }
    flush();
    if (col.info.empty()) throw FormatError(path + ": no rollout rows");
    return col;
}

std::uint64_t file_checksum(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    Fnv1a h;
    std::vector<char> buf(1 << 16);
    while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = static_cast<std::size_t>(f.gcount());
        h.update(std::as_bytes(std::span<const char>(buf.data(), n)));
    }
    return h.digest();
}

void update_manifest(const Layout& layout, const ExperimentConfig& cfg, const std::string& command,
                     const std::vector<fs::path>& artifacts) {
    json m = json::object();
    if (fs::exists(layout.manifest())) {
        std::ifstream f(layout.manifest());
        try {
            m = json::parse(f);
        } catch (const json::parse_error&) {
            m = json::object();
        }
    }
    const std::string hash = to_hex(config_hash(cfg));
    m["config_hash"] = hash;
    m["seed"] = cfg.seed;
    m["commands"][command] = hash;
    for (const auto& rel : artifacts) {
        const auto full = layout.root / rel;
        m["artifacts"][rel.generic_string()] = {{"fnv1a64", to_hex(file_checksum(full))},
                                                {"bytes", fs::file_size(full)},
                                                {"command", command}};
    }
    write_json(m, layout.manifest());
}

std::vector<std::string> verify_manifest(const fs::path& root) {
    const auto path = root / "manifest.json";
    if (!fs::exists(path)) throw IoError("no manifest at " + path.string());
    std::ifstream f(path);
    json m;
    try {
        m = json::parse(f);
    } catch (const json::parse_error& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
    }
    std::vector<std::string> bad;
    if (!m.contains("artifacts")) return bad;
    for (const auto& [rel, entry] : m.at("artifacts").items()) {
        const auto full = root / rel;
        if (!fs::exists(full) || to_hex(file_checksum(full)) != entry.at("fnv1a64").get<std::string>()) bad.push_back(rel);
    }
    return bad;
}

void cmd_train_source(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const Layout layout{cfg.output_dir};
    ensure_dir(layout.source_dir());
    write_config_copy(cfg, layout);
    const auto ws = task_ws(cfg, env::TaskKind::primary);
    const auto train_cfgs = env::sample_configurations(cfg.source_configs, env::TaskKind::primary,
                                                       derived_seed(cfg, SeedStream::source_configs), ws);
    const auto eval_cfgs = env::sample_configurations(cfg.eval_configs, env::TaskKind::primary,
                                                      derived_seed(cfg, SeedStream::eval_configs), ws);
    const auto net = nn::Network::build(cfg.arch(), derived_seed(cfg, SeedStream::source_init));
    log << "train-source: " << nn::describe(net) << ", " << cfg.source_configs << " configurations, "
        << cfg.dqn.episodes << " episodes\n";
    const auto result = dqn::train(ws, train_cfgs, net, cfg.dqn, derived_seed(cfg, SeedStream::source_train), eval_cfgs,
                                   [&](const dqn::EpisodeStats& s) {
                                       if (s.eval_path_covered) {
                                           log << "  episode " << s.episode + 1 << ": held-out path covered "
                                               << *s.eval_path_covered << '\n';
                                       }
                                   });
    const auto stats = layout.source_dir() / "stats.csv";
    const auto evals = layout.source_dir() / "eval.csv";
    const auto configs = layout.source_dir() / "train_configs.json";
    nn::save(result.model, layout.source_net().string());
    dqn::write_stats_csv(result.stats, stats.string());
    dqn::write_eval_csv(result.evals, evals.string());
    write_json(env::configurations_to_json(env::TaskKind::primary, train_cfgs), configs);
    update_manifest(layout, cfg, "train-source",
                    relative(layout, {layout.source_net(), stats, evals, configs, layout.root / "config.json"}));
    log << "wrote " << layout.source_net().string() << " (parameter hash " << to_hex(nn::parameter_hash(result.model))
        << ")\n";
}

void cmd_extract(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const Layout layout{cfg.output_dir};
    const auto net = load_source(cfg, layout);
    ensure_dir(layout.features_dir());
    const auto ws = task_ws(cfg, env::TaskKind::primary);
    const auto configs = env::sample_configurations(cfg.extract_episodes, env::TaskKind::primary,
                                                    derived_seed(cfg, SeedStream::extract_configs), ws);
    const auto col = dqn::collect_trajectories(net, ws, configs, cfg.extract_episodes,
                                               derived_seed(cfg, SeedStream::extract_rollouts));
    const auto data = features::ActivationDataset::from(col.activations);
    log << "extract: " << col.activations.trajectories.size() << " episodes, " << data.x.rows() << " steps, D = "
        << data.x.cols() << ", k = " << cfg.k << '\n';
    const auto pca = features::fit_pca(data, cfg.k);
    const auto sfa = features::fit_sfa(col.activations, cfg.k);
    features::save_model(pca, layout.pca_model().string());
    features::save_model(sfa, layout.sfa_model().string());
    write_rollouts(col, layout.rollouts().string());

    const auto outputs = features::transform_sfa(sfa, data.x);
    const auto res = features::constraint_residuals(outputs);
    const auto residual_path = layout.features_dir() / "sfa_residuals.csv";
    std::ofstream f(residual_path);
    if (!f) throw IoError("cannot write " + residual_path.string());
    f << std::setprecision(17) << "feature,abs_mean,abs_variance_error,delta_value\n";
    log << "SFA constraint residuals (whitened dim " << sfa.whitened_dim() << "):\n";
    for (Eigen::Index i = 0; i < outputs.cols(); ++i) {
        f << i << ',' << res.abs_mean(i) << ',' << res.abs_variance_error(i) << ',' << sfa.delta_values(i) << '\n';
        log << "  feature " << i << ": |mean| " << res.abs_mean(i) << ", |var-1| " << res.abs_variance_error(i)
            << ", delta " << sfa.delta_values(i) << '\n';
    }
    f.close();
    log << "  max |covariance| " << res.max_abs_covariance << '\n';
    update_manifest(layout, cfg, "extract",
                    relative(layout, {layout.pca_model(), layout.sfa_model(), layout.rollouts(), residual_path}));
}

void cmd_transfer_matrix(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const Layout layout{cfg.output_dir};
    const auto net = load_source(cfg, layout);
    transfer::MatrixSpec spec;
    spec.modes.clear();
    for (const auto& m : cfg.modes) spec.modes.push_back(transfer::mode_from_string(m));
    spec.config_counts = cfg.config_counts;
    spec.seeds = cfg.transfer_seeds;
    spec.dqn = cfg.dqn;
    spec.dqn.episodes = cfg.transfer_episodes;
    spec.target_arch = cfg.arch();
    spec.workspace = task_ws(cfg, env::TaskKind::secondary);
    spec.eval_configs = cfg.eval_configs;
    spec.eval_seed = derived_seed(cfg, SeedStream::transfer_eval);
    spec.scale_pca = cfg.scale_pca;
    std::optional<features::PCAModel> pca;
    std::optional<features::SFAModel> sfa;
    if (std::count(spec.modes.begin(), spec.modes.end(), transfer::ModeKind::pca)) {
        require_file(layout.pca_model(), "extract");
        pca = features::load_pca(layout.pca_model().string());
        check_model_width(pca->input_dim(), net, "PCA model");
    }
    if (std::count(spec.modes.begin(), spec.modes.end(), transfer::ModeKind::sfa)) {
        require_file(layout.sfa_model(), "extract");
        sfa = features::load_sfa(layout.sfa_model().string());
        check_model_width(sfa->input_dim(), net, "SFA model");
    }
    const auto curves_dir = ensure_dir(layout.transfer_dir() / "curves");
    log << "transfer-matrix: " << spec.modes.size() << " modes x " << spec.config_counts.size() << " config counts x "
        << spec.seeds.size() << " seeds, " << spec.dqn.episodes << " episodes each\n";
    std::vector<fs::path> artifacts;
    const auto cells = transfer::run_condition_matrix(net, pca, sfa, spec, [&](const transfer::CellResult& c) {
        log << "  " << transfer::cell_name(c) << ": head width " << c.head_input_width << ", final "
            << c.final_mean << ", best " << c.best_mean << '\n';
        const auto path = curves_dir / (transfer::cell_name(c) + ".csv");
        transfer::write_curve_csv(c, path.string());
        artifacts.push_back(path);
    });
    const auto results = layout.transfer_dir() / "results.csv";
    transfer::write_results_csv(cells, results.string());

    const auto summary = layout.transfer_dir() / "summary.csv";
    std::ofstream f(summary);
    if (!f) throw IoError("cannot write " + summary.string());
    f << std::setprecision(17) << "mode,config_count,seeds,mean_final_path_covered,mean_best_path_covered\n";
    std::map<std::pair<int, transfer::ModeKind>, std::pair<double, double>> cell_means;
    for (auto kind : spec.modes) {
        for (int count : spec.config_counts) {
            double final_sum = 0.0, best_sum = 0.0;
            int n = 0;
            for (const auto& c : cells) {
                if (c.mode == kind && c.config_count == count) {
                    final_sum += c.final_mean;
                    best_sum += c.best_mean;
                    ++n;
                }
            }
            cell_means[{count, kind}] = {final_sum / n, best_sum / n};
            f << transfer::to_string(kind) << ',' << count << ',' << n << ',' << final_sum / n << ',' << best_sum / n
              << '\n';
        }
    }
    f.close();
    const int lowest = *std::min_element(spec.config_counts.begin(), spec.config_counts.end());
    if (cell_means.count({lowest, transfer::ModeKind::sfa}) && cell_means.count({lowest, transfer::ModeKind::none})) {
        const double s = cell_means[{lowest, transfer::ModeKind::sfa}].second;
        const double n = cell_means[{lowest, transfer::ModeKind::none}].second;
        log << "trend at " << lowest << " configurations: sfa " << s << " vs none " << n << " (best checkpoint) -> "
            << (s >= n ? "sfa >= none" : "sfa < none") << '\n';
    }
    artifacts.push_back(results);
    artifacts.push_back(summary);
    update_manifest(layout, cfg, "transfer-matrix", relative(layout, artifacts));
}

void cmd_analyze(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const Layout layout{cfg.output_dir};
    const auto net = load_source(cfg, layout);
    require_file(layout.pca_model(), "extract");
    require_file(layout.sfa_model(), "extract");
    require_file(layout.rollouts(), "extract");
    const auto pca = features::load_pca(layout.pca_model().string());
    const auto sfa = features::load_sfa(layout.sfa_model().string());
    check_model_width(pca.input_dim(), net, "PCA model");
    check_model_width(sfa.input_dim(), net, "SFA model");
    const auto col = read_rollouts(layout.rollouts().string());
    check_model_width(col.activations.dim(), net, "rollout dump");
    const auto record = analysis::make_record(col.activations, col.info, pca, sfa);

    const auto out = ensure_dir(layout.analysis_dir());
    const auto profiles_dir = ensure_dir(out / "profiles");
    const auto heatmaps_dir = ensure_dir(out / "heatmaps");
    std::vector<fs::path> artifacts;

    const auto table = analysis::correlation_table(record);
    const auto table_path = out / "correlation_table.csv";
    analysis::write_correlation_table(table, table_path.string());
    artifacts.push_back(table_path);
    log << "analyze: " << record.size() << " steps; max |r| per feature (full / pca / sfa):\n";
    for (std::size_t feat = 0; feat < analysis::kFeatureNames.size(); ++feat) {
        std::vector<analysis::CorrelationProfile> profiles;
        log << "  " << analysis::kFeatureNames[feat];
        for (auto set : analysis::kUnitSets) {
            const auto& p = table.at(feat, set);
            profiles.push_back(p);
            log << (set == analysis::UnitSet::full ? "  " : " / ");
            if (p.best_unit) {
                log << std::fixed << std::setprecision(3) << std::abs(p.best_r) << " (unit " << *p.best_unit << ')'
                    << std::defaultfloat;
            } else {
                log << "n/a";
            }
        }
        log << '\n';
        const auto path = profiles_dir / (std::string(analysis::kFeatureNames[feat]) + ".csv");
        analysis::sorted_profile_export(profiles, path.string());
        artifacts.push_back(path);
    }

    const auto ws = task_ws(cfg, env::TaskKind::primary);
    std::size_t maps = 0;
    for (auto set : analysis::kUnitSets) {
        const auto width = static_cast<std::size_t>(record.units(set).cols());
        for (std::size_t unit = 0; unit < std::min(cfg.heatmap_units, width); ++unit) {
            for (auto mode : {analysis::HeatmapMode::tip, analysis::HeatmapMode::rel_goal, analysis::HeatmapMode::rel_obstacle}) {
                const auto hm = analysis::response_heatmap(record, set, unit, mode, cfg.heatmap_grid, ws);
                for (auto format : {analysis::HeatmapFormat::csv, analysis::HeatmapFormat::pgm}) {
                    const auto path = heatmaps_dir / analysis::heatmap_filename(set, unit, mode, format);
                    analysis::export_heatmap(hm, path.string(), format);
                    artifacts.push_back(path);
                }
                ++maps;
            }
        }
    }
    log << "wrote " << maps << " heatmaps to " << heatmaps_dir.string() << '\n';
    update_manifest(layout, cfg, "analyze", relative(layout, artifacts));
}

}  // namespace slowtransfer::experiment
