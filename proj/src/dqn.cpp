#include "slowtransfer/dqn.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace slowtransfer::dqn {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
    if (t.action < 0 || t.action >= env::kActionCount) throw UsageError("transition action out of range");
    if (!t.obs || !t.next_obs) throw UsageError("transition needs both observations");
    if (ring_.size() < capacity_) {
        ring_.push_back(std::move(t));
    } else {
        ring_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
    ++insertions_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
    if (i >= ring_.size()) throw UsageError("replay index out of range");
    if (ring_.size() < capacity_) return ring_[i];
    return ring_[(next_ + i) % capacity_];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    if (ring_.empty()) throw UsageError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, ring_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &ring_[pick(rng)];
    return out;
}

void DQNConfig::validate() const {
    if (episodes <= 0) throw ConfigError("episodes must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    for (double e : {epsilon_start, epsilon_end}) {
        if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
    }
    if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0)) {
        throw ConfigError("epsilon_decay_fraction must lie in (0, 1]");
    }
    if (target_update_every <= 0) throw ConfigError("target_update_every must be positive");
    if (learn_start == 0) throw ConfigError("learn_start must be positive");
    if (eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (replay_capacity == 0) throw ConfigError("replay_capacity must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

double DQNConfig::epsilon_at(int episode) const {
    const double span = epsilon_decay_fraction * episodes;
    const double frac = span > 0.0 ? std::clamp(episode / span, 0.0, 1.0) : 1.0;
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
}

double path_covered(double initial_distance, double final_distance, bool success) {
    if (success) return 1.0;
    if (!(initial_distance > 0.0)) return 0.0;
    return std::clamp((initial_distance - final_distance) / initial_distance, 0.0, 1.0);
}

Tensor stack_observations(const std::vector<const Tensor*>& obs) {
    if (obs.empty()) throw UsageError("cannot stack an empty observation list");
    std::vector<std::size_t> shape{obs.size()};
    shape.insert(shape.end(), obs.front()->shape.begin(), obs.front()->shape.end());
    Tensor out(shape);
    const std::size_t n = obs.front()->size();
    for (std::size_t i = 0; i < obs.size(); ++i) {
        if (obs[i]->shape != obs.front()->shape) throw ShapeError("observations in a batch differ in shape");
        std::copy(obs[i]->data.begin(), obs[i]->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

Tensor stack_side(const std::vector<const std::vector<double>*>& side, std::size_t width) {
    Tensor out({side.size(), width});
    for (std::size_t i = 0; i < side.size(); ++i) {
        if (side[i]->size() != width) throw ShapeError("side feature width mismatch");
        std::copy(side[i]->begin(), side[i]->end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    return out;
}

int argmax_row(const Tensor& q, std::size_t row) {
    const std::size_t cols = q.dim(1);
    const auto begin = q.data.begin() + static_cast<std::ptrdiff_t>(row * cols);
    return static_cast<int>(std::max_element(begin, begin + static_cast<std::ptrdiff_t>(cols)) - begin);
}

TrajectoryCollection collect_trajectories(const nn::Network& net, const env::WorkspaceConfig& ws,
                                          const std::vector<env::EnvConfiguration>& configs, int n_episodes,
                                          std::uint64_t seed, bool keep_observations) {
    if (configs.empty()) throw UsageError("collect_trajectories needs at least one configuration");
    if (n_episodes <= 0) throw UsageError("n_episodes must be positive");
    TrajectoryCollection out;
    for (int ep = 0; ep < n_episodes; ++ep) {
        const env::Environment environment(ws, configs[static_cast<std::size_t>(ep) % configs.size()]);
        auto [state, obs] = environment.reset(mix_seed(seed, static_cast<std::uint64_t>(ep)));
        std::vector<std::vector<double>> rows;
        std::vector<env::HighLevelFeatures> info;
        std::vector<Tensor> kept;
        while (!state.done) {
            const Tensor batch = stack_observations({&obs.data});
            const nn::TapOutput tap = nn::forward_with_tap(net, batch);
            rows.push_back(tap.hidden.data);
            info.push_back(environment.features(state));
            if (keep_observations) kept.push_back(obs.data);
            auto [next, result] = environment.step(state, argmax_row(tap.q_values, 0));
            state = std::move(next);
            obs = std::move(result.observation);
        }
        features::Matrix h(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(net.tap_width()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            }
        }
        out.activations.trajectories.push_back(std::move(h));
        out.info.push_back(std::move(info));
        if (keep_observations) out.observations.push_back(std::move(kept));
    }
    return out;
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << std::setprecision(17);
    return f;
}

}  // namespace

void write_stats_csv(const std::vector<EpisodeStats>& stats, const std::string& path) {
    auto f = open_csv(path);
    f << "episode,mean_episode_reward,epsilon,loss_mean,eval_path_covered\n";
    for (const auto& s : stats) {
        f << s.episode << ',' << (s.steps > 0 ? s.total_reward / s.steps : 0.0) << ',' << s.epsilon << ',';
        if (!std::isnan(s.loss_mean)) f << s.loss_mean;
        f << ',';
        if (s.eval_path_covered) f << *s.eval_path_covered;
        f << '\n';
    }
    if (!f) throw IoError("failed writing " + path);
}

void write_eval_csv(const std::vector<EvalReport>& evals, const std::string& path) {
    auto f = open_csv(path);
    f << "episode,config,path_covered\n";
    for (const auto& e : evals) {
        for (std::size_t i = 0; i < e.path_covered.size(); ++i) f << e.episode << ',' << i << ',' << e.path_covered[i] << '\n';
    }
    if (!f) throw IoError("failed writing " + path);
}

}  // namespace slowtransfer::dqn
