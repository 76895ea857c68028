#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slowtransfer/env.hpp"
#include "slowtransfer/features.hpp"
#include "slowtransfer/nn.hpp"

namespace slowtransfer::nn {

// QModel adapter for a plain network: no side features.
inline std::size_t side_width(const Network&) { return 0; }
inline Tensor side_features(const Network&, const Tensor& obs) { return Tensor({obs.dim(0), 0}); }
inline Tensor q_values(const Network& net, const Tensor& obs, const Tensor&) { return forward(net, obs); }
inline Tensor q_forward_train(const Network& net, const Tensor& obs, const Tensor&, ForwardCache& cache) {
    return forward_train(net, obs, nullptr, cache);
}
inline Gradients q_backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad) {
    return backward(net, cache, loss_grad);
}
inline AdamState make_adam(const Network& net, double learning_rate) {
    return AdamState::for_network(net, learning_rate);
}
inline void apply_gradients(Network& net, AdamState& adam, const Gradients& grads) { adam_step(net, adam, grads); }

}  // namespace slowtransfer::nn

namespace slowtransfer::dqn {

// Anything the trainer can optimize: a trainable Q-network plus an optional
// frozen "side" feature map whose output is concatenated before the Q head.
template <class M>
concept QModel = std::copyable<M> && requires(const M& m, M& mut, const Tensor& t, nn::ForwardCache& cache,
                                              nn::AdamState& adam, const nn::Gradients& grads) {
    { side_width(m) } -> std::convertible_to<std::size_t>;
    { side_features(m, t) } -> std::same_as<Tensor>;
    { q_values(m, t, t) } -> std::same_as<Tensor>;
    { q_forward_train(m, t, t, cache) } -> std::same_as<Tensor>;
    { q_backward(m, cache, t) } -> std::same_as<nn::Gradients>;
    { make_adam(m, 0.001) } -> std::same_as<nn::AdamState>;
    apply_gradients(mut, adam, grads);
    { parameter_hash(m) } -> std::same_as<std::uint64_t>;
};

// An observation together with the frozen side features computed from it.
struct StoredObservation {
    Tensor obs;
    std::vector<double> side;
};
using ObservationPtr = std::shared_ptr<const StoredObservation>;

struct Transition {
    ObservationPtr obs;
    int action = 0;
    double reward = 0.0;
    ObservationPtr next_obs;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const { return ring_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t insertions() const { return insertions_; }
    // i-th oldest stored transition.
    const Transition& at(std::size_t i) const;
    std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::vector<Transition> ring_;
    std::size_t next_ = 0;
    std::uint64_t insertions_ = 0;
};

struct DQNConfig {
    int episodes = 300;
    double gamma = 0.99;
    std::size_t batch_size = 32;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay_fraction = 0.5;
    int target_update_every = 100;
    std::size_t learn_start = 500;
    int eval_every = 100;
    std::size_t replay_capacity = 10000;
    double learning_rate = 0.001;

    void validate() const;
    // Linear decay from epsilon_start to epsilon_end over the first
    // epsilon_decay_fraction of episodes.
    double epsilon_at(int episode) const;
    bool operator==(const DQNConfig&) const = default;
};

struct EvalReport {
    int episode = 0;
    std::vector<double> path_covered;
    double mean = 0.0;
    double success_rate = 0.0;
};

struct EpisodeStats {
    int episode = 0;
    int config_index = 0;
    int steps = 0;
    double total_reward = 0.0;
    double epsilon = 0.0;
    double loss_mean = 0.0;  // NaN before learning starts
    std::optional<double> eval_path_covered;
};

template <QModel M>
struct TrainResult {
    M model;
    std::vector<EpisodeStats> stats;
    std::vector<EvalReport> evals;
    std::uint64_t gradient_steps = 0;
    std::uint64_t env_steps = 0;
};

using ProgressFn = std::function<void(const EpisodeStats&)>;

double path_covered(double initial_distance, double final_distance, bool success);

// Row-stacks observations (and their side features) into batch tensors.
Tensor stack_observations(const std::vector<const Tensor*>& obs);
Tensor stack_side(const std::vector<const std::vector<double>*>& side, std::size_t width);

// Index of the largest entry in row `row`; ties go to the lowest index.
int argmax_row(const Tensor& q, std::size_t row);

template <QModel M>
ObservationPtr store_observation(const M& model, env::Observation obs) {
    auto stored = std::make_shared<StoredObservation>();
    stored->obs = std::move(obs.data);
    if (side_width(model) > 0) {
        Tensor batch = stack_observations({&stored->obs});
        stored->side = side_features(model, batch).data;
    }
    return stored;
}

template <QModel M>
int select_action(const M& model, const StoredObservation& obs, double epsilon, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < epsilon) return std::uniform_int_distribution<int>(0, env::kActionCount - 1)(rng);
    const Tensor batch = stack_observations({&obs.obs});
    const Tensor side = stack_side({&obs.side}, side_width(model));
    return argmax_row(q_values(model, batch, side), 0);
}

inline int select_action(const nn::Network& net, const env::Observation& obs, double epsilon, std::mt19937_64& rng) {
    return select_action(net, StoredObservation{obs.data, {}}, epsilon, rng);
}

template <QModel M>
std::vector<double> td_targets(const M& target, const std::vector<const Transition*>& batch, double gamma) {
    if (batch.empty()) throw UsageError("td_targets needs a nonempty batch");
    std::vector<const Tensor*> next;
    std::vector<const std::vector<double>*> side;
    for (const auto* t : batch) {
        next.push_back(&t->next_obs->obs);
        side.push_back(&t->next_obs->side);
    }
    const Tensor q = q_values(target, stack_observations(next), stack_side(side, side_width(target)));
    std::vector<double> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->done) {
            y[i] = batch[i]->reward;
            continue;
        }
        const auto row = q.data.begin() + static_cast<std::ptrdiff_t>(i * env::kActionCount);
        y[i] = batch[i]->reward + gamma * *std::max_element(row, row + env::kActionCount);
    }
    return y;
}

// One Adam step on the mean squared TD error of the taken actions. Returns the loss.
template <QModel M>
double fit_batch(M& model, const M& target, nn::AdamState& adam, const std::vector<const Transition*>& batch,
                 double gamma, nn::ForwardCache& cache) {
    const std::vector<double> y = td_targets(target, batch, gamma);
    std::vector<const Tensor*> obs;
    std::vector<const std::vector<double>*> side;
    for (const auto* t : batch) {
        obs.push_back(&t->obs->obs);
        side.push_back(&t->obs->side);
    }
    const Tensor q = q_forward_train(model, stack_observations(obs), stack_side(side, side_width(model)), cache);
    Tensor grad({batch.size(), static_cast<std::size_t>(env::kActionCount)});
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::size_t idx = i * env::kActionCount + static_cast<std::size_t>(batch[i]->action);
        const double err = q.data[idx] - y[i];
        loss += err * err;
        grad.data[idx] = 2.0 * err;
    }
    apply_gradients(model, adam, q_backward(model, cache, grad));
    return loss / static_cast<double>(batch.size());
}

// Greedy (or epsilon-greedy) rollouts, one per configuration; never mutates the model.
template <QModel M>
EvalReport evaluate(const M& model, const env::WorkspaceConfig& ws, const std::vector<env::EnvConfiguration>& configs,
                    std::uint64_t seed, double epsilon = 0.0) {
    EvalReport report;
    std::mt19937_64 rng(mix_seed(seed, 0xe7a1));
    int successes = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const env::Environment environment(ws, configs[i]);
        auto [state, obs] = environment.reset(mix_seed(seed, i));
        const double d0 = state.prev_d_goal;
        ObservationPtr cur = store_observation(model, std::move(obs));
        bool success = false;
        while (!state.done) {
            const int action = select_action(model, *cur, epsilon, rng);
            auto [next, result] = environment.step(state, action);
            success = result.success;
            state = std::move(next);
            if (!state.done) cur = store_observation(model, std::move(result.observation));
        }
        successes += success ? 1 : 0;
        report.path_covered.push_back(path_covered(d0, state.prev_d_goal, success));
    }
    if (!configs.empty()) {
        double sum = 0.0;
        for (double v : report.path_covered) sum += v;
        report.mean = sum / static_cast<double>(configs.size());
        report.success_rate = static_cast<double>(successes) / static_cast<double>(configs.size());
    }
    return report;
}

template <QModel M>
TrainResult<M> train(const env::WorkspaceConfig& ws, const std::vector<env::EnvConfiguration>& configs, M model,
                     const DQNConfig& cfg, std::uint64_t seed,
                     const std::vector<env::EnvConfiguration>& eval_configs = {}, const ProgressFn& progress = {}) {
    if (configs.empty()) throw UsageError("train needs at least one configuration");
    cfg.validate();
    ws.validate();

    TrainResult<M> out{std::move(model), {}, {}, 0, 0};
    M target = out.model;
    nn::AdamState adam = make_adam(out.model, cfg.learning_rate);
    ReplayBuffer replay(cfg.replay_capacity);
    nn::ForwardCache cache;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, configs.size() - 1);
    const std::uint64_t eval_seed = mix_seed(seed, 0x5eed);

    for (int episode = 0; episode < cfg.episodes; ++episode) {
        EpisodeStats stats;
        stats.episode = episode;
        stats.config_index = static_cast<int>(pick(rng));
        stats.epsilon = cfg.epsilon_at(episode);
        const env::Environment environment(ws, configs[static_cast<std::size_t>(stats.config_index)]);
        auto [state, obs] = environment.reset(mix_seed(seed, 1000003ULL + static_cast<std::uint64_t>(episode)));
        ObservationPtr cur = store_observation(out.model, std::move(obs));
        double loss_sum = 0.0;
        int loss_count = 0;
        while (!state.done) {
            const int action = select_action(out.model, *cur, stats.epsilon, rng);
            auto [next_state, result] = environment.step(state, action);
            ObservationPtr next = store_observation(out.model, std::move(result.observation));
            // Time-limit truncation is not a terminal state of the task; only success is.
            replay.push(Transition{cur, action, result.reward, next, result.success});
            stats.total_reward += result.reward;
            ++stats.steps;
            ++out.env_steps;
            if (replay.size() >= cfg.learn_start && replay.size() >= cfg.batch_size) {
                loss_sum += fit_batch(out.model, target, adam, replay.sample(cfg.batch_size, rng), cfg.gamma,
                                     cache);
                ++loss_count;
                ++out.gradient_steps;
                if (out.gradient_steps % static_cast<std::uint64_t>(cfg.target_update_every) == 0) target = out.model;
            }
            state = std::move(next_state);
            cur = std::move(next);
        }
        stats.loss_mean = loss_count > 0 ? loss_sum / loss_count : std::numeric_limits<double>::quiet_NaN();
        const bool checkpoint = cfg.eval_every > 0 && ((episode + 1) % cfg.eval_every == 0 || episode + 1 == cfg.episodes);
        if (checkpoint && !eval_configs.empty()) {
            EvalReport report = evaluate(out.model, ws, eval_configs, eval_seed);
            report.episode = episode + 1;
            stats.eval_path_covered = report.mean;
            out.evals.push_back(std::move(report));
        }
        if (progress) progress(stats);
        out.stats.push_back(stats);
    }
    return out;
}

// Greedy rollouts of a frozen network recording the tap activation and the
// high-level features of every visited state.
struct TrajectoryCollection {
    features::TrajectoryActivations activations;
    std::vector<std::vector<env::HighLevelFeatures>> info;
    std::vector<std::vector<Tensor>> observations;  // kept only on request
};

TrajectoryCollection collect_trajectories(const nn::Network& net, const env::WorkspaceConfig& ws,
                                          const std::vector<env::EnvConfiguration>& configs, int n_episodes,
                                          std::uint64_t seed, bool keep_observations = false);

void write_stats_csv(const std::vector<EpisodeStats>& stats, const std::string& path);
void write_eval_csv(const std::vector<EvalReport>& evals, const std::string& path);

}  // namespace slowtransfer::dqn
