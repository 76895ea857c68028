#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "slowtransfer/common.hpp"
#include "slowtransfer/tensor.hpp"

namespace slowtransfer::env {

using Vec2 = Eigen::Vector2d;

inline constexpr int kActionCount = 9;
inline constexpr int kNoOp = 8;

enum class ObservationMode { image, vector };

// Static parameters of the planar workspace and the episode rules.
struct WorkspaceConfig {
    double width = 0.8;
    double height = 1.0;
    double step_size = 0.025;
    double success_radius = 0.05;
    double tau = 0.21;
    int max_steps = 200;
    int image_size = 32;
    int distractor_count = 2;
    int obstacle_reward_sign = -1;
    std::array<double, 2> link_lengths{0.55, 0.55};
    ObservationMode observation = ObservationMode::image;

    // Throws ConfigError naming the first violated invariant.
    void validate() const;
    Vec2 arm_base() const { return {width / 2.0, 0.0}; }

    bool operator==(const WorkspaceConfig&) const = default;
};

struct Rect {
    Vec2 center;
    Vec2 half_extents;

    bool contains_open(const Vec2& p) const;
    bool contains_closed(const Vec2& p) const;
    double distance(const Vec2& p) const;  // 0 inside
    double area() const { return 4.0 * half_extents.x() * half_extents.y(); }

    bool operator==(const Rect&) const = default;
};

// Two axis-aligned rectangles sharing a corner region.
struct LShape {
    std::array<Rect, 2> parts;

    bool operator==(const LShape&) const = default;
};

using ObstacleShape = std::variant<Rect, LShape>;

bool inside_obstacle(const ObstacleShape& shape, const Vec2& p);  // open interior
// Euclidean distance from p to the nearest point of the shape (0 inside).
double obstacle_distance(const ObstacleShape& shape, const Vec2& p);
Vec2 obstacle_centroid(const ObstacleShape& shape);
void validate_obstacle(const ObstacleShape& shape);

enum class TaskKind { primary, secondary, obstacle_free };

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& name);

// Returns the workspace for a task: tau = 0.21 m (primary), 0.28 m (secondary).
WorkspaceConfig task_workspace(TaskKind task, WorkspaceConfig base = {});

struct EnvConfiguration {
    Vec2 tip_start{0.0, 0.0};
    Vec2 goal{0.0, 0.0};
    std::optional<ObstacleShape> obstacle;
    std::vector<Vec2> distractor_starts;
    std::vector<Vec2> distractor_velocities;

    void validate(const WorkspaceConfig& ws) const;
    bool operator==(const EnvConfiguration&) const = default;
};

struct EnvState {
    Vec2 tip{0.0, 0.0};
    int t = 0;
    std::vector<Vec2> distractor_positions;
    std::vector<Vec2> distractor_velocities;
    std::vector<std::array<std::uint8_t, 2>> distractor_colors;  // (r, b)
    double prev_d_goal = 0.0;
    double prev_d_obstacle = 0.0;
    bool done = false;
    std::mt19937_64 rng;
};

// Raster image (3 x S x S, values in [0,1]) or the low-dimensional vector form.
struct Observation {
    Tensor data;
};

struct HighLevelFeatures {
    Vec2 tip{0.0, 0.0};
    double d_goal = 0.0;
    double d_obstacle = 0.0;
    Vec2 rel_goal{0.0, 0.0};
    Vec2 rel_obstacle{0.0, 0.0};
    int path_blocked = 0;
    double theta1 = 0.0;
    double theta2 = 0.0;
};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;
    bool success = false;
    HighLevelFeatures info;
};

double delta_t(double prev_dist, double curr_dist);

// Reward from tip-goal and tip-obstacle distances at two consecutive steps:
// 10 on success, 10*dgoal outside tau, 10*(dgoal + sign*relu(dobstacle)) inside.
double shaped_reward(double d_goal_before, double d_goal_after, double d_obstacle_before, double d_obstacle_after,
                     const WorkspaceConfig& ws);

// 1 iff the open segment a->b crosses the open interior of the obstacle.
int path_blocked(const Vec2& a, const Vec2& b, const std::optional<ObstacleShape>& obstacle);
bool segment_hits_rect(const Vec2& a, const Vec2& b, const Rect& rect);

struct JointAngles {
    double theta1 = 0.0;
    double theta2 = 0.0;
};

JointAngles ik_two_link(const Vec2& tip, const WorkspaceConfig& ws);
// Returns {elbow, tip} for the given joint angles.
std::pair<Vec2, Vec2> forward_kinematics(const JointAngles& q, const WorkspaceConfig& ws);

// Unit direction of a move action; zero for the no-op.
Vec2 action_direction(int action);

class Environment {
public:
    Environment(WorkspaceConfig workspace, EnvConfiguration configuration);

    std::pair<EnvState, Observation> reset(std::uint64_t seed) const;
    std::pair<EnvState, StepResult> step(const EnvState& state, int action) const;

    // Shaped reward between two consecutive states.
    double reward(const EnvState& before, const EnvState& after) const;

    Observation observe(const EnvState& state) const;
    HighLevelFeatures features(const EnvState& state) const;
    double goal_distance(const Vec2& tip) const;
    double obstacle_distance(const Vec2& tip) const;

    const WorkspaceConfig& workspace() const { return workspace_; }
    const EnvConfiguration& configuration() const { return configuration_; }

private:
    Tensor render(const EnvState& state) const;
    Tensor vector_observation(const EnvState& state) const;

    WorkspaceConfig workspace_;
    EnvConfiguration configuration_;
};

// Size of an observation tensor for the workspace's observation mode.
std::vector<std::size_t> observation_shape(const WorkspaceConfig& ws);

std::vector<EnvConfiguration> sample_configurations(int n, TaskKind task, std::uint64_t seed,
                                                    const WorkspaceConfig& ws);

// JSON serialization of configuration lists:
// {"task": "...", "configs": [{"tip_start":[x,y], "goal":[x,y], "obstacle":{...}, ...}]}
nlohmann::json configurations_to_json(TaskKind task, const std::vector<EnvConfiguration>& configs);
std::pair<TaskKind, std::vector<EnvConfiguration>> configurations_from_json(const nlohmann::json& doc);

nlohmann::json workspace_to_json(const WorkspaceConfig& ws);
WorkspaceConfig workspace_from_json(const nlohmann::json& doc, WorkspaceConfig base = {});

// Binary P6 PPM of an image observation.
void write_ppm(const Observation& obs, const std::string& path);

}  // namespace slowtransfer::env
