#include "slowtransfer/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

namespace slowtransfer::env {

namespace {

constexpr double kGoalMarkerRadius = 0.04;
constexpr double kTipMarkerRadius = 0.03;
constexpr double kArmHalfWidth = 0.012;
constexpr double kDistractorHalfSide = 0.03;
constexpr double kDistractorSpeed = 0.02;
constexpr std::uint8_t kArmIntensity = 128;
constexpr int kMaxSamplingAttempts = 10000;

double segment_point_distance(const Vec2& a, const Vec2& b, const Vec2& p) {
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    double s = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return (a + s * ab - p).norm();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid configuration: " + what);
}

nlohmann::json vec_json(const Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }

Vec2 json_vec(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("expected a 2-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

nlohmann::json rect_json(const Rect& r) {
    return {{"center", vec_json(r.center)}, {"half_extents", vec_json(r.half_extents)}};
}

Rect json_rect(const nlohmann::json& j) { return {json_vec(j.at("center")), json_vec(j.at("half_extents"))}; }

}  // namespace

void WorkspaceConfig::validate() const {
    require(width > 0.0, "width > 0");
    require(height > 0.0, "height > 0");
    require(step_size > 0.0, "step_size > 0");
    require(success_radius > 0.0, "success_radius > 0");
    require(tau > 0.0, "tau > 0");
    require(max_steps >= 1, "max_steps >= 1");
    require(image_size >= 8, "image_size >= 8");
    require(success_radius < tau, "success_radius < tau");
    require(obstacle_reward_sign == 1 || obstacle_reward_sign == -1, "obstacle_reward_sign in {-1, +1}");
    require(link_lengths[0] > 0.0 && link_lengths[1] > 0.0, "link lengths > 0");
    require(distractor_count >= 0, "distractor_count >= 0");
}

bool Rect::contains_open(const Vec2& p) const {
    return std::abs(p.x() - center.x()) < half_extents.x() && std::abs(p.y() - center.y()) < half_extents.y();
}

bool Rect::contains_closed(const Vec2& p) const {
    return std::abs(p.x() - center.x()) <= half_extents.x() && std::abs(p.y() - center.y()) <= half_extents.y();
}

double Rect::distance(const Vec2& p) const {
    const double dx = std::max(std::abs(p.x() - center.x()) - half_extents.x(), 0.0);
    const double dy = std::max(std::abs(p.y() - center.y()) - half_extents.y(), 0.0);
    return std::hypot(dx, dy);
}

bool inside_obstacle(const ObstacleShape& shape, const Vec2& p) {
    return std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Rect>) {
                return s.contains_open(p);
            } else {
                return s.parts[0].contains_open(p) || s.parts[1].contains_open(p);
            }
        },
        shape);
}

namespace {
bool inside_obstacle_closed(const ObstacleShape& shape, const Vec2& p) {
    if (const auto* r = std::get_if<Rect>(&shape)) return r->contains_closed(p);
    const auto& l = std::get<LShape>(shape);
    return l.parts[0].contains_closed(p) || l.parts[1].contains_closed(p);
}
}  // namespace

double obstacle_distance(const ObstacleShape& shape, const Vec2& p) {
    if (const auto* r = std::get_if<Rect>(&shape)) return r->distance(p);
    const auto& l = std::get<LShape>(shape);
    return std::min(l.parts[0].distance(p), l.parts[1].distance(p));
}

Vec2 obstacle_centroid(const ObstacleShape& shape) {
    if (const auto* r = std::get_if<Rect>(&shape)) return r->center;
    const auto& [a, b] = std::get<LShape>(shape).parts;
    // Area-weighted centroid of the union; the overlap is counted once.
    const Vec2 lo = (a.center - a.half_extents).cwiseMax(b.center - b.half_extents);
    const Vec2 hi = (a.center + a.half_extents).cwiseMin(b.center + b.half_extents);
    const Vec2 ext = (hi - lo).cwiseMax(0.0);
    const double overlap = ext.x() * ext.y();
    const Vec2 overlap_center = 0.5 * (lo + hi);
    const double total = a.area() + b.area() - overlap;
    return (a.area() * a.center + b.area() * b.center - overlap * overlap_center) / total;
}

void validate_obstacle(const ObstacleShape& shape) {
    auto check_rect = [](const Rect& r) {
        require(r.half_extents.x() > 0.0 && r.half_extents.y() > 0.0, "obstacle half-extents > 0");
    };
    if (const auto* r = std::get_if<Rect>(&shape)) {
        check_rect(*r);
        return;
    }
    const auto& [a, b] = std::get<LShape>(shape).parts;
    check_rect(a);
    check_rect(b);
    const Vec2 gap = (a.center - b.center).cwiseAbs() - (a.half_extents + b.half_extents);
    require(gap.x() <= 0.0 && gap.y() <= 0.0, "L-shape rectangles must overlap or touch");
}

std::string to_string(TaskKind task) {
    switch (task) {
        case TaskKind::primary: return "primary";
        case TaskKind::secondary: return "secondary";
        case TaskKind::obstacle_free: return "obstacle_free";
    }
    return "?";
}

TaskKind task_from_string(const std::string& name) {
    if (name == "primary") return TaskKind::primary;
    if (name == "secondary") return TaskKind::secondary;
    if (name == "obstacle_free") return TaskKind::obstacle_free;
    throw ConfigError("unknown task '" + name + "'");
}

WorkspaceConfig task_workspace(TaskKind task, WorkspaceConfig base) {
    base.tau = task == TaskKind::secondary ? 0.28 : 0.21;
    return base;
}

void EnvConfiguration::validate(const WorkspaceConfig& ws) const {
    auto in_workspace = [&](const Vec2& p) {
        return p.x() >= 0.0 && p.x() <= ws.width && p.y() >= 0.0 && p.y() <= ws.height;
    };
    require(in_workspace(tip_start), "tip_start inside workspace");
    require(in_workspace(goal), "goal inside workspace");
    if (obstacle) {
        validate_obstacle(*obstacle);
        require(!inside_obstacle_closed(*obstacle, tip_start), "tip_start outside obstacle");
        require(!inside_obstacle_closed(*obstacle, goal), "goal outside obstacle");
    }
    require((tip_start - goal).norm() > ws.success_radius, "distance(tip_start, goal) > success_radius");
    require(distractor_starts.size() == distractor_velocities.size(),
            "distractor_starts and distractor_velocities have equal length");
}

double delta_t(double prev_dist, double curr_dist) { return prev_dist - curr_dist; }

bool segment_hits_rect(const Vec2& a, const Vec2& b, const Rect& rect) {
    // Intersect the open parameter interval (0, 1) with the open slabs of
    // each axis; an empty or single-point intersection means no crossing.
    double lo = 0.0;
    double hi = 1.0;
    for (int axis = 0; axis < 2; ++axis) {
        const double d = b[axis] - a[axis];
        const double rel = a[axis] - rect.center[axis];
        const double h = rect.half_extents[axis];
        if (d == 0.0) {
            if (!(std::abs(rel) < h)) return false;
            continue;
        }
        double t0 = (-h - rel) / d;
        double t1 = (h - rel) / d;
        if (t0 > t1) std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
    }
    return lo < hi;
}

int path_blocked(const Vec2& a, const Vec2& b, const std::optional<ObstacleShape>& obstacle) {
    if (!obstacle) return 0;
    if (const auto* r = std::get_if<Rect>(&*obstacle)) return segment_hits_rect(a, b, *r) ? 1 : 0;
    const auto& l = std::get<LShape>(*obstacle);
    return (segment_hits_rect(a, b, l.parts[0]) || segment_hits_rect(a, b, l.parts[1])) ? 1 : 0;
}

JointAngles ik_two_link(const Vec2& tip, const WorkspaceConfig& ws) {
    const double l1 = ws.link_lengths[0];
    const double l2 = ws.link_lengths[1];
    const Vec2 d = tip - ws.arm_base();
    const double r = d.norm();
    constexpr double slack = 1e-12;
    if (r > l1 + l2 + slack || r < std::abs(l1 - l2) - slack) {
        throw OutOfReachError("tip at distance " + std::to_string(r) + " from the arm base is out of reach");
    }
    const double c = std::clamp((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
    JointAngles q;
    q.theta2 = std::acos(c);
    q.theta1 = std::atan2(d.y(), d.x()) - std::atan2(l2 * std::sin(q.theta2), l1 + l2 * std::cos(q.theta2));
    return q;
}

std::pair<Vec2, Vec2> forward_kinematics(const JointAngles& q, const WorkspaceConfig& ws) {
    const Vec2 elbow = ws.arm_base() + ws.link_lengths[0] * Vec2(std::cos(q.theta1), std::sin(q.theta1));
    const double a = q.theta1 + q.theta2;
    const Vec2 tip = elbow + ws.link_lengths[1] * Vec2(std::cos(a), std::sin(a));
    return {elbow, tip};
}

Vec2 action_direction(int action) {
    if (action < 0 || action >= kActionCount) throw UsageError("action index out of range: " + std::to_string(action));
    if (action == kNoOp) return {0.0, 0.0};
    const double angle = action * std::numbers::pi / 4.0;
    return {std::cos(angle), std::sin(angle)};
}

std::vector<std::size_t> observation_shape(const WorkspaceConfig& ws) {
    if (ws.observation == ObservationMode::vector) return {12};
    const auto s = static_cast<std::size_t>(ws.image_size);
    return {3, s, s};
}

Environment::Environment(WorkspaceConfig workspace, EnvConfiguration configuration)
    : workspace_(std::move(workspace)), configuration_(std::move(configuration)) {
    workspace_.validate();
    configuration_.validate(workspace_);
}

double Environment::goal_distance(const Vec2& tip) const { return (tip - configuration_.goal).norm(); }

double Environment::obstacle_distance(const Vec2& tip) const {
    if (!configuration_.obstacle) return std::numeric_limits<double>::infinity();
    return env::obstacle_distance(*configuration_.obstacle, tip);
}

std::pair<EnvState, Observation> Environment::reset(std::uint64_t seed) const {
    EnvState state;
    state.tip = configuration_.tip_start;
    state.t = 0;
    state.rng.seed(seed);
    state.distractor_positions = configuration_.distractor_starts;
    state.distractor_velocities = configuration_.distractor_velocities;
    std::uniform_int_distribution<int> byte(0, 255);
    for (std::size_t i = 0; i < state.distractor_positions.size(); ++i) {
        const auto r = static_cast<std::uint8_t>(byte(state.rng));
        const auto b = static_cast<std::uint8_t>(byte(state.rng));
        state.distractor_colors.push_back({r, b});
    }
    state.prev_d_goal = goal_distance(state.tip);
    state.prev_d_obstacle = obstacle_distance(state.tip);
    Observation obs = observe(state);
    return {std::move(state), std::move(obs)};
}

double Environment::reward(const EnvState& before, const EnvState& after) const {
    return shaped_reward(before.prev_d_goal, goal_distance(after.tip), before.prev_d_obstacle,
                         obstacle_distance(after.tip), workspace_);
}

double shaped_reward(double d_goal_before, double d_goal_after, double d_obstacle_before, double d_obstacle_after,
                     const WorkspaceConfig& ws) {
    if (d_goal_after < ws.success_radius) return 10.0;
    const double approach_goal = delta_t(d_goal_before, d_goal_after);
    if (d_obstacle_after > ws.tau) return 10.0 * approach_goal;
    const double approach_obstacle = delta_t(d_obstacle_before, d_obstacle_after);
    return 10.0 * (approach_goal + ws.obstacle_reward_sign * std::max(approach_obstacle, 0.0));
}

std::pair<EnvState, StepResult> Environment::step(const EnvState& state, int action) const {
    if (state.done || state.t >= workspace_.max_steps) throw UsageError("step called on a finished episode");
    const Vec2 dir = action_direction(action);

    EnvState next = state;
    Vec2 target = state.tip + workspace_.step_size * dir;
    target.x() = std::clamp(target.x(), 0.0, workspace_.width);
    target.y() = std::clamp(target.y(), 0.0, workspace_.height);
    if (!(configuration_.obstacle && inside_obstacle(*configuration_.obstacle, target))) next.tip = target;
    next.t = state.t + 1;

    const double lo_x = kDistractorHalfSide;
    const double hi_x = workspace_.width - kDistractorHalfSide;
    const double lo_y = kDistractorHalfSide;
    const double hi_y = workspace_.height - kDistractorHalfSide;
    std::uniform_int_distribution<int> byte(0, 255);
    for (std::size_t i = 0; i < next.distractor_positions.size(); ++i) {
        Vec2& p = next.distractor_positions[i];
        Vec2& v = next.distractor_velocities[i];
        p += v;
        if (p.x() < lo_x) { p.x() = 2.0 * lo_x - p.x(); v.x() = -v.x(); }
        if (p.x() > hi_x) { p.x() = 2.0 * hi_x - p.x(); v.x() = -v.x(); }
        if (p.y() < lo_y) { p.y() = 2.0 * lo_y - p.y(); v.y() = -v.y(); }
        if (p.y() > hi_y) { p.y() = 2.0 * hi_y - p.y(); v.y() = -v.y(); }
        const auto r = static_cast<std::uint8_t>(byte(next.rng));
        const auto b = static_cast<std::uint8_t>(byte(next.rng));
        next.distractor_colors[i] = {r, b};
    }

    StepResult result;
    result.reward = reward(state, next);
    next.prev_d_goal = goal_distance(next.tip);
    next.prev_d_obstacle = obstacle_distance(next.tip);
    result.success = next.prev_d_goal < workspace_.success_radius;
    result.done = result.success || next.t == workspace_.max_steps;
    next.done = result.done;
    result.observation = observe(next);
    result.info = features(next);
    return {std::move(next), std::move(result)};
}

HighLevelFeatures Environment::features(const EnvState& state) const {
    HighLevelFeatures f;
    f.tip = state.tip;
    f.d_goal = goal_distance(state.tip);
    f.d_obstacle = obstacle_distance(state.tip);
    f.rel_goal = configuration_.goal - state.tip;
    if (configuration_.obstacle) f.rel_obstacle = obstacle_centroid(*configuration_.obstacle) - state.tip;
    f.path_blocked = path_blocked(state.tip, configuration_.goal, configuration_.obstacle);
    const JointAngles q = ik_two_link(state.tip, workspace_);
    f.theta1 = q.theta1;
    f.theta2 = q.theta2;
    return f;
}

Observation Environment::observe(const EnvState& state) const {
    if (workspace_.observation == ObservationMode::vector) return {vector_observation(state)};
    return {render(state)};
}

Tensor Environment::vector_observation(const EnvState& state) const {
    std::vector<double> v{state.tip.x(), state.tip.y(), configuration_.goal.x(), configuration_.goal.y()};
    std::array<Rect, 2> parts{};
    if (configuration_.obstacle) {
        if (const auto* r = std::get_if<Rect>(&*configuration_.obstacle)) {
            parts = {*r, *r};
        } else {
            parts = std::get<LShape>(*configuration_.obstacle).parts;
        }
        for (const Rect& r : parts) {
            v.insert(v.end(), {r.center.x(), r.center.y(), r.half_extents.x(), r.half_extents.y()});
        }
    } else {
        v.resize(12, 0.0);
    }
    return Tensor({12}, std::move(v));
}

Tensor Environment::render(const EnvState& state) const {
    const auto s = static_cast<std::size_t>(workspace_.image_size);
    const double pitch_x = workspace_.width / static_cast<double>(s);
    const double pitch_y = workspace_.height / static_cast<double>(s);
    std::vector<std::uint8_t> pixels(3 * s * s, 0);
    auto at = [&](std::size_t ch, std::size_t row, std::size_t col) -> std::uint8_t& {
        return pixels[(ch * s + row) * s + col];
    };

    const auto [elbow, arm_tip] = forward_kinematics(ik_two_link(state.tip, workspace_), workspace_);
    const Vec2 base = workspace_.arm_base();

    for (std::size_t row = 0; row < s; ++row) {
        const double y = workspace_.height - (static_cast<double>(row) + 0.5) * pitch_y;
        for (std::size_t col = 0; col < s; ++col) {
            const Vec2 p((static_cast<double>(col) + 0.5) * pitch_x, y);
            for (std::size_t i = 0; i < state.distractor_positions.size(); ++i) {
                const Vec2 d = (p - state.distractor_positions[i]).cwiseAbs();
                if (d.x() <= kDistractorHalfSide && d.y() <= kDistractorHalfSide) {
                    at(0, row, col) = state.distractor_colors[i][0];
                    at(2, row, col) = state.distractor_colors[i][1];
                }
            }
            if (configuration_.obstacle && inside_obstacle_closed(*configuration_.obstacle, p)) {
                at(0, row, col) = 255;
                at(2, row, col) = 0;
            }
            if ((p - configuration_.goal).norm() <= kGoalMarkerRadius) at(1, row, col) = 255;
            if (segment_point_distance(base, elbow, p) <= kArmHalfWidth ||
                segment_point_distance(elbow, arm_tip, p) <= kArmHalfWidth) {
                at(2, row, col) = std::max(at(2, row, col), kArmIntensity);
            }
            if ((p - state.tip).norm() <= kTipMarkerRadius) at(2, row, col) = 255;
        }
    }

    Tensor image({3, s, s});
    std::transform(pixels.begin(), pixels.end(), image.data.begin(),
                   [](std::uint8_t v) { return static_cast<double>(v) / 255.0; });
    return image;
}

std::vector<EnvConfiguration> sample_configurations(int n, TaskKind task, std::uint64_t seed,
                                                    const WorkspaceConfig& ws_in) {
    if (n < 1) throw UsageError("sample_configurations requires n >= 1");
    const WorkspaceConfig ws = task_workspace(task, ws_in);
    ws.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto coin = [&] { return std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0; };

    const double margin = 0.05;
    const double cx_lo = 0.3 * ws.width, cx_hi = 0.7 * ws.width;
    const double cy_lo = 0.35 * ws.height, cy_hi = 0.65 * ws.height;

    std::vector<EnvConfiguration> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxSamplingAttempts && !accepted; ++attempt) {
            EnvConfiguration c;
            if (task == TaskKind::primary) {
                c.obstacle = Rect{{uniform(cx_lo, cx_hi), uniform(cy_lo, cy_hi)},
                                  {uniform(0.06, 0.14), uniform(0.04, 0.10)}};
            } else if (task == TaskKind::secondary) {
                const Vec2 corner(uniform(cx_lo, cx_hi), uniform(cy_lo, cy_hi));
                const double half_thickness = uniform(0.025, 0.04);
                const double len_x = uniform(0.12, 0.24);
                const double len_y = uniform(0.12, 0.24);
                const double sx = coin();
                const double sy = coin();
                const Rect horizontal{{corner.x() + sx * len_x / 2.0, corner.y()}, {len_x / 2.0, half_thickness}};
                const Rect vertical{{corner.x(), corner.y() + sy * len_y / 2.0}, {half_thickness, len_y / 2.0}};
                c.obstacle = LShape{{horizontal, vertical}};
            }
            c.tip_start = {uniform(margin, ws.width - margin), uniform(margin, ws.height - margin)};
            c.goal = {uniform(margin, ws.width - margin), uniform(margin, ws.height - margin)};
            for (int d = 0; d < ws.distractor_count; ++d) {
                c.distractor_starts.emplace_back(uniform(kDistractorHalfSide, ws.width - kDistractorHalfSide),
                                                 uniform(kDistractorHalfSide, ws.height - kDistractorHalfSide));
                const double angle = uniform(0.0, 2.0 * std::numbers::pi);
                c.distractor_velocities.emplace_back(kDistractorSpeed * std::cos(angle),
                                                     kDistractorSpeed * std::sin(angle));
            }

            const double separation = (c.tip_start - c.goal).norm();
            if (task == TaskKind::obstacle_free) {
                if (separation < 0.15 || separation > 0.35) continue;
            } else {
                if (separation < 0.3) continue;
                if (obstacle_distance(*c.obstacle, c.tip_start) < 0.02) continue;
                if (obstacle_distance(*c.obstacle, c.goal) < ws.success_radius + 0.01) continue;
            }
            try {
                c.validate(ws);
            } catch (const ConfigError&) {
                continue;
            }
            out.push_back(std::move(c));
            accepted = true;
        }
        if (!accepted) throw SamplingError("could not sample a valid configuration after bounded attempts");
    }
    return out;
}

nlohmann::json configurations_to_json(TaskKind task, const std::vector<EnvConfiguration>& configs) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : configs) {
        nlohmann::json j;
        j["tip_start"] = vec_json(c.tip_start);
        j["goal"] = vec_json(c.goal);
        if (!c.obstacle) {
            j["obstacle"] = nullptr;
        } else if (const auto* r = std::get_if<Rect>(&*c.obstacle)) {
            j["obstacle"] = rect_json(*r);
            j["obstacle"]["type"] = "rect";
        } else {
            const auto& l = std::get<LShape>(*c.obstacle);
            j["obstacle"] = {{"type", "lshape"}, {"parts", {rect_json(l.parts[0]), rect_json(l.parts[1])}}};
        }
        j["distractor_starts"] = nlohmann::json::array();
        j["distractor_velocities"] = nlohmann::json::array();
        for (const auto& v : c.distractor_starts) j["distractor_starts"].push_back(vec_json(v));
        for (const auto& v : c.distractor_velocities) j["distractor_velocities"].push_back(vec_json(v));
        list.push_back(std::move(j));
    }
    return {{"task", to_string(task)}, {"configs", std::move(list)}};
}

std::pair<TaskKind, std::vector<EnvConfiguration>> configurations_from_json(const nlohmann::json& doc) {
    try {
        const TaskKind task = task_from_string(doc.at("task").get<std::string>());
        std::vector<EnvConfiguration> configs;
        for (const auto& j : doc.at("configs")) {
            EnvConfiguration c;
            c.tip_start = json_vec(j.at("tip_start"));
            c.goal = json_vec(j.at("goal"));
            const auto& o = j.at("obstacle");
            if (!o.is_null()) {
                const auto type = o.at("type").get<std::string>();
                if (type == "rect") {
                    c.obstacle = json_rect(o);
                } else if (type == "lshape") {
                    c.obstacle = LShape{{json_rect(o.at("parts").at(0)), json_rect(o.at("parts").at(1))}};
                } else {
                    throw ConfigError("unknown obstacle type '" + type + "'");
                }
            }
            for (const auto& v : j.value("distractor_starts", nlohmann::json::array())) {
                c.distractor_starts.push_back(json_vec(v));
            }
            for (const auto& v : j.value("distractor_velocities", nlohmann::json::array())) {
                c.distractor_velocities.push_back(json_vec(v));
            }
            configs.push_back(std::move(c));
        }
        return {task, std::move(configs)};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed configuration document: ") + e.what());
    }
}

nlohmann::json workspace_to_json(const WorkspaceConfig& ws) {
    return {{"width", ws.width},
            {"height", ws.height},
            {"step_size", ws.step_size},
            {"success_radius", ws.success_radius},
            {"tau", ws.tau},
            {"max_steps", ws.max_steps},
            {"image_size", ws.image_size},
            {"distractor_count", ws.distractor_count},
            {"obstacle_reward_sign", ws.obstacle_reward_sign},
            {"link_lengths", {ws.link_lengths[0], ws.link_lengths[1]}},
            {"observation", ws.observation == ObservationMode::image ? "image" : "vector"}};
}

WorkspaceConfig workspace_from_json(const nlohmann::json& doc, WorkspaceConfig ws) {
    if (!doc.is_object()) throw ConfigError("workspace must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "width") ws.width = value.get<double>();
            else if (key == "height") ws.height = value.get<double>();
            else if (key == "step_size") ws.step_size = value.get<double>();
            else if (key == "success_radius") ws.success_radius = value.get<double>();
            else if (key == "tau") ws.tau = value.get<double>();
            else if (key == "max_steps") ws.max_steps = value.get<int>();
            else if (key == "image_size") ws.image_size = value.get<int>();
            else if (key == "distractor_count") ws.distractor_count = value.get<int>();
            else if (key == "obstacle_reward_sign") ws.obstacle_reward_sign = value.get<int>();
            else if (key == "link_lengths") ws.link_lengths = {value.at(0).get<double>(), value.at(1).get<double>()};
            else if (key == "observation") {
                const auto mode = value.get<std::string>();
                if (mode == "image") ws.observation = ObservationMode::image;
                else if (mode == "vector") ws.observation = ObservationMode::vector;
                else throw ConfigError("unknown observation mode '" + mode + "'");
            } else {
                throw ConfigError("unknown workspace key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("workspace." + key + ": " + e.what());
        }
    }
    ws.validate();
    return ws;
}

void write_ppm(const Observation& obs, const std::string& path) {
    const Tensor& img = obs.data;
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("write_ppm expects a 3 x S x S image observation");
    const std::size_t rows = img.dim(1);
    const std::size_t cols = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << cols << ' ' << rows << "\n255\n";
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(img.data[(ch * rows + r) * cols + c], 0.0, 1.0);
                out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
            }
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace slowtransfer::env
