#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slowtransfer/dqn.hpp"
#include "slowtransfer/env.hpp"
#include "slowtransfer/features.hpp"

namespace slowtransfer::analysis {

enum class UnitSet { full, pca, sfa };
inline constexpr std::array<UnitSet, 3> kUnitSets{UnitSet::full, UnitSet::pca, UnitSet::sfa};
std::string to_string(UnitSet set);

// Scalar high-level features; the 2-vectors rel_goal and rel_obstacle are
// split into components.
inline constexpr std::array<const char*, 11> kFeatureNames{
    "tip_x",   "tip_y",      "d_goal",     "d_obstacle",     "path_blocked",  "theta1",
    "theta2",  "rel_goal_x", "rel_goal_y", "rel_obstacle_x", "rel_obstacle_y"};

double feature_value(const env::HighLevelFeatures& info, std::size_t feature);

// Per-step aligned rows of all rollouts.
struct RolloutRecord {
    features::Matrix full;  // n x D
    features::Matrix pca;   // n x k
    features::Matrix sfa;   // n x k
    std::vector<env::HighLevelFeatures> info;

    std::size_t size() const { return info.size(); }
    const features::Matrix& units(UnitSet set) const;
    features::Vector feature_column(std::size_t feature) const;
    void validate() const;
};

RolloutRecord make_record(const features::TrajectoryActivations& activations,
                          const std::vector<std::vector<env::HighLevelFeatures>>& info, const features::PCAModel& pca,
                          const features::SFAModel& sfa);

// Pearson r; nullopt when either input is constant.
std::optional<double> pearson_corr(std::span<const double> a, std::span<const double> b);
std::optional<double> pearson_corr(const features::Vector& a, const features::Vector& b);

struct CorrelationProfile {
    UnitSet set = UnitSet::full;
    std::size_t feature = 0;
    std::vector<std::optional<double>> r;  // per unit
    std::optional<std::size_t> best_unit;  // largest |r|
    double best_r = 0.0;

    // Defined values in ascending order.
    std::vector<double> sorted() const;
};

CorrelationProfile correlation_profile(const RolloutRecord& record, UnitSet set, std::size_t feature);

struct CorrelationTable {
    std::vector<CorrelationProfile> profiles;  // feature-major, unit sets in kUnitSets order
    const CorrelationProfile& at(std::size_t feature, UnitSet set) const;
};

CorrelationTable correlation_table(const RolloutRecord& record);
// One row per unit set, one (best unit, r) column pair per feature.
void write_correlation_table(const CorrelationTable& table, const std::string& path);
// Columns full, pca, sfa: sorted r values, undefined ones left blank at the end.
void sorted_profile_export(const std::vector<CorrelationProfile>& profiles, const std::string& path);

enum class HeatmapMode { tip, rel_goal, rel_obstacle };
std::string to_string(HeatmapMode mode);

struct Heatmap {
    std::size_t grid = 16;
    HeatmapMode mode = HeatmapMode::tip;
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    // Row-major, row 0 is the top (largest y).
    std::vector<double> mean;
    std::vector<std::size_t> count;

    bool missing(std::size_t row, std::size_t col) const { return count[row * grid + col] == 0; }
    double at(std::size_t row, std::size_t col) const { return mean[row * grid + col]; }
};

// Position binned by the heatmap: tip, tip - goal, or tip - obstacle centroid.
env::Vec2 heatmap_position(const env::HighLevelFeatures& info, HeatmapMode mode);
// Cell of a position, or nullopt when it lies outside the map.
std::optional<std::pair<std::size_t, std::size_t>> heatmap_cell(const Heatmap& hm, const env::Vec2& p);
Heatmap empty_heatmap(HeatmapMode mode, std::size_t grid, const env::WorkspaceConfig& ws);

Heatmap response_heatmap(const RolloutRecord& record, UnitSet set, std::size_t unit, HeatmapMode mode,
                         std::size_t grid, const env::WorkspaceConfig& ws);

enum class HeatmapFormat { csv, pgm };
void export_heatmap(const Heatmap& hm, const std::string& path, HeatmapFormat format);
// Grid of a heatmap CSV; missing cells are nullopt.
std::vector<std::vector<std::optional<double>>> read_heatmap_csv(const std::string& path);
std::string heatmap_filename(UnitSet set, std::size_t unit, HeatmapMode mode, HeatmapFormat format);

}  // namespace slowtransfer::analysis
