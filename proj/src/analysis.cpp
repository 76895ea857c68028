#include "slowtransfer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace slowtransfer::analysis {

std::string to_string(UnitSet set) {
    switch (set) {
        case UnitSet::full: return "full";
        case UnitSet::pca: return "pca";
        case UnitSet::sfa: return "sfa";
    }
    return "full";
}

std::string to_string(HeatmapMode mode) {
    switch (mode) {
        case HeatmapMode::tip: return "tip";
        case HeatmapMode::rel_goal: return "relgoal";
        case HeatmapMode::rel_obstacle: return "relobstacle";
    }
    return "tip";
}

double feature_value(const env::HighLevelFeatures& info, std::size_t feature) {
    switch (feature) {
        case 0: return info.tip.x();
        case 1: return info.tip.y();
        case 2: return info.d_goal;
        case 3: return info.d_obstacle;
        case 4: return static_cast<double>(info.path_blocked);
        case 5: return info.theta1;
        case 6: return info.theta2;
        case 7: return info.rel_goal.x();
        case 8: return info.rel_goal.y();
        case 9: return info.rel_obstacle.x();
        case 10: return info.rel_obstacle.y();
        default: throw UsageError("feature index " + std::to_string(feature) + " out of range");
    }
}

const features::Matrix& RolloutRecord::units(UnitSet set) const {
    switch (set) {
        case UnitSet::full: return full;
        case UnitSet::pca: return pca;
        case UnitSet::sfa: return sfa;
    }
    return full;
}

features::Vector RolloutRecord::feature_column(std::size_t feature) const {
    features::Vector v(static_cast<Eigen::Index>(info.size()));
    for (std::size_t i = 0; i < info.size(); ++i) v(static_cast<Eigen::Index>(i)) = feature_value(info[i], feature);
    return v;
}

void RolloutRecord::validate() const {
    const auto n = static_cast<Eigen::Index>(info.size());
    if (n == 0) throw UsageError("rollout record is empty");
    if (full.rows() != n || pca.rows() != n || sfa.rows() != n) {
        throw ShapeError("rollout arrays differ in length");
    }
}

RolloutRecord make_record(const features::TrajectoryActivations& activations,
                          const std::vector<std::vector<env::HighLevelFeatures>>& info, const features::PCAModel& pca,
                          const features::SFAModel& sfa) {
    if (activations.trajectories.size() != info.size()) throw ShapeError("activation and info episode counts differ");
    const auto d = activations.dim();
    if (pca.input_dim() != d || sfa.input_dim() != d) {
        throw ShapeError("feature model input dimension does not match activation width " + std::to_string(d));
    }
    RolloutRecord r;
    const auto data = features::ActivationDataset::from(activations);
    r.full = data.x;
    r.pca = features::transform_pca(pca, data.x);
    r.sfa = features::transform_sfa(sfa, data.x);
    for (std::size_t e = 0; e < info.size(); ++e) {
        if (static_cast<Eigen::Index>(info[e].size()) != activations.trajectories[e].rows()) {
            throw ShapeError("episode " + std::to_string(e) + ": info and activation lengths differ");
        }
        r.info.insert(r.info.end(), info[e].begin(), info[e].end());
    }
    r.validate();
    return r;
}

std::optional<double> pearson_corr(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("pearson_corr needs equal-length inputs");
    if (a.size() < 2) throw UsageError("pearson_corr needs at least two samples");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!std::isfinite(sab) || !(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> pearson_corr(const features::Vector& a, const features::Vector& b) {
    return pearson_corr(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                        std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

std::vector<double> CorrelationProfile::sorted() const {
    std::vector<double> out;
    for (const auto& v : r) {
        if (v) out.push_back(*v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

CorrelationProfile correlation_profile(const RolloutRecord& record, UnitSet set, std::size_t feature) {
    record.validate();
    CorrelationProfile p;
    p.set = set;
    p.feature = feature;
    const features::Vector target = record.feature_column(feature);
    const auto& units = record.units(set);
    for (Eigen::Index u = 0; u < units.cols(); ++u) {
        const features::Vector col = units.col(u);
        p.r.push_back(pearson_corr(col, target));
        if (p.r.back() && (!p.best_unit || std::abs(*p.r.back()) > std::abs(p.best_r))) {
            p.best_unit = static_cast<std::size_t>(u);
            p.best_r = *p.r.back();
        }
    }
    return p;
}

const CorrelationProfile& CorrelationTable::at(std::size_t feature, UnitSet set) const {
    for (const auto& p : profiles) {
        if (p.feature == feature && p.set == set) return p;
    }
    throw UsageError("no correlation profile for feature " + std::to_string(feature));
}

CorrelationTable correlation_table(const RolloutRecord& record) {
    CorrelationTable t;
    for (std::size_t f = 0; f < kFeatureNames.size(); ++f) {
        for (UnitSet s : kUnitSets) t.profiles.push_back(correlation_profile(record, s, f));
    }
    return t;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << std::setprecision(17);
    return f;
}

void finish(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f) throw IoError("failed writing " + path);
}

}  // namespace

void write_correlation_table(const CorrelationTable& table, const std::string& path) {
    auto f = open_out(path);
    f << "unit_set";
    for (const char* name : kFeatureNames) f << ',' << name << "_unit," << name << "_r";
    f << '\n';
    for (UnitSet s : kUnitSets) {
        f << to_string(s);
        for (std::size_t feat = 0; feat < kFeatureNames.size(); ++feat) {
            const auto& p = table.at(feat, s);
            f << ',';
            if (p.best_unit) f << *p.best_unit;
            f << ',';
            if (p.best_unit) f << p.best_r;
        }
        f << '\n';
    }
    finish(f, path);
}

void sorted_profile_export(const std::vector<CorrelationProfile>& profiles, const std::string& path) {
    auto f = open_out(path);
    std::vector<std::vector<double>> cols;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        f << (i ? "," : "") << to_string(profiles[i].set);
        cols.push_back(profiles[i].sorted());
        rows = std::max(rows, profiles[i].r.size());
    }
    f << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) f << ',';
            if (r < cols[c].size()) f << cols[c][r];
        }
        f << '\n';
    }
    finish(f, path);
}

env::Vec2 heatmap_position(const env::HighLevelFeatures& info, HeatmapMode mode) {
    switch (mode) {
        case HeatmapMode::tip: return info.tip;
        case HeatmapMode::rel_goal: return -info.rel_goal;
        case HeatmapMode::rel_obstacle: return -info.rel_obstacle;
    }
    return info.tip;
}

Heatmap empty_heatmap(HeatmapMode mode, std::size_t grid, const env::WorkspaceConfig& ws) {
    if (grid < 4) throw UsageError("heatmap grid must be at least 4");
    Heatmap hm;
    hm.grid = grid;
    hm.mode = mode;
    if (mode == HeatmapMode::tip) {
        hm.x_max = ws.width;
        hm.y_max = ws.height;
    } else {
        const double span = std::max(ws.width, ws.height);
        hm.x_min = hm.y_min = -span;
        hm.x_max = hm.y_max = span;
    }
    hm.mean.assign(grid * grid, 0.0);
    hm.count.assign(grid * grid, 0);
    return hm;
}

std::optional<std::pair<std::size_t, std::size_t>> heatmap_cell(const Heatmap& hm, const env::Vec2& p) {
    if (!(p.x() >= hm.x_min && p.x() <= hm.x_max && p.y() >= hm.y_min && p.y() <= hm.y_max)) return std::nullopt;
    const auto g = static_cast<double>(hm.grid);
    const auto col = std::min(hm.grid - 1, static_cast<std::size_t>((p.x() - hm.x_min) / (hm.x_max - hm.x_min) * g));
    const auto from_bottom =
        std::min(hm.grid - 1, static_cast<std::size_t>((p.y() - hm.y_min) / (hm.y_max - hm.y_min) * g));
    return std::pair{hm.grid - 1 - from_bottom, col};
}

Heatmap response_heatmap(const RolloutRecord& record, UnitSet set, std::size_t unit, HeatmapMode mode,
                         std::size_t grid, const env::WorkspaceConfig& ws) {
    record.validate();
    const auto& units = record.units(set);
    if (unit >= static_cast<std::size_t>(units.cols())) {
        throw UsageError("unit " + std::to_string(unit) + " out of range for " + to_string(set) + " (" +
                         std::to_string(units.cols()) + " units)");
    }
    Heatmap hm = empty_heatmap(mode, grid, ws);
    std::vector<double> sum(grid * grid, 0.0);
    for (std::size_t i = 0; i < record.size(); ++i) {
        const auto cell = heatmap_cell(hm, heatmap_position(record.info[i], mode));
        if (!cell) continue;
        const std::size_t idx = cell->first * grid + cell->second;
        sum[idx] += units(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(unit));
        ++hm.count[idx];
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
        if (hm.count[i] > 0) hm.mean[i] = sum[i] / static_cast<double>(hm.count[i]);
    }
    return hm;
}

void export_heatmap(const Heatmap& hm, const std::string& path, HeatmapFormat format) {
    auto f = open_out(path);
    if (format == HeatmapFormat::csv) {
        for (std::size_t r = 0; r < hm.grid; ++r) {
            for (std::size_t c = 0; c < hm.grid; ++c) {
                if (c) f << ',';
                if (!hm.missing(r, c)) f << hm.at(r, c);
            }
            f << '\n';
        }
    } else {
        double lo = 0.0, hi = 0.0;
        bool any = false;
        for (std::size_t i = 0; i < hm.mean.size(); ++i) {
            if (hm.count[i] == 0) continue;
            lo = any ? std::min(lo, hm.mean[i]) : hm.mean[i];
            hi = any ? std::max(hi, hm.mean[i]) : hm.mean[i];
            any = true;
        }
        f << "P2 " << hm.grid << ' ' << hm.grid << " 255\n";
        for (std::size_t r = 0; r < hm.grid; ++r) {
            for (std::size_t c = 0; c < hm.grid; ++c) {
                int level = 0;
                if (!hm.missing(r, c)) {
                    level = hi > lo ? static_cast<int>(std::lround((hm.at(r, c) - lo) / (hi - lo) * 255.0)) : 255;
                }
                f << (c ? " " : "") << level;
            }
            f << '\n';
        }
    }
    finish(f, path);
}

std::vector<std::vector<std::optional<double>>> read_heatmap_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::vector<std::vector<std::optional<double>>> grid;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::optional<double>> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            row.push_back(cell.empty() ? std::nullopt : std::optional<double>(std::stod(cell)));
        }
        if (!line.empty() && line.back() == ',') row.push_back(std::nullopt);
        grid.push_back(std::move(row));
    }
    return grid;
}

std::string heatmap_filename(UnitSet set, std::size_t unit, HeatmapMode mode, HeatmapFormat format) {
    return to_string(set) + "_" + std::to_string(unit) + "_" + to_string(mode) +
           (format == HeatmapFormat::csv ? ".csv" : ".pgm");
}

}  // namespace slowtransfer::analysis
