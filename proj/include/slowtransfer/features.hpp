#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "slowtransfer/common.hpp"

namespace slowtransfer::features {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Eigenvalues in descending order with matching orthonormal eigenvector
// columns. Each eigenvector's largest-magnitude entry is positive.
struct EigenDecomposition {
    Vector values;
    Matrix vectors;
};

// Cyclic Jacobi eigensolver for symmetric matrices. Deterministic sweep
// order (p < q, row by row). Throws DomainError on non-symmetric input.
EigenDecomposition symmetric_eig(const Matrix& a);

// Unbiased sample covariance (divisor n - 1) of already-centered rows.
Matrix sample_covariance(const Matrix& centered);

// Per-episode activation matrices H_i (T_i x D).
struct TrajectoryActivations {
    std::vector<Matrix> trajectories;

    std::size_t dim() const { return trajectories.empty() ? 0 : static_cast<std::size_t>(trajectories.front().cols()); }
    std::size_t total_rows() const;
    void validate() const;
};

// Row-concatenation of all trajectories; `starts` marks the first row of each.
struct ActivationDataset {
    Matrix x;
    std::vector<std::size_t> starts;

    static ActivationDataset from(const TrajectoryActivations& trajectories);
    // A single trajectory covering all rows.
    static ActivationDataset single(Matrix rows);
};

struct PCAModel {
    Vector mean;
    Matrix components;  // D x k, columns in descending-eigenvalue order
    Vector eigenvalues;

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t k() const { return static_cast<std::size_t>(components.cols()); }
};

PCAModel fit_pca(const ActivationDataset& data, std::size_t k);
Matrix transform_pca(const PCAModel& model, const Matrix& rows);

inline constexpr double kWhiteningCutoff = 1e-7;

struct Whitening {
    Vector mean;
    Matrix whitener;  // D x m
    Matrix whitened;  // n x m
};

// Centers and whitens rows; eigen-directions with variance below
// cutoff * max variance are dropped.
Whitening whiten(const Matrix& rows, double cutoff = kWhiteningCutoff);

// Forward differences z(t+1) - z(t), taken only inside each trajectory.
Matrix time_derivative(const Matrix& rows, std::span<const std::size_t> starts);

struct SFAModel {
    Vector mean;
    Matrix whitener;    // D x m
    Matrix projection;  // m x k, slowest first
    Vector delta_values;
    Matrix combined;    // whitener * projection

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t whitened_dim() const { return static_cast<std::size_t>(whitener.cols()); }
    std::size_t k() const { return static_cast<std::size_t>(projection.cols()); }
};

SFAModel fit_sfa(const TrajectoryActivations& data, std::size_t k);
SFAModel fit_sfa(const ActivationDataset& data, std::size_t k);
Matrix transform_sfa(const SFAModel& model, const Matrix& rows);

// Largest violations of the zero-mean / unit-variance / decorrelation
// constraints over the columns of `outputs` (variance divisor n - 1).
struct ConstraintResiduals {
    Vector abs_mean;
    Vector abs_variance_error;
    double max_abs_mean = 0.0;
    double max_abs_variance_error = 0.0;
    double max_abs_covariance = 0.0;
};

ConstraintResiduals constraint_residuals(const Matrix& outputs);

// Mean squared forward difference of each output column (divisor: rows - 1).
Vector slowness(const Matrix& outputs, std::span<const std::size_t> starts);

// Model file: "STFX", kind byte (0 = PCA, 1 = SFA), u32 D, u32 m, u32 k, then
// little-endian f64 payload. PCA: mean, components (D x k), eigenvalues.
// SFA: mean, whitener (D x m), projection (m x k), delta values. Matrices are
// written row-major.
using FeatureModel = std::variant<PCAModel, SFAModel>;

void save_model(const FeatureModel& model, const std::string& path);
FeatureModel load_model(const std::string& path);
PCAModel load_pca(const std::string& path);
SFAModel load_sfa(const std::string& path);

}  // namespace slowtransfer::features
