#include "slowtransfer/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace slowtransfer::features {

namespace {

constexpr int kMaxSweeps = 100;
constexpr char kMagic[4] = {'S', 'T', 'F', 'X'};

void fix_signs(Matrix& vectors) {
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            const double mag = std::abs(vectors(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (vectors(arg, j) < 0.0) vectors.col(j) = -vectors.col(j);
    }
}

Matrix center(const Matrix& rows, const Vector& mean) { return rows.rowwise() - mean.transpose(); }

void write_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void write_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

void write_matrix(std::ostream& out, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(out, m(r, c));
    }
}

std::uint64_t read_le(std::istream& in, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == EOF) throw FormatError("truncated feature model file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

Vector read_vector(std::istream& in, std::size_t n) {
    Vector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::bit_cast<double>(read_le(in, 8));
    return v;
}

Matrix read_matrix(std::istream& in, std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<double>(read_le(in, 8));
    }
    return m;
}

}  // namespace

EigenDecomposition symmetric_eig(const Matrix& input) {
    if (input.rows() != input.cols()) throw DomainError("symmetric_eig needs a square matrix");
    const Eigen::Index n = input.rows();
    const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
    if (n > 0 && (input - input.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw DomainError("symmetric_eig: input matrix is not symmetric");
    }
    Matrix a = 0.5 * (input + input.transpose());
    Matrix v = Matrix::Identity(n, n);
    const double eps = std::numeric_limits<double>::epsilon();

    // Rotations are skipped once an off-diagonal entry is negligible relative
    // to its two diagonal entries, which gives eigenvalues to high relative
    // accuracy and an off-diagonal norm far below 1e-12.
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                if (std::abs(apq) <= eps * std::sqrt(std::abs(app) * std::abs(aqq)) ||
                    std::abs(apq) < std::numeric_limits<double>::min()) {
                    a(p, q) = 0.0;
                    a(q, p) = 0.0;
                    continue;
                }
                rotated = true;
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (Eigen::Index r = 0; r < n; ++r) {
                    const double g = a(r, p);
                    const double h = a(r, q);
                    a(r, p) = c * g - s * h;
                    a(r, q) = s * g + c * h;
                }
                for (Eigen::Index r = 0; r < n; ++r) {
                    const double g = a(p, r);
                    const double h = a(q, r);
                    a(p, r) = c * g - s * h;
                    a(q, r) = s * g + c * h;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index r = 0; r < n; ++r) {
                    const double g = v(r, p);
                    const double h = v(r, q);
                    v(r, p) = c * g - s * h;
                    v(r, q) = s * g + c * h;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
    EigenDecomposition out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
        out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
    fix_signs(out.vectors);
    return out;
}

Matrix sample_covariance(const Matrix& centered) {
    if (centered.rows() < 2) throw DegenerateDataError("covariance needs at least two rows");
    Matrix c = (centered.transpose() * centered) / static_cast<double>(centered.rows() - 1);
    return 0.5 * (c + c.transpose());
}

std::size_t TrajectoryActivations::total_rows() const {
    std::size_t n = 0;
    for (const auto& h : trajectories) n += static_cast<std::size_t>(h.rows());
    return n;
}

void TrajectoryActivations::validate() const {
    if (trajectories.empty()) throw DegenerateDataError("no trajectories");
    const std::size_t d = dim();
    if (d < 1) throw DegenerateDataError("activation dimension must be >= 1");
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        if (static_cast<std::size_t>(trajectories[i].cols()) != d) {
            throw ShapeError("trajectory " + std::to_string(i) + " has inconsistent dimension");
        }
        if (trajectories[i].rows() < 2) {
            throw UsageError("trajectory " + std::to_string(i) + " has length " +
                             std::to_string(trajectories[i].rows()) + "; time derivatives need length >= 2");
        }
    }
}

ActivationDataset ActivationDataset::from(const TrajectoryActivations& data) {
    data.validate();
    ActivationDataset out;
    out.x.resize(static_cast<Eigen::Index>(data.total_rows()), static_cast<Eigen::Index>(data.dim()));
    Eigen::Index row = 0;
    for (const auto& h : data.trajectories) {
        out.starts.push_back(static_cast<std::size_t>(row));
        out.x.middleRows(row, h.rows()) = h;
        row += h.rows();
    }
    return out;
}

ActivationDataset ActivationDataset::single(Matrix rows) {
    ActivationDataset out;
    out.x = std::move(rows);
    out.starts = {0};
    return out;
}

PCAModel fit_pca(const ActivationDataset& data, std::size_t k) {
    const auto d = static_cast<std::size_t>(data.x.cols());
    if (k < 1 || k > d) {
        throw UsageError("fit_pca: k = " + std::to_string(k) + " must be in [1, " + std::to_string(d) + "]");
    }
    if (data.x.rows() < 2) throw DegenerateDataError("fit_pca needs at least two rows");
    PCAModel model;
    model.mean = data.x.colwise().mean().transpose();
    const EigenDecomposition eig = symmetric_eig(sample_covariance(center(data.x, model.mean)));
    const auto kk = static_cast<Eigen::Index>(k);
    model.components = eig.vectors.leftCols(kk);
    model.eigenvalues = eig.values.head(kk).cwiseMax(0.0);
    return model;
}

Matrix transform_pca(const PCAModel& model, const Matrix& rows) {
    if (rows.cols() != model.mean.size()) {
        throw ShapeError("transform_pca: expected " + std::to_string(model.mean.size()) + " columns, got " +
                         std::to_string(rows.cols()));
    }
    return center(rows, model.mean) * model.components;
}

Whitening whiten(const Matrix& rows, double cutoff) {
    if (rows.rows() < 2) throw DegenerateDataError("whitening needs at least two rows");
    Whitening out;
    out.mean = rows.colwise().mean().transpose();
    const Matrix centered = center(rows, out.mean);
    const EigenDecomposition eig = symmetric_eig(sample_covariance(centered));
    const double top = eig.values.size() > 0 ? eig.values(0) : 0.0;
    if (!(top > 0.0) || !std::isfinite(top)) throw DegenerateDataError("whitening: data has no variance");
    Eigen::Index m = 0;
    while (m < eig.values.size() && eig.values(m) >= cutoff * top) ++m;
    out.whitener = eig.vectors.leftCols(m) * eig.values.head(m).cwiseSqrt().cwiseInverse().asDiagonal();

    // One refinement pass absorbs eigensolver round-off in low-variance
    // directions so the output covariance is the identity to near machine precision.
    const EigenDecomposition residual = symmetric_eig(sample_covariance(centered * out.whitener));
    out.whitener = out.whitener * residual.vectors * residual.values.cwiseSqrt().cwiseInverse().asDiagonal();
    out.whitened = centered * out.whitener;
    return out;
}

Matrix time_derivative(const Matrix& rows, std::span<const std::size_t> starts) {
    const auto n = static_cast<std::size_t>(rows.rows());
    if (starts.empty() || starts.front() != 0) throw UsageError("trajectory starts must begin at row 0");
    std::size_t out_rows = 0;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : n;
        if (end <= starts[i] || end > n) throw UsageError("trajectory starts must be strictly increasing");
        if (end - starts[i] < 2) {
            throw UsageError("trajectory " + std::to_string(i) + " has length 1; time derivatives need length >= 2");
        }
        out_rows += end - starts[i] - 1;
    }
    Matrix out(static_cast<Eigen::Index>(out_rows), rows.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : n;
        const auto len = static_cast<Eigen::Index>(end - starts[i] - 1);
        const auto s = static_cast<Eigen::Index>(starts[i]);
        out.middleRows(r, len) = rows.middleRows(s + 1, len) - rows.middleRows(s, len);
        r += len;
    }
    return out;
}

SFAModel fit_sfa(const TrajectoryActivations& data, std::size_t k) { return fit_sfa(ActivationDataset::from(data), k); }

SFAModel fit_sfa(const ActivationDataset& data, std::size_t k) {
    Whitening w = whiten(data.x);
    const auto m = static_cast<std::size_t>(w.whitener.cols());
    if (k < 1 || k > m) {
        throw UsageError("fit_sfa: k = " + std::to_string(k) + " must be in [1, " + std::to_string(m) +
                         "] (retained whitened dimensions)");
    }
    const Matrix dz = time_derivative(w.whitened, data.starts);
    if (dz.rows() < 2) throw DegenerateDataError("fit_sfa: fewer than two derivative rows");
    // Uncentered second moment of the derivative: E[zdot zdot^T].
    Matrix second = (dz.transpose() * dz) / static_cast<double>(dz.rows() - 1);
    second = 0.5 * (second + second.transpose());
    const EigenDecomposition eig = symmetric_eig(second);

    SFAModel model;
    model.mean = std::move(w.mean);
    model.whitener = std::move(w.whitener);
    model.projection.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    model.delta_values.resize(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
        const auto src = static_cast<Eigen::Index>(m - 1 - j);
        model.projection.col(static_cast<Eigen::Index>(j)) = eig.vectors.col(src);
        model.delta_values(static_cast<Eigen::Index>(j)) = std::max(eig.values(src), 0.0);
    }
    model.combined = model.whitener * model.projection;
    return model;
}

Matrix transform_sfa(const SFAModel& model, const Matrix& rows) {
    if (rows.cols() != model.mean.size()) {
        throw ShapeError("transform_sfa: expected " + std::to_string(model.mean.size()) + " columns, got " +
                         std::to_string(rows.cols()));
    }
    return center(rows, model.mean) * model.combined;
}

ConstraintResiduals constraint_residuals(const Matrix& outputs) {
    ConstraintResiduals r;
    const Vector mean = outputs.colwise().mean().transpose();
    const Matrix cov = sample_covariance(center(outputs, mean));
    r.abs_mean = mean.cwiseAbs();
    r.abs_variance_error = (cov.diagonal().array() - 1.0).abs().matrix();
    r.max_abs_mean = r.abs_mean.size() ? r.abs_mean.maxCoeff() : 0.0;
    r.max_abs_variance_error = r.abs_variance_error.size() ? r.abs_variance_error.maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) r.max_abs_covariance = std::max(r.max_abs_covariance, std::abs(cov(i, j)));
    }
    return r;
}

Vector slowness(const Matrix& outputs, std::span<const std::size_t> starts) {
    const Matrix dz = time_derivative(outputs, starts);
    if (dz.rows() < 2) throw DegenerateDataError("slowness needs at least two derivative rows");
    return (dz.array().square().colwise().sum() / static_cast<double>(dz.rows() - 1)).transpose();
}

void save_model(const FeatureModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    if (const auto* pca = std::get_if<PCAModel>(&model)) {
        out.put(0);
        write_u32(out, static_cast<std::uint32_t>(pca->input_dim()));
        write_u32(out, 0);
        write_u32(out, static_cast<std::uint32_t>(pca->k()));
        for (Eigen::Index i = 0; i < pca->mean.size(); ++i) write_f64(out, pca->mean(i));
        write_matrix(out, pca->components);
        for (Eigen::Index i = 0; i < pca->eigenvalues.size(); ++i) write_f64(out, pca->eigenvalues(i));
    } else {
        const auto& sfa = std::get<SFAModel>(model);
        out.put(1);
        write_u32(out, static_cast<std::uint32_t>(sfa.input_dim()));
        write_u32(out, static_cast<std::uint32_t>(sfa.whitened_dim()));
        write_u32(out, static_cast<std::uint32_t>(sfa.k()));
        for (Eigen::Index i = 0; i < sfa.mean.size(); ++i) write_f64(out, sfa.mean(i));
        write_matrix(out, sfa.whitener);
        write_matrix(out, sfa.projection);
        for (Eigen::Index i = 0; i < sfa.delta_values.size(); ++i) write_f64(out, sfa.delta_values(i));
    }
    if (!out) throw IoError("failed writing " + path);
}

FeatureModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw FormatError(path + ": bad magic bytes");
    const int kind = in.get();
    if (kind != 0 && kind != 1) throw FormatError(path + ": unknown model kind");
    const auto d = static_cast<std::size_t>(read_le(in, 4));
    const auto m = static_cast<std::size_t>(read_le(in, 4));
    const auto k = static_cast<std::size_t>(read_le(in, 4));
    if (d == 0 || k == 0 || k > d || (kind == 1 && (m == 0 || k > m || m > d))) {
        throw FormatError(path + ": inconsistent model dimensions");
    }
    FeatureModel model;
    if (kind == 0) {
        PCAModel pca;
        pca.mean = read_vector(in, d);
        pca.components = read_matrix(in, d, k);
        pca.eigenvalues = read_vector(in, k);
        model = std::move(pca);
    } else {
        SFAModel sfa;
        sfa.mean = read_vector(in, d);
        sfa.whitener = read_matrix(in, d, m);
        sfa.projection = read_matrix(in, m, k);
        sfa.delta_values = read_vector(in, k);
        sfa.combined = sfa.whitener * sfa.projection;
        model = std::move(sfa);
    }
    if (in.peek() != EOF) throw FormatError(path + ": trailing bytes after model payload");
    return model;
}

PCAModel load_pca(const std::string& path) {
    auto model = load_model(path);
    if (auto* pca = std::get_if<PCAModel>(&model)) return std::move(*pca);
    throw FormatError(path + ": expected a PCA model");
}

SFAModel load_sfa(const std::string& path) {
    auto model = load_model(path);
    if (auto* sfa = std::get_if<SFAModel>(&model)) return std::move(*sfa);
    throw FormatError(path + ": expected an SFA model");
}

}  // namespace slowtransfer::features
