#pragma once

#include "agcdro/frm_model.hpp"

#include <Eigen/Sparse>

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace agcdro {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct VarBlock {
    std::string name;
    Eigen::Index start = 0;
    Eigen::Index size = 0;
};

/// 0.5 x'Qx + a'x + b <= 0 with Q positive semidefinite.
struct QuadConstraint {
    std::string name;
    SparseMatrix Q;
    Vector a;
    double b = 0.0;
};

/// minimize 0.5 x'Px + c'x + c0
/// subject to A_eq x = b_eq, G_in x <= h_in, quad[k] <= 0, lb <= x <= ub.
struct QcqpProblem {
    Eigen::Index n = 0;
    std::vector<VarBlock> blocks;
    Vector lb;
    Vector ub;
    SparseMatrix P;
    Vector c;
    double c0 = 0.0;
    SparseMatrix A_eq;
    Vector b_eq;
    SparseMatrix G_in;
    Vector h_in;
    std::vector<QuadConstraint> quad;

    /// Zero-sized data with consistent shapes for n variables.
    static QcqpProblem empty(Eigen::Index n);

    /// Shapes, bound order and PSD checks. Throws InputError naming the offending item.
    void validate() const;
    [[nodiscard]] double objective(const Vector& x) const;
    [[nodiscard]] const VarBlock& block(const std::string& name) const;
};

enum class QcqpStatus { Optimal, Infeasible, MaxIter };
std::string to_string(QcqpStatus status);

struct QcqpDuals {
    Vector y_eq;     // free
    Vector z_in;     // >= 0
    Vector nu_quad;  // >= 0
    Vector z_lb;     // >= 0
    Vector z_ub;     // >= 0
};

/// Scaled residual norms:
///   stationarity    |grad L|_inf / (1 + |c|_inf), plus any wrong-sign multiplier
///   primal          worst constraint violation / (1 + |b_eq, h_in|_inf)
///   complementarity sum |multiplier * slack| / (1 + |objective|)
struct KktResiduals {
    double stationarity = 0.0;
    double primal = 0.0;
    double complementarity = 0.0;

    [[nodiscard]] double max() const;
};

KktResiduals kkt_residual(const QcqpProblem& p, const Vector& x, const QcqpDuals& duals);

struct IterateRecord {
    int iteration = 0;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    double step = 0.0;
};

struct QcqpSolution {
    QcqpStatus status = QcqpStatus::MaxIter;
    Vector x;
    double objective = 0.0;
    QcqpDuals duals;
    KktResiduals residuals;
    int iterations = 0;
    std::vector<IterateRecord> trace;
    /// For Infeasible: the phase-I multipliers (y_eq, then cone duals) and the minimal
    /// uniform relaxation that restores feasibility.
    Vector certificate;
    double infeasibility = 0.0;
};

struct QcqpOptions {
    double tol = 1e-8;
    int max_iter = 200;
    bool presolve = true;
    double regularization = 1e-9;
};

/// Primal-dual interior point on the second-order-cone form of the problem.
QcqpSolution solve(const QcqpProblem& p, const QcqpOptions& opts = {});

/// Self-describing JSON text; doubles are written in shortest round-trip form.
std::string to_json(const QcqpProblem& p);
QcqpProblem qcqp_from_json(const std::string& text);
void save_qcqp(const std::filesystem::path& path, const QcqpProblem& p);
QcqpProblem load_qcqp(const std::filesystem::path& path);

} // namespace agcdro
