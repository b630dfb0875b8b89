#pragma once

#include "agcdro/frm_model.hpp"
#include "agcdro/lin_dynamics.hpp"
#include "agcdro/qcqp_builder.hpp"
#include "agcdro/quantile_estimator.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace agcdro {

/// Scenario weights may move within [omega0 + eta_min, omega0 + eta_max] on the simplex.
struct AmbiguitySet {
    std::vector<double> H;
    std::vector<double> D;
    std::vector<double> omega0;
    double eta_max = 0.0;
    double eta_min = 0.0;

    [[nodiscard]] std::size_t size() const { return omega0.size(); }
    /// Weight box, lower ends clipped at zero. Throws InfeasibleAmbiguity when no
    /// probability vector fits in it.
    void box(std::vector<double>& lo, std::vector<double>& hi) const;
    void validate() const;
};

enum class ScenarioPairing { Comonotonic, IndependentGrid };
enum class RiskSplit { Literal, Bonferroni };

std::string to_string(ScenarioPairing p);
std::string to_string(RiskSplit r);
ScenarioPairing pairing_from_string(const std::string& s);
RiskSplit risk_split_from_string(const std::string& s);

AmbiguitySet build_ambiguity(const QuantileForecast& forecast, const CalibrationReport& report,
                             ScenarioPairing pairing = ScenarioPairing::Comonotonic);

struct WorstCase {
    double value = 0.0;
    std::vector<double> omega;
};

/// max over the ambiguity set of sum_j omega_j c_j, solved greedily.
WorstCase inner_worstcase_expectation(std::span<const double> costs, const AmbiguitySet& amb);

struct ControlConfig {
    double agc_period_s = 4.0;
    int horizon = 4;
    double cost_R = 30.0;
    double cost_f = 15000.0;
    double freq_lo_pu = -0.001;
    double freq_hi_pu = 0.001;
    double signal_lo_pu = -0.1;
    double signal_hi_pu = 0.1;
    double beta = 0.95;
    RiskSplit risk_split = RiskSplit::Literal;
    ScenarioPairing pairing = ScenarioPairing::Comonotonic;
    double fallback_penalty = 1e4;
    QcqpOptions solver;

    void validate() const;
    /// CVaR divisor: 1 - beta/2 (literal) or (1 - beta)/2 (Bonferroni).
    [[nodiscard]] double cvar_divisor() const;
};

/// Delta f at the end of periods 1..Z for each scenario as an affine map of the
/// secondary commands u_0..u_{Z-1}: df(j, z) = free(j, z) + gain[j].row(z) * u.
struct CondensedDynamics {
    Matrix free;               // J x Z
    std::vector<Matrix> gain;  // J entries of Z x Z (lower triangular)

    [[nodiscard]] Eigen::Index scenarios() const { return free.rows(); }
    [[nodiscard]] Eigen::Index horizon() const { return free.cols(); }
    [[nodiscard]] Vector freq(Eigen::Index j, const Vector& u) const { return free.row(j).transpose() + gain[static_cast<std::size_t>(j)] * u; }
};

/// Per-scenario AGC-period discretizations on the controller's fleet.
std::vector<std::shared_ptr<const DiscreteDynamics>> scenario_dynamics(const Fleet& fleet, const AmbiguitySet& amb,
                                                                       double period,
                                                                       DiscretizationCache* cache = nullptr);

/// `netload` holds Z+1 knots at the period boundaries (linear in between).
CondensedDynamics condense(const std::vector<std::shared_ptr<const DiscreteDynamics>>& dyn, const Vector& x0,
                           std::span<const double> netload, int horizon);

struct DualObjectiveBlock {
    Eigen::Index mu_lo = 0;  // J variables <= 0
    Eigen::Index mu_hi = 0;  // J variables >= 0
    Eigen::Index v = 0;
    AffineExpr objective;
};

/// Adds the dual of the inner maximization: mu_lo_j + mu_hi_j + v >= cost_j where
/// cost_j = sum_k w_k e_k^2 (+ constant terms) is supplied per scenario.
DualObjectiveBlock dualize_objective(QcqpBuilder& b, const AmbiguitySet& amb,
                                     const std::vector<std::vector<std::pair<AffineExpr, double>>>& costs,
                                     const std::string& prefix = "dual");

struct CvarBlock {
    Eigen::Index h_lo = 0;   // J, <= 0
    Eigen::Index h_hi = 0;   // J, >= 0
    Eigen::Index theta = 0;  // J, >= 0
    Eigen::Index lambda = 0;
    Eigen::Index delta = 0;
    /// Worst-case CVaR upper estimate; the chance constraint is lhs <= 0.
    AffineExpr lhs;
};

/// Dualized worst-case CVaR of the scenario losses L_j with divisor k. Adds the variables
/// and the epigraph rows but not lhs <= 0.
CvarBlock add_cvar_block(QcqpBuilder& b, const AmbiguitySet& amb, const std::vector<AffineExpr>& loss, double k,
                         const std::string& prefix);

/// Worst-case CVaR of fixed scenario losses by enumerating the kinks of the threshold.
double worstcase_cvar_enumerated(std::span<const double> loss, const AmbiguitySet& amb, double k);

struct CvarConstraintSet {
    std::vector<CvarBlock> lower;
    std::vector<CvarBlock> upper;
    std::vector<Eigen::Index> slack;  // 2Z penalized slacks when relaxed (else empty)
};

/// Lower and upper frequency CVaR constraints for every period. With `relax`, each
/// constraint gets a nonnegative slack that the caller penalizes.
CvarConstraintSet cvar_chance_constraints(QcqpBuilder& b, const AmbiguitySet& amb, const ControlConfig& cfg,
                                          const std::vector<std::vector<AffineExpr>>& freq, bool relax);

struct P5Layout {
    Eigen::Index u = 0;
    DualObjectiveBlock objective;
    CvarConstraintSet cvar;
};

/// The full QCQP for one control step.
QcqpProblem assemble_p5(const CondensedDynamics& cd, const AmbiguitySet& amb, const ControlConfig& cfg,
                        bool relax = false, P5Layout* layout = nullptr);

struct ControlDecision {
    double dP_R = 0.0;
    Vector horizon;
    double objective = 0.0;
    double worstcase_expectation = 0.0;
    bool feasible = true;  // false when the relaxed fallback produced the command
    QcqpStatus status = QcqpStatus::Optimal;
    double solve_ms = 0.0;
    std::string alert;
};

struct ControlContext {
    DiscretizationCache* cache = nullptr;
    std::optional<std::filesystem::path> dump_problem;
};

/// One receding-horizon step: ambiguity, condensation, P5, solve, first move.
ControlDecision control_step(const Vector& x0, std::span<const double> netload_forecast,
                             const QuantileForecast& forecast, const CalibrationReport& report,
                             const ControlConfig& cfg, const Fleet& fleet, const ControlContext& ctx = {});

/// Same, with the ambiguity set supplied directly.
ControlDecision control_step(const Vector& x0, std::span<const double> netload_forecast, const AmbiguitySet& amb,
                             const ControlConfig& cfg, const Fleet& fleet, const ControlContext& ctx = {});

struct ControlLogRow {
    int step = 0;
    double t_s = 0.0;
    ControlDecision decision;
};

/// step, t_s, dPR_applied_pu, objective, solve_ms, feasible, worstcase_expectation
void write_control_log_csv(const std::filesystem::path& path, const std::vector<ControlLogRow>& rows,
                           const std::vector<std::string>& comments = {}, bool include_timing = true);

} // namespace agcdro
