#pragma once

#include "agcdro/dro_mpc.hpp"
#include "agcdro/frm_model.hpp"
#include "agcdro/lin_dynamics.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace agcdro {

/// Sampled PI on the area control error ACE = B * delta f:
/// command = -(Kp ACE + Ki integral(ACE)), clamped, with conditional-integration anti-windup.
struct PiController {
    double Kp = 0.0;
    double Ki = 0.0;
    double bias_B = 1.0;
    double lo = -0.1;
    double hi = 0.1;
    double integral = 0.0;

    void validate() const;
    /// Integrates over `dt` with the measurement taken now and returns the new command.
    double update(double freq_dev, double dt);
    void reset() { integral = 0.0; }
};

struct LoopOptions {
    double duration_s = 600.0;
    double substep_s = 0.1;
    /// Abort (and flag unstable) once |delta f| exceeds this many p.u.
    double divergence_pu = 0.5;
};

struct LoopResult {
    std::string controller;
    Trajectory traj;                     // plant at substep resolution
    std::vector<double> command_times;   // start of each AGC period
    std::vector<double> commands;        // dP_R held over each period
    std::vector<double> period_end_freq; // delta f at the end of each period
    std::vector<ControlLogRow> log;      // MPC only
    int fallbacks = 0;
    bool unstable = false;
};

/// Policy called at the start of AGC period k with the measured plant state.
using ControlPolicy = std::function<double(int k, double t, const Vector& x)>;

/// Plant stepped at substep resolution with the command held per AGC period. The plant
/// always starts from rest.
LoopResult run_closed_loop(const SystemModel& plant, const PiecewiseLinear& disturbance, double agc_period_s,
                           const LoopOptions& opts, const ControlPolicy& policy, DiscretizationCache* cache = nullptr);

/// What the proposed controller may see: the fleet, an ambiguity set built from forecasts,
/// and its own configuration. No plant H or D.
struct MpcSetup {
    Fleet fleet;
    AmbiguitySet ambiguity;
    ControlConfig control;
    DiscretizationCache* cache = nullptr;
};

/// The controller is handed the netload trace over its horizon (perfect preview).
LoopResult run_mpc_loop(const SystemModel& plant, const MpcSetup& setup, const PiecewiseLinear& disturbance,
                        const LoopOptions& opts);

LoopResult run_pi_loop(const SystemModel& plant, PiController pi, const PiecewiseLinear& disturbance,
                       double agc_period_s, const LoopOptions& opts, DiscretizationCache* cache = nullptr);

struct ReportRow {
    std::string controller;
    double mean_abs_signal_pu = 0.0;
    double mean_abs_freq_hz = 0.0;
    double objective = 0.0;        // per-period mean of C_R u^2 + C_f df^2
    double out_of_limit_pct = 0.0; // substep samples outside [freq_lo, freq_hi]
};

ReportRow metrics(const LoopResult& r, const ControlConfig& cfg, double nominal_frequency_hz);

/// Averages rows field by field under a new controller label.
ReportRow average_rows(const std::vector<ReportRow>& rows, const std::string& controller);

/// mean_k |a_k - b_k| / mean_k |b_k|
double command_gap(const std::vector<double>& a, const std::vector<double>& b);

struct PiGrid {
    double kp_lo = 0.0;
    double kp_hi = 2.0;
    int kp_steps = 11;
    double ki_lo = 0.0;
    double ki_hi = 0.5;
    int ki_steps = 11;

    void validate() const;
    [[nodiscard]] std::vector<double> kp_values() const;
    [[nodiscard]] std::vector<double> ki_values() const;
};

struct PiTuning {
    double Kp = 0.0;
    double Ki = 0.0;
    double score = 0.0;
    Matrix scores;  // kp x ki, +inf where unstable
};

/// Exhaustive minimum; non-finite scores are skipped and near-ties (1e-12 relative) go
/// to the smaller gain norm.
PiTuning grid_argmin(const std::vector<double>& kp, const std::vector<double>& ki,
                     const std::function<double(double, double)>& score);

/// Mean closed-loop objective over the disturbance set for every grid point.
PiTuning tune_pi(const SystemModel& tuning_plant, const std::vector<PiecewiseLinear>& disturbances,
                 const PiGrid& grid, const ControlConfig& cfg, double bias_B, const LoopOptions& opts,
                 DiscretizationCache* cache = nullptr);

struct ExperimentCase {
    std::string name;
    double H = 0.0;
    double D = 0.0;
};

/// Low, middle and high inertia cases of the evaluation.
std::vector<ExperimentCase> default_cases();

/// controller, mean_abs_signal_pu, mean_abs_freq_hz, objective, out_of_limit_pct
void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                      const std::vector<std::string>& comments = {});

/// Per-period samples for plotting: t_s, dP_R_pu, delta_f_end_pu.
void write_commands_csv(const std::filesystem::path& path, const LoopResult& r,
                        const std::vector<std::string>& comments = {});

} // namespace agcdro
