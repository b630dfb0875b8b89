#pragma once

#include "agcdro/frm_model.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace agcdro {

/// e^{A t} by scaling and squaring with a diagonal Pade approximant (degree 3..13
/// picked from the 1-norm of A t). Throws InputError on non-finite entries.
Matrix expm(const Matrix& A, double t = 1.0);

enum class DynamicsKind { Primary, Agc };

/// One-step transition over a fixed step length:
///   x' = A_d x + step_R dP_R + step_NL dP_NL(start) + ramp_NL (dP_NL(end) - dP_NL(start)).
/// Primary kind carries no step_R column (secondary control is silent).
struct DiscreteDynamics {
    Matrix A_d;
    Vector step_R;
    Vector step_NL;
    Vector ramp_NL;
    double step_length = 0.0;
    DynamicsKind kind = DynamicsKind::Agc;

    [[nodiscard]] Eigen::Index n() const { return A_d.rows(); }
};

/// Exact zero-order-hold (control) and first-order-hold (netload) discretization from a
/// single exponential of the padded block matrix [[A, B, 0], [0, 0, I], [0, 0, 0]].
DiscreteDynamics discretize(const StateSpace& ss, double step, DynamicsKind kind);

/// Inputs for one step. For Primary dynamics dP_R must be zero.
struct StepInputs {
    double dP_R = 0.0;
    double dP_NL_start = 0.0;
    double dP_NL_end = 0.0;
};

Vector step_state(const DiscreteDynamics& dyn, const Vector& x, const StepInputs& u);

/// Uniformly sampled series interpreted as linear between knots.
struct PiecewiseLinear {
    double dt = 1.0;
    std::vector<double> values;

    [[nodiscard]] double duration() const { return values.empty() ? 0.0 : dt * double(values.size() - 1); }
    /// Linear interpolation; clamps to the end values outside the covered range.
    [[nodiscard]] double at(double t) const;
};

/// Uniformly sampled series held constant over each interval [k dt, (k+1) dt).
struct PiecewiseConstant {
    double dt = 1.0;
    std::vector<double> values;

    [[nodiscard]] double at(double t) const;
};

struct Trajectory {
    std::vector<double> times;   // steps + 1 entries
    Matrix states;               // (steps + 1) x n
    Matrix inputs;               // (steps + 1) x 2: dP_R in force after each time, dP_NL at each time
    std::vector<std::string> state_names;

    [[nodiscard]] Eigen::Index steps() const { return states.rows() - 1; }
    [[nodiscard]] auto freq_deviation() const { return states.col(0); }
};

/// Chains step_state over the horizon [0, duration]. The disturbance is read at every
/// step boundary and the control is held per step. `step` must divide both series
/// resolutions (to 1e-9 relative) and the duration.
Trajectory simulate(const StateSpace& ss, const PiecewiseLinear& disturbance, const PiecewiseConstant& control,
                    double step, double duration, const Vector& x0 = {});

/// Trajectory CSV: t_s, delta_f_pu, delta_f_hz, dP_R_pu, dP_NL_pu, then one column per state.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, double nominal_frequency_hz,
                          const std::vector<std::string>& comments = {});

/// Memoizes discretize() by (fingerprint(ss), step, kind). Safe to share across threads.
class DiscretizationCache {
public:
    std::shared_ptr<const DiscreteDynamics> get(const StateSpace& ss, double step, DynamicsKind kind);
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::size_t hits() const;

private:
    using Key = std::tuple<std::uint64_t, double, int>;
    mutable std::mutex mutex_;
    std::map<Key, std::shared_ptr<const DiscreteDynamics>> entries_;
    std::size_t hits_ = 0;
};

} // namespace agcdro
