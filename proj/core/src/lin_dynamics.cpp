#include "agcdro/lin_dynamics.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <cmath>

namespace agcdro {

DiscreteDynamics discretize(const StateSpace& ss, double step, DynamicsKind kind)
{
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw InputError("discretize: step must be positive and finite");
    }
    const auto n = ss.n();
    if (ss.B.rows() != n || ss.B.cols() != 2) {
        throw InputError("discretize: B must be n x 2");
    }

    DiscreteDynamics dyn;
    dyn.step_length = step;
    dyn.kind = kind;

    if (kind == DynamicsKind::Primary) {
        // [[A, b_NL, 0], [0, 0, 1], [0, 0, 0]]
        Matrix C = Matrix::Zero(n + 2, n + 2);
        C.topLeftCorner(n, n) = ss.A;
        C.block(0, n, n, 1) = ss.B.col(1);
        C(n, n + 1) = 1.0;
        const Matrix E = expm(C, step);
        dyn.A_d = E.topLeftCorner(n, n);
        dyn.step_NL = E.block(0, n, n, 1);
        dyn.ramp_NL = E.block(0, n + 1, n, 1) / step;
        return dyn;
    }

    // [[A, B, 0], [0, 0, I], [0, 0, 0]]
    Matrix C = Matrix::Zero(n + 4, n + 4);
    C.topLeftCorner(n, n) = ss.A;
    C.block(0, n, n, 2) = ss.B;
    C.block(n, n + 2, 2, 2).setIdentity();
    const Matrix E = expm(C, step);
    dyn.A_d = E.topLeftCorner(n, n);
    dyn.step_R = E.block(0, n, n, 1);
    dyn.step_NL = E.block(0, n + 1, n, 1);
    dyn.ramp_NL = E.block(0, n + 3, n, 1) / step;
    return dyn;
}

Vector step_state(const DiscreteDynamics& dyn, const Vector& x, const StepInputs& u)
{
    if (x.size() != dyn.n()) {
        throw ContractError("step_state: state dimension mismatch");
    }
    Vector next = dyn.A_d * x;
    next.noalias() += dyn.step_NL * u.dP_NL_start;
    next.noalias() += dyn.ramp_NL * (u.dP_NL_end - u.dP_NL_start);
    if (dyn.kind == DynamicsKind::Agc) {
        next.noalias() += dyn.step_R * u.dP_R;
    } else if (u.dP_R != 0.0) {
        throw ContractError("step_state: primary-only dynamics cannot take a secondary control input");
    }
    return next;
}

double PiecewiseLinear::at(double t) const
{
    if (values.empty()) {
        return 0.0;
    }
    if (t <= 0.0) {
        return values.front();
    }
    const double pos = t / dt;
    const auto last = values.size() - 1;
    if (pos >= double(last)) {
        return values.back();
    }
    auto k = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - double(k);
    // Snap knot hits so exact-knot reads do not pick up rounding noise.
    if (std::abs(frac - 1.0) < 1e-9) {
        ++k;
        frac = 0.0;
    } else if (std::abs(frac) < 1e-9) {
        frac = 0.0;
    }
    if (k >= last) {
        return values.back();
    }
    return values[k] + frac * (values[k + 1] - values[k]);
}

double PiecewiseConstant::at(double t) const
{
    if (values.empty()) {
        return 0.0;
    }
    if (t <= 0.0) {
        return values.front();
    }
    const auto k = static_cast<std::size_t>(std::floor(t / dt + 1e-9));
    return values[std::min(k, values.size() - 1)];
}

namespace {

bool divides(double coarse, double fine)
{
    const double ratio = coarse / fine;
    return std::abs(ratio - std::round(ratio)) <= 1e-9 * std::max(1.0, ratio) && std::round(ratio) >= 1.0;
}

} // namespace

Trajectory simulate(const StateSpace& ss, const PiecewiseLinear& disturbance, const PiecewiseConstant& control,
                    double step, double duration, const Vector& x0)
{
    if (!(step > 0.0) || !(duration >= 0.0)) {
        throw InputError("simulate: step must be positive and duration non-negative");
    }
    if (!disturbance.values.empty() && !divides(disturbance.dt, step)) {
        throw InputError("simulate: step does not divide the disturbance resolution");
    }
    if (!control.values.empty() && !divides(control.dt, step)) {
        throw InputError("simulate: step does not divide the control resolution");
    }
    const double nsteps_real = duration / step;
    const auto nsteps = static_cast<Eigen::Index>(std::llround(nsteps_real));
    if (std::abs(nsteps_real - double(nsteps)) > 1e-9 * std::max(1.0, nsteps_real)) {
        throw InputError("simulate: step does not divide the duration");
    }
    if (!disturbance.values.empty() && disturbance.duration() + 1e-9 < duration) {
        throw InputError("simulate: disturbance series does not cover the horizon");
    }
    if (!control.values.empty() && control.dt * double(control.values.size()) + 1e-9 < duration) {
        throw InputError("simulate: control series does not cover the horizon");
    }

    const auto n = ss.n();
    const DiscreteDynamics dyn = discretize(ss, step, DynamicsKind::Agc);

    Trajectory traj;
    traj.times.resize(static_cast<std::size_t>(nsteps) + 1);
    traj.states.resize(nsteps + 1, n);
    traj.inputs.resize(nsteps + 1, 2);

    Vector x = x0.size() == 0 ? Vector::Zero(n) : x0;
    if (x.size() != n) {
        throw InputError("simulate: initial state dimension mismatch");
    }
    traj.states.row(0) = x.transpose();
    for (Eigen::Index k = 0; k < nsteps; ++k) {
        const double t0 = double(k) * step;
        const double t1 = double(k + 1) * step;
        StepInputs u{control.at(t0 + 0.5 * step), disturbance.at(t0), disturbance.at(t1)};
        traj.times[static_cast<std::size_t>(k)] = t0;
        traj.inputs(k, 0) = u.dP_R;
        traj.inputs(k, 1) = u.dP_NL_start;
        x = step_state(dyn, x, u);
        traj.states.row(k + 1) = x.transpose();
    }
    traj.times.back() = double(nsteps) * step;
    traj.inputs(nsteps, 0) = nsteps > 0 ? traj.inputs(nsteps - 1, 0) : control.at(0.0);
    traj.inputs(nsteps, 1) = disturbance.at(duration);
    return traj;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj, double nominal_frequency_hz,
                          const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    std::vector<std::string> header{"t_s", "delta_f_pu", "delta_f_hz", "dP_R_pu", "dP_NL_pu"};
    for (Eigen::Index i = 0; i < traj.states.cols(); ++i) {
        header.push_back(static_cast<std::size_t>(i) < traj.state_names.size()
                             ? traj.state_names[static_cast<std::size_t>(i)]
                             : "x" + std::to_string(i));
    }
    w.header(header);
    for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
        std::vector<std::string> cells;
        cells.reserve(header.size());
        const double df = traj.states(k, 0);
        cells.push_back(format_double(traj.times[static_cast<std::size_t>(k)]));
        cells.push_back(format_double(df));
        cells.push_back(format_double(df * nominal_frequency_hz));
        cells.push_back(format_double(traj.inputs(k, 0)));
        cells.push_back(format_double(traj.inputs(k, 1)));
        for (Eigen::Index i = 0; i < traj.states.cols(); ++i) {
            cells.push_back(format_double(traj.states(k, i)));
        }
        w.row(cells);
    }
}

std::shared_ptr<const DiscreteDynamics> DiscretizationCache::get(const StateSpace& ss, double step, DynamicsKind kind)
{
    const Key key{fingerprint(ss), step, static_cast<int>(kind)};
    {
        std::lock_guard lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) {
            ++hits_;
            return it->second;
        }
    }
    auto dyn = std::make_shared<const DiscreteDynamics>(discretize(ss, step, kind));
    std::lock_guard lock(mutex_);
    return entries_.emplace(key, std::move(dyn)).first->second;
}

std::size_t DiscretizationCache::size() const
{
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::size_t DiscretizationCache::hits() const
{
    std::lock_guard lock(mutex_);
    return hits_;
}

} // namespace agcdro
