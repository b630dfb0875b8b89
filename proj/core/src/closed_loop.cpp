#include "agcdro/closed_loop.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace agcdro {

void PiController::validate() const
{
    if (!(Kp >= 0.0) || !(Ki >= 0.0) || !std::isfinite(Kp) || !std::isfinite(Ki)) {
        throw InputError("PI controller: gains must be finite and nonnegative");
    }
    if (!(bias_B > 0.0) || !(lo < hi)) {
        throw InputError("PI controller: bias must be positive and the clamp ordered");
    }
}

double PiController::update(double freq_dev, double dt)
{
    const double ace = bias_B * freq_dev;
    const double raw = -(Kp * ace + Ki * integral);
    // Hold the integrator while already saturated and the error pushes further into the clamp.
    const bool winding = (raw >= hi && ace < 0.0) || (raw <= lo && ace > 0.0);
    if (!winding) {
        integral += ace * dt;
    }
    return std::clamp(-(Kp * ace + Ki * integral), lo, hi);
}

LoopResult run_closed_loop(const SystemModel& plant, const PiecewiseLinear& disturbance, double agc_period_s,
                           const LoopOptions& opts, const ControlPolicy& policy, DiscretizationCache* cache)
{
    if (!(agc_period_s > 0.0) || !(opts.substep_s > 0.0) || !(opts.duration_s >= 0.0)) {
        throw InputError("closed loop: period, substep and duration must be positive");
    }
    const double ratio = agc_period_s / opts.substep_s;
    const auto per = static_cast<Eigen::Index>(std::llround(ratio));
    if (per < 1 || std::abs(ratio - double(per)) > 1e-9 * ratio) {
        throw InputError("closed loop: substep must divide the AGC period");
    }
    const auto periods = static_cast<Eigen::Index>(std::floor(opts.duration_s / agc_period_s + 1e-9));

    const auto ss = build_state_space(plant);
    std::shared_ptr<const DiscreteDynamics> dyn;
    if (cache) {
        dyn = cache->get(ss, opts.substep_s, DynamicsKind::Agc);
    } else {
        dyn = std::make_shared<const DiscreteDynamics>(discretize(ss, opts.substep_s, DynamicsKind::Agc));
    }

    LoopResult r;
    const auto n = ss.n();
    const auto rows = periods * per + 1;
    r.traj.state_names = state_names(plant.fleet);
    r.traj.states.setZero(rows, n);
    r.traj.inputs.setZero(rows, 2);
    r.traj.times.resize(static_cast<std::size_t>(rows));
    r.traj.times[0] = 0.0;
    r.traj.inputs(0, 1) = disturbance.at(0.0);

    Vector x = Vector::Zero(n);
    Eigen::Index filled = 1;
    for (Eigen::Index k = 0; k < periods && !r.unstable; ++k) {
        const double t = double(k) * agc_period_s;
        const double u = policy(static_cast<int>(k), t, x);
        if (!std::isfinite(u)) {
            throw NumericalError("closed loop: controller returned a non-finite command at t = " + std::to_string(t));
        }
        r.command_times.push_back(t);
        r.commands.push_back(u);
        r.traj.inputs(filled - 1, 0) = u;
        for (Eigen::Index s = 0; s < per; ++s) {
            const auto i = k * per + s;
            const double t0 = double(i) * opts.substep_s;
            const double t1 = double(i + 1) * opts.substep_s;
            x = step_state(*dyn, x, {u, disturbance.at(t0), disturbance.at(t1)});
            r.traj.states.row(i + 1) = x.transpose();
            r.traj.times[static_cast<std::size_t>(i + 1)] = t1;
            r.traj.inputs(i + 1, 0) = u;
            r.traj.inputs(i + 1, 1) = disturbance.at(t1);
            filled = i + 2;
            if (!std::isfinite(x(0)) || std::abs(x(0)) > opts.divergence_pu) {
                r.unstable = true;
                break;
            }
        }
        r.period_end_freq.push_back(x(0));
    }
    if (filled < rows) {
        r.traj.states.conservativeResize(filled, n);
        r.traj.inputs.conservativeResize(filled, 2);
        r.traj.times.resize(static_cast<std::size_t>(filled));
    }
    return r;
}

LoopResult run_mpc_loop(const SystemModel& plant, const MpcSetup& setup, const PiecewiseLinear& disturbance,
                        const LoopOptions& opts)
{
    setup.control.validate();
    setup.ambiguity.validate();
    const auto& cfg = setup.control;
    std::vector<ControlLogRow> log;
    int fallbacks = 0;
    ControlContext ctx{setup.cache, std::nullopt};
    std::vector<double> knots(static_cast<std::size_t>(cfg.horizon) + 1);
    auto policy = [&](int k, double t, const Vector& x) {
        for (std::size_t z = 0; z < knots.size(); ++z) {
            knots[z] = disturbance.at(t + double(z) * cfg.agc_period_s);
        }
        auto dec = control_step(x, knots, setup.ambiguity, cfg, setup.fleet, ctx);
        if (!dec.feasible) {
            ++fallbacks;
        }
        const double u = dec.dP_R;
        log.push_back({k, t, std::move(dec)});
        return u;
    };
    auto r = run_closed_loop(plant, disturbance, cfg.agc_period_s, opts, policy, setup.cache);
    r.controller = "proposed";
    r.log = std::move(log);
    r.fallbacks = fallbacks;
    return r;
}

LoopResult run_pi_loop(const SystemModel& plant, PiController pi, const PiecewiseLinear& disturbance,
                       double agc_period_s, const LoopOptions& opts, DiscretizationCache* cache)
{
    pi.validate();
    pi.reset();
    auto policy = [&](int, double, const Vector& x) { return pi.update(x(0), agc_period_s); };
    auto r = run_closed_loop(plant, disturbance, agc_period_s, opts, policy, cache);
    r.controller = "pi";
    return r;
}

ReportRow metrics(const LoopResult& r, const ControlConfig& cfg, double nominal_frequency_hz)
{
    ReportRow row;
    row.controller = r.controller;
    if (!r.commands.empty()) {
        double sig = 0.0, obj = 0.0;
        for (std::size_t k = 0; k < r.commands.size(); ++k) {
            const double u = r.commands[k];
            const double f = k < r.period_end_freq.size() ? r.period_end_freq[k] : 0.0;
            sig += std::abs(u);
            obj += cfg.cost_R * u * u + cfg.cost_f * f * f;
        }
        row.mean_abs_signal_pu = sig / double(r.commands.size());
        row.objective = obj / double(r.commands.size());
    }
    const auto samples = r.traj.states.rows() - 1;
    if (samples > 0) {
        double fsum = 0.0;
        Eigen::Index out = 0;
        for (Eigen::Index i = 1; i <= samples; ++i) {
            const double f = r.traj.states(i, 0);
            fsum += std::abs(f);
            if (f < cfg.freq_lo_pu || f > cfg.freq_hi_pu) {
                ++out;
            }
        }
        row.mean_abs_freq_hz = fsum / double(samples) * nominal_frequency_hz;
        row.out_of_limit_pct = 100.0 * double(out) / double(samples);
    }
    return row;
}

ReportRow average_rows(const std::vector<ReportRow>& rows, const std::string& controller)
{
    ReportRow a;
    a.controller = controller;
    if (rows.empty()) {
        return a;
    }
    for (const auto& r : rows) {
        a.mean_abs_signal_pu += r.mean_abs_signal_pu;
        a.mean_abs_freq_hz += r.mean_abs_freq_hz;
        a.objective += r.objective;
        a.out_of_limit_pct += r.out_of_limit_pct;
    }
    const double m = double(rows.size());
    a.mean_abs_signal_pu /= m;
    a.mean_abs_freq_hz /= m;
    a.objective /= m;
    a.out_of_limit_pct /= m;
    return a;
}

double command_gap(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.empty()) {
        throw InputError("command_gap: sequences must be nonempty and equally long");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += std::abs(a[k] - b[k]);
        den += std::abs(b[k]);
    }
    if (den == 0.0) {
        return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return num / den;
}

void PiGrid::validate() const
{
    if (kp_steps < 1 || ki_steps < 1 || kp_lo < 0.0 || ki_lo < 0.0 || kp_hi < kp_lo || ki_hi < ki_lo) {
        throw InputError("PI grid: need nonnegative ordered ranges and at least one step");
    }
}

namespace {

std::vector<double> linspace(double lo, double hi, int steps)
{
    std::vector<double> v(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        v[static_cast<std::size_t>(i)] = steps == 1 ? lo : lo + (hi - lo) * double(i) / double(steps - 1);
    }
    return v;
}

} // namespace

std::vector<double> PiGrid::kp_values() const
{
    return linspace(kp_lo, kp_hi, kp_steps);
}

std::vector<double> PiGrid::ki_values() const
{
    return linspace(ki_lo, ki_hi, ki_steps);
}

PiTuning grid_argmin(const std::vector<double>& kp, const std::vector<double>& ki,
                     const std::function<double(double, double)>& score)
{
    PiTuning best;
    best.scores.resize(static_cast<Eigen::Index>(kp.size()), static_cast<Eigen::Index>(ki.size()));
    bool found = false;
    for (std::size_t a = 0; a < kp.size(); ++a) {
        for (std::size_t b = 0; b < ki.size(); ++b) {
            double s = score(kp[a], ki[b]);
            if (!std::isfinite(s)) {
                s = std::numeric_limits<double>::infinity();
            }
            best.scores(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = s;
            if (!std::isfinite(s)) {
                continue;
            }
            bool take = !found;
            if (found) {
                const double tie = 1e-12 * std::max(std::abs(s), std::abs(best.score));
                if (std::abs(s - best.score) <= tie) {
                    take = std::hypot(kp[a], ki[b]) < std::hypot(best.Kp, best.Ki);
                } else {
                    take = s < best.score;
                }
            }
            if (take) {
                best.Kp = kp[a];
                best.Ki = ki[b];
                best.score = s;
                found = true;
            }
        }
    }
    if (!found) {
        throw NumericalError("PI tuning: every grid point is unstable");
    }
    return best;
}

PiTuning tune_pi(const SystemModel& tuning_plant, const std::vector<PiecewiseLinear>& disturbances,
                 const PiGrid& grid, const ControlConfig& cfg, double bias_B, const LoopOptions& opts,
                 DiscretizationCache* cache)
{
    grid.validate();
    if (disturbances.empty()) {
        throw InputError("PI tuning: at least one disturbance is required");
    }
    auto score = [&](double kp, double ki) {
        PiController pi{kp, ki, bias_B, cfg.signal_lo_pu, cfg.signal_hi_pu, 0.0};
        double total = 0.0;
        for (const auto& d : disturbances) {
            const auto r = run_pi_loop(tuning_plant, pi, d, cfg.agc_period_s, opts, cache);
            if (r.unstable) {
                return std::numeric_limits<double>::infinity();
            }
            total += metrics(r, cfg, 1.0).objective;
        }
        return total / double(disturbances.size());
    };
    return grid_argmin(grid.kp_values(), grid.ki_values(), score);
}

std::vector<ExperimentCase> default_cases()
{
    return {{"low_inertia", 13.48, 0.0041}, {"mid_inertia", 17.74, 0.0105}, {"high_inertia", 20.00, 0.0174}};
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                      const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"controller", "mean_abs_signal_pu", "mean_abs_freq_hz", "objective", "out_of_limit_pct"});
    for (const auto& r : rows) {
        w.row({r.controller, format_double(r.mean_abs_signal_pu), format_double(r.mean_abs_freq_hz),
               format_double(r.objective), format_double(r.out_of_limit_pct)});
    }
}

void write_commands_csv(const std::filesystem::path& path, const LoopResult& r,
                        const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"t_s", "dP_R_pu", "delta_f_end_pu"});
    for (std::size_t k = 0; k < r.commands.size(); ++k) {
        w.row({r.command_times[k], r.commands[k], k < r.period_end_freq.size() ? r.period_end_freq[k] : 0.0});
    }
}

} // namespace agcdro
