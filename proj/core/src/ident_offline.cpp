#include "agcdro/ident_offline.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace agcdro {

std::vector<RampEvent> detect_ramp_events(std::span<const double> netload, double sample_period_s, double threshold,
                                          double window_s)
{
    if (!(threshold > 0.0) || !(sample_period_s > 0.0) || !(window_s > 0.0)) {
        throw InputError("detect_ramp_events: threshold, period and window must be positive");
    }
    const auto w = static_cast<std::size_t>(std::llround(window_s / sample_period_s));
    std::vector<RampEvent> events;
    if (w == 0 || netload.size() <= w) {
        return events;
    }
    auto qualifies = [&](std::size_t i) { return std::abs(netload[i + w] - netload[i]) > threshold; };

    std::size_t i = 0;
    const std::size_t last_start = netload.size() - 1 - w;
    while (i <= last_start) {
        if (!qualifies(i)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 <= last_start && qualifies(j + 1)) {
            ++j;
        }
        RampEvent ev;
        ev.event_id = static_cast<int>(events.size());
        ev.start_index = i;
        ev.end_index = j + w;
        ev.sample_period_s = sample_period_s;
        ev.start_time_s = double(i) * sample_period_s;
        ev.netload.assign(netload.begin() + static_cast<std::ptrdiff_t>(i),
                          netload.begin() + static_cast<std::ptrdiff_t>(j + w + 1));
        events.push_back(std::move(ev));
        i = j + w + 1;
    }
    return events;
}

TrueParams true_params_from_coefficients(double load_pu, const Fleet& fleet, double inertia_coeff,
                                         double damping_coeff)
{
    if (load_pu < 0.0) {
        throw InputError("sample_true_params: load must be non-negative");
    }
    return {tg_inertia_lower_bound(fleet).value + load_pu * inertia_coeff, load_pu * damping_coeff};
}

TrueParams sample_true_params(std::mt19937_64& rng, double load_pu, const Fleet& fleet,
                              const LoadParameterPrior& prior)
{
    auto truncated = [&rng](double mean, double stddev) {
        std::normal_distribution<double> dist(mean, stddev);
        for (;;) {
            const double v = dist(rng);
            if (v >= 0.0) {
                return v;
            }
        }
    };
    const double gh = truncated(prior.inertia_mean, prior.inertia_std);
    const double gd = truncated(prior.damping_mean, prior.damping_std);
    return true_params_from_coefficients(load_pu, fleet, gh, gd);
}

std::vector<double> primary_response(const Fleet& fleet, double H, double D, std::span<const double> netload,
                                     double sample_period_s)
{
    std::vector<double> out(netload.size(), 0.0);
    if (netload.empty()) {
        return out;
    }
    const auto ss = build_state_space(SystemModel{fleet, H, D});
    const auto dyn = discretize(ss, sample_period_s, DynamicsKind::Primary);
    Vector x = Vector::Zero(ss.n());
    const double base = netload[0];
    for (std::size_t k = 0; k + 1 < netload.size(); ++k) {
        x = step_state(dyn, x, {0.0, netload[k] - base, netload[k + 1] - base});
        out[k + 1] = x(0);
    }
    return out;
}

IdentBox default_box(const Fleet& fleet, const IdentOptions& opts)
{
    if (opts.box) {
        return *opts.box;
    }
    const double lo = std::max(tg_inertia_lower_bound(fleet).value, 0.1);
    return {lo, lo + opts.H_span, 0.0, 0.05};
}

IdentProblem::IdentProblem(const RampEvent& event, const Fleet& fleet, double window_s)
    : fleet_(fleet), period_(event.sample_period_s)
{
    if (event.netload.size() != event.freq.size()) {
        throw InputError("identify: netload and frequency series differ in length");
    }
    const auto window_steps = static_cast<std::size_t>(std::floor(window_s / period_ + 1e-9));
    const std::size_t K = std::min(window_steps, event.netload.size() - 1);
    if (event.netload.empty() || K < 10) {
        throw InputError("identify: event " + std::to_string(event.event_id) +
                         " has fewer than 10 samples inside the window");
    }
    input_.resize(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        input_[k] = event.netload[k] - event.netload[0];
    }
    measured_.resize(static_cast<Eigen::Index>(K));
    for (std::size_t k = 1; k <= K; ++k) {
        measured_(static_cast<Eigen::Index>(k - 1)) = event.freq[k];
    }
}

Vector IdentProblem::residual(double H, double D) const
{
    const auto ss = build_state_space(SystemModel{fleet_, H, D});
    const auto dyn = discretize(ss, period_, DynamicsKind::Primary);
    Vector x = Vector::Zero(ss.n());
    Vector r(measured_.size());
    for (Eigen::Index k = 0; k < measured_.size(); ++k) {
        const auto i = static_cast<std::size_t>(k);
        x = step_state(dyn, x, {0.0, input_[i], input_[i + 1]});
        r(k) = x(0) - measured_(k);
    }
    return r;
}

double IdentProblem::objective(double H, double D) const
{
    return residual(H, D).squaredNorm();
}

namespace {

struct Descent {
    std::array<double, 2> p{};  // scaled coordinates in [0,1]^2
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

Descent projected_gauss_newton(const IdentProblem& prob, const IdentBox& box, std::array<double, 2> p0, double f0,
                               int max_iter)
{
    const std::array<double, 2> lo{box.H_lo, box.D_lo};
    const std::array<double, 2> span{box.H_hi - box.H_lo, box.D_hi - box.D_lo};
    auto to_phys = [&](const std::array<double, 2>& p) {
        return std::array<double, 2>{lo[0] + p[0] * span[0], lo[1] + p[1] * span[1]};
    };
    auto res = [&](const std::array<double, 2>& p) {
        const auto q = to_phys(p);
        return prob.residual(q[0], q[1]);
    };

    Descent d{p0, f0, 0, false};
    Vector r = res(d.p);
    double lambda = 1e-6;
    constexpr double h = 1e-6;

    for (int it = 0; it < max_iter; ++it) {
        d.iterations = it + 1;
        Eigen::Matrix<double, Eigen::Dynamic, 2> J(r.size(), 2);
        for (int c = 0; c < 2; ++c) {
            auto pp = d.p, pm = d.p;
            double hp = h, hm = h;
            // One-sided near the faces of the box.
            if (pp[c] + h > 1.0) {
                hp = 0.0;
            }
            if (pm[c] - h < 0.0) {
                hm = 0.0;
            }
            pp[c] += hp;
            pm[c] -= hm;
            J.col(c) = (res(pp) - res(pm)) / (hp + hm);
        }
        const Eigen::Vector2d g = J.transpose() * r;

        // Freeze coordinates sitting on a face whose descent direction points outward.
        std::array<bool, 2> free{true, true};
        for (int c = 0; c < 2; ++c) {
            if ((d.p[c] <= 0.0 && g(c) > 0.0) || (d.p[c] >= 1.0 && g(c) < 0.0)) {
                free[c] = false;
            }
        }
        double pg = 0.0;
        for (int c = 0; c < 2; ++c) {
            pg = std::max(pg, free[c] ? std::abs(g(c)) : 0.0);
        }
        if (pg <= 1e-30 || d.f <= 1e-32) {
            d.converged = true;
            break;
        }

        const Eigen::Matrix2d JtJ = J.transpose() * J;
        bool accepted = false;
        double step_norm = 0.0;
        for (int tries = 0; tries < 30; ++tries) {
            Eigen::Matrix2d M = JtJ;
            Eigen::Vector2d rhs = -g;
            for (int c = 0; c < 2; ++c) {
                M(c, c) += lambda * std::max(JtJ(c, c), 1e-300);
                if (!free[c]) {
                    M.row(c).setZero();
                    M.col(c).setZero();
                    M(c, c) = 1.0;
                    rhs(c) = 0.0;
                }
            }
            const Eigen::Vector2d delta = M.ldlt().solve(rhs);
            std::array<double, 2> cand{std::clamp(d.p[0] + delta(0), 0.0, 1.0),
                                       std::clamp(d.p[1] + delta(1), 0.0, 1.0)};
            const Vector rc = res(cand);
            const double fc = rc.squaredNorm();
            if (fc < d.f) {
                step_norm = std::hypot(cand[0] - d.p[0], cand[1] - d.p[1]);
                const double decrease = d.f - fc;
                d.p = cand;
                r = rc;
                d.f = fc;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (step_norm < 1e-12 || decrease <= 1e-14 * fc) {
                    d.converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            // No decrease possible along any damped direction: a stationary point at
            // working precision.
            d.converged = true;
            break;
        }
        if (d.converged) {
            break;
        }
    }
    return d;
}

} // namespace

IdentResult identify(const RampEvent& event, const Fleet& fleet, const IdentOptions& opts)
{
    const IdentBox box = default_box(fleet, opts);
    if (!(box.H_hi > box.H_lo) || !(box.D_hi > box.D_lo) || box.H_lo <= 0.0) {
        throw InputError("identify: empty or non-positive search box");
    }
    const IdentProblem prob(event, fleet, opts.window_s);

    const int g = std::max(opts.grid, 1);
    struct GridPoint {
        std::array<double, 2> p;
        double f;
    };
    std::vector<GridPoint> grid;
    grid.reserve(static_cast<std::size_t>(g * g));
    for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
            const std::array<double, 2> p{(i + 0.5) / g, (j + 0.5) / g};
            const double f = prob.objective(box.H_lo + p[0] * (box.H_hi - box.H_lo),
                                            box.D_lo + p[1] * (box.D_hi - box.D_lo));
            grid.push_back({p, f});
        }
    }
    std::stable_sort(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.f < b.f; });

    Descent best{grid.front().p, grid.front().f, 0, false};
    int total_iter = 0;
    const int starts = std::min<int>(std::max(opts.descents, 1), static_cast<int>(grid.size()));
    for (int s = 0; s < starts; ++s) {
        const auto d = projected_gauss_newton(prob, box, grid[static_cast<std::size_t>(s)].p,
                                              grid[static_cast<std::size_t>(s)].f, opts.max_iter);
        total_iter += d.iterations;
        if (d.f < best.f || (d.f == best.f && d.converged && !best.converged)) {
            best = d;
        }
    }

    IdentResult out;
    out.H_hat = box.H_lo + best.p[0] * (box.H_hi - box.H_lo);
    out.D_hat = box.D_lo + best.p[1] * (box.D_hi - box.D_lo);
    out.objective = best.f;
    out.residual_rmse = std::sqrt(best.f / double(prob.samples()));
    out.iterations = total_iter;
    out.converged = best.converged;
    return out;
}

void write_events_csv(const std::filesystem::path& path, const std::vector<RampEvent>& events,
                      const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"event_id", "t_s", "netload_pu", "delta_f_pu"});
    for (const auto& ev : events) {
        for (std::size_t k = 0; k < ev.netload.size(); ++k) {
            w.row({std::to_string(ev.event_id), format_double(double(k) * ev.sample_period_s),
                   format_double(ev.netload[k]), format_double(k < ev.freq.size() ? ev.freq[k] : 0.0)});
        }
    }
}

void write_events_meta_csv(const std::filesystem::path& path, const std::vector<RampEvent>& events,
                           const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"event_id", "start_index", "start_t_s", "hour", "load_pu", "renew_pu", "sample_period_s", "true_H",
              "true_D"});
    for (const auto& ev : events) {
        w.row({std::to_string(ev.event_id), std::to_string(ev.start_index), format_double(ev.start_time_s),
               std::to_string(ev.hour), format_double(ev.load_pu), format_double(ev.renew_pu),
               format_double(ev.sample_period_s), ev.true_H ? format_double(*ev.true_H) : "",
               ev.true_D ? format_double(*ev.true_D) : ""});
    }
}

std::vector<RampEvent> read_events(const std::filesystem::path& trace_csv, const std::filesystem::path& meta_csv)
{
    const auto meta = read_csv(meta_csv);
    std::vector<RampEvent> events;
    std::map<int, std::size_t> index;
    const auto c_id = meta.column("event_id"), c_start = meta.column("start_index"), c_t = meta.column("start_t_s"),
               c_hour = meta.column("hour"), c_load = meta.column("load_pu"), c_ren = meta.column("renew_pu"),
               c_T = meta.column("sample_period_s"), c_H = meta.column("true_H"), c_D = meta.column("true_D");
    for (std::size_t r = 0; r < meta.rows.size(); ++r) {
        RampEvent ev;
        ev.event_id = static_cast<int>(meta.integer(r, c_id));
        ev.start_index = static_cast<std::size_t>(meta.integer(r, c_start));
        ev.start_time_s = meta.number(r, c_t);
        ev.hour = static_cast<int>(meta.integer(r, c_hour));
        ev.load_pu = meta.number(r, c_load);
        ev.renew_pu = meta.number(r, c_ren);
        ev.sample_period_s = meta.number(r, c_T);
        if (!meta.rows[r][c_H].empty()) {
            ev.true_H = meta.number(r, c_H);
        }
        if (!meta.rows[r][c_D].empty()) {
            ev.true_D = meta.number(r, c_D);
        }
        index[ev.event_id] = events.size();
        events.push_back(std::move(ev));
    }
    const auto trace = read_csv(trace_csv);
    const auto t_id = trace.column("event_id"), t_nl = trace.column("netload_pu"), t_df = trace.column("delta_f_pu");
    for (std::size_t r = 0; r < trace.rows.size(); ++r) {
        const int id = static_cast<int>(trace.integer(r, t_id));
        auto it = index.find(id);
        if (it == index.end()) {
            throw InputError(trace_csv.string() + ": row " + std::to_string(r + 1) + ": event_id " +
                             std::to_string(id) + " not present in " + meta_csv.string());
        }
        auto& ev = events[it->second];
        ev.netload.push_back(trace.number(r, t_nl));
        ev.freq.push_back(trace.number(r, t_df));
    }
    for (auto& ev : events) {
        if (!ev.netload.empty()) {
            ev.end_index = ev.start_index + ev.netload.size() - 1;
        }
    }
    return events;
}

void write_ident_results_csv(const std::filesystem::path& path, const std::vector<IdentRecord>& records,
                             const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"event_id", "H_hat", "D_hat", "rmse", "converged", "true_H", "true_D"});
    for (const auto& rec : records) {
        w.row({std::to_string(rec.event_id), format_double(rec.result.H_hat), format_double(rec.result.D_hat),
               format_double(rec.result.residual_rmse), rec.result.converged ? "1" : "0",
               rec.true_H ? format_double(*rec.true_H) : "", rec.true_D ? format_double(*rec.true_D) : ""});
    }
}

std::vector<IdentRecord> read_ident_results(const std::filesystem::path& path)
{
    const auto t = read_csv(path);
    const auto c_id = t.column("event_id"), c_H = t.column("H_hat"), c_D = t.column("D_hat"), c_r = t.column("rmse"),
               c_c = t.column("converged"), c_tH = t.column("true_H"), c_tD = t.column("true_D");
    std::vector<IdentRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        IdentRecord rec;
        rec.event_id = static_cast<int>(t.integer(r, c_id));
        rec.result.H_hat = t.number(r, c_H);
        rec.result.D_hat = t.number(r, c_D);
        rec.result.residual_rmse = t.number(r, c_r);
        rec.result.converged = t.integer(r, c_c) != 0;
        if (!t.rows[r][c_tH].empty()) {
            rec.true_H = t.number(r, c_tH);
        }
        if (!t.rows[r][c_tD].empty()) {
            rec.true_D = t.number(r, c_tD);
        }
        out.push_back(rec);
    }
    return out;
}

} // namespace agcdro
