#include "agcdro/dro_mpc.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace agcdro {

namespace {

constexpr double kBoxEps = 1e-12;

// When the weight box pins a single probability vector, returns it.
bool singleton_weights(const AmbiguitySet& amb, std::vector<double>& w)
{
    std::vector<double> lo, hi;
    amb.box(lo, hi);
    const double sl = std::accumulate(lo.begin(), lo.end(), 0.0);
    const double sh = std::accumulate(hi.begin(), hi.end(), 0.0);
    if (sh <= 1.0 + kBoxEps) {
        w = hi;
        return true;
    }
    if (sl >= 1.0 - kBoxEps) {
        w = lo;
        return true;
    }
    return false;
}

} // namespace

void AmbiguitySet::box(std::vector<double>& lo, std::vector<double>& hi) const
{
    const auto J = omega0.size();
    lo.resize(J);
    hi.resize(J);
    double sl = 0.0, sh = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        lo[j] = std::max(omega0[j] + eta_min, 0.0);
        hi[j] = omega0[j] + eta_max;
        if (hi[j] < lo[j]) {
            throw InfeasibleAmbiguity("ambiguity set: weight box of scenario " + std::to_string(j) + " is empty");
        }
        sl += lo[j];
        sh += hi[j];
    }
    if (sl > 1.0 + 1e-12 || sh < 1.0 - 1e-12) {
        throw InfeasibleAmbiguity("ambiguity set: the weight box cannot contain a probability vector (sum of "
                                  "lower ends " + std::to_string(sl) + ", upper ends " + std::to_string(sh) + ")");
    }
}

void AmbiguitySet::validate() const
{
    const auto J = omega0.size();
    if (J == 0 || H.size() != J || D.size() != J) {
        throw InputError("ambiguity set: scenario arrays must be nonempty and equally long");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        if (!(omega0[j] >= 0.0) || !(H[j] > 0.0) || !(D[j] >= 0.0) || !std::isfinite(H[j]) || !std::isfinite(D[j])) {
            throw InputError("ambiguity set: scenario " + std::to_string(j) + " has invalid weight or parameters");
        }
        s += omega0[j];
    }
    if (std::abs(s - 1.0) > 1e-9) {
        throw InputError("ambiguity set: nominal weights must sum to 1");
    }
    if (eta_min > 0.0 || eta_max < 0.0 || !std::isfinite(eta_min) || !std::isfinite(eta_max)) {
        throw InputError("ambiguity set: need eta_min <= 0 <= eta_max");
    }
    std::vector<double> lo, hi;
    box(lo, hi);
}

std::string to_string(ScenarioPairing p)
{
    return p == ScenarioPairing::Comonotonic ? "comonotonic" : "independent_grid";
}

std::string to_string(RiskSplit r)
{
    return r == RiskSplit::Literal ? "literal" : "bonferroni";
}

ScenarioPairing pairing_from_string(const std::string& s)
{
    if (s == "comonotonic") {
        return ScenarioPairing::Comonotonic;
    }
    if (s == "independent_grid") {
        return ScenarioPairing::IndependentGrid;
    }
    throw InputError("unknown scenario pairing '" + s + "' (comonotonic | independent_grid)");
}

RiskSplit risk_split_from_string(const std::string& s)
{
    if (s == "literal") {
        return RiskSplit::Literal;
    }
    if (s == "bonferroni") {
        return RiskSplit::Bonferroni;
    }
    throw InputError("unknown risk split '" + s + "' (literal | bonferroni)");
}

AmbiguitySet build_ambiguity(const QuantileForecast& f, const CalibrationReport& report, ScenarioPairing pairing)
{
    if (f.H.empty() || f.H.size() != f.D.size()) {
        throw InputError("build_ambiguity: forecast must carry equally many H and D quantiles");
    }
    AmbiguitySet amb;
    auto push = [&amb](double H, double D) {
        amb.H.push_back(std::max(H, 1e-6));
        amb.D.push_back(std::max(D, 0.0));
    };
    if (pairing == ScenarioPairing::Comonotonic) {
        for (std::size_t j = 0; j < f.H.size(); ++j) {
            push(f.H[j], f.D[j]);
        }
    } else {
        // Mean of each decile bin, then the 10 x 10 product.
        const std::size_t bins = 10;
        const std::size_t per = f.H.size() / bins;
        if (per == 0) {
            throw InputError("build_ambiguity: independent grid needs at least 10 quantiles");
        }
        std::vector<double> hb(bins), db(bins);
        for (std::size_t b = 0; b < bins; ++b) {
            double sh = 0.0, sd = 0.0;
            for (std::size_t k = 0; k < per; ++k) {
                sh += f.H[b * per + k];
                sd += f.D[b * per + k];
            }
            hb[b] = sh / double(per);
            db[b] = sd / double(per);
        }
        for (std::size_t a = 0; a < bins; ++a) {
            for (std::size_t b = 0; b < bins; ++b) {
                push(hb[a], db[b]);
            }
        }
    }
    amb.omega0.assign(amb.H.size(), 1.0 / double(amb.H.size()));
    amb.eta_max = report.eta_max;
    amb.eta_min = report.eta_min;
    amb.validate();
    return amb;
}

WorstCase inner_worstcase_expectation(std::span<const double> costs, const AmbiguitySet& amb)
{
    const auto J = amb.size();
    if (costs.size() != J) {
        throw InputError("inner_worstcase_expectation: cost count does not match the scenario count");
    }
    for (double c : costs) {
        if (!std::isfinite(c)) {
            throw InputError("inner_worstcase_expectation: non-finite cost");
        }
    }
    std::vector<double> lo, hi;
    amb.box(lo, hi);
    WorstCase wc;
    wc.omega = lo;
    double remaining = 1.0 - std::accumulate(lo.begin(), lo.end(), 0.0);
    std::vector<std::size_t> order(J);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return costs[a] > costs[b]; });
    for (auto j : order) {
        if (remaining <= 0.0) {
            break;
        }
        const double add = std::min(hi[j] - lo[j], remaining);
        wc.omega[j] += add;
        remaining -= add;
    }
    for (std::size_t j = 0; j < J; ++j) {
        wc.value += wc.omega[j] * costs[j];
    }
    return wc;
}

void ControlConfig::validate() const
{
    auto fail = [](const std::string& m) { throw InputError("control config: " + m); };
    if (!(agc_period_s > 0.0) || horizon < 1) {
        fail("agc period must be positive and horizon at least 1");
    }
    if (!(freq_lo_pu < 0.0 && 0.0 < freq_hi_pu) || !std::isfinite(freq_lo_pu) || !std::isfinite(freq_hi_pu)) {
        fail("frequency bounds must be finite with lower < 0 < upper");
    }
    if (!(signal_lo_pu < signal_hi_pu) || !std::isfinite(signal_lo_pu) || !std::isfinite(signal_hi_pu)) {
        fail("signal bounds must be finite and ordered");
    }
    if (!(beta > 0.5 && beta < 1.0)) {
        fail("beta must lie in (0.5, 1)");
    }
    if (cost_R < 0.0 || cost_f < 0.0 || !(fallback_penalty > 0.0)) {
        fail("costs must be nonnegative and the fallback penalty positive");
    }
}

double ControlConfig::cvar_divisor() const
{
    return risk_split == RiskSplit::Literal ? 1.0 - beta / 2.0 : (1.0 - beta) / 2.0;
}

std::vector<std::shared_ptr<const DiscreteDynamics>> scenario_dynamics(const Fleet& fleet, const AmbiguitySet& amb,
                                                                       double period, DiscretizationCache* cache)
{
    std::vector<std::shared_ptr<const DiscreteDynamics>> out;
    out.reserve(amb.size());
    for (std::size_t j = 0; j < amb.size(); ++j) {
        const auto ss = build_state_space(SystemModel{fleet, amb.H[j], amb.D[j]});
        if (cache) {
            out.push_back(cache->get(ss, period, DynamicsKind::Agc));
        } else {
            out.push_back(std::make_shared<const DiscreteDynamics>(discretize(ss, period, DynamicsKind::Agc)));
        }
    }
    return out;
}

CondensedDynamics condense(const std::vector<std::shared_ptr<const DiscreteDynamics>>& dyn, const Vector& x0,
                           std::span<const double> netload, int horizon)
{
    if (horizon < 1 || netload.size() != static_cast<std::size_t>(horizon) + 1) {
        throw InputError("condense: netload forecast must have horizon + 1 knots");
    }
    const auto J = static_cast<Eigen::Index>(dyn.size());
    const Eigen::Index Z = horizon;
    CondensedDynamics cd;
    cd.free.resize(J, Z);
    cd.gain.assign(dyn.size(), Matrix::Zero(Z, Z));
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto& d = *dyn[static_cast<std::size_t>(j)];
        if (d.kind != DynamicsKind::Agc || d.n() != x0.size()) {
            throw InputError("condense: scenario dynamics must be AGC kind and match the state dimension");
        }
        Vector x = x0;
        for (Eigen::Index z = 0; z < Z; ++z) {
            x = step_state(d, x, {0.0, netload[static_cast<std::size_t>(z)], netload[static_cast<std::size_t>(z + 1)]});
            cd.free(j, z) = x(0);
        }
        auto& G = cd.gain[static_cast<std::size_t>(j)];
        for (Eigen::Index k = 0; k < Z; ++k) {
            Vector v = d.step_R;
            for (Eigen::Index z = k; z < Z; ++z) {
                G(z, k) = v(0);
                if (z + 1 < Z) {
                    v = d.A_d * v;
                }
            }
        }
    }
    return cd;
}

DualObjectiveBlock dualize_objective(QcqpBuilder& b, const AmbiguitySet& amb,
                                     const std::vector<std::vector<std::pair<AffineExpr, double>>>& costs,
                                     const std::string& prefix)
{
    const auto J = static_cast<Eigen::Index>(amb.size());
    if (static_cast<Eigen::Index>(costs.size()) != J) {
        throw InputError("dualize_objective: one cost per scenario required");
    }
    DualObjectiveBlock blk;
    std::vector<double> w;
    if (singleton_weights(amb, w)) {
        // Only one weight vector: the inner maximum is the plain weighted sum.
        blk.mu_lo = b.add_block(prefix + "_mu_lo", J, 0.0, 0.0);
        blk.mu_hi = b.add_block(prefix + "_mu_hi", J, -kInf, kInf);
        blk.v = b.add_block(prefix + "_v", 1, 0.0, 0.0);
        for (Eigen::Index j = 0; j < J; ++j) {
            const double wj = w[static_cast<std::size_t>(j)];
            if (wj <= 0.0) {
                b.add_eq(AffineExpr{}.add(blk.mu_hi + j, 1.0));
                continue;
            }
            blk.objective.add(blk.mu_hi + j, wj);
            b.add_quad_le(costs[static_cast<std::size_t>(j)], AffineExpr{}.add(blk.mu_hi + j, -1.0),
                          prefix + "_epi_" + std::to_string(j));
        }
        return blk;
    }
    blk.mu_lo = b.add_block(prefix + "_mu_lo", J, -kInf, 0.0);
    blk.mu_hi = b.add_block(prefix + "_mu_hi", J, 0.0, kInf);
    blk.v = b.add_block(prefix + "_v", 1);
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto k = static_cast<std::size_t>(j);
        blk.objective.add(blk.mu_lo + j, amb.omega0[k] + amb.eta_min);
        blk.objective.add(blk.mu_hi + j, amb.omega0[k] + amb.eta_max);
        AffineExpr lin;
        lin.add(blk.mu_lo + j, -1.0).add(blk.mu_hi + j, -1.0).add(blk.v, -1.0);
        b.add_quad_le(costs[k], lin, prefix + "_epi_" + std::to_string(j));
    }
    blk.objective.add(blk.v, 1.0);
    return blk;
}

CvarBlock add_cvar_block(QcqpBuilder& b, const AmbiguitySet& amb, const std::vector<AffineExpr>& loss, double k,
                         const std::string& prefix)
{
    const auto J = static_cast<Eigen::Index>(amb.size());
    if (static_cast<Eigen::Index>(loss.size()) != J || !(k > 0.0)) {
        throw InputError("add_cvar_block: one loss per scenario and a positive divisor required");
    }
    CvarBlock blk;
    blk.delta = b.add_block(prefix + "_delta", 1);
    blk.theta = b.add_block(prefix + "_theta", J, 0.0, kInf);
    auto epigraph = [&](Eigen::Index j) {
        // (L_j - delta) / k - theta_j <= 0
        AffineExpr e = (1.0 / k) * loss[static_cast<std::size_t>(j)];
        e.add(blk.delta, -1.0 / k).add(blk.theta + j, -1.0);
        b.add_le(e);
    };
    std::vector<double> w;
    if (singleton_weights(amb, w)) {
        blk.h_lo = blk.h_hi = blk.lambda = -1;
        blk.lhs.add(blk.delta, 1.0);
        for (Eigen::Index j = 0; j < J; ++j) {
            const double wj = w[static_cast<std::size_t>(j)];
            if (wj <= 0.0) {
                b.add_eq(AffineExpr{}.add(blk.theta + j, 1.0));
                continue;
            }
            blk.lhs.add(blk.theta + j, wj);
            epigraph(j);
        }
        return blk;
    }
    blk.h_lo = b.add_block(prefix + "_h_lo", J, -kInf, 0.0);
    blk.h_hi = b.add_block(prefix + "_h_hi", J, 0.0, kInf);
    blk.lambda = b.add_block(prefix + "_lambda", 1);
    blk.lhs.add(blk.lambda, 1.0).add(blk.delta, 1.0);
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto s = static_cast<std::size_t>(j);
        blk.lhs.add(blk.h_lo + j, amb.omega0[s] + amb.eta_min);
        blk.lhs.add(blk.h_hi + j, amb.omega0[s] + amb.eta_max);
        // theta_j - h_lo_j - h_hi_j - lambda <= 0
        b.add_le(AffineExpr{}.add(blk.theta + j, 1.0).add(blk.h_lo + j, -1.0).add(blk.h_hi + j, -1.0).add(blk.lambda, -1.0));
        epigraph(j);
    }
    return blk;
}

double worstcase_cvar_enumerated(std::span<const double> loss, const AmbiguitySet& amb, double k)
{
    if (loss.size() != amb.size() || loss.empty() || !(k > 0.0)) {
        throw InputError("worstcase_cvar_enumerated: shape mismatch or bad divisor");
    }
    double best = kInf;
    std::vector<double> excess(loss.size());
    for (double delta : loss) {
        for (std::size_t j = 0; j < loss.size(); ++j) {
            excess[j] = std::max(loss[j] - delta, 0.0);
        }
        best = std::min(best, delta + inner_worstcase_expectation(excess, amb).value / k);
    }
    return best;
}

CvarConstraintSet cvar_chance_constraints(QcqpBuilder& b, const AmbiguitySet& amb, const ControlConfig& cfg,
                                          const std::vector<std::vector<AffineExpr>>& freq, bool relax)
{
    cfg.validate();
    const auto J = amb.size();
    if (freq.size() != J) {
        throw InputError("cvar_chance_constraints: one frequency trajectory per scenario required");
    }
    const auto Z = static_cast<std::size_t>(cfg.horizon);
    const double k = cfg.cvar_divisor();
    CvarConstraintSet out;
    if (relax) {
        const auto s = b.add_block("cvar_slack", static_cast<Eigen::Index>(2 * Z), 0.0, kInf);
        for (std::size_t i = 0; i < 2 * Z; ++i) {
            out.slack.push_back(s + static_cast<Eigen::Index>(i));
        }
    }
    for (std::size_t z = 0; z < Z; ++z) {
        std::vector<AffineExpr> lo(J), hi(J);
        for (std::size_t j = 0; j < J; ++j) {
            if (freq[j].size() != Z) {
                throw InputError("cvar_chance_constraints: frequency trajectory length differs from the horizon");
            }
            lo[j] = AffineExpr{{}, cfg.freq_lo_pu} - freq[j][z];
            hi[j] = freq[j][z] - AffineExpr{{}, cfg.freq_hi_pu};
        }
        auto bl = add_cvar_block(b, amb, lo, k, "cvar_lo_" + std::to_string(z + 1));
        auto bh = add_cvar_block(b, amb, hi, k, "cvar_hi_" + std::to_string(z + 1));
        AffineExpr cl = bl.lhs, ch = bh.lhs;
        if (relax) {
            cl.add(out.slack[2 * z], -1.0);
            ch.add(out.slack[2 * z + 1], -1.0);
        }
        b.add_le(cl);
        b.add_le(ch);
        out.lower.push_back(std::move(bl));
        out.upper.push_back(std::move(bh));
    }
    return out;
}

QcqpProblem assemble_p5(const CondensedDynamics& cd, const AmbiguitySet& amb, const ControlConfig& cfg, bool relax,
                        P5Layout* layout)
{
    cfg.validate();
    amb.validate();
    const auto J = static_cast<std::size_t>(cd.scenarios());
    const auto Z = cd.horizon();
    if (J != amb.size() || Z != cfg.horizon) {
        throw InputError("assemble_p5: condensed dynamics do not match the ambiguity set or horizon");
    }
    QcqpBuilder b;
    P5Layout lay;
    lay.u = b.add_block("u", Z, cfg.signal_lo_pu, cfg.signal_hi_pu);

    std::vector<std::vector<AffineExpr>> freq(J, std::vector<AffineExpr>(static_cast<std::size_t>(Z)));
    std::vector<std::vector<std::pair<AffineExpr, double>>> costs(J);
    for (std::size_t j = 0; j < J; ++j) {
        const auto& G = cd.gain[j];
        for (Eigen::Index z = 0; z < Z; ++z) {
            AffineExpr e{{}, cd.free(static_cast<Eigen::Index>(j), z)};
            for (Eigen::Index k = 0; k <= z; ++k) {
                if (G(z, k) != 0.0) {
                    e.add(lay.u + k, G(z, k));
                }
            }
            freq[j][static_cast<std::size_t>(z)] = e;
            costs[j].emplace_back(e, cfg.cost_f);
        }
    }
    for (Eigen::Index z = 0; z < Z; ++z) {
        b.add_objective_square(AffineExpr{}.add(lay.u + z, 1.0), cfg.cost_R);
    }
    lay.objective = dualize_objective(b, amb, costs, "dual");
    b.add_objective(lay.objective.objective);
    lay.cvar = cvar_chance_constraints(b, amb, cfg, freq, relax);
    for (auto s : lay.cvar.slack) {
        b.add_objective(AffineExpr{}.add(s, cfg.fallback_penalty));
    }
    if (layout) {
        *layout = lay;
    }
    return b.build();
}

ControlDecision control_step(const Vector& x0, std::span<const double> netload_forecast,
                             const QuantileForecast& forecast, const CalibrationReport& report,
                             const ControlConfig& cfg, const Fleet& fleet, const ControlContext& ctx)
{
    return control_step(x0, netload_forecast, build_ambiguity(forecast, report, cfg.pairing), cfg, fleet, ctx);
}

ControlDecision control_step(const Vector& x0, std::span<const double> netload_forecast, const AmbiguitySet& amb,
                             const ControlConfig& cfg, const Fleet& fleet, const ControlContext& ctx)
{
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const auto dyn = scenario_dynamics(fleet, amb, cfg.agc_period_s, ctx.cache);
    const auto cd = condense(dyn, x0, netload_forecast, cfg.horizon);

    ControlDecision dec;
    P5Layout lay;
    auto p = assemble_p5(cd, amb, cfg, false, &lay);
    if (ctx.dump_problem) {
        save_qcqp(*ctx.dump_problem, p);
    }
    auto sol = solve(p, cfg.solver);
    if (sol.status != QcqpStatus::Optimal) {
        dec.feasible = false;
        dec.alert = "chance constraints relaxed (" + to_string(sol.status) + ")";
        p = assemble_p5(cd, amb, cfg, true, &lay);
        sol = solve(p, cfg.solver);
        if (sol.status != QcqpStatus::Optimal) {
            dec.alert += "; relaxed problem " + to_string(sol.status) + ", best iterate used";
        }
    }
    dec.status = sol.status;
    dec.horizon = sol.x.segment(lay.u, cfg.horizon).cwiseMax(cfg.signal_lo_pu).cwiseMin(cfg.signal_hi_pu);
    dec.dP_R = dec.horizon(0);
    dec.objective = sol.objective;

    std::vector<double> cost(amb.size());
    for (std::size_t j = 0; j < amb.size(); ++j) {
        cost[j] = cfg.cost_f * cd.freq(static_cast<Eigen::Index>(j), dec.horizon).squaredNorm();
    }
    dec.worstcase_expectation = inner_worstcase_expectation(cost, amb).value;
    dec.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return dec;
}

void write_control_log_csv(const std::filesystem::path& path, const std::vector<ControlLogRow>& rows,
                           const std::vector<std::string>& comments, bool include_timing)
{
    CsvWriter w(path, comments);
    w.header({"step", "t_s", "dPR_applied_pu", "objective", "solve_ms", "feasible", "worstcase_expectation"});
    for (const auto& r : rows) {
        const auto& d = r.decision;
        w.row({std::to_string(r.step), format_double(r.t_s), format_double(d.dP_R), format_double(d.objective),
               include_timing ? format_double(std::round(d.solve_ms * 1000.0) / 1000.0) : "",
               d.feasible ? "1" : "0", format_double(d.worstcase_expectation)});
    }
}

} // namespace agcdro
