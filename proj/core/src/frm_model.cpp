#include "agcdro/frm_model.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace agcdro {

using nlohmann::json;

std::string_view to_string(ViolationCode code)
{
    switch (code) {
    case ViolationCode::NonPositiveTimeConstant: return "NonPositiveTimeConstant";
    case ViolationCode::NonPositiveDroop: return "NonPositiveDroop";
    case ViolationCode::HpFractionOutOfRange: return "HpFractionOutOfRange";
    case ViolationCode::NegativeParticipation: return "NegativeParticipation";
    case ViolationCode::ParticipationNotNormalized: return "ParticipationNotNormalized";
    case ViolationCode::NonPositiveInertia: return "NonPositiveInertia";
    case ViolationCode::NegativeDamping: return "NegativeDamping";
    case ViolationCode::NonPositiveBase: return "NonPositiveBase";
    case ViolationCode::NegativeCapacity: return "NegativeCapacity";
    case ViolationCode::NonFinite: return "NonFinite";
    }
    return "Unknown";
}

namespace {

constexpr double kParticipationTol = 1e-9;

void check_positive(std::vector<Violation>& out, double v, ViolationCode code, const std::string& where)
{
    if (!std::isfinite(v)) {
        out.push_back({ViolationCode::NonFinite, where});
    } else if (v <= 0.0) {
        out.push_back({code, where});
    }
}

} // namespace

std::vector<Violation> validate_fleet(const Fleet& fleet)
{
    std::vector<Violation> out;
    check_positive(out, fleet.system_base_mva, ViolationCode::NonPositiveBase, "system_base_mva");
    check_positive(out, fleet.nominal_frequency_hz, ViolationCode::NonPositiveBase, "nominal_frequency_hz");

    double alpha_sum = 0.0;
    auto participation = [&](double a, const std::string& where) {
        if (!std::isfinite(a)) {
            out.push_back({ViolationCode::NonFinite, where + ".participation"});
        } else if (a < 0.0) {
            out.push_back({ViolationCode::NegativeParticipation, where});
        }
        alpha_sum += a;
    };

    for (const auto& u : fleet.reheat) {
        const std::string w = "reheat[" + u.id + "]";
        check_positive(out, u.governor_time, ViolationCode::NonPositiveTimeConstant, w + ".governor_time");
        check_positive(out, u.turbine_time, ViolationCode::NonPositiveTimeConstant, w + ".turbine_time");
        check_positive(out, u.reheater_time, ViolationCode::NonPositiveTimeConstant, w + ".reheater_time");
        check_positive(out, u.droop, ViolationCode::NonPositiveDroop, w + ".droop");
        if (!(u.hp_fraction >= 0.0 && u.hp_fraction <= 1.0)) {
            out.push_back({ViolationCode::HpFractionOutOfRange, w + ".hp_fraction"});
        }
        if (u.rated_mw < 0.0 || u.inertia_coeff < 0.0) {
            out.push_back({ViolationCode::NegativeCapacity, w});
        }
        if (u.online) {
            participation(u.participation, w);
        }
    }
    for (const auto& u : fleet.nonreheat) {
        const std::string w = "nonreheat[" + u.id + "]";
        check_positive(out, u.governor_time, ViolationCode::NonPositiveTimeConstant, w + ".governor_time");
        check_positive(out, u.turbine_time, ViolationCode::NonPositiveTimeConstant, w + ".turbine_time");
        check_positive(out, u.droop, ViolationCode::NonPositiveDroop, w + ".droop");
        if (u.rated_mw < 0.0 || u.inertia_coeff < 0.0) {
            out.push_back({ViolationCode::NegativeCapacity, w});
        }
        if (u.online) {
            participation(u.participation, w);
        }
    }
    for (const auto& u : fleet.bess) {
        const std::string w = "bess[" + u.id + "]";
        check_positive(out, u.converter_time, ViolationCode::NonPositiveTimeConstant, w + ".converter_time");
        check_positive(out, u.droop, ViolationCode::NonPositiveDroop, w + ".droop");
        if (u.power_mw < 0.0) {
            out.push_back({ViolationCode::NegativeCapacity, w});
        }
        participation(u.participation, w);
    }

    const bool any_online = state_dimension(fleet) > 1;
    if (any_online && std::abs(alpha_sum - 1.0) > kParticipationTol) {
        out.push_back({ViolationCode::ParticipationNotNormalized,
                       "sum of online participation factors = " + format_double(alpha_sum)});
    }
    return out;
}

std::vector<Violation> validate_model(const SystemModel& model)
{
    auto out = validate_fleet(model.fleet);
    if (!std::isfinite(model.inertia_H)) {
        out.push_back({ViolationCode::NonFinite, "inertia_H"});
    } else if (model.inertia_H <= 0.0) {
        out.push_back({ViolationCode::NonPositiveInertia, "inertia_H"});
    }
    if (!std::isfinite(model.damping_D)) {
        out.push_back({ViolationCode::NonFinite, "damping_D"});
    } else if (model.damping_D < 0.0) {
        out.push_back({ViolationCode::NegativeDamping, "damping_D"});
    }
    return out;
}

Eigen::Index state_dimension(const Fleet& fleet)
{
    Eigen::Index n = 1;
    for (const auto& u : fleet.reheat) {
        n += u.online ? 3 : 0;
    }
    for (const auto& u : fleet.nonreheat) {
        n += u.online ? 2 : 0;
    }
    return n + static_cast<Eigen::Index>(fleet.bess.size());
}

std::vector<std::string> state_names(const Fleet& fleet)
{
    std::vector<std::string> names{"df"};
    for (const auto& u : fleet.reheat) {
        if (u.online) {
            names.push_back(u.id + ".PM");
            names.push_back(u.id + ".PC");
            names.push_back(u.id + ".PG");
        }
    }
    for (const auto& u : fleet.nonreheat) {
        if (u.online) {
            names.push_back(u.id + ".PM");
            names.push_back(u.id + ".PG");
        }
    }
    for (const auto& u : fleet.bess) {
        names.push_back(u.id + ".PE");
    }
    return names;
}

StateSpace build_state_space(const SystemModel& model)
{
    const auto violations = validate_model(model);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "invalid system model:";
        for (const auto& v : violations) {
            msg << ' ' << to_string(v.code) << '(' << v.where << ')';
        }
        throw ModelError(msg.str());
    }

    const Eigen::Index n = state_dimension(model.fleet);
    StateSpace ss{Matrix::Zero(n, n), Matrix::Zero(n, 2)};
    const double two_h = 2.0 * model.inertia_H;
    ss.A(0, 0) = -model.damping_D / two_h;
    ss.B(0, 1) = -1.0 / two_h;

    Eigen::Index k = 1;
    for (const auto& u : model.fleet.reheat) {
        if (!u.online) {
            continue;
        }
        const double tg = u.governor_time, tc = u.turbine_time, tr = u.reheater_time, fh = u.hp_fraction;
        const Eigen::Index pm = k, pc = k + 1, pg = k + 2;
        ss.A(0, pm) = 1.0 / two_h;
        ss.A(pm, pm) = -1.0 / tr;
        ss.A(pm, pc) = (tc - fh * tr) / (tr * tc);
        ss.A(pm, pg) = fh / tc;
        ss.A(pc, pc) = -1.0 / tc;
        ss.A(pc, pg) = 1.0 / tc;
        ss.A(pg, pg) = -1.0 / tg;
        ss.A(pg, 0) = -1.0 / (tg * u.droop);
        ss.B(pg, 0) = u.participation / tg;
        k += 3;
    }
    for (const auto& u : model.fleet.nonreheat) {
        if (!u.online) {
            continue;
        }
        const double tg = u.governor_time, tc = u.turbine_time;
        const Eigen::Index pm = k, pg = k + 1;
        ss.A(0, pm) = 1.0 / two_h;
        ss.A(pm, pm) = -1.0 / tc;
        ss.A(pm, pg) = 1.0 / tc;
        ss.A(pg, pg) = -1.0 / tg;
        ss.A(pg, 0) = -1.0 / (tg * u.droop);
        ss.B(pg, 0) = u.participation / tg;
        k += 2;
    }
    for (const auto& u : model.fleet.bess) {
        const double tv = u.converter_time;
        ss.A(0, k) = 1.0 / two_h;
        ss.A(k, k) = model.fleet.bess_appendix_literal ? -1.0 / (u.droop * tv) : -1.0 / tv;
        ss.A(k, 0) = -1.0 / (u.droop * tv);
        ss.B(k, 0) = u.participation / tv;
        ++k;
    }
    return ss;
}

InertiaBound tg_inertia_lower_bound(const Fleet& fleet)
{
    double sum = 0.0;
    bool any = false;
    for (const auto& u : fleet.reheat) {
        if (u.online) {
            sum += u.inertia_coeff * u.rated_mw;
            any = true;
        }
    }
    for (const auto& u : fleet.nonreheat) {
        if (u.online) {
            sum += u.inertia_coeff * u.rated_mw;
            any = true;
        }
    }
    return {any ? sum / fleet.system_base_mva : 0.0, !any};
}

double frequency_stiffness(const Fleet& fleet, double damping_D)
{
    double s = damping_D;
    for (const auto& u : fleet.reheat) {
        s += u.online ? 1.0 / u.droop : 0.0;
    }
    for (const auto& u : fleet.nonreheat) {
        s += u.online ? 1.0 / u.droop : 0.0;
    }
    for (const auto& u : fleet.bess) {
        s += 1.0 / u.droop;
    }
    return s;
}

void CommitmentSchedule::set(int hour, const std::string& unit_id, bool online)
{
    if (hour < 0) {
        throw InputError("commitment hour must be non-negative");
    }
    table_[hour][unit_id] = online;
    period_ = std::max(period_, hour + 1);
}

bool CommitmentSchedule::online(int hour, const std::string& unit_id) const
{
    if (table_.empty()) {
        return true;
    }
    const int h = ((hour % period_) + period_) % period_;
    auto it = table_.find(h);
    if (it == table_.end()) {
        return true;
    }
    auto jt = it->second.find(unit_id);
    return jt == it->second.end() ? true : jt->second;
}

Fleet apply_commitment(const Fleet& fleet, const CommitmentSchedule& schedule, int hour)
{
    Fleet out = fleet;
    double total = 0.0;
    for (auto& u : out.reheat) {
        u.online = schedule.online(hour, u.id);
        total += u.online ? u.participation : 0.0;
    }
    for (auto& u : out.nonreheat) {
        u.online = schedule.online(hour, u.id);
        total += u.online ? u.participation : 0.0;
    }
    for (const auto& u : out.bess) {
        total += u.participation;
    }
    if (total > 0.0) {
        for (auto& u : out.reheat) {
            u.participation = u.online ? u.participation / total : 0.0;
        }
        for (auto& u : out.nonreheat) {
            u.participation = u.online ? u.participation / total : 0.0;
        }
        for (auto& u : out.bess) {
            u.participation /= total;
        }
    }
    return out;
}

namespace {

template <class T>
T required(const json& j, const char* key, const std::string& where)
{
    if (!j.contains(key)) {
        throw InputError(where + ": missing field '" + key + "'");
    }
    return j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw InputError(where + ": unknown field '" + it.key() + "'");
        }
    }
}

} // namespace

Fleet fleet_from_json(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("fleet JSON: ") + e.what());
    }
    reject_unknown(j, {"reheat", "nonreheat", "bess", "system_base_mva", "nominal_frequency_hz", "name",
                       "bess_appendix_literal"},
                   "fleet");
    Fleet f;
    f.system_base_mva = required<double>(j, "system_base_mva", "fleet");
    f.nominal_frequency_hz = j.value("nominal_frequency_hz", 50.0);
    f.bess_appendix_literal = j.value("bess_appendix_literal", false);
    try {
        for (const auto& u : j.value("reheat", json::array())) {
            const std::string w = "fleet.reheat";
            reject_unknown(u, {"id", "T_G", "T_C", "T_R", "F_H", "R", "alpha", "rated_mw", "inertia_s", "online"}, w);
            f.reheat.push_back({required<std::string>(u, "id", w), required<double>(u, "T_G", w),
                                required<double>(u, "T_C", w), required<double>(u, "T_R", w),
                                required<double>(u, "F_H", w), required<double>(u, "R", w),
                                required<double>(u, "alpha", w), u.value("rated_mw", 0.0),
                                u.value("inertia_s", 0.0), u.value("online", true)});
        }
        for (const auto& u : j.value("nonreheat", json::array())) {
            const std::string w = "fleet.nonreheat";
            reject_unknown(u, {"id", "T_G", "T_C", "R", "alpha", "rated_mw", "inertia_s", "online"}, w);
            f.nonreheat.push_back({required<std::string>(u, "id", w), required<double>(u, "T_G", w),
                                   required<double>(u, "T_C", w), required<double>(u, "R", w),
                                   required<double>(u, "alpha", w), u.value("rated_mw", 0.0),
                                   u.value("inertia_s", 0.0), u.value("online", true)});
        }
        for (const auto& u : j.value("bess", json::array())) {
            const std::string w = "fleet.bess";
            reject_unknown(u, {"id", "T_V", "R_V", "alpha", "power_mw"}, w);
            f.bess.push_back({required<std::string>(u, "id", w), required<double>(u, "T_V", w),
                              required<double>(u, "R_V", w), required<double>(u, "alpha", w),
                              u.value("power_mw", 0.0)});
        }
    } catch (const json::type_error& e) {
        throw InputError(std::string("fleet JSON: ") + e.what());
    }
    return f;
}

Fleet load_fleet(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open fleet file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return fleet_from_json(buf.str());
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

CommitmentSchedule load_schedule(const std::filesystem::path& path)
{
    const auto table = read_csv(path);
    const auto c_hour = table.column("hour");
    const auto c_unit = table.column("unit_id");
    const auto c_on = table.column("online");
    CommitmentSchedule s;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto on = table.integer(r, c_on);
        if (on != 0 && on != 1) {
            throw InputError(path.string() + ": row " + std::to_string(r + 1) + ", column 'online' must be 0 or 1");
        }
        s.set(static_cast<int>(table.integer(r, c_hour)), table.rows[r][c_unit], on == 1);
    }
    return s;
}

void write_schedule(const std::filesystem::path& path, const CommitmentSchedule& schedule,
                    const std::string& header_comment)
{
    std::vector<std::string> comments;
    if (!header_comment.empty()) {
        comments.push_back(header_comment);
    }
    CsvWriter w(path, comments);
    w.header({"hour", "unit_id", "online"});
    for (const auto& [hour, units] : schedule.table()) {
        for (const auto& [id, on] : units) {
            w.row({std::to_string(hour), id, on ? "1" : "0"});
        }
    }
}

std::uint64_t fingerprint(const StateSpace& ss)
{
    std::uint64_t h = fnv1a64({reinterpret_cast<const char*>(ss.A.data()),
                               static_cast<std::size_t>(ss.A.size()) * sizeof(double)});
    h = fnv1a64({reinterpret_cast<const char*>(ss.B.data()), static_cast<std::size_t>(ss.B.size()) * sizeof(double)},
                h);
    const auto n = static_cast<std::uint64_t>(ss.A.rows());
    return fnv1a64({reinterpret_cast<const char*>(&n), sizeof(n)}, h);
}

} // namespace agcdro
