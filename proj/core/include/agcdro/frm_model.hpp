#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace agcdro {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// All powers are per unit on the fleet's system base; frequency deviation is
// per unit of nominal frequency.

struct ReheatTurbineParams {
    std::string id;
    double governor_time = 0.08;   // T_G [s]
    double turbine_time = 0.3;     // T_C [s]
    double reheater_time = 7.0;    // T_R [s]
    double hp_fraction = 0.3;      // F_H in [0,1]
    double droop = 0.05;           // R [p.u./p.u.]
    double participation = 0.0;    // alpha
    double rated_mw = 0.0;
    double inertia_coeff = 0.0;    // [s] on own base
    bool online = true;
};

struct NonReheatTurbineParams {
    std::string id;
    double governor_time = 0.08;
    double turbine_time = 0.3;
    double droop = 0.05;
    double participation = 0.0;
    double rated_mw = 0.0;
    double inertia_coeff = 0.0;
    bool online = true;
};

struct BessParams {
    std::string id;
    double converter_time = 0.01;  // T_V [s]
    double droop = 0.067;          // R_V [p.u./p.u.]
    double participation = 0.0;
    double power_mw = 0.0;
};

/// The regulation fleet of one balancing area. Carries no H or D so that
/// controllers can be handed a fleet without seeing the plant's true parameters.
struct Fleet {
    std::vector<ReheatTurbineParams> reheat;
    std::vector<NonReheatTurbineParams> nonreheat;
    std::vector<BessParams> bess;
    double system_base_mva = 100.0;
    double nominal_frequency_hz = 50.0;
    /// Use -1/(R_V T_V) as the BESS diagonal entry instead of -1/T_V.
    bool bess_appendix_literal = false;
};

struct SystemModel {
    Fleet fleet;
    double inertia_H = 0.0;   // [s], system base
    double damping_D = 0.0;   // [p.u. power / p.u. frequency]
};

/// Continuous-time x' = A x + B u with u = [dP_R, dP_NL].
struct StateSpace {
    Matrix A;
    Matrix B;
    [[nodiscard]] Eigen::Index n() const { return A.rows(); }
};

enum class ViolationCode {
    NonPositiveTimeConstant,
    NonPositiveDroop,
    HpFractionOutOfRange,
    NegativeParticipation,
    ParticipationNotNormalized,
    NonPositiveInertia,
    NegativeDamping,
    NonPositiveBase,
    NegativeCapacity,
    NonFinite,
};

struct Violation {
    ViolationCode code;
    std::string where;
};

std::string_view to_string(ViolationCode code);

std::vector<Violation> validate_fleet(const Fleet& fleet);
std::vector<Violation> validate_model(const SystemModel& model);

/// 1 + 3 N_rh + 2 N_nr + N_es, online units only.
Eigen::Index state_dimension(const Fleet& fleet);
std::vector<std::string> state_names(const Fleet& fleet);

/// Assembles A and B. Throws ModelError when validate_model reports anything.
StateSpace build_state_space(const SystemModel& model);

struct InertiaBound {
    double value = 0.0;
    bool empty_fleet = false;
};

/// Sum over online turbines of inertia_coeff * rated_mw / system_base.
InertiaBound tg_inertia_lower_bound(const Fleet& fleet);

/// D + sum 1/R over online turbines and all BESS units: the primary-control stiffness.
double frequency_stiffness(const Fleet& fleet, double damping_D);

/// Hour -> unit id -> online. Hours repeat with the schedule's period.
class CommitmentSchedule {
public:
    void set(int hour, const std::string& unit_id, bool online);
    [[nodiscard]] int period() const { return period_; }
    [[nodiscard]] bool empty() const { return table_.empty(); }
    /// Online flag for a unit at an absolute hour; units missing from the table stay online.
    [[nodiscard]] bool online(int hour, const std::string& unit_id) const;
    [[nodiscard]] const std::map<int, std::map<std::string, bool>>& table() const { return table_; }

private:
    std::map<int, std::map<std::string, bool>> table_;
    int period_ = 0;
};

/// Copy of the fleet with online flags from the schedule and participation factors
/// renormalized over the online resources.
Fleet apply_commitment(const Fleet& fleet, const CommitmentSchedule& schedule, int hour);

Fleet fleet_from_json(std::string_view text);
Fleet load_fleet(const std::filesystem::path& path);
CommitmentSchedule load_schedule(const std::filesystem::path& path);
void write_schedule(const std::filesystem::path& path, const CommitmentSchedule& schedule,
                    const std::string& header_comment = {});

/// Stable 64-bit fingerprint of the matrices (FNV-1a over raw bytes).
std::uint64_t fingerprint(const StateSpace& ss);

} // namespace agcdro
