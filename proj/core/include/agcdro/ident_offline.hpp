#pragma once

#include "agcdro/frm_model.hpp"
#include "agcdro/lin_dynamics.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace agcdro {

/// A large netload ramp and the primary frequency response that followed it.
struct RampEvent {
    int event_id = 0;
    std::size_t start_index = 0;       // index into the native-resolution series
    std::size_t end_index = 0;         // inclusive
    double start_time_s = 0.0;
    int hour = 0;                      // selects the commitment snapshot
    double load_pu = 0.0;
    double renew_pu = 0.0;
    double sample_period_s = 0.1;      // resolution of netload/freq below
    std::vector<double> netload;       // p.u., absolute
    std::vector<double> freq;          // delta f [p.u.]
    std::optional<double> true_H;
    std::optional<double> true_D;
};

struct IdentResult {
    double H_hat = 0.0;
    double D_hat = 0.0;
    double residual_rmse = 0.0;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Maximal non-overlapping windows where |x(t + window) - x(t)| > threshold.
/// `netload` is uniformly sampled with period `sample_period_s`; the event's netload
/// slice covers [start, end] and freq is left empty.
std::vector<RampEvent> detect_ramp_events(std::span<const double> netload, double sample_period_s,
                                          double threshold = 0.02, double window_s = 60.0);

struct LoadParameterPrior {
    double inertia_mean = 1.79;
    double inertia_std = 0.31;
    double damping_mean = 0.01;
    double damping_std = 0.003;
};

struct TrueParams {
    double H = 0.0;
    double D = 0.0;
};

/// H = TG bound + load * g_H, D = load * g_D with g_H, g_D drawn from the prior normals
/// truncated at zero (rejection). Deterministic for a given engine state.
TrueParams sample_true_params(std::mt19937_64& rng, double load_pu, const Fleet& fleet,
                              const LoadParameterPrior& prior = {});

/// Same mapping with the load coefficients supplied directly (e.g. the prior means).
TrueParams true_params_from_coefficients(double load_pu, const Fleet& fleet, double inertia_coeff,
                                         double damping_coeff);

/// Primary-only response from rest: Delta f at every sample of `netload`, driven by
/// netload - netload[0] (linear between samples).
std::vector<double> primary_response(const Fleet& fleet, double H, double D, std::span<const double> netload,
                                     double sample_period_s);

struct IdentBox {
    double H_lo = 0.0;
    double H_hi = 0.0;
    double D_lo = 0.0;
    double D_hi = 0.05;
};

struct IdentOptions {
    double window_s = 20.0;
    int grid = 8;                 // grid x grid multi-start points
    int descents = 3;             // local descents launched from the best grid points
    int max_iter = 60;
    std::optional<IdentBox> box;  // default: H in [TG bound, TG bound + 5], D in [0, 0.05]
    double H_span = 5.0;
};

IdentBox default_box(const Fleet& fleet, const IdentOptions& opts = {});

/// Least-squares fit of (H, D) to the event's frequency samples inside the window.
class IdentProblem {
public:
    IdentProblem(const RampEvent& event, const Fleet& fleet, double window_s);

    [[nodiscard]] std::size_t samples() const { return measured_.size(); }
    /// Simulated minus measured Delta f for samples 1..K.
    [[nodiscard]] Vector residual(double H, double D) const;
    [[nodiscard]] double objective(double H, double D) const;

private:
    Fleet fleet_;
    double period_;
    std::vector<double> input_;  // netload deviation at samples 0..K
    Vector measured_;            // samples 1..K
};

/// Projected Gauss-Newton over the box with a grid multi-start.
IdentResult identify(const RampEvent& event, const Fleet& fleet, const IdentOptions& opts = {});

/// `event_id, t_s, netload_pu, delta_f_pu` rows for every event.
void write_events_csv(const std::filesystem::path& path, const std::vector<RampEvent>& events,
                      const std::vector<std::string>& comments = {});
/// Per-event metadata (start, hour, load, truth) that the trace file does not carry.
void write_events_meta_csv(const std::filesystem::path& path, const std::vector<RampEvent>& events,
                           const std::vector<std::string>& comments = {});
std::vector<RampEvent> read_events(const std::filesystem::path& trace_csv, const std::filesystem::path& meta_csv);

struct IdentRecord {
    int event_id = 0;
    IdentResult result;
    std::optional<double> true_H;
    std::optional<double> true_D;
};

void write_ident_results_csv(const std::filesystem::path& path, const std::vector<IdentRecord>& records,
                             const std::vector<std::string>& comments = {});
std::vector<IdentRecord> read_ident_results(const std::filesystem::path& path);

} // namespace agcdro
