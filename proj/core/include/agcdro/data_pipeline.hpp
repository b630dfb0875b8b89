#pragma once

#include "agcdro/frm_model.hpp"
#include "agcdro/ident_offline.hpp"
#include "agcdro/quantile_estimator.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace agcdro {

/// Aligned load / wind / solar series in p.u. with netload = load - wind - solar.
struct SeriesBundle {
    double resolution_s = 60.0;
    std::vector<double> t_s;
    std::vector<double> load;
    std::vector<double> wind;
    std::vector<double> solar;
    std::vector<double> netload;

    [[nodiscard]] std::size_t size() const { return t_s.size(); }
    void validate() const;
};

struct GeneratorConfig {
    std::uint64_t seed = 1;
    int days = 30;
    double system_scale = 1.0;     // multiplies every series
    double load_mean = 1.0;
    double load_amplitude = 0.25;  // diurnal swing around the mean
    double load_noise = 0.001;     // white, per minute
    double wind_mean = 0.15;
    double wind_capacity = 0.4;
    double wind_reversion = 0.02;  // AR(1) pull toward the mean per minute
    double wind_sigma = 0.002;
    double solar_peak = 0.2;
    double cloud_sigma = 0.01;
    int event_count = 424;
    double event_min = 0.025;      // injected load steps, p.u.
    double event_max = 0.05;
    double event_decay_min = 30.0; // the step then relaxes back with this time constant
    int event_lead_min = 32;       // earliest minute of an event inside its slot

    void validate() const;
};

/// One-minute synthetic series with injected load steps.
SeriesBundle generate_series(const GeneratorConfig& cfg);

/// Linear upsampling; the target resolution must divide the native one.
SeriesBundle interpolate(const SeriesBundle& series, double target_resolution_s);

/// t_s, load_pu, wind_pu, solar_pu, netload_pu
void write_series_csv(const std::filesystem::path& path, const SeriesBundle& s,
                      const std::vector<std::string>& comments = {});
SeriesBundle read_series_csv(const std::filesystem::path& path);

struct EventSynthesis {
    std::uint64_t seed = 11;
    double fine_period_s = 0.1;
    double freq_noise_pu = 0.0;
    LoadParameterPrior prior;
};

/// Fills each detected event with a fine-resolution netload trace, its hour and load level,
/// a sampled true (H, D) and the primary frequency response of the committed fleet.
std::vector<RampEvent> synthesize_event_traces(const SeriesBundle& series, std::vector<RampEvent> events,
                                               const Fleet& fleet, const CommitmentSchedule& schedule,
                                               const EventSynthesis& opts);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
};

/// Rescales the 3000 / 1000 / 241 proportions to n samples (rounded, test takes the rest).
SplitCounts split_counts(std::size_t n, double train_ratio = 3000.0, double validation_ratio = 1000.0,
                         double test_ratio = 241.0);

/// The `length` native samples strictly before `end_index`: load, renewables, quasi-steady
/// frequency deviation and online turbine inertia.
FeatureWindow feature_window(const SeriesBundle& series, const Fleet& fleet, const CommitmentSchedule& schedule,
                             std::size_t end_index, int length);

struct Dataset {
    std::vector<LabeledWindow> train;
    std::vector<LabeledWindow> validation;
    std::vector<LabeledWindow> test;
    std::vector<std::string> skipped;
};

/// One labeled window per identified event, in time order, split chronologically.
Dataset assemble_dataset(const SeriesBundle& series, const std::vector<RampEvent>& events, const Fleet& fleet,
                         const CommitmentSchedule& schedule, const std::vector<IdentRecord>& ident,
                         int window_length = 30);

} // namespace agcdro
