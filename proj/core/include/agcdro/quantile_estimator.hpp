#pragma once

#include "agcdro/lstm.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace agcdro {

inline constexpr int kQuantileCount = 100;
inline constexpr int kFeatureCount = 4;  // load, renewable generation, delta f, TG inertia

/// q_j = (j + 0.5) / 100, j = 0..99.
std::vector<double> quantile_probs();

/// T_IN x 4 samples, columns (load_pu, renew_pu, delta_f_pu, tg_inertia_s).
struct FeatureWindow {
    Matrix values;
};

struct LabeledWindow {
    int sample_id = 0;
    FeatureWindow window;
    double H = 0.0;
    double D = 0.0;
};

struct QuantileForecast {
    std::vector<double> probs;
    std::vector<double> H;
    std::vector<double> D;
};

double pinball(double q, double actual, double predicted);

/// Sum over the 100 probabilities of the H and D pinball losses. `outputs` holds 100 H
/// quantiles followed by 100 D quantiles.
double total_loss(std::span<const double> outputs, double H_true, double D_true);

/// Per-feature and per-target standardization statistics.
struct Normalization {
    std::array<double, kFeatureCount> feature_mean{};
    std::array<double, kFeatureCount> feature_std{1.0, 1.0, 1.0, 1.0};
    double H_mean = 0.0;
    double H_std = 1.0;
    double D_mean = 0.0;
    double D_std = 1.0;

    static Normalization fit(const std::vector<LabeledWindow>& data);
    [[nodiscard]] Matrix normalize(const Matrix& window) const;
    [[nodiscard]] Matrix denormalize(const Matrix& window) const;
};

struct EstimatorModel {
    int version = 1;
    int window_length = 30;
    LstmNet net;
    Normalization norm;

    /// Raw 200 outputs mapped back to physical units, unsorted.
    [[nodiscard]] std::vector<double> raw_outputs(const FeatureWindow& window) const;
    /// Raw outputs sorted per parameter, H floored at a small positive value.
    [[nodiscard]] QuantileForecast forward(const FeatureWindow& window) const;
};

/// Training loss over a batch in standardized target units, and its gradient.
double standardized_loss(const Matrix& Y, const Matrix& targets, Matrix& dY);

struct TrainOptions {
    int hidden1 = 32;
    int hidden2 = 32;
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 0.01;
    double clip_norm = 5.0;
    double momentum = 0.0;
    std::uint64_t seed = 7;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
};

struct TrainResult {
    EstimatorModel model;
    std::vector<EpochRecord> curve;
    int best_epoch = 0;
    double best_validation_loss = 0.0;
};

/// Mini-batch gradient descent with BPTT; keeps the weights with the best validation
/// loss (mean Eq.-style total loss in physical units). Throws NumericalError on NaN.
TrainResult train(const std::vector<LabeledWindow>& train_set, const std::vector<LabeledWindow>& validation_set,
                  const TrainOptions& opts, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean total_loss (physical units, sorted forecasts) over a set.
double mean_total_loss(const EstimatorModel& model, const std::vector<LabeledWindow>& data);

struct CalibrationReport {
    std::vector<double> probs;
    std::vector<double> actual_H;  // q0 per quantile
    std::vector<double> actual_D;
    double eta_max_H = 0.0;
    double eta_min_H = 0.0;
    double eta_max_D = 0.0;
    double eta_min_D = 0.0;
    double eta_max = 0.0;
    double eta_min = 0.0;
};

struct EtaPair {
    double eta_max = 0.0;
    double eta_min = 0.0;
};

/// max/min over the deviations q* - q0 with 0 included in both.
EtaPair eta_from_deviations(std::span<const double> deviations);

CalibrationReport calibrate_forecasts(const std::vector<QuantileForecast>& forecasts,
                                      std::span<const double> H_true, std::span<const double> D_true);
CalibrationReport calibrate(const EstimatorModel& model, const std::vector<LabeledWindow>& validation_set);

void write_calibration_csv(const std::filesystem::path& path, const CalibrationReport& report,
                           const std::vector<std::string>& comments = {});
CalibrationReport read_calibration_csv(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const EstimatorModel& model, const std::string& meta_line = {});
EstimatorModel load_model(const std::filesystem::path& path);

/// windows: sample_id, t_rel, load_pu, renew_pu, delta_f_pu, tg_inertia_s;
/// labels: sample_id, H_true, D_true.
void write_windows_csv(const std::filesystem::path& windows, const std::filesystem::path& labels,
                       const std::vector<LabeledWindow>& data, double sample_period_s,
                       const std::vector<std::string>& comments = {});
std::vector<LabeledWindow> read_windows_csv(const std::filesystem::path& windows, const std::filesystem::path& labels);

void write_training_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve,
                              const std::vector<std::string>& comments = {});

} // namespace agcdro
