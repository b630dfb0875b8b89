#include "agcdro/quantile_estimator.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace agcdro {

using nlohmann::json;

namespace {

constexpr double kMinH = 1e-6;
constexpr int kOutputs = 2 * kQuantileCount;

const std::vector<double>& probs_cache()
{
    static const std::vector<double> p = quantile_probs();
    return p;
}

} // namespace

std::vector<double> quantile_probs()
{
    std::vector<double> p(kQuantileCount);
    for (int j = 0; j < kQuantileCount; ++j) {
        p[static_cast<std::size_t>(j)] = (j + 0.5) / kQuantileCount;
    }
    return p;
}

double pinball(double q, double actual, double predicted)
{
    if (!(q > 0.0 && q < 1.0)) {
        throw InputError("pinball: probability must lie in (0, 1)");
    }
    return actual >= predicted ? q * (actual - predicted) : (1.0 - q) * (predicted - actual);
}

double total_loss(std::span<const double> outputs, double H_true, double D_true)
{
    if (outputs.size() != static_cast<std::size_t>(kOutputs)) {
        throw InputError("total_loss: expected " + std::to_string(kOutputs) + " outputs, got " +
                         std::to_string(outputs.size()));
    }
    const auto& q = probs_cache();
    double loss = 0.0;
    for (std::size_t j = 0; j < static_cast<std::size_t>(kQuantileCount); ++j) {
        loss += pinball(q[j], H_true, outputs[j]) + pinball(q[j], D_true, outputs[j + kQuantileCount]);
    }
    return loss;
}

Normalization Normalization::fit(const std::vector<LabeledWindow>& data)
{
    if (data.empty()) {
        throw InputError("Normalization::fit: empty dataset");
    }
    Normalization n;
    auto finish = [](double sum, double sumsq, double count, double& mean, double& stddev) {
        mean = sum / count;
        const double var = std::max(sumsq / count - mean * mean, 0.0);
        stddev = std::sqrt(var);
        if (!(stddev > 1e-9 * std::max(1.0, std::abs(mean)))) {
            stddev = 1.0;
        }
    };
    for (int c = 0; c < kFeatureCount; ++c) {
        double s = 0.0, ss = 0.0, count = 0.0;
        for (const auto& d : data) {
            const auto col = d.window.values.col(c);
            s += col.sum();
            ss += col.squaredNorm();
            count += double(col.size());
        }
        finish(s, ss, count, n.feature_mean[static_cast<std::size_t>(c)], n.feature_std[static_cast<std::size_t>(c)]);
    }
    double sh = 0.0, ssh = 0.0, sd = 0.0, ssd = 0.0;
    for (const auto& d : data) {
        sh += d.H;
        ssh += d.H * d.H;
        sd += d.D;
        ssd += d.D * d.D;
    }
    finish(sh, ssh, double(data.size()), n.H_mean, n.H_std);
    finish(sd, ssd, double(data.size()), n.D_mean, n.D_std);
    return n;
}

Matrix Normalization::normalize(const Matrix& window) const
{
    if (window.cols() != kFeatureCount) {
        throw InputError("normalize: window must have 4 feature columns");
    }
    Matrix out(window.rows(), window.cols());
    for (int c = 0; c < kFeatureCount; ++c) {
        const auto k = static_cast<std::size_t>(c);
        out.col(c) = (window.col(c).array() - feature_mean[k]) / feature_std[k];
    }
    return out;
}

Matrix Normalization::denormalize(const Matrix& window) const
{
    Matrix out(window.rows(), window.cols());
    for (int c = 0; c < kFeatureCount; ++c) {
        const auto k = static_cast<std::size_t>(c);
        out.col(c) = window.col(c).array() * feature_std[k] + feature_mean[k];
    }
    return out;
}

namespace {

SequenceBatch make_batch(const Normalization& norm, const std::vector<const FeatureWindow*>& windows, int length)
{
    const auto B = static_cast<Eigen::Index>(windows.size());
    SequenceBatch xs(static_cast<std::size_t>(length), Matrix(kFeatureCount, B));
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& w = windows[static_cast<std::size_t>(b)]->values;
        if (w.rows() != length || w.cols() != kFeatureCount) {
            throw InputError("feature window shape mismatch: expected " + std::to_string(length) + " x 4");
        }
        if (!w.allFinite()) {
            throw InputError("feature window contains non-finite values");
        }
        const Matrix z = norm.normalize(w);
        for (int t = 0; t < length; ++t) {
            xs[static_cast<std::size_t>(t)].col(b) = z.row(t).transpose();
        }
    }
    return xs;
}

std::vector<double> to_physical(const Normalization& norm, const Eigen::Ref<const Vector>& y)
{
    std::vector<double> out(static_cast<std::size_t>(kOutputs));
    for (int j = 0; j < kQuantileCount; ++j) {
        out[static_cast<std::size_t>(j)] = norm.H_mean + norm.H_std * y(j);
        out[static_cast<std::size_t>(j + kQuantileCount)] = norm.D_mean + norm.D_std * y(j + kQuantileCount);
    }
    return out;
}

QuantileForecast rearrange(const std::vector<double>& raw)
{
    QuantileForecast f;
    f.probs = probs_cache();
    f.H.assign(raw.begin(), raw.begin() + kQuantileCount);
    f.D.assign(raw.begin() + kQuantileCount, raw.end());
    std::sort(f.H.begin(), f.H.end());
    std::sort(f.D.begin(), f.D.end());
    for (auto& h : f.H) {
        h = std::max(h, kMinH);
    }
    return f;
}

} // namespace

std::vector<double> EstimatorModel::raw_outputs(const FeatureWindow& window) const
{
    const auto xs = make_batch(norm, {&window}, window_length);
    const Matrix Y = net.forward(xs);
    return to_physical(norm, Y.col(0));
}

QuantileForecast EstimatorModel::forward(const FeatureWindow& window) const
{
    return rearrange(raw_outputs(window));
}

double standardized_loss(const Matrix& Y, const Matrix& targets, Matrix& dY)
{
    if (Y.rows() != kOutputs || targets.rows() != 2 || targets.cols() != Y.cols()) {
        throw InputError("standardized_loss: shape mismatch");
    }
    const auto& q = probs_cache();
    const double inv_b = 1.0 / double(Y.cols());
    double loss = 0.0;
    dY.resize(Y.rows(), Y.cols());
    for (Eigen::Index b = 0; b < Y.cols(); ++b) {
        for (Eigen::Index r = 0; r < Y.rows(); ++r) {
            const double qj = q[static_cast<std::size_t>(r % kQuantileCount)];
            const double t = targets(r < kQuantileCount ? 0 : 1, b);
            const double y = Y(r, b);
            if (t >= y) {
                loss += qj * (t - y);
                dY(r, b) = -qj * inv_b;
            } else {
                loss += (1.0 - qj) * (y - t);
                dY(r, b) = (1.0 - qj) * inv_b;
            }
        }
    }
    return loss * inv_b;
}

double mean_total_loss(const EstimatorModel& model, const std::vector<LabeledWindow>& data)
{
    if (data.empty()) {
        return 0.0;
    }
    std::vector<const FeatureWindow*> ws;
    ws.reserve(data.size());
    for (const auto& d : data) {
        ws.push_back(&d.window);
    }
    const Matrix Y = model.net.forward(make_batch(model.norm, ws, model.window_length));
    double sum = 0.0;
    for (std::size_t b = 0; b < data.size(); ++b) {
        const auto f = rearrange(to_physical(model.norm, Y.col(static_cast<Eigen::Index>(b))));
        std::vector<double> out(f.H);
        out.insert(out.end(), f.D.begin(), f.D.end());
        sum += total_loss(out, data[b].H, data[b].D);
    }
    return sum / double(data.size());
}

namespace {

double full_standardized_loss(const EstimatorModel& model, const std::vector<LabeledWindow>& data)
{
    std::vector<const FeatureWindow*> ws;
    Matrix targets(2, static_cast<Eigen::Index>(data.size()));
    for (std::size_t b = 0; b < data.size(); ++b) {
        ws.push_back(&data[b].window);
        targets(0, static_cast<Eigen::Index>(b)) = (data[b].H - model.norm.H_mean) / model.norm.H_std;
        targets(1, static_cast<Eigen::Index>(b)) = (data[b].D - model.norm.D_mean) / model.norm.D_std;
    }
    const Matrix Y = model.net.forward(make_batch(model.norm, ws, model.window_length));
    Matrix dY;
    return standardized_loss(Y, targets, dY);
}

} // namespace

TrainResult train(const std::vector<LabeledWindow>& train_set, const std::vector<LabeledWindow>& validation_set,
                  const TrainOptions& opts, const std::function<void(const EpochRecord&)>& on_epoch)
{
    if (train_set.empty()) {
        throw InputError("train: empty training set");
    }
    if (opts.batch_size <= 0 || opts.epochs < 0 || !(opts.learning_rate > 0.0) || opts.momentum < 0.0 ||
        opts.momentum >= 1.0) {
        throw InputError("train: invalid hyperparameters");
    }
    const int length = static_cast<int>(train_set.front().window.values.rows());
    const LstmShape shape{kFeatureCount, opts.hidden1, opts.hidden2, kOutputs};

    EstimatorModel model;
    model.window_length = length;
    model.norm = Normalization::fit(train_set);
    model.net = LstmNet(shape, init_lstm_params(shape, opts.seed));

    const auto& eval_set = validation_set.empty() ? train_set : validation_set;
    TrainResult result;
    auto record = [&](int epoch) {
        EpochRecord r{epoch, full_standardized_loss(model, train_set), mean_total_loss(model, eval_set)};
        if (!std::isfinite(r.train_loss) || !std::isfinite(r.validation_loss)) {
            std::ostringstream msg;
            msg << "train: loss diverged at epoch " << epoch << " (train " << r.train_loss << ", validation "
                << r.validation_loss << "); reduce learning_rate or clip_norm";
            throw NumericalError(msg.str());
        }
        result.curve.push_back(r);
        if (on_epoch) {
            on_epoch(r);
        }
        if (epoch == 0 || r.validation_loss < result.best_validation_loss) {
            result.best_validation_loss = r.validation_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
    };
    record(0);

    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Vector velocity = Vector::Zero(model.net.params().size());
    LstmParams grad = LstmParams::zeros(shape);

    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            std::vector<const FeatureWindow*> ws;
            Matrix targets(2, static_cast<Eigen::Index>(end - start));
            for (std::size_t k = start; k < end; ++k) {
                const auto& d = train_set[order[k]];
                ws.push_back(&d.window);
                targets(0, static_cast<Eigen::Index>(k - start)) = (d.H - model.norm.H_mean) / model.norm.H_std;
                targets(1, static_cast<Eigen::Index>(k - start)) = (d.D - model.norm.D_mean) / model.norm.D_std;
            }
            const auto xs = make_batch(model.norm, ws, length);
            grad = LstmParams::zeros(shape);
            model.net.loss_and_gradient(
                xs, [&](const Matrix& Y, Matrix& dY) { return standardized_loss(Y, targets, dY); }, grad);
            Vector g = grad.flatten();
            const double gn = g.norm();
            if (!std::isfinite(gn)) {
                throw NumericalError("train: non-finite gradient at epoch " + std::to_string(epoch));
            }
            if (opts.clip_norm > 0.0 && gn > opts.clip_norm) {
                g *= opts.clip_norm / gn;
            }
            velocity = opts.momentum * velocity - opts.learning_rate * g;
            model.net.params().assign(model.net.params().flatten() + velocity);
        }
        record(epoch);
    }
    return result;
}

EtaPair eta_from_deviations(std::span<const double> deviations)
{
    EtaPair e;
    for (double d : deviations) {
        e.eta_max = std::max(e.eta_max, d);
        e.eta_min = std::min(e.eta_min, d);
    }
    return e;
}

namespace {

void finish_report(CalibrationReport& r)
{
    std::vector<double> dev_H(r.probs.size()), dev_D(r.probs.size());
    for (std::size_t j = 0; j < r.probs.size(); ++j) {
        dev_H[j] = r.probs[j] - r.actual_H[j];
        dev_D[j] = r.probs[j] - r.actual_D[j];
    }
    const auto eh = eta_from_deviations(dev_H);
    const auto ed = eta_from_deviations(dev_D);
    r.eta_max_H = eh.eta_max;
    r.eta_min_H = eh.eta_min;
    r.eta_max_D = ed.eta_max;
    r.eta_min_D = ed.eta_min;
    r.eta_max = std::max(eh.eta_max, ed.eta_max);
    r.eta_min = std::min(eh.eta_min, ed.eta_min);
}

} // namespace

CalibrationReport calibrate_forecasts(const std::vector<QuantileForecast>& forecasts,
                                      std::span<const double> H_true, std::span<const double> D_true)
{
    if (forecasts.empty()) {
        throw InputError("calibrate: empty validation set");
    }
    if (forecasts.size() != H_true.size() || forecasts.size() != D_true.size()) {
        throw InputError("calibrate: forecasts and truths differ in count");
    }
    CalibrationReport r;
    r.probs = forecasts.front().probs;
    const auto J = r.probs.size();
    r.actual_H.assign(J, 0.0);
    r.actual_D.assign(J, 0.0);
    for (std::size_t s = 0; s < forecasts.size(); ++s) {
        const auto& f = forecasts[s];
        if (f.H.size() != J || f.D.size() != J) {
            throw InputError("calibrate: forecast quantile count mismatch");
        }
        for (std::size_t j = 0; j < J; ++j) {
            r.actual_H[j] += H_true[s] < f.H[j] ? 1.0 : 0.0;
            r.actual_D[j] += D_true[s] < f.D[j] ? 1.0 : 0.0;
        }
    }
    const double n = double(forecasts.size());
    for (std::size_t j = 0; j < J; ++j) {
        r.actual_H[j] /= n;
        r.actual_D[j] /= n;
    }
    finish_report(r);
    return r;
}

CalibrationReport calibrate(const EstimatorModel& model, const std::vector<LabeledWindow>& validation_set)
{
    if (validation_set.empty()) {
        throw InputError("calibrate: empty validation set");
    }
    std::vector<QuantileForecast> fs;
    std::vector<double> H, D;
    for (const auto& d : validation_set) {
        fs.push_back(model.forward(d.window));
        H.push_back(d.H);
        D.push_back(d.D);
    }
    return calibrate_forecasts(fs, H, D);
}

void write_calibration_csv(const std::filesystem::path& path, const CalibrationReport& r,
                           const std::vector<std::string>& comments)
{
    auto all = comments;
    all.push_back("eta_max=" + format_double(r.eta_max) + " eta_min=" + format_double(r.eta_min));
    CsvWriter w(path, all);
    w.header({"prob", "actual_H", "actual_D", "deviation_H", "deviation_D"});
    for (std::size_t j = 0; j < r.probs.size(); ++j) {
        w.row({r.probs[j], r.actual_H[j], r.actual_D[j], r.probs[j] - r.actual_H[j], r.probs[j] - r.actual_D[j]});
    }
}

CalibrationReport read_calibration_csv(const std::filesystem::path& path)
{
    const auto t = read_csv(path);
    const auto cp = t.column("prob"), ch = t.column("actual_H"), cd = t.column("actual_D");
    CalibrationReport r;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        r.probs.push_back(t.number(i, cp));
        r.actual_H.push_back(t.number(i, ch));
        r.actual_D.push_back(t.number(i, cd));
    }
    if (r.probs.empty()) {
        throw InputError(path.string() + ": no calibration rows");
    }
    finish_report(r);
    return r;
}

void save_model(const std::filesystem::path& path, const EstimatorModel& model, const std::string& meta_line)
{
    const auto& s = model.net.shape();
    const auto& n = model.norm;
    json j;
    j["format"] = "agcdro-quantile-net";
    j["version"] = model.version;
    if (!meta_line.empty()) {
        j["meta"] = meta_line;
    }
    j["window_length"] = model.window_length;
    j["shape"] = {{"inputs", s.inputs}, {"hidden1", s.hidden1}, {"hidden2", s.hidden2}, {"outputs", s.outputs}};
    j["normalization"] = {{"feature_mean", n.feature_mean}, {"feature_std", n.feature_std}, {"H_mean", n.H_mean},
                          {"H_std", n.H_std},           {"D_mean", n.D_mean},           {"D_std", n.D_std}};
    const Vector flat = model.net.params().flatten();
    j["weights"] = std::vector<double>(flat.data(), flat.data() + flat.size());
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write model file " + path.string());
    }
    out << j.dump(1) << '\n';
}

EstimatorModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open model file " + path.string());
    }
    json j;
    try {
        in >> j;
        if (j.at("format").get<std::string>() != "agcdro-quantile-net") {
            throw InputError(path.string() + ": not a quantile network file");
        }
        EstimatorModel m;
        m.version = j.at("version").get<int>();
        if (m.version != 1) {
            throw InputError(path.string() + ": unsupported model version " + std::to_string(m.version));
        }
        m.window_length = j.at("window_length").get<int>();
        const auto& js = j.at("shape");
        const LstmShape shape{js.at("inputs").get<int>(), js.at("hidden1").get<int>(), js.at("hidden2").get<int>(),
                              js.at("outputs").get<int>()};
        if (shape.inputs != kFeatureCount || shape.outputs != kOutputs) {
            throw InputError(path.string() + ": network must map 4 features to 200 outputs");
        }
        const auto& jn = j.at("normalization");
        m.norm.feature_mean = jn.at("feature_mean").get<std::array<double, kFeatureCount>>();
        m.norm.feature_std = jn.at("feature_std").get<std::array<double, kFeatureCount>>();
        m.norm.H_mean = jn.at("H_mean").get<double>();
        m.norm.H_std = jn.at("H_std").get<double>();
        m.norm.D_mean = jn.at("D_mean").get<double>();
        m.norm.D_std = jn.at("D_std").get<double>();
        const auto w = j.at("weights").get<std::vector<double>>();
        auto params = LstmParams::zeros(shape);
        if (static_cast<Eigen::Index>(w.size()) != params.size()) {
            throw InputError(path.string() + ": weight count does not match the declared shape");
        }
        params.assign(Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())));
        m.net = LstmNet(shape, std::move(params));
        return m;
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_windows_csv(const std::filesystem::path& windows, const std::filesystem::path& labels,
                       const std::vector<LabeledWindow>& data, double sample_period_s,
                       const std::vector<std::string>& comments)
{
    {
        CsvWriter w(windows, comments);
        w.header({"sample_id", "t_rel", "load_pu", "renew_pu", "delta_f_pu", "tg_inertia_s"});
        for (const auto& d : data) {
            const auto& v = d.window.values;
            for (Eigen::Index t = 0; t < v.rows(); ++t) {
                w.row({std::to_string(d.sample_id), format_double(double(t - (v.rows() - 1)) * sample_period_s),
                       format_double(v(t, 0)), format_double(v(t, 1)), format_double(v(t, 2)),
                       format_double(v(t, 3))});
            }
        }
    }
    CsvWriter l(labels, comments);
    l.header({"sample_id", "H_true", "D_true"});
    for (const auto& d : data) {
        l.row({std::to_string(d.sample_id), format_double(d.H), format_double(d.D)});
    }
}

std::vector<LabeledWindow> read_windows_csv(const std::filesystem::path& windows, const std::filesystem::path& labels)
{
    const auto lt = read_csv(labels);
    const auto lid = lt.column("sample_id"), lh = lt.column("H_true"), ld = lt.column("D_true");
    std::vector<LabeledWindow> out;
    std::map<int, std::size_t> index;
    for (std::size_t r = 0; r < lt.rows.size(); ++r) {
        LabeledWindow d;
        d.sample_id = static_cast<int>(lt.integer(r, lid));
        d.H = lt.number(r, lh);
        d.D = lt.number(r, ld);
        index[d.sample_id] = out.size();
        out.push_back(std::move(d));
    }
    const auto wt = read_csv(windows);
    const std::array<std::size_t, kFeatureCount> cols{wt.column("load_pu"), wt.column("renew_pu"),
                                                      wt.column("delta_f_pu"), wt.column("tg_inertia_s")};
    const auto wid = wt.column("sample_id");
    std::vector<std::vector<std::array<double, kFeatureCount>>> rows(out.size());
    for (std::size_t r = 0; r < wt.rows.size(); ++r) {
        const int id = static_cast<int>(wt.integer(r, wid));
        const auto it = index.find(id);
        if (it == index.end()) {
            throw InputError(windows.string() + ": row " + std::to_string(r + 1) + ": sample_id " +
                             std::to_string(id) + " has no label in " + labels.string());
        }
        std::array<double, kFeatureCount> v{};
        for (int c = 0; c < kFeatureCount; ++c) {
            v[static_cast<std::size_t>(c)] = wt.number(r, cols[static_cast<std::size_t>(c)]);
        }
        rows[it->second].push_back(v);
    }
    std::size_t length = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (rows[i].empty()) {
            throw InputError(labels.string() + ": sample_id " + std::to_string(out[i].sample_id) +
                             " has no window rows");
        }
        if (length == 0) {
            length = rows[i].size();
        } else if (rows[i].size() != length) {
            throw InputError(windows.string() + ": windows differ in length (sample_id " +
                             std::to_string(out[i].sample_id) + ")");
        }
        Matrix m(static_cast<Eigen::Index>(length), kFeatureCount);
        for (std::size_t t = 0; t < length; ++t) {
            for (int c = 0; c < kFeatureCount; ++c) {
                m(static_cast<Eigen::Index>(t), c) = rows[i][t][static_cast<std::size_t>(c)];
            }
        }
        out[i].window.values = std::move(m);
    }
    return out;
}

void write_training_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve,
                              const std::vector<std::string>& comments)
{
    CsvWriter w(path, comments);
    w.header({"epoch", "train_loss", "validation_loss"});
    for (const auto& r : curve) {
        w.row({std::to_string(r.epoch), format_double(r.train_loss), format_double(r.validation_loss)});
    }
}

} // namespace agcdro
