#include "agcdro/data_pipeline.hpp"

#include "agcdro/csv.hpp"
#include "agcdro/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace agcdro {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream)
{
    return splitmix64(seed ^ splitmix64(stream + 0x51ed27ULL));
}

// Morning and evening peaks on a daily base, normalized to roughly [-1, 1].
double diurnal_shape(double hour)
{
    const double w = 2.0 * std::numbers::pi / 24.0;
    return 0.8 * std::sin(w * (hour - 9.0)) + 0.3 * std::sin(2.0 * w * (hour - 4.5));
}

class CommitmentLookup {
public:
    CommitmentLookup(const Fleet& fleet, const CommitmentSchedule& schedule) : fleet_(fleet), schedule_(schedule) {}

    const Fleet& at(int hour)
    {
        const int key = schedule_.period() > 0 ? ((hour % schedule_.period()) + schedule_.period()) % schedule_.period() : 0;
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            it = cache_.emplace(key, apply_commitment(fleet_, schedule_, key)).first;
        }
        return it->second;
    }

private:
    const Fleet& fleet_;
    const CommitmentSchedule& schedule_;
    std::map<int, Fleet> cache_;
};

} // namespace

void SeriesBundle::validate() const
{
    const auto n = t_s.size();
    if (load.size() != n || wind.size() != n || solar.size() != n || netload.size() != n) {
        throw InputError("series: columns have different lengths");
    }
    if (!(resolution_s > 0.0)) {
        throw InputError("series: resolution must be positive");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (netload[i] != load[i] - wind[i] - solar[i]) {
            throw InputError("series: netload differs from load - wind - solar at sample " + std::to_string(i));
        }
    }
}

void GeneratorConfig::validate() const
{
    if (days < 1 || event_count < 0 || !(system_scale > 0.0)) {
        throw InputError("generator: days >= 1, event_count >= 0 and a positive scale required");
    }
    if (event_count > 0 && !(event_min >= 0.02 && event_max >= event_min)) {
        throw InputError("generator: injected events must be at least the 0.02 p.u. detection threshold");
    }
    if (load_noise < 0.0 || wind_sigma < 0.0 || cloud_sigma < 0.0 || !(event_decay_min > 0.0)) {
        throw InputError("generator: noise scales must be nonnegative and the decay positive");
    }
    const double slot = double(days) * 1440.0 / std::max(event_count, 1);
    if (event_count > 0 && slot < double(event_lead_min) + 10.0) {
        throw InputError("generator: too many events for the number of days");
    }
}

SeriesBundle generate_series(const GeneratorConfig& cfg)
{
    cfg.validate();
    const std::size_t minutes = static_cast<std::size_t>(cfg.days) * 1440;
    SeriesBundle s;
    s.resolution_s = 60.0;
    s.t_s.resize(minutes);
    s.load.resize(minutes);
    s.wind.resize(minutes);
    s.solar.resize(minutes);
    s.netload.resize(minutes);

    // Event onsets: one per equal slot, at a random minute after the lead.
    std::vector<double> step(minutes, 0.0);
    if (cfg.event_count > 0) {
        std::mt19937_64 rng(derived_seed(cfg.seed, 0));
        const double slot = double(minutes) / double(cfg.event_count);
        for (int e = 0; e < cfg.event_count; ++e) {
            const auto begin = static_cast<std::size_t>(std::floor(slot * e)) + static_cast<std::size_t>(cfg.event_lead_min);
            const auto end = static_cast<std::size_t>(std::floor(slot * (e + 1))) - 10;
            std::uniform_int_distribution<std::size_t> at(begin, std::max(begin, end));
            std::uniform_real_distribution<double> mag(cfg.event_min, cfg.event_max);
            const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
            const std::size_t m = std::min(at(rng), minutes - 1);
            step[m] += sign * mag(rng);
        }
    }

    double offset = 0.0;
    double wind = cfg.wind_mean;
    double cloud = 1.0;
    const double decay = std::exp(-1.0 / cfg.event_decay_min);
    for (int d = 0; d < cfg.days; ++d) {
        std::mt19937_64 rng(derived_seed(cfg.seed, static_cast<std::uint64_t>(d) + 1));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t k = 0; k < 1440; ++k) {
            const std::size_t i = static_cast<std::size_t>(d) * 1440 + k;
            const double hour = double(k) / 60.0;
            offset = offset * decay + step[i];
            const double load = cfg.load_mean + cfg.load_amplitude * diurnal_shape(hour) + cfg.load_noise * normal(rng);
            wind += cfg.wind_reversion * (cfg.wind_mean - wind) + cfg.wind_sigma * normal(rng);
            wind = std::clamp(wind, 0.0, cfg.wind_capacity);
            cloud = std::clamp(cloud + 0.05 * (1.0 - cloud) + cfg.cloud_sigma * normal(rng), 0.6, 1.0);
            const double sun = std::max(0.0, std::sin(std::numbers::pi * (hour - 6.0) / 12.0));
            s.t_s[i] = double(i) * 60.0;
            s.load[i] = cfg.system_scale * (load + offset);
            s.wind[i] = cfg.system_scale * wind;
            s.solar[i] = cfg.system_scale * cfg.solar_peak * std::pow(sun, 1.5) * cloud;
            s.netload[i] = s.load[i] - s.wind[i] - s.solar[i];
        }
    }
    return s;
}

SeriesBundle interpolate(const SeriesBundle& series, double target_resolution_s)
{
    if (!(target_resolution_s > 0.0)) {
        throw InputError("interpolate: target resolution must be positive");
    }
    const double ratio = series.resolution_s / target_resolution_s;
    const auto r = static_cast<std::size_t>(std::llround(ratio));
    if (r < 1 || std::abs(ratio - double(r)) > 1e-9 * ratio) {
        throw InputError("interpolate: " + format_double(target_resolution_s) + " s does not divide the native " +
                         format_double(series.resolution_s) + " s resolution");
    }
    SeriesBundle out;
    out.resolution_s = target_resolution_s;
    const auto n = series.size();
    if (n == 0) {
        return out;
    }
    const auto m = (n - 1) * r + 1;
    auto fill = [&](const std::vector<double>& src, std::vector<double>& dst) {
        dst.resize(m);
        for (std::size_t k = 0; k + 1 < n; ++k) {
            for (std::size_t j = 0; j < r; ++j) {
                const double w = double(j) / double(r);
                dst[k * r + j] = j == 0 ? src[k] : (1.0 - w) * src[k] + w * src[k + 1];
            }
        }
        dst[m - 1] = src[n - 1];
    };
    fill(series.load, out.load);
    fill(series.wind, out.wind);
    fill(series.solar, out.solar);
    out.t_s.resize(m);
    out.netload.resize(m);
    const double t0 = series.t_s.front();
    for (std::size_t i = 0; i < m; ++i) {
        out.t_s[i] = i % r == 0 ? series.t_s[i / r] : t0 + double(i) * target_resolution_s;
        out.netload[i] = out.load[i] - out.wind[i] - out.solar[i];
    }
    return out;
}

void write_series_csv(const std::filesystem::path& path, const SeriesBundle& s, const std::vector<std::string>& comments)
{
    s.validate();
    CsvWriter w(path, comments);
    w.header({"t_s", "load_pu", "wind_pu", "solar_pu", "netload_pu"});
    for (std::size_t i = 0; i < s.size(); ++i) {
        w.row({s.t_s[i], s.load[i], s.wind[i], s.solar[i], s.netload[i]});
    }
}

SeriesBundle read_series_csv(const std::filesystem::path& path)
{
    const auto t = read_csv(path);
    const auto ct = t.column("t_s"), cl = t.column("load_pu"), cw = t.column("wind_pu"), cs = t.column("solar_pu");
    const auto cn = t.column("netload_pu");
    SeriesBundle s;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        s.t_s.push_back(t.number(r, ct));
        s.load.push_back(t.number(r, cl));
        s.wind.push_back(t.number(r, cw));
        s.solar.push_back(t.number(r, cs));
        s.netload.push_back(t.number(r, cn));
    }
    if (s.size() >= 2) {
        s.resolution_s = s.t_s[1] - s.t_s[0];
    }
    try {
        s.validate();
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    return s;
}

std::vector<RampEvent> synthesize_event_traces(const SeriesBundle& series, std::vector<RampEvent> events,
                                               const Fleet& fleet, const CommitmentSchedule& schedule,
                                               const EventSynthesis& opts)
{
    CommitmentLookup commit(fleet, schedule);
    std::mt19937_64 rng(derived_seed(opts.seed, 0));
    std::normal_distribution<double> noise(0.0, 1.0);
    int id = 0;
    for (auto& ev : events) {
        if (ev.end_index >= series.size() || ev.end_index <= ev.start_index) {
            throw InputError("event " + std::to_string(ev.event_id) + " lies outside the series");
        }
        ev.event_id = id++;
        ev.start_time_s = series.t_s[ev.start_index];
        ev.hour = static_cast<int>(std::floor(ev.start_time_s / 3600.0));
        ev.load_pu = series.load[ev.start_index];
        ev.renew_pu = series.wind[ev.start_index] + series.solar[ev.start_index];

        SeriesBundle slice;
        slice.resolution_s = series.resolution_s;
        for (auto i = ev.start_index; i <= ev.end_index; ++i) {
            slice.t_s.push_back(series.t_s[i]);
            slice.load.push_back(series.load[i]);
            slice.wind.push_back(series.wind[i]);
            slice.solar.push_back(series.solar[i]);
            slice.netload.push_back(series.netload[i]);
        }
        const auto fine = interpolate(slice, opts.fine_period_s);
        ev.sample_period_s = opts.fine_period_s;
        ev.netload = fine.netload;

        const Fleet& f = commit.at(ev.hour);
        const auto truth = sample_true_params(rng, ev.load_pu, f, opts.prior);
        ev.true_H = truth.H;
        ev.true_D = truth.D;
        ev.freq = primary_response(f, truth.H, truth.D, ev.netload, opts.fine_period_s);
        if (opts.freq_noise_pu > 0.0) {
            for (auto& v : ev.freq) {
                v += opts.freq_noise_pu * noise(rng);
            }
        }
    }
    return events;
}

SplitCounts split_counts(std::size_t n, double train_ratio, double validation_ratio, double test_ratio)
{
    const double total = train_ratio + validation_ratio + test_ratio;
    if (!(total > 0.0) || train_ratio < 0.0 || validation_ratio < 0.0 || test_ratio < 0.0) {
        throw InputError("split ratios must be nonnegative with a positive sum");
    }
    SplitCounts c;
    c.train = static_cast<std::size_t>(std::llround(double(n) * train_ratio / total));
    c.validation = std::min(n - std::min(c.train, n), static_cast<std::size_t>(std::llround(double(n) * validation_ratio / total)));
    c.train = std::min(c.train, n);
    c.test = n - c.train - c.validation;
    return c;
}

FeatureWindow feature_window(const SeriesBundle& series, const Fleet& fleet, const CommitmentSchedule& schedule,
                             std::size_t end_index, int length)
{
    if (length < 1 || end_index < static_cast<std::size_t>(length) + 1 || end_index > series.size()) {
        throw InputError("feature window: not enough history before sample " + std::to_string(end_index));
    }
    CommitmentLookup commit(fleet, schedule);
    FeatureWindow w;
    w.values.resize(length, kFeatureCount);
    for (int r = 0; r < length; ++r) {
        const std::size_t i = end_index - static_cast<std::size_t>(length) + static_cast<std::size_t>(r);
        const Fleet& f = commit.at(static_cast<int>(std::floor(series.t_s[i] / 3600.0)));
        // Quasi-steady droop response to the minute-to-minute netload change.
        const double stiff = frequency_stiffness(f, 0.01 * series.load[i]);
        w.values(r, 0) = series.load[i];
        w.values(r, 1) = series.wind[i] + series.solar[i];
        w.values(r, 2) = -(series.netload[i] - series.netload[i - 1]) / stiff;
        w.values(r, 3) = tg_inertia_lower_bound(f).value;
    }
    return w;
}

Dataset assemble_dataset(const SeriesBundle& series, const std::vector<RampEvent>& events, const Fleet& fleet,
                         const CommitmentSchedule& schedule, const std::vector<IdentRecord>& ident, int window_length)
{
    std::map<int, const IdentRecord*> by_id;
    for (const auto& r : ident) {
        by_id[r.event_id] = &r;
    }
    std::vector<const RampEvent*> ordered;
    for (const auto& e : events) {
        ordered.push_back(&e);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const RampEvent* a, const RampEvent* b) { return a->start_index < b->start_index; });

    Dataset ds;
    std::vector<LabeledWindow> all;
    for (const auto* e : ordered) {
        auto it = by_id.find(e->event_id);
        if (it == by_id.end()) {
            ds.skipped.push_back("event " + std::to_string(e->event_id) + ": no identification result");
            continue;
        }
        if (e->start_index < static_cast<std::size_t>(window_length) + 1) {
            ds.skipped.push_back("event " + std::to_string(e->event_id) + ": starts before a full " +
                                 std::to_string(window_length) + "-sample window");
            continue;
        }
        LabeledWindow lw;
        lw.sample_id = e->event_id;
        lw.window = feature_window(series, fleet, schedule, e->start_index, window_length);
        lw.H = it->second->result.H_hat;
        lw.D = it->second->result.D_hat;
        all.push_back(std::move(lw));
    }
    const auto c = split_counts(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto& dst = i < c.train ? ds.train : (i < c.train + c.validation ? ds.validation : ds.test);
        dst.push_back(std::move(all[i]));
    }
    return ds;
}

} // namespace agcdro
