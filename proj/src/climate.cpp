#include "saconv/climate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace saconv {

namespace {

constexpr int kMonthDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
constexpr int kCumDays[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};

int days_in_month(int year, int month) {
    if (month == 2 && Date::is_leap(year)) return 29;
    return kMonthDays[month - 1];
}

}  // namespace

bool Date::is_leap(int year) {
    return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}

Date Date::parse(const std::string& iso) {
    int y = 0, m = 0, d = 0;
    char extra = 0;
    if (std::sscanf(iso.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &extra) != 3 ||
        iso.size() != 10) {
        throw InputError("date '" + iso + "' is not YYYY-MM-DD");
    }
    if (m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) {
        throw InputError("date '" + iso + "' is not a valid calendar day");
    }
    return Date{y, m, d};
}

std::string Date::iso() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

std::int64_t Date::ordinal() const {
    // days-from-civil, proleptic Gregorian
    int y = year - (month <= 2);
    std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    unsigned yoe = static_cast<unsigned>(y - era * 400);
    unsigned doy = (153u * static_cast<unsigned>(month + (month > 2 ? -3 : 9)) + 2u) / 5u +
                   static_cast<unsigned>(day) - 1u;
    unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097LL + static_cast<std::int64_t>(doe) - 719468LL;
}

Date Date::from_ordinal(std::int64_t z) {
    z += 719468;
    std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    unsigned doe = static_cast<unsigned>(z - era * 146097);
    unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    unsigned mp = (5 * doy + 2) / 153;
    unsigned d = doy - (153 * mp + 2) / 5 + 1;
    unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

int Date::calendar_bin() const {
    if (month == 2 && day == 29) return kCumDays[1] + 27;  // pooled with Feb 28
    return kCumDays[month - 1] + day - 1;
}

void DailyGridSeries::validate() const {
    if (dates.size() != grids.size()) {
        throw InputError("grid series '" + variable + "': " + std::to_string(dates.size()) +
                         " dates vs " + std::to_string(grids.size()) + " grids");
    }
    for (std::size_t i = 1; i < dates.size(); ++i) {
        if (!(dates[i - 1] < dates[i])) {
            throw InputError("grid series '" + variable + "': dates not strictly increasing at " +
                             dates[i].iso());
        }
    }
    std::vector<int> shape{n_lat(), n_lon()};
    for (const Tensor& g : grids) {
        if (g.shape != shape) {
            throw InputError("grid series '" + variable + "': grid " + shape_str(g.shape) +
                             " does not match coordinates " + shape_str(shape));
        }
    }
}

int Dataset::count_positives(const std::vector<GridSample>& s) {
    int n = 0;
    for (const GridSample& g : s) n += g.label;
    return n;
}

double percentile(std::vector<double> x, double m) {
    if (x.empty()) throw InputError("percentile: empty array");
    if (!(m >= 0.0 && m <= 1.0)) {
        throw InputError("percentile: fraction " + std::to_string(m) + " outside [0,1]");
    }
    std::sort(x.begin(), x.end());
    double k = m * static_cast<double>(x.size() - 1);
    double f = std::floor(k);
    double c = std::ceil(k);
    auto fi = static_cast<std::size_t>(f);
    if (f == c) return x[fi];
    return x[fi] * (c - k) + x[fi + 1] * (k - f);
}

std::vector<double> regional_mean(const DailyGridSeries& s, double lat_lo, double lat_hi,
                                  double lon_lo, double lon_hi) {
    s.validate();
    std::vector<std::pair<int, int>> cells;
    for (int i = 0; i < s.n_lat(); ++i) {
        if (s.lat[static_cast<std::size_t>(i)] < lat_lo ||
            s.lat[static_cast<std::size_t>(i)] > lat_hi)
            continue;
        for (int j = 0; j < s.n_lon(); ++j) {
            if (s.lon[static_cast<std::size_t>(j)] >= lon_lo &&
                s.lon[static_cast<std::size_t>(j)] <= lon_hi) {
                cells.emplace_back(i, j);
            }
        }
    }
    if (cells.empty()) {
        throw InputError("regional_mean: box lat[" + std::to_string(lat_lo) + "," +
                         std::to_string(lat_hi) + "] lon[" + std::to_string(lon_lo) + "," +
                         std::to_string(lon_hi) + "] does not intersect the grid");
    }
    std::vector<double> out(s.grids.size());
    for (std::size_t d = 0; d < s.grids.size(); ++d) {
        double sum = 0.0;
        for (auto [i, j] : cells) sum += s.grids[d](i, j);
        out[d] = sum / static_cast<double>(cells.size());
    }
    return out;
}

LabelSeries label_extremes(const PrecipSeries& precip, double m) {
    if (precip.dates.size() != precip.values.size()) {
        throw InputError("label_extremes: " + std::to_string(precip.dates.size()) +
                         " dates vs " + std::to_string(precip.values.size()) + " values");
    }
    LabelSeries out;
    out.dates = precip.dates;
    out.threshold_percentile = m;
    out.threshold_value = percentile(precip.values, m);
    out.labels.reserve(precip.values.size());
    for (double v : precip.values) out.labels.push_back(v > out.threshold_value ? 1 : 0);
    return out;
}

Climatology climatology(const DailyGridSeries& s) {
    s.validate();
    if (s.grids.empty()) throw InputError("climatology: empty series");
    Climatology clim;
    clim.n_lat = s.n_lat();
    clim.n_lon = s.n_lon();
    clim.mean.assign(365, Tensor({clim.n_lat, clim.n_lon}));
    clim.sd.assign(365, Tensor({clim.n_lat, clim.n_lon}));
    clim.count.assign(365, 0);
    for (std::size_t d = 0; d < s.grids.size(); ++d) {
        int bin = s.dates[d].calendar_bin();
        auto& m = clim.mean[static_cast<std::size_t>(bin)];
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += s.grids[d].data[i];
        ++clim.count[static_cast<std::size_t>(bin)];
    }
    for (int b = 0; b < 365; ++b) {
        if (clim.count[static_cast<std::size_t>(b)] == 0) continue;
        double inv = 1.0 / clim.count[static_cast<std::size_t>(b)];
        for (double& v : clim.mean[static_cast<std::size_t>(b)].data) v *= inv;
    }
    // second pass: population variance about the bin mean
    for (std::size_t d = 0; d < s.grids.size(); ++d) {
        int bin = s.dates[d].calendar_bin();
        auto& m = clim.mean[static_cast<std::size_t>(bin)];
        auto& v = clim.sd[static_cast<std::size_t>(bin)];
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            double r = s.grids[d].data[i] - m.data[i];
            v.data[i] += r * r;
        }
    }
    for (int b = 0; b < 365; ++b) {
        if (clim.count[static_cast<std::size_t>(b)] == 0) continue;
        double inv = 1.0 / clim.count[static_cast<std::size_t>(b)];
        for (double& v : clim.sd[static_cast<std::size_t>(b)].data) v = std::sqrt(v * inv);
    }
    return clim;
}

DailyGridSeries zscore_anomalies(const DailyGridSeries& s, const Climatology& clim) {
    s.validate();
    if (clim.n_lat != s.n_lat() || clim.n_lon != s.n_lon()) {
        throw InputError("zscore: climatology grid " + shape_str({clim.n_lat, clim.n_lon}) +
                         " vs series " + shape_str({s.n_lat(), s.n_lon()}));
    }
    DailyGridSeries out = s;
    for (std::size_t d = 0; d < s.grids.size(); ++d) {
        int bin = s.dates[d].calendar_bin();
        if (clim.count[static_cast<std::size_t>(bin)] == 0) {
            throw InputError("zscore: no climatology for calendar day of " + s.dates[d].iso());
        }
        const auto& m = clim.mean[static_cast<std::size_t>(bin)];
        const auto& sd = clim.sd[static_cast<std::size_t>(bin)];
        auto& g = out.grids[d];
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            g.data[i] = sd.data[i] < 1e-9 ? 0.0 : (g.data[i] - m.data[i]) / sd.data[i];
        }
    }
    return out;
}

Dataset build_dataset(const DailyGridSeries& var_a, const DailyGridSeries& var_b,
                      const LabelSeries& labels, double train_fraction) {
    var_a.validate();
    var_b.validate();
    if (var_a.dates != var_b.dates || var_a.dates != labels.dates) {
        throw InputError("build_dataset: date axes of the two variables and labels differ");
    }
    if (var_a.n_lat() != var_b.n_lat() || var_a.n_lon() != var_b.n_lon()) {
        throw InputError("build_dataset: variable grids " +
                         shape_str({var_a.n_lat(), var_a.n_lon()}) + " vs " +
                         shape_str({var_b.n_lat(), var_b.n_lon()}));
    }
    int h = var_a.n_lat(), w = var_a.n_lon();
    std::vector<GridSample> all;
    all.reserve(var_a.dates.size());
    for (std::size_t d = 0; d < var_a.dates.size(); ++d) {
        int lab = labels.labels[d];
        if (lab != 0 && lab != 1) {
            throw InputError("build_dataset: label " + std::to_string(lab) + " at " +
                             var_a.dates[d].iso() + " is not 0/1");
        }
        GridSample gs;
        gs.date = var_a.dates[d];
        gs.label = lab;
        gs.anomalies = Tensor({h, w, 2});
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                gs.anomalies(i, j, 0) = var_a.grids[d](i, j);
                gs.anomalies(i, j, 1) = var_b.grids[d](i, j);
            }
        all.push_back(std::move(gs));
    }
    auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(all.size())));
    Dataset ds;
    ds.threshold_percentile = labels.threshold_percentile;
    ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

constexpr int kSynthLat = 15;
constexpr int kSynthLon = 35;
constexpr double kPlantedFraction = 0.2;
constexpr double kSmoothSigma = 1.2;
constexpr int kSmoothRadius = 3;
constexpr double kLobeSigma = 1.75;
constexpr int kJitter = 3;
// the two lobe anchors, far apart so the pairing is a long-range feature
constexpr int kLobeARow = 7, kLobeACol = 9;
constexpr int kLobeBRow = 7, kLobeBCol = 26;
constexpr double kDistractorProb = 0.35;

// truncated-and-renormalized separable Gaussian blur, then rescaled so an
// interior cell keeps unit variance
Tensor smooth_unit_noise(Rng& rng) {
    double w[2 * kSmoothRadius + 1];
    double wsum = 0.0;
    for (int t = -kSmoothRadius; t <= kSmoothRadius; ++t) {
        w[t + kSmoothRadius] = std::exp(-0.5 * t * t / (kSmoothSigma * kSmoothSigma));
        wsum += w[t + kSmoothRadius];
    }
    double w2 = 0.0;
    for (double& v : w) {
        v /= wsum;
        w2 += v * v;
    }
    Tensor noise({kSynthLat, kSynthLon});
    for (double& v : noise.data) v = rng.normal();
    Tensor rows({kSynthLat, kSynthLon});
    for (int i = 0; i < kSynthLat; ++i)
        for (int j = 0; j < kSynthLon; ++j) {
            double acc = 0.0, norm = 0.0;
            for (int t = -kSmoothRadius; t <= kSmoothRadius; ++t) {
                int jj = j + t;
                if (jj < 0 || jj >= kSynthLon) continue;
                acc += w[t + kSmoothRadius] * noise(i, jj);
                norm += w[t + kSmoothRadius];
            }
            rows(i, j) = acc / norm;
        }
    Tensor out({kSynthLat, kSynthLon});
    for (int i = 0; i < kSynthLat; ++i)
        for (int j = 0; j < kSynthLon; ++j) {
            double acc = 0.0, norm = 0.0;
            for (int t = -kSmoothRadius; t <= kSmoothRadius; ++t) {
                int ii = i + t;
                if (ii < 0 || ii >= kSynthLat) continue;
                acc += w[t + kSmoothRadius] * rows(ii, j);
                norm += w[t + kSmoothRadius];
            }
            out(i, j) = acc / (norm * w2);
        }
    return out;
}

void add_lobe(Tensor& field, double row, double col, double amplitude) {
    for (int i = 0; i < kSynthLat; ++i)
        for (int j = 0; j < kSynthLon; ++j) {
            double d2 = (i - row) * (i - row) + (j - col) * (j - col);
            field(i, j) += amplitude * std::exp(-0.5 * d2 / (kLobeSigma * kLobeSigma));
        }
}

}  // namespace

SynthOutput synth_generate(std::uint64_t seed, int n_days, double signal_strength) {
    if (n_days < 40) {
        throw ContractError("synth_generate: need at least 40 days, got " +
                            std::to_string(n_days));
    }
    Rng flag_rng(derive_seed(seed, 1));
    Rng field_rng(derive_seed(seed, 2));
    Rng pattern_rng(derive_seed(seed, 3));
    Rng precip_rng(derive_seed(seed, 4));

    SynthOutput out;
    out.planted_fraction = kPlantedFraction;
    auto n = static_cast<std::size_t>(n_days);

    // exact planted count, uniformly placed
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    flag_rng.shuffle(order);
    auto n_pos = static_cast<std::size_t>(
        std::llround(kPlantedFraction * static_cast<double>(n_days)));
    out.truth.assign(n, 0);
    for (std::size_t i = 0; i < n_pos; ++i) out.truth[static_cast<std::size_t>(order[i])] = 1;

    for (DailyGridSeries* s : {&out.slp, &out.gph}) {
        s->lat.resize(kSynthLat);
        s->lon.resize(kSynthLon);
        for (int i = 0; i < kSynthLat; ++i) s->lat[static_cast<std::size_t>(i)] = 20.0 + 2.5 * i;
        for (int j = 0; j < kSynthLon; ++j) s->lon[static_cast<std::size_t>(j)] = -140.0 + 2.5 * j;
    }
    out.slp.variable = "slp";
    out.gph.variable = "gph";

    Date start{2000, 1, 1};
    for (int d = 0; d < n_days; ++d) {
        Date date = Date::from_ordinal(start.ordinal() + d);
        out.slp.dates.push_back(date);
        out.gph.dates.push_back(date);

        Tensor a = smooth_unit_noise(field_rng);
        Tensor b = smooth_unit_noise(field_rng);

        if (out.truth[static_cast<std::size_t>(d)] == 1) {
            double r1 = kLobeARow + static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) -
                        kJitter;
            double c1 = kLobeACol + static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) -
                        kJitter;
            double r2 = kLobeBRow + static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) -
                        kJitter;
            double c2 = kLobeBCol + static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) -
                        kJitter;
            add_lobe(a, r1, c1, signal_strength);
            add_lobe(a, r2, c2, -signal_strength);
            add_lobe(b, r1, c1, 0.9 * signal_strength);
            add_lobe(b, r2, c2, -0.9 * signal_strength);
        } else if (pattern_rng.uniform() < kDistractorProb) {
            // a lone lobe on a normal day; only the paired pattern means extreme
            bool site_a = pattern_rng.uniform() < 0.5;
            double polarity = pattern_rng.uniform() < 0.5 ? 1.0 : -1.0;
            double r = (site_a ? kLobeARow : kLobeBRow) +
                       static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) - kJitter;
            double c = (site_a ? kLobeACol : kLobeBCol) +
                       static_cast<double>(pattern_rng.next_below(2 * kJitter + 1)) - kJitter;
            add_lobe(a, r, c, polarity * signal_strength);
            add_lobe(b, r, c, polarity * 0.9 * signal_strength);
        }
        out.slp.grids.push_back(std::move(a));
        out.gph.grids.push_back(std::move(b));

        double base = std::exp(0.6 * precip_rng.normal());
        double boost = out.truth[static_cast<std::size_t>(d)] == 1
                           ? signal_strength * (1.2 + 0.4 * precip_rng.uniform())
                           : 0.0;
        out.precip.dates.push_back(date);
        out.precip.values.push_back(base + boost);
    }
    return out;
}

}  // namespace saconv
