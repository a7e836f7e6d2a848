#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saconv/common.hpp"
#include "saconv/tensor.hpp"

namespace saconv {

struct Date {
    int year = 1970;
    int month = 1;
    int day = 1;

    static Date parse(const std::string& iso);  // YYYY-MM-DD, validated
    static Date from_ordinal(std::int64_t days_since_epoch);
    std::string iso() const;
    std::int64_t ordinal() const;  // days since 1970-01-01
    // Calendar-day bin 0..364; Feb 29 shares Feb 28's bin.
    int calendar_bin() const;
    static bool is_leap(int year);

    auto operator<=>(const Date&) const = default;
};

// One variable's day-ordered stack of [lat,lon] grids.
struct DailyGridSeries {
    std::string variable;
    std::vector<double> lat, lon;  // coordinates in degrees
    std::vector<Date> dates;
    std::vector<Tensor> grids;     // each [n_lat, n_lon]

    int n_lat() const { return static_cast<int>(lat.size()); }
    int n_lon() const { return static_cast<int>(lon.size()); }
    int n_days() const { return static_cast<int>(dates.size()); }
    void validate() const;  // strictly increasing dates, uniform grid shape
};

// Per-cell, per-calendar-day mean and population standard deviation.
struct Climatology {
    int n_lat = 0, n_lon = 0;
    std::vector<Tensor> mean;  // 365 bins of [lat,lon]
    std::vector<Tensor> sd;
    std::vector<int> count;    // samples per bin
};

struct PrecipSeries {
    std::vector<Date> dates;
    std::vector<double> values;
};

struct LabelSeries {
    std::vector<Date> dates;
    std::vector<int> labels;  // {0,1}
    double threshold_percentile = -1.0;  // the fraction m
    double threshold_value = 0.0;
};

struct GridSample {
    Date date;
    Tensor anomalies;  // [lat,lon,2]
    int label = 0;
};

struct Dataset {
    std::vector<GridSample> train, test;
    double threshold_percentile = -1.0;

    static int count_positives(const std::vector<GridSample>& s);
};

// Sorted linear-interpolation percentile: k = m*(n-1), zero-based indexing.
double percentile(std::vector<double> x, double m);

// Mean over cells with lat in [lat_lo,lat_hi] and lon in [lon_lo,lon_hi]
// (closed ranges), one value per date.
std::vector<double> regional_mean(const DailyGridSeries& s, double lat_lo, double lat_hi,
                                  double lon_lo, double lon_hi);

// threshold = percentile(values, m); label 1 iff value strictly exceeds it.
LabelSeries label_extremes(const PrecipSeries& precip, double m);

Climatology climatology(const DailyGridSeries& s);

// z = (x - mean)/sd per cell; cells with sd < 1e-9 get z = 0.
DailyGridSeries zscore_anomalies(const DailyGridSeries& s, const Climatology& clim);

// Stacks two anomaly variables into [lat,lon,2] samples and splits
// chronologically (train first, default 80/20).
Dataset build_dataset(const DailyGridSeries& var_a, const DailyGridSeries& var_b,
                      const LabelSeries& labels, double train_fraction = 0.8);

// Desk-scale stand-in for the real reanalysis inputs: spatially smoothed unit
// Gaussian background anomalies on a 15x35 grid; planted extreme days carry a
// jittered two-lobe (+/-) pattern in both variables; a synthetic regional
// precipitation series is boosted on those days so percentile relabeling
// correlates with the planted truth.
struct SynthOutput {
    DailyGridSeries slp, gph;
    std::vector<int> truth;        // planted extreme flags per day
    PrecipSeries precip;
    double planted_fraction = 0.0;
};
SynthOutput synth_generate(std::uint64_t seed, int n_days, double signal_strength);

}  // namespace saconv
