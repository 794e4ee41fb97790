#pragma once

#include <optional>
#include <span>
#include <vector>

#include "depeg/bocd.hpp"
#include "depeg/types.hpp"

namespace depeg::evaluation {

struct ScoringConfig {
    Timestamp margin_m = 48 * 3600; // M, maximum allowed lead
    double f_beta = 1.0;
    double depeg_threshold = 0.05;

    void validate() const;
};

struct DepegLabel {
    Timestamp ts = 0;
    double deviation = 0.0; // (virtual - share) / virtual

    friend bool operator==(const DepegLabel&, const DepegLabel&) = default;
};

struct LabelSet {
    std::vector<DepegLabel> labels;       // every labelled timestamp
    std::vector<Timestamp> first_crossings; // first timestamp of each consecutive labelled run

    std::vector<Timestamp> timestamps() const;
};

// Labels every t with (vp - sp) / vp >= threshold. Both series must share timestamps.
LabelSet label_depegs(const MetricSeries& share_prices, const MetricSeries& virtual_prices, const ScoringConfig& cfg);

// Timestamps where the series moves from >= level to < level.
std::vector<Timestamp> price_threshold_crossings(const MetricSeries& prices, double level);

struct Match {
    Timestamp label = 0;
    Timestamp prediction = 0;
    double weight = 0.0; // (label - prediction) / M

    friend bool operator==(const Match&, const Match&) = default;
};

// Each label (ascending) takes the earliest unmatched prediction with 0 <= label - x <= M.
std::vector<Match> match_true_positives(std::span<const Timestamp> labels, std::span<const Timestamp> predictions,
                                        Timestamp margin_m);

struct ScoreReport {
    double precision = 0.0;
    double weighted_recall = 0.0;
    double lf_score = 0.0;
    std::vector<Match> matches;
    std::vector<Timestamp> false_positives;
    std::size_t n_labels = 0;
    std::size_t n_predictions = 0;
    ScoringConfig config;
};

// Leading F-beta: P = matched / |X|, R = sum(weights) / |T|, F = (1 + b^2) P R / (b^2 P + R).
ScoreReport lf_score(std::span<const Timestamp> labels, std::span<const Timestamp> predictions,
                     const ScoringConfig& cfg);

struct GridSpace {
    int exponent_lo = -5;
    int exponent_hi = 4;
    double base = 10.0;

    void validate() const;
};

struct GridPoint {
    int i = 0; // alpha exponent
    int j = 0; // beta exponent
    int k = 0; // kappa exponent
    bocd::NGParams params;
};

// base^e, exact for integral bases and exponents within double's exact range.
double grid_value(double base, int exponent);

std::vector<GridPoint> grid_points(const GridSpace& space);
std::vector<bocd::NGParams> grid_configs(const GridSpace& space);

struct TuneResult {
    GridPoint best;
    ScoreReport report;
    bool all_zero = false; // every configuration scored F = 0
    std::size_t evaluated = 0;
};

// Grid search over (alpha, beta, kappa) with mu = 0; best lF, then higher precision,
// then smallest (i, j, k). Evaluations spread over `workers` threads; the reduction is
// sequential so the result does not depend on the worker count.
TuneResult tune(const MetricSeries& train_series, std::span<const Timestamp> labels, const GridSpace& space,
                const ScoringConfig& scoring, const bocd::DetectorConfig& base, unsigned workers = 1);

struct LeadTime {
    Timestamp crossing = 0;
    std::optional<Timestamp> changepoint; // earliest changepoint within M before the crossing
    Timestamp lead_seconds = 0;
};

std::vector<LeadTime> lead_times(std::span<const Timestamp> crossings, std::span<const Timestamp> changepoints,
                                 Timestamp margin_m);

} // namespace depeg::evaluation
