#include "depeg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <tuple>

#include "depeg/errors.hpp"

namespace depeg::evaluation {

void ScoringConfig::validate() const {
    if (margin_m <= 0) throw ValidationError("scoring margin M must be > 0");
    if (!(f_beta > 0.0)) throw ValidationError("F-score beta must be > 0");
    if (!(depeg_threshold > 0.0 && depeg_threshold < 1.0)) throw ValidationError("depeg threshold must lie in (0, 1)");
}

void GridSpace::validate() const {
    if (exponent_hi < exponent_lo) throw ValidationError("grid exponent range is empty");
    if (!(base > 0.0)) throw ValidationError("grid base must be > 0");
}

std::vector<Timestamp> LabelSet::timestamps() const {
    std::vector<Timestamp> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(l.ts);
    return out;
}

LabelSet label_depegs(const MetricSeries& share_prices, const MetricSeries& virtual_prices, const ScoringConfig& cfg) {
    cfg.validate();
    if (share_prices.size() != virtual_prices.size())
        throw ValidationError("label_depegs: share and virtual price series differ in length");
    LabelSet out;
    bool in_run = false;
    for (std::size_t k = 0; k < share_prices.size(); ++k) {
        const auto& sp = share_prices.points[k];
        const auto& vp = virtual_prices.points[k];
        if (sp.ts != vp.ts)
            throw ValidationError("label_depegs: series misaligned at ts=" + std::to_string(sp.ts));
        if (!(vp.value > 0.0)) throw DomainError("label_depegs: non-positive virtual price at ts=" + std::to_string(vp.ts));
        const double deviation = (vp.value - sp.value) / vp.value;
        if (deviation >= cfg.depeg_threshold) {
            out.labels.push_back({sp.ts, deviation});
            if (!in_run) out.first_crossings.push_back(sp.ts);
            in_run = true;
        } else {
            in_run = false;
        }
    }
    return out;
}

std::vector<Timestamp> price_threshold_crossings(const MetricSeries& prices, double level) {
    std::vector<Timestamp> out;
    for (std::size_t k = 1; k < prices.size(); ++k) {
        if (prices.points[k - 1].value >= level && prices.points[k].value < level) out.push_back(prices.points[k].ts);
    }
    return out;
}

std::vector<Match> match_true_positives(std::span<const Timestamp> labels, std::span<const Timestamp> predictions,
                                        Timestamp margin_m) {
    if (margin_m <= 0) throw ValidationError("margin M must be > 0");
    std::vector<Timestamp> t(labels.begin(), labels.end());
    std::vector<Timestamp> x(predictions.begin(), predictions.end());
    std::sort(t.begin(), t.end());
    std::sort(x.begin(), x.end());
    std::vector<bool> used(x.size(), false);
    std::vector<Match> out;
    const double m = static_cast<double>(margin_m);
    // Predictions below the window of the current label can never match a later label.
    std::size_t lo = 0;
    for (Timestamp tau : t) {
        while (lo < x.size() && tau - x[lo] > margin_m) ++lo;
        for (std::size_t k = lo; k < x.size() && x[k] <= tau; ++k) {
            if (used[k]) continue;
            used[k] = true;
            out.push_back({tau, x[k], static_cast<double>(tau - x[k]) / m});
            break;
        }
    }
    return out;
}

ScoreReport lf_score(std::span<const Timestamp> labels, std::span<const Timestamp> predictions,
                     const ScoringConfig& cfg) {
    cfg.validate();
    ScoreReport r;
    r.config = cfg;
    r.n_labels = labels.size();
    r.n_predictions = predictions.size();
    r.matches = match_true_positives(labels, predictions, cfg.margin_m);

    std::vector<Timestamp> matched;
    for (const auto& m : r.matches) matched.push_back(m.prediction);
    std::sort(matched.begin(), matched.end());
    std::vector<Timestamp> x(predictions.begin(), predictions.end());
    std::sort(x.begin(), x.end());
    std::set_difference(x.begin(), x.end(), matched.begin(), matched.end(), std::back_inserter(r.false_positives));

    // Lead times are whole seconds, so P, R and F each come from a single division of
    // exactly representable quantities: F = (1 + b^2) m L / (b^2 m M |T| + L |X|).
    const auto m = static_cast<double>(r.matches.size());
    double lead = 0.0;
    for (const auto& mt : r.matches) lead += static_cast<double>(mt.label - mt.prediction);
    const auto n_x = static_cast<double>(predictions.size());
    const double mt_total = static_cast<double>(cfg.margin_m) * static_cast<double>(labels.size());
    if (n_x > 0) r.precision = m / n_x;
    if (mt_total > 0) r.weighted_recall = lead / mt_total;
    const double b2 = cfg.f_beta * cfg.f_beta;
    const double denom = b2 * m * mt_total + lead * n_x;
    r.lf_score = denom > 0.0 ? (1.0 + b2) * m * lead / denom : 0.0;
    return r;
}

double grid_value(double base, int exponent) {
    double v = 1.0;
    for (int e = 0; e < std::abs(exponent); ++e) v *= base;
    return exponent < 0 ? 1.0 / v : v;
}

std::vector<GridPoint> grid_points(const GridSpace& space) {
    space.validate();
    std::vector<GridPoint> out;
    for (int i = space.exponent_lo; i <= space.exponent_hi; ++i) {
        for (int j = space.exponent_lo; j <= space.exponent_hi; ++j) {
            for (int k = space.exponent_lo; k <= space.exponent_hi; ++k) {
                out.push_back({i, j, k,
                               bocd::NGParams{0.0, grid_value(space.base, i), grid_value(space.base, j),
                                              grid_value(space.base, k)}});
            }
        }
    }
    return out;
}

std::vector<bocd::NGParams> grid_configs(const GridSpace& space) {
    std::vector<bocd::NGParams> out;
    for (const auto& p : grid_points(space)) out.push_back(p.params);
    return out;
}

TuneResult tune(const MetricSeries& train_series, std::span<const Timestamp> labels, const GridSpace& space,
                const ScoringConfig& scoring, const bocd::DetectorConfig& base, unsigned workers) {
    if (labels.empty()) throw ValidationError("no depegs in training slice");
    scoring.validate();
    const auto points = grid_points(space);
    std::vector<ScoreReport> reports(points.size());

    auto evaluate = [&](std::size_t idx) {
        bocd::DetectorConfig cfg = base;
        cfg.prior = points[idx].params;
        const auto det = bocd::detect_series(train_series, cfg);
        std::vector<Timestamp> preds;
        preds.reserve(det.changepoints.size());
        for (const auto& cp : det.changepoints) preds.push_back(cp.ts);
        reports[idx] = lf_score(labels, preds, scoring);
    };

    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(points.size())));
    if (workers == 1) {
        for (std::size_t idx = 0; idx < points.size(); ++idx) evaluate(idx);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t idx = w; idx < points.size(); idx += workers) evaluate(idx);
            });
        }
    }

    std::size_t best = 0;
    for (std::size_t idx = 1; idx < points.size(); ++idx) {
        const auto& a = reports[idx];
        const auto& b = reports[best];
        if (a.lf_score > b.lf_score || (a.lf_score == b.lf_score && a.precision > b.precision)) best = idx;
        // Equal scores keep the earlier index, which is the lexicographically smaller (i, j, k).
    }
    TuneResult r;
    r.best = points[best];
    r.report = reports[best];
    r.evaluated = points.size();
    r.all_zero = std::all_of(reports.begin(), reports.end(), [](const ScoreReport& s) { return s.lf_score == 0.0; });
    return r;
}

std::vector<LeadTime> lead_times(std::span<const Timestamp> crossings, std::span<const Timestamp> changepoints,
                                 Timestamp margin_m) {
    std::vector<Timestamp> x(changepoints.begin(), changepoints.end());
    std::sort(x.begin(), x.end());
    std::vector<LeadTime> out;
    for (Timestamp c : crossings) {
        LeadTime lt{c, std::nullopt, 0};
        auto it = std::lower_bound(x.begin(), x.end(), c - margin_m);
        if (it != x.end() && *it <= c) {
            lt.changepoint = *it;
            lt.lead_seconds = c - *it;
        }
        out.push_back(lt);
    }
    return out;
}

} // namespace depeg::evaluation
