#include "depeg/pin.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>

#include "depeg/errors.hpp"

namespace depeg::metrics {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kImprovementTol = 1e-8;

// count * log(rate), with 0 * log(0) = 0.
double count_log_rate(std::uint64_t count, double rate) {
    if (count == 0) return 0.0;
    return rate > 0.0 ? static_cast<double>(count) * std::log(rate) : kNegInf;
}

double log_weight(double w) { return w > 0.0 ? std::log(w) : kNegInf; }

double log_sum_exp3(double a, double b, double c) {
    const double m = std::max({a, b, c});
    if (m == kNegInf) return kNegInf;
    return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

constexpr std::size_t kDim = 5;
using Point = std::array<double, kDim>;

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

PinParams decode(const Point& z) {
    return {logistic(z[0]), logistic(z[1]), std::exp(z[2]), std::exp(z[3]), std::exp(z[4])};
}

Point encode(const PinParams& p) {
    auto clamp01 = [](double v) { return std::clamp(v, 1e-9, 1.0 - 1e-9); };
    auto pos = [](double v) { return std::max(v, 1e-9); };
    return {logit(clamp01(p.alpha)), logit(clamp01(p.theta)), std::log(pos(p.eps_i)), std::log(pos(p.eps_b)),
            std::log(pos(p.eps_s))};
}

// Minimizes f from x0; returns the best vertex.
std::pair<Point, double> nelder_mead(const std::function<double(const Point&)>& f, const Point& x0, double step) {
    constexpr int kMaxEvals = 6000;
    constexpr double kBound = 40.0;
    auto eval = [&](Point p) {
        for (double& v : p) v = std::clamp(v, -kBound, kBound);
        const double v = f(p);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::array<Point, kDim + 1> simplex;
    std::array<double, kDim + 1> fv;
    simplex[0] = x0;
    for (std::size_t k = 0; k < kDim; ++k) {
        simplex[k + 1] = x0;
        simplex[k + 1][k] += step;
    }
    int evals = 0;
    for (std::size_t k = 0; k <= kDim; ++k) {
        fv[k] = eval(simplex[k]);
        ++evals;
    }

    std::array<std::size_t, kDim + 1> order;
    while (evals < kMaxEvals) {
        for (std::size_t k = 0; k <= kDim; ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[kDim - 1];
        if (std::abs(fv[worst] - fv[best]) < 1e-10 && std::isfinite(fv[worst])) break;

        Point centroid{};
        for (std::size_t k = 0; k <= kDim; ++k) {
            if (k == worst) continue;
            for (std::size_t d = 0; d < kDim; ++d) centroid[d] += simplex[k][d] / static_cast<double>(kDim);
        }
        auto along = [&](double t) {
            Point p;
            for (std::size_t d = 0; d < kDim; ++d) p[d] = centroid[d] + t * (simplex[worst][d] - centroid[d]);
            return p;
        };

        const Point xr = along(-1.0);
        const double fr = eval(xr);
        ++evals;
        if (fr < fv[best]) {
            const Point xe = along(-2.0);
            const double fe = eval(xe);
            ++evals;
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        const Point xc = along(outside ? -0.5 : 0.5);
        const double fc = eval(xc);
        ++evals;
        if (fc < (outside ? fr : fv[worst])) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t k = 0; k <= kDim; ++k) {
            if (k == best) continue;
            for (std::size_t d = 0; d < kDim; ++d)
                simplex[k][d] = simplex[best][d] + 0.5 * (simplex[k][d] - simplex[best][d]);
            fv[k] = eval(simplex[k]);
            ++evals;
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    Point best = simplex[static_cast<std::size_t>(it - fv.begin())];
    for (double& v : best) v = std::clamp(v, -kBound, kBound);
    return {best, *it};
}

} // namespace

bool PinParams::valid() const {
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    return alpha >= 0.0 && alpha <= 1.0 && theta >= 0.0 && theta <= 1.0 && finite_nonneg(eps_i) &&
           finite_nonneg(eps_b) && finite_nonneg(eps_s);
}

double pin_value(const PinParams& p) {
    const double informed = p.alpha * p.eps_i;
    const double total = p.eps_b + p.eps_s + informed;
    return total > 0.0 ? informed / total : 0.0;
}

double pin_likelihood(std::span<const PinBucket> buckets, const PinParams& p) {
    if (!p.valid()) return kNegInf;
    const double w_buy = log_weight(p.alpha * (1.0 - p.theta));
    const double w_sell = log_weight(p.alpha * p.theta);
    const double w_none = log_weight(1.0 - p.alpha);
    const double all_rates = p.eps_i + p.eps_b + p.eps_s;
    const double noise_rates = p.eps_b + p.eps_s;

    double total = 0.0;
    for (const auto& b : buckets) {
        const double log_fact = std::lgamma(static_cast<double>(b.buys) + 1.0) + std::lgamma(static_cast<double>(b.sells) + 1.0);
        const double informed_buying =
            w_buy - all_rates + count_log_rate(b.buys, p.eps_i + p.eps_b) + count_log_rate(b.sells, p.eps_s);
        const double informed_selling =
            w_sell - all_rates + count_log_rate(b.buys, p.eps_b) + count_log_rate(b.sells, p.eps_i + p.eps_s);
        const double no_event = w_none - noise_rates + count_log_rate(b.buys, p.eps_b) + count_log_rate(b.sells, p.eps_s);
        total += log_sum_exp3(informed_buying, informed_selling, no_event) - log_fact;
        if (total == kNegInf) return kNegInf;
    }
    return total;
}

PinEstimate estimate_pin(std::span<const PinBucket> buckets) {
    if (buckets.size() < 2) throw ValidationError("estimate_pin: at least two buckets required");
    double mean_b = 0.0;
    double mean_s = 0.0;
    for (const auto& b : buckets) {
        mean_b += static_cast<double>(b.buys);
        mean_s += static_cast<double>(b.sells);
    }
    mean_b /= static_cast<double>(buckets.size());
    mean_s /= static_cast<double>(buckets.size());

    const auto objective = [&](const Point& z) { return -pin_likelihood(buckets, decode(z)); };

    PinEstimate est;
    est.log_likelihood = kNegInf;
    Point best_z{};
    for (double alpha : {0.1, 0.5}) {
        for (double theta : {0.1, 0.5}) {
            for (double uninformed_share : {0.5, 0.9}) {
                PinParams start{alpha, theta,
                                std::max((1.0 - uninformed_share) * (mean_b + mean_s) / alpha, 1e-3),
                                std::max(uninformed_share * mean_b, 1e-3), std::max(uninformed_share * mean_s, 1e-3)};
                est.starts.push_back(start);
                est.start_log_likelihoods.push_back(pin_likelihood(buckets, start));

                // Restart the simplex at the incumbent until the gain stalls.
                Point z = encode(start);
                double f = objective(z);
                for (int round = 0; round < 50; ++round) {
                    auto [z_new, f_new] = nelder_mead(objective, z, round == 0 ? 1.0 : 0.25);
                    const bool improved = f_new < f;
                    const double gain = improved ? f - f_new : 0.0;
                    if (improved) {
                        z = z_new;
                        f = f_new;
                    }
                    if (gain < kImprovementTol) break;
                }
                const double ll = -f;
                if (std::isfinite(ll) && ll > est.log_likelihood) {
                    est.log_likelihood = ll;
                    best_z = z;
                }
            }
        }
    }
    if (!std::isfinite(est.log_likelihood)) {
        throw NumericalError("estimate_pin: no start produced a finite likelihood");
    }
    est.params = decode(best_z);
    // Re-evaluate at the decoded point so the reported value matches the params exactly.
    est.log_likelihood = pin_likelihood(buckets, est.params);
    est.pin = pin_value(est.params);
    return est;
}

MetricSeries rolling_pin(std::span<const PinBucket> buckets, std::size_t window) {
    if (window < 2) throw ValidationError("rolling_pin: window must be >= 2");
    MetricSeries out{"pin", "", {}};
    for (std::size_t end = window; end <= buckets.size(); ++end) {
        const auto est = estimate_pin(buckets.subspan(end - window, window));
        out.points.push_back({buckets[end - 1].ts, est.pin});
    }
    return out;
}

std::vector<PinBucket> pin_buckets(std::span<const TradeEvent> trades, const TokenId& token, Timestamp bucket,
                                   std::optional<BucketSpan> span) {
    std::vector<SeriesPoint> buys;
    std::vector<SeriesPoint> sells;
    for (const auto& t : trades) {
        buys.push_back({t.ts, t.token_out == token ? 1.0 : 0.0});
        sells.push_back({t.ts, t.token_in == token ? 1.0 : 0.0});
    }
    const auto b = aggregate(buys, bucket, AggregateMode::sum, span);
    const auto s = aggregate(sells, bucket, AggregateMode::sum, span);
    std::vector<PinBucket> out;
    out.reserve(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) {
        out.push_back({b.points[k].ts, static_cast<std::uint64_t>(b.points[k].value),
                       static_cast<std::uint64_t>(s.points[k].value)});
    }
    return out;
}

} // namespace depeg::metrics
