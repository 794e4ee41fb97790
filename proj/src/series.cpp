#include "depeg/series.hpp"

#include <cmath>
#include <string>

#include "depeg/errors.hpp"

namespace depeg {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

TokenId::TokenId(std::string sym, std::string addr) : symbol(std::move(sym)), address(std::move(addr)) {
    if (symbol.empty()) throw ValidationError("token symbol must be non-empty");
    if (!address.empty() && !is_hex_address(address))
        throw ValidationError("token address for " + symbol + " must be 40 lowercase hex chars");
}

bool is_hex_address(const std::string& s) {
    std::string_view v = s;
    if (v.starts_with("0x")) v.remove_prefix(2);
    if (v.size() != 40) return false;
    for (char c : v) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

void validate(const TradeEvent& e) {
    if (e.ts < 0) throw ValidationError("trade timestamp is negative");
    if (!(e.amount_in > 0.0)) throw ValidationError("trade amount_in must be > 0");
    if (!(e.amount_out > 0.0)) throw ValidationError("trade amount_out must be > 0");
    if (e.token_in == e.token_out) throw ValidationError("trade token_in equals token_out");
}

void validate(const LiquidityEvent& e) {
    if (e.ts < 0) throw ValidationError("liquidity timestamp is negative");
    if (e.deltas.empty()) throw ValidationError("liquidity event has no token legs");
    int sign = 0;
    for (const auto& [token, d] : e.deltas) {
        if (!std::isfinite(d)) throw ValidationError("liquidity delta for " + token.symbol + " is not finite");
        int s = d > 0 ? 1 : (d < 0 ? -1 : 0);
        if (s == 0) continue;
        if (sign != 0 && s != sign) throw ValidationError("liquidity deltas mix deposits and withdrawals");
        sign = s;
    }
    int lp_sign = e.lp_token_delta > 0 ? 1 : (e.lp_token_delta < 0 ? -1 : 0);
    if (sign != 0 && lp_sign != 0 && lp_sign != sign)
        throw ValidationError("lp_token_delta sign does not match token deltas");
}

void validate(const PriceSample& s) {
    if (s.ts < 0) throw ValidationError("price timestamp is negative");
    if (!(s.usd_price > 0.0) || !std::isfinite(s.usd_price))
        throw ValidationError("usd_price for " + s.token.symbol + " must be > 0");
}

std::vector<double> MetricSeries::values() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.value);
    return out;
}

std::vector<Timestamp> MetricSeries::timestamps() const {
    std::vector<Timestamp> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.ts);
    return out;
}

MetricSeries MetricSeries::slice(Timestamp from, Timestamp to) const {
    MetricSeries out{metric_name, pool_id, {}};
    for (const auto& p : points) {
        if (p.ts >= from && p.ts < to) out.points.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

AggregateMode parse_aggregate_mode(const std::string& s) {
    if (s == "sum") return AggregateMode::sum;
    if (s == "last") return AggregateMode::last;
    if (s == "mean") return AggregateMode::mean;
    throw ValidationError("unknown aggregation mode '" + s + "'");
}

Timestamp bucket_end(Timestamp ts, Timestamp period) {
    if (ts <= 0) return period;
    return ((ts + period - 1) / period) * period;
}

MetricSeries aggregate(std::span<const SeriesPoint> points, Timestamp period, AggregateMode mode,
                       std::optional<BucketSpan> span) {
    if (period <= 0) throw ValidationError("aggregation period must be positive");
    MetricSeries out;
    if (points.empty() && !span) return out;
    for (std::size_t k = 1; k < points.size(); ++k) {
        if (points[k].ts < points[k - 1].ts)
            throw ValidationError("aggregate: points not sorted at ts=" + std::to_string(points[k].ts));
    }

    Timestamp first = span ? bucket_end(span->first, period) : bucket_end(points.front().ts, period);
    Timestamp last = span ? bucket_end(span->last, period) : bucket_end(points.back().ts, period);
    if (last < first) return out;

    std::size_t idx = 0;
    // Points before the span are dropped in sum/mean mode but still seed "last".
    std::optional<double> carry;
    while (idx < points.size() && bucket_end(points[idx].ts, period) < first) {
        carry = points[idx].value;
        ++idx;
    }
    if (mode == AggregateMode::mean) carry.reset();

    out.points.reserve(static_cast<std::size_t>((last - first) / period + 1));
    for (Timestamp b = first; b <= last; b += period) {
        double sum = 0.0;
        double last_v = 0.0;
        std::size_t n = 0;
        while (idx < points.size() && bucket_end(points[idx].ts, period) == b) {
            sum += points[idx].value;
            last_v = points[idx].value;
            ++n;
            ++idx;
        }
        switch (mode) {
        case AggregateMode::sum:
            out.points.push_back({b, sum});
            break;
        case AggregateMode::last:
        case AggregateMode::mean:
            if (n > 0) carry = mode == AggregateMode::last ? last_v : sum / static_cast<double>(n);
            if (carry) out.points.push_back({b, *carry});
            break;
        }
    }
    return out;
}

MetricSeries log_diff(const MetricSeries& series) {
    MetricSeries out{series.metric_name, series.pool_id, {}};
    for (const auto& p : series.points) {
        if (!(p.value > 0.0))
            throw DomainError("log_diff: non-positive value " + std::to_string(p.value) + " at ts=" + std::to_string(p.ts));
    }
    if (series.size() < 2) return out;
    out.points.reserve(series.size() - 1);
    for (std::size_t k = 1; k < series.size(); ++k) {
        out.points.push_back({series.points[k].ts, std::log(series.points[k].value / series.points[k - 1].value)});
    }
    return out;
}

MetricSeries diff(const MetricSeries& series) {
    MetricSeries out{series.metric_name, series.pool_id, {}};
    if (series.size() < 2) return out;
    out.points.reserve(series.size() - 1);
    for (std::size_t k = 1; k < series.size(); ++k) {
        out.points.push_back({series.points[k].ts, series.points[k].value - series.points[k - 1].value});
    }
    return out;
}

SeriesStats fit_stats(const MetricSeries& series) {
    if (series.empty()) throw ValidationError("fit_stats: empty training slice");
    const double n = static_cast<double>(series.size());
    double mean = 0.0;
    for (const auto& p : series.points) mean += p.value;
    mean /= n;
    double ss = 0.0;
    for (const auto& p : series.points) ss += (p.value - mean) * (p.value - mean);
    return {mean, std::sqrt(ss / n)};
}

MetricSeries standardize(const MetricSeries& series, double ref_mean, double ref_std) {
    if (!(ref_std > 0.0)) throw DomainError("standardize: reference std must be > 0");
    MetricSeries out = series;
    for (auto& p : out.points) p.value = (p.value - ref_mean) / ref_std;
    return out;
}

MetricSeries unstandardize(const MetricSeries& series, double ref_mean, double ref_std) {
    if (!(ref_std > 0.0)) throw DomainError("unstandardize: reference std must be > 0");
    MetricSeries out = series;
    for (auto& p : out.points) p.value = p.value * ref_std + ref_mean;
    return out;
}

} // namespace depeg
