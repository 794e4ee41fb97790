#include "depeg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "depeg/errors.hpp"

namespace depeg::metrics {

void MetricConfig::validate() const {
    if (window <= 0 || markout_horizon <= 0 || shark_markout_horizon <= 0 || pin_bucket <= 0 || pin_window == 0)
        throw ValidationError("metric config: windows and horizons must be positive");
    if (!(shark_quantile > 0.0 && shark_quantile < 1.0))
        throw ValidationError("metric config: shark_quantile must lie in (0, 1)");
}

namespace {

std::vector<double> normalized(std::span<const double> balances) {
    double total = 0.0;
    for (double b : balances) {
        if (!(b >= 0.0)) throw DomainError("balances must be >= 0");
        total += b;
    }
    if (!(total > 0.0)) throw DomainError("balances sum to zero");
    std::vector<double> p(balances.begin(), balances.end());
    for (double& v : p) v /= total;
    return p;
}

MetricSeries flows_to_series(std::vector<SeriesPoint> pts, Timestamp window, std::optional<BucketSpan> span) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.ts < b.ts; });
    return aggregate(pts, window, AggregateMode::sum, span);
}

} // namespace

double shannon_entropy(std::span<const double> balances) {
    double h = 0.0;
    for (double p : normalized(balances)) {
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

double gini(std::span<const double> balances) {
    if (balances.size() < 2) throw DomainError("gini needs at least two balances");
    auto p = normalized(balances);
    std::sort(p.begin(), p.end());
    const double n = static_cast<double>(p.size());
    double g = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) g += (2.0 * static_cast<double>(k + 1) - n - 1.0) * p[k];
    return g / (n - 1.0);
}

MetricSeries net_swap_flow(std::span<const TradeEvent> trades, const TokenId& token, Timestamp window,
                           std::optional<BucketSpan> span) {
    std::vector<SeriesPoint> pts;
    for (const auto& t : trades) {
        double v = 0.0;
        if (t.token_out == token) v += t.amount_out;
        if (t.token_in == token) v -= t.amount_in;
        pts.push_back({t.ts, v});
    }
    auto s = flows_to_series(std::move(pts), window, span);
    s.metric_name = "netSwapFlow";
    return s;
}

MetricSeries net_lp_flow(std::span<const LiquidityEvent> events, const TokenId& token, Timestamp window,
                         std::optional<BucketSpan> span) {
    std::vector<SeriesPoint> pts;
    for (const auto& e : events) {
        auto it = e.deltas.find(token);
        pts.push_back({e.ts, it == e.deltas.end() ? 0.0 : it->second});
    }
    auto s = flows_to_series(std::move(pts), window, span);
    s.metric_name = "netLPFlow";
    return s;
}

MetricSeries rolling_volatility(const MetricSeries& prices, std::size_t window) {
    if (window < 2) throw ValidationError("rolling_volatility: window must be >= 2");
    const auto returns = log_diff(prices);
    MetricSeries out{"volatility", prices.pool_id, {}};
    const auto& r = returns.points;
    for (std::size_t end = window; end <= r.size(); ++end) {
        double mean = 0.0;
        for (std::size_t k = end - window; k < end; ++k) mean += r[k].value;
        mean /= static_cast<double>(window);
        double ss = 0.0;
        for (std::size_t k = end - window; k < end; ++k) ss += (r[k].value - mean) * (r[k].value - mean);
        out.points.push_back({r[end - 1].ts, std::sqrt(ss / static_cast<double>(window))});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prices and markouts
// ---------------------------------------------------------------------------

PriceTable::PriceTable(std::span<const PriceSample> samples) {
    for (const auto& s : samples) add(s);
}

void PriceTable::add(const PriceSample& s) {
    validate(s);
    auto& v = by_token_[s.token];
    if (!v.empty() && v.back().ts > s.ts) {
        auto pos = std::upper_bound(v.begin(), v.end(), s.ts, [](Timestamp t, const SeriesPoint& p) { return t < p.ts; });
        v.insert(pos, {s.ts, s.usd_price});
    } else {
        v.push_back({s.ts, s.usd_price});
    }
}

std::optional<double> PriceTable::lookup(const TokenId& token, Timestamp ts, Timestamp tolerance) const {
    auto it = by_token_.find(token);
    if (it == by_token_.end() || it->second.empty()) return std::nullopt;
    const auto& v = it->second;
    auto hi = std::lower_bound(v.begin(), v.end(), ts, [](const SeriesPoint& p, Timestamp t) { return p.ts < t; });
    const SeriesPoint* best = nullptr;
    if (hi != v.begin()) best = &*std::prev(hi);
    if (hi != v.end() && (best == nullptr || hi->ts - ts < ts - best->ts)) best = &*hi;
    if (best == nullptr || std::abs(best->ts - ts) > tolerance) return std::nullopt;
    return best->value;
}

MetricSeries PriceTable::series(const TokenId& token) const {
    MetricSeries s{"price", "", {}};
    if (auto it = by_token_.find(token); it != by_token_.end()) s.points = it->second;
    return s;
}

std::vector<TokenId> PriceTable::tokens() const {
    std::vector<TokenId> out;
    for (const auto& [t, v] : by_token_) out.push_back(t);
    return out;
}

std::optional<double> trade_markout(const TradeEvent& trade, const PriceTable& prices, Timestamp h,
                                    MarkoutSide side, Timestamp tolerance) {
    const auto p_out = prices.lookup(trade.token_out, trade.ts + h, tolerance);
    const auto p_in = prices.lookup(trade.token_in, trade.ts + h, tolerance);
    if (!p_out || !p_in) return std::nullopt;
    const double taker = trade.amount_out * *p_out - trade.amount_in * *p_in;
    return side == MarkoutSide::taker ? taker : -taker;
}

MarkoutSeries pool_markout_series(std::span<const TradeEvent> trades, const PriceTable& prices, Timestamp h,
                                  Timestamp window, std::optional<BucketSpan> span) {
    MarkoutSeries out;
    std::vector<SeriesPoint> pts;
    for (const auto& t : trades) {
        if (auto m = trade_markout(t, prices, h, MarkoutSide::lp, window)) {
            pts.push_back({t.ts, *m});
        } else {
            ++out.skipped;
        }
    }
    // Skipped trades still anchor the bucket range.
    if (!span && !trades.empty()) span = BucketSpan{trades.front().ts, trades.back().ts};
    out.series = flows_to_series(std::move(pts), window, span);
    out.series.metric_name = std::to_string(h) + ".Markout";
    return out;
}

std::map<std::string, double> cumulative_markouts(std::span<const TradeEvent> trades, const PriceTable& prices,
                                                  Timestamp h, Timestamp tolerance) {
    std::map<std::string, double> cum;
    for (const auto& t : trades) {
        if (auto m = trade_markout(t, prices, h, MarkoutSide::taker, tolerance)) cum[t.trader] += *m;
    }
    return cum;
}

std::set<std::string> top_quantile(const std::map<std::string, double>& scores, double q) {
    std::set<std::string> out;
    if (scores.empty()) return out;
    std::vector<double> v;
    v.reserve(scores.size());
    for (const auto& [k, s] : scores) v.push_back(s);
    std::sort(v.begin(), v.end(), std::greater<>());
    const double n = static_cast<double>(v.size());
    auto m = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
    m = std::clamp<std::size_t>(m, 1, v.size());
    const double cutoff = v[m - 1];
    for (const auto& [k, s] : scores) {
        if (s >= cutoff) out.insert(k);
    }
    return out;
}

std::set<std::string> classify_sharks(std::span<const TradeEvent> trades, const PriceTable& prices,
                                      const MetricConfig& cfg) {
    cfg.validate();
    // Summation order per account follows the sorted trade order, so the result does not
    // depend on how the caller ordered trades with distinct timestamps.
    std::vector<TradeEvent> sorted(trades.begin(), trades.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const TradeEvent& a, const TradeEvent& b) {
        return std::tie(a.ts, a.trader, a.token_in.symbol, a.amount_in, a.token_out.symbol, a.amount_out) <
               std::tie(b.ts, b.trader, b.token_in.symbol, b.amount_in, b.token_out.symbol, b.amount_out);
    });
    return top_quantile(cumulative_markouts(sorted, prices, cfg.shark_markout_horizon, cfg.window), cfg.shark_quantile);
}

MetricSeries shark_flow(std::span<const TradeEvent> trades, const std::set<std::string>& sharks,
                        const TokenId& token, Timestamp window, std::optional<BucketSpan> span) {
    std::vector<TradeEvent> subset;
    for (const auto& t : trades) {
        if (sharks.contains(t.trader)) subset.push_back(t);
    }
    if (!span && !trades.empty()) span = BucketSpan{trades.front().ts, trades.back().ts};
    auto s = net_swap_flow(subset, token, window, span);
    s.metric_name = "sharkflow";
    return s;
}

} // namespace depeg::metrics
