#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "depeg/series.hpp"
#include "depeg/types.hpp"

namespace depeg::metrics {

struct MetricConfig {
    Timestamp window = kDefaultPeriod;          // flow / markout bucket width
    Timestamp markout_horizon = 300;            // h
    Timestamp shark_markout_horizon = 86400;
    double shark_quantile = 0.01;
    Timestamp pin_bucket = 86400;
    std::size_t pin_window = 7;                 // buckets per PIN estimate

    void validate() const;
};

// Shannon entropy in bits of the normalized balances; 0 log 0 = 0.
double shannon_entropy(std::span<const double> balances);

// Gini coefficient of the normalized balances, (1/(N-1)) sum (2i - N - 1) p_(i).
double gini(std::span<const double> balances);

// Per bucket: volume of `token` bought from the pool minus volume sold to it.
MetricSeries net_swap_flow(std::span<const TradeEvent> trades, const TokenId& token, Timestamp window,
                           std::optional<BucketSpan> span = std::nullopt);

// Per bucket: deposits minus withdrawals of `token`.
MetricSeries net_lp_flow(std::span<const LiquidityEvent> events, const TokenId& token, Timestamp window,
                         std::optional<BucketSpan> span = std::nullopt);

// Population std of the trailing `window` log returns, stamped at the last price.
MetricSeries rolling_volatility(const MetricSeries& prices, std::size_t window);

// Per-token price samples with nearest-sample lookup.
class PriceTable {
public:
    PriceTable() = default;
    explicit PriceTable(std::span<const PriceSample> samples);

    void add(const PriceSample& s);

    // Nearest sample to ts within `tolerance` seconds; ties go to the earlier sample.
    std::optional<double> lookup(const TokenId& token, Timestamp ts, Timestamp tolerance) const;

    // Samples of one token as a series (empty when unknown).
    MetricSeries series(const TokenId& token) const;

    std::vector<TokenId> tokens() const;

private:
    std::map<TokenId, std::vector<SeriesPoint>> by_token_;
};

enum class MarkoutSide { taker, lp };

// Taker: amount_out * p_out(ts+h) - amount_in * p_in(ts+h); LP side is the negation.
// nullopt when either mark price is missing.
std::optional<double> trade_markout(const TradeEvent& trade, const PriceTable& prices, Timestamp h,
                                    MarkoutSide side, Timestamp tolerance = kDefaultPeriod);

struct MarkoutSeries {
    MetricSeries series;
    std::size_t skipped = 0; // trades without a mark price
};

// Per-bucket sum of LP-side markouts, bucketed by trade time.
MarkoutSeries pool_markout_series(std::span<const TradeEvent> trades, const PriceTable& prices, Timestamp h,
                                  Timestamp window, std::optional<BucketSpan> span = std::nullopt);

// Cumulative taker markout per account at the configured shark horizon.
std::map<std::string, double> cumulative_markouts(std::span<const TradeEvent> trades, const PriceTable& prices,
                                                  Timestamp h, Timestamp tolerance);

// Accounts at or above the (1 - q) quantile of cumulative markouts: the top ceil(q N)
// accounts plus everyone tied with the last of them.
std::set<std::string> top_quantile(const std::map<std::string, double>& scores, double q);

std::set<std::string> classify_sharks(std::span<const TradeEvent> trades, const PriceTable& prices,
                                      const MetricConfig& cfg);

MetricSeries shark_flow(std::span<const TradeEvent> trades, const std::set<std::string>& sharks,
                        const TokenId& token, Timestamp window, std::optional<BucketSpan> span = std::nullopt);

} // namespace depeg::metrics
