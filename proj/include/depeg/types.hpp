#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace depeg {

// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kDefaultPeriod = 3600;

struct TokenId {
    std::string symbol;
    std::string address; // 40 lowercase hex chars, or empty for synthetic tokens

    TokenId() = default;
    explicit TokenId(std::string sym, std::string addr = {});

    friend bool operator==(const TokenId& a, const TokenId& b) { return a.symbol == b.symbol; }
    friend bool operator<(const TokenId& a, const TokenId& b) { return a.symbol < b.symbol; }
};

bool is_hex_address(const std::string& s);

struct TradeEvent {
    Timestamp ts = 0;
    std::string trader;
    TokenId token_in;
    double amount_in = 0.0;
    TokenId token_out;
    double amount_out = 0.0;
};

// Throws ValidationError on a broken invariant.
void validate(const TradeEvent& e);

struct LiquidityEvent {
    Timestamp ts = 0;
    std::string provider;
    // Ordered by token symbol; positive = deposit.
    std::map<TokenId, double> deltas;
    double lp_token_delta = 0.0;
};

void validate(const LiquidityEvent& e);

struct PriceSample {
    Timestamp ts = 0;
    TokenId token;
    double usd_price = 0.0;
};

void validate(const PriceSample& s);

// Pool balances (and LP supply) at a point in time, ordered as the pool's tokens.
struct ReserveSnapshot {
    Timestamp ts = 0;
    std::vector<double> balances;
    double lp_supply = 0.0;
};

struct SeriesPoint {
    Timestamp ts = 0;
    double value = 0.0;

    friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct MetricSeries {
    std::string metric_name;
    std::string pool_id;
    std::vector<SeriesPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    std::vector<double> values() const;
    std::vector<Timestamp> timestamps() const;

    // Points with from <= ts < to.
    MetricSeries slice(Timestamp from, Timestamp to) const;
};

// Everything observed for one pool.
struct EventStream {
    std::string pool_id;
    std::vector<TokenId> tokens;
    std::vector<TradeEvent> trades;
    std::vector<LiquidityEvent> liquidity;
    std::vector<ReserveSnapshot> reserves;
};

} // namespace depeg
