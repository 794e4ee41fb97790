#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depeg/stableswap.hpp"
#include "depeg/types.hpp"

namespace depeg::sim {

struct DepegEvent {
    TokenId token;
    Timestamp start = 0;
    double target_price = 1.0;
    Timestamp ramp = 3600;                // log-linear move to target over this long
    std::optional<Timestamp> recovery;    // hold time at target before ramping back to peg
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    std::string rng = "philox4x32-10";
    std::string pool_id = "sim";
    Timestamp start_ts = 0;
    Timestamp duration = 86400;
    Timestamp step = 300;
    Timestamp snapshot_period = kDefaultPeriod;

    stableswap::PoolState pool;
    std::vector<TokenId> tokens;
    std::map<TokenId, double> peg_prices;   // missing tokens peg at 1
    std::vector<DepegEvent> depeg_events;

    double noise_vol = 0.0;                 // per-step log sd of external prices
    double noise_reversion = 0.05;          // per-step pull of log price back to the peg
    double arb_threshold = 0.0005;          // relative gap an arbitrageur needs to trade

    std::size_t n_noise_traders = 0;
    double noise_trade_prob = 0.3;          // per trader per step
    double noise_trade_fraction = 0.0005;   // median size, fraction of the input balance

    std::size_t n_informed = 0;
    Timestamp informed_lead = 0;
    double informed_fraction = 0.005;       // of the depegging token's balance, per step

    std::size_t n_lps = 0;
    double lp_event_prob = 0.02;            // per provider per step
    double lp_event_fraction = 0.002;

    double peg(const TokenId& t) const;
    void validate() const;
};

struct ScenarioTruth {
    std::vector<DepegEvent> events;
    std::map<TokenId, MetricSeries> external_prices;
};

struct ScenarioOutput {
    std::string pool_id;
    std::vector<TokenId> tokens;
    std::vector<TradeEvent> trades;
    std::vector<LiquidityEvent> liquidity;
    std::vector<ReserveSnapshot> reserves;
    std::vector<PriceSample> prices;
    ScenarioTruth truth;
    stableswap::PoolState final_pool;
    bool truncated = false;

    EventStream stream() const;
};

// Deterministic external USD price of `token` at every step.
MetricSeries external_price_path(const ScenarioConfig& cfg, const TokenId& token);

// Per step: informed selling ahead of depegs, arbitrage toward external prices, noise
// swaps, then balanced LP deposits/withdrawals; reserves snapshotted every period.
ScenarioOutput run_scenario(const ScenarioConfig& cfg);

struct SlippageRow {
    double amp = 0.0;
    double marginal_price = 0.0; // token 1 received per token 0 sold, at the margin
    double slippage = 0.0;       // 1 - marginal_price
};

// Rebalances the pool so token 0 holds `imbalance` times each other token (same total),
// then reports the marginal price of selling token 0 for every A.
std::vector<SlippageRow> slippage_experiment(const stableswap::PoolState& pool, std::span<const double> a_values,
                                             double imbalance);

} // namespace depeg::sim
