#include "depeg/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "depeg/errors.hpp"
#include "depeg/rng.hpp"

namespace depeg::sim {

namespace ss = stableswap;

namespace {

// RNG stream ids, one per consumer.
constexpr std::uint64_t kStreamNoise = 1;
constexpr std::uint64_t kStreamLp = 2;
constexpr std::uint64_t kStreamPriceBase = 1000;

std::string account(const char* prefix, std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%02zu", prefix, k);
    return buf;
}

// Multiplicative deviation from the peg that `e` imposes at time t.
double event_factor(const DepegEvent& e, double peg, Timestamp t) {
    if (t <= e.start) return 1.0;
    const double full = e.target_price / peg;
    const Timestamp ramp_end = e.start + e.ramp;
    if (t < ramp_end) {
        const double frac = static_cast<double>(t - e.start) / static_cast<double>(e.ramp);
        return std::exp(std::log(full) * frac);
    }
    if (!e.recovery) return full;
    const Timestamp back_start = ramp_end + *e.recovery;
    if (t <= back_start) return full;
    if (t >= back_start + e.ramp) return 1.0;
    const double frac = static_cast<double>(t - back_start) / static_cast<double>(e.ramp);
    return std::exp(std::log(full) * (1.0 - frac));
}

std::size_t token_index(const ScenarioConfig& cfg, const TokenId& t) {
    for (std::size_t k = 0; k < cfg.tokens.size(); ++k) {
        if (cfg.tokens[k] == t) return k;
    }
    throw ValidationError("scenario: unknown token " + t.symbol);
}

class Market {
public:
    Market(const ScenarioConfig& cfg, ScenarioOutput& out) : cfg_(cfg), out_(out), pool_(cfg.pool) {}

    const ss::PoolState& pool() const { return pool_; }

    void swap(Timestamp t, const std::string& who, std::size_t i, std::size_t j, double dx) {
        if (!(dx > 0.0)) return;
        auto r = ss::apply_swap(pool_, i, j, dx);
        if (!(r.dy > 0.0)) return;
        pool_ = std::move(r.state);
        out_.trades.push_back({t, who, cfg_.tokens[i], dx, cfg_.tokens[j], r.dy});
    }

    void liquidity(Timestamp t, const std::string& who, double fraction) {
        LiquidityEvent e;
        e.ts = t;
        e.provider = who;
        ss::PoolState next = pool_;
        for (std::size_t k = 0; k < pool_.n(); ++k) {
            const double delta = pool_.balances[k] * fraction;
            next.balances[k] = pool_.balances[k] + delta;
            e.deltas[cfg_.tokens[k]] = delta;
        }
        e.lp_token_delta = pool_.lp_supply * fraction;
        next.lp_supply = pool_.lp_supply + e.lp_token_delta;
        pool_ = std::move(next);
        out_.liquidity.push_back(std::move(e));
    }

    // Sells token i for j until the pool's marginal price, net of fee, meets the external ratio.
    bool arbitrage(Timestamp t, const std::string& who, const std::vector<double>& ext) {
        const std::size_t n = pool_.n();
        double best_gap = 0.0;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double ratio = ext[i] / ext[j];
                const double pool_px = ss::spot_price(pool_, i, j) * (1.0 - pool_.fee);
                const double gap = pool_px / ratio - 1.0;
                if (gap > cfg_.arb_threshold && gap > best_gap) {
                    best_gap = gap;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (best_gap <= 0.0) return false;

        const double ratio = ext[bi] / ext[bj];
        const double d = ss::compute_d(pool_).d;
        auto excess = [&](double dx) {
            ss::PoolState post = pool_;
            post.balances[bi] += dx;
            post.balances[bj] = ss::solve_balance(pool_, bi, bj, post.balances[bi], d);
            return ss::spot_price(post, bi, bj) * (1.0 - pool_.fee) - ratio;
        };
        double lo = 0.0;
        double hi = 1e-4 * pool_.balances[bi];
        while (excess(hi) > 0.0 && hi < 1e4 * pool_.balances[bi]) {
            lo = hi;
            hi *= 2.0;
        }
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (excess(mid) > 0.0 ? lo : hi) = mid;
        }
        if (!(lo > 0.0)) return false;
        swap(t, who, bi, bj, lo);
        return true;
    }

private:
    const ScenarioConfig& cfg_;
    ScenarioOutput& out_;
    ss::PoolState pool_;
};

} // namespace

double ScenarioConfig::peg(const TokenId& t) const {
    auto it = peg_prices.find(t);
    return it == peg_prices.end() ? 1.0 : it->second;
}

void ScenarioConfig::validate() const {
    if (step <= 0 || duration <= 0 || duration % step != 0) throw ValidationError("scenario: step must divide duration");
    if (snapshot_period <= 0 || snapshot_period % step != 0)
        throw ValidationError("scenario: snapshot period must be a multiple of step");
    if (start_ts < 0) throw ValidationError("scenario: start_ts must be >= 0");
    if (rng != Philox4x32::kName) throw ValidationError("scenario: unsupported rng '" + rng + "'");
    ss::validate(pool);
    if (tokens.size() != pool.n()) throw ValidationError("scenario: one token id per pool balance required");
    for (std::size_t a = 0; a < tokens.size(); ++a) {
        for (std::size_t b = a + 1; b < tokens.size(); ++b) {
            if (tokens[a] == tokens[b]) throw ValidationError("scenario: duplicate token " + tokens[a].symbol);
        }
    }
    for (const auto& [t, p] : peg_prices) {
        if (!(p > 0.0)) throw ValidationError("scenario: peg price must be > 0");
    }
    for (const auto& e : depeg_events) {
        token_index(*this, e.token);
        if (e.ramp <= 0) throw ValidationError("scenario: depeg ramp must be > 0");
        if (!(e.target_price > 0.0)) throw ValidationError("scenario: depeg target must be > 0");
        if (e.recovery && *e.recovery < 0) throw ValidationError("scenario: recovery must be >= 0");
    }
    if (informed_lead < 0) throw ValidationError("scenario: informed_lead must be >= 0");
    if (!(noise_vol >= 0.0) || !(noise_reversion >= 0.0 && noise_reversion <= 1.0))
        throw ValidationError("scenario: noise parameters out of range");
    if (!(arb_threshold >= 0.0)) throw ValidationError("scenario: arb_threshold must be >= 0");
    if (!(informed_fraction > 0.0 && informed_fraction < 1.0)) throw ValidationError("scenario: informed_fraction out of range");
    if (!(lp_event_fraction > 0.0 && lp_event_fraction < 1.0)) throw ValidationError("scenario: lp_event_fraction out of range");
}

EventStream ScenarioOutput::stream() const {
    return EventStream{pool_id, tokens, trades, liquidity, reserves};
}

MetricSeries external_price_path(const ScenarioConfig& cfg, const TokenId& token) {
    const std::size_t idx = token_index(cfg, token);
    const double peg = cfg.peg(token);
    Philox4x32 rng(cfg.seed, kStreamPriceBase + idx);
    MetricSeries s{"price", cfg.pool_id, {}};
    double z = 0.0;
    for (Timestamp t = cfg.start_ts; t <= cfg.start_ts + cfg.duration; t += cfg.step) {
        if (t > cfg.start_ts && cfg.noise_vol > 0.0) z = (1.0 - cfg.noise_reversion) * z + cfg.noise_vol * rng.normal();
        double level = peg;
        for (const auto& e : cfg.depeg_events) {
            if (e.token == token) level *= event_factor(e, peg, t);
        }
        s.points.push_back({t, z == 0.0 ? level : level * std::exp(z)});
    }
    return s;
}

ScenarioOutput run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    ScenarioOutput out;
    out.pool_id = cfg.pool_id;
    out.tokens = cfg.tokens;
    out.truth.events = cfg.depeg_events;
    const std::size_t n = cfg.tokens.size();

    std::vector<MetricSeries> paths;
    for (const auto& t : cfg.tokens) {
        paths.push_back(external_price_path(cfg, t));
        out.truth.external_prices[t] = paths.back();
    }

    Philox4x32 noise_rng(cfg.seed, kStreamNoise);
    Philox4x32 lp_rng(cfg.seed, kStreamLp);
    Market market(cfg, out);
    std::size_t informed_turn = 0;
    std::size_t arb_turn = 0;

    const std::size_t steps = static_cast<std::size_t>(cfg.duration / cfg.step);
    for (std::size_t k = 0; k <= steps; ++k) {
        const Timestamp t = cfg.start_ts + static_cast<Timestamp>(k) * cfg.step;
        std::vector<double> ext(n);
        for (std::size_t i = 0; i < n; ++i) {
            ext[i] = paths[i].points[k].value;
            out.prices.push_back({t, cfg.tokens[i], ext[i]});
        }

        if (k > 0) {
            try {
                // (1) informed selling ahead of each depeg
                for (const auto& e : cfg.depeg_events) {
                    if (cfg.n_informed == 0 || t < e.start - cfg.informed_lead || t >= e.start) continue;
                    const std::size_t d = token_index(cfg, e.token);
                    std::size_t j = d == 0 ? 1 : 0;
                    for (std::size_t c = 0; c < n; ++c) {
                        if (c != d && market.pool().balances[c] > market.pool().balances[j]) j = c;
                    }
                    const std::string who = account("informed", informed_turn++ % cfg.n_informed);
                    market.swap(t, who, d, j, cfg.informed_fraction * market.pool().balances[d]);
                }
                // (2) arbitrage toward external prices
                for (std::size_t round = 0; round < n * (n - 1); ++round) {
                    if (!market.arbitrage(t, account("arb", arb_turn % 2), ext)) break;
                    ++arb_turn;
                }
                // (3) noise swaps
                for (std::size_t q = 0; q < cfg.n_noise_traders; ++q) {
                    if (!noise_rng.bernoulli(cfg.noise_trade_prob)) continue;
                    const std::size_t i = static_cast<std::size_t>(noise_rng.below(n));
                    const std::size_t j = (i + 1 + static_cast<std::size_t>(noise_rng.below(n - 1))) % n;
                    const double size = cfg.noise_trade_fraction * std::exp(0.5 * noise_rng.normal());
                    market.swap(t, account("noise", q), i, j, size * market.pool().balances[i]);
                }
                // (4) LP deposits and withdrawals
                for (std::size_t q = 0; q < cfg.n_lps; ++q) {
                    if (!lp_rng.bernoulli(cfg.lp_event_prob)) continue;
                    const double sign = lp_rng.bernoulli(0.5) ? 1.0 : -1.0;
                    const double frac = cfg.lp_event_fraction * (0.5 + lp_rng.uniform());
                    market.liquidity(t, account("lp", q), sign * frac);
                }
            } catch (const DomainError&) {
                out.truncated = true;
            } catch (const NumericalError&) {
                out.truncated = true;
            }
        }

        if ((t - cfg.start_ts) % cfg.snapshot_period == 0) {
            out.reserves.push_back({t, market.pool().balances, market.pool().lp_supply});
        }
        if (out.truncated) break;
    }
    out.final_pool = market.pool();
    return out;
}

std::vector<SlippageRow> slippage_experiment(const ss::PoolState& pool, std::span<const double> a_values,
                                             double imbalance) {
    if (!(imbalance > 0.0)) throw ValidationError("slippage_experiment: imbalance must be > 0");
    ss::validate(pool);
    const double total = std::accumulate(pool.balances.begin(), pool.balances.end(), 0.0);
    const double others = static_cast<double>(pool.n() - 1);
    const double unit = total / (imbalance + others);
    ss::PoolState base = pool;
    base.fee = 0.0;
    for (std::size_t k = 0; k < base.n(); ++k) base.balances[k] = k == 0 ? imbalance * unit : unit;

    std::vector<SlippageRow> rows;
    for (double a : a_values) {
        ss::PoolState s = base;
        s.amp = a;
        const double mp = ss::marginal_price(s, 0, 1);
        rows.push_back({a, mp, 1.0 - mp});
    }
    return rows;
}

} // namespace depeg::sim
