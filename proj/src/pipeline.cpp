#include "depeg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "depeg/errors.hpp"
#include "depeg/pin.hpp"
#include "depeg/stableswap.hpp"

namespace depeg::pipeline {

namespace {

TokenId parse_token(const json& j) {
    if (j.is_string()) return TokenId(j.get<std::string>());
    if (j.is_object()) return TokenId(j.at("symbol").get<std::string>(), j.value("address", std::string{}));
    throw ValidationError("token must be a symbol string or {symbol, address}");
}

json token_json(const TokenId& t) {
    if (t.address.empty()) return t.symbol;
    return json{{"symbol", t.symbol}, {"address", t.address}};
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config field '") + key + "': " + e.what());
    }
}

bocd::NGParams parse_ng(const json& j, bocd::NGParams p) {
    p.mu = get_or(j, "mu", p.mu);
    p.alpha = get_or(j, "alpha", p.alpha);
    p.beta = get_or(j, "beta", p.beta);
    p.kappa = get_or(j, "kappa", p.kappa);
    return p;
}

json ng_json(const bocd::NGParams& p) {
    return json{{"mu", p.mu}, {"alpha", p.alpha}, {"beta", p.beta}, {"kappa", p.kappa}};
}

SeriesStats usable_stats(const MetricSeries& train) {
    SeriesStats st = fit_stats(train);
    if (!(st.std > 0.0)) st.std = 1.0;
    return st;
}

MetricSeries named(MetricSeries s, const std::string& metric, const std::string& pool) {
    s.metric_name = metric;
    s.pool_id = pool;
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

std::vector<PoolRegistryEntry> parse_pool_registry(const json& j) {
    const json& list = j.is_object() && j.contains("pools") ? j.at("pools") : j;
    if (!list.is_array()) throw ValidationError("pool registry must be an array of pools");
    std::vector<PoolRegistryEntry> out;
    std::set<std::string> ids;
    for (const auto& p : list) {
        PoolRegistryEntry e;
        e.pool_id = get_or<std::string>(p, "pool_id", "");
        if (e.pool_id.empty()) throw ValidationError("pool entry without pool_id");
        if (!ids.insert(e.pool_id).second) throw ValidationError("duplicate pool_id '" + e.pool_id + "'");
        e.name = get_or<std::string>(p, "name", e.pool_id);
        e.address = get_or<std::string>(p, "address", "");
        if (!e.address.empty() && !is_hex_address(e.address))
            throw ValidationError("pool " + e.pool_id + ": address must be 40 hex chars");
        if (!p.contains("tokens") || !p.at("tokens").is_array()) throw ValidationError("pool " + e.pool_id + ": tokens missing");
        for (const auto& t : p.at("tokens")) e.tokens.push_back(parse_token(t));
        if (e.tokens.size() < 2) throw ValidationError("pool " + e.pool_id + ": at least two tokens required");
        for (std::size_t a = 0; a < e.tokens.size(); ++a) {
            for (std::size_t b = a + 1; b < e.tokens.size(); ++b) {
                if (e.tokens[a] == e.tokens[b]) throw ValidationError("pool " + e.pool_id + ": duplicate token");
            }
        }
        e.amp = get_or(p, "amp", e.amp);
        e.fee = get_or(p, "fee", e.fee);
        if (!(e.amp > 0.0)) throw ValidationError("pool " + e.pool_id + ": amp must be > 0");
        if (!(e.fee >= 0.0 && e.fee <= 0.01)) throw ValidationError("pool " + e.pool_id + ": fee must be in [0, 0.01]");
        e.watch_token = p.contains("watch_token") ? parse_token(p.at("watch_token")) : e.tokens.front();
        if (std::find(e.tokens.begin(), e.tokens.end(), e.watch_token) == e.tokens.end())
            throw ValidationError("pool " + e.pool_id + ": watch_token is not a pool token");
        if (p.contains("numeraire") && !p.at("numeraire").is_null()) e.numeraire = parse_token(p.at("numeraire"));
        out.push_back(std::move(e));
    }
    return out;
}

json to_json(const PoolRegistryEntry& e) {
    json tokens = json::array();
    for (const auto& t : e.tokens) tokens.push_back(token_json(t));
    json j{{"pool_id", e.pool_id}, {"name", e.name},         {"address", e.address},
           {"tokens", tokens},     {"amp", e.amp},           {"fee", e.fee},
           {"watch_token", e.watch_token.symbol}};
    if (e.numeraire) j["numeraire"] = e.numeraire->symbol;
    return j;
}

io::PoolTokens pool_tokens(const std::vector<PoolRegistryEntry>& registry) {
    io::PoolTokens out;
    for (const auto& e : registry) out[e.pool_id] = e.tokens;
    return out;
}

PriceSourceMap parse_price_sources(const json& j) {
    const json& m = j.is_object() && j.contains("token_exchange_map") ? j.at("token_exchange_map") : j;
    if (!m.is_object()) throw ValidationError("token_exchange_map must be an object");
    PriceSourceMap out;
    for (const auto& [symbol, v] : m.items()) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_string() || !v[1].is_string())
            throw ValidationError("token_exchange_map[" + symbol + "] must be [provider, locator]");
        PriceSource s{v[0].get<std::string>(), v[1].get<std::string>()};
        if (s.provider != "ccxt" && s.provider != "chainlink" && s.provider != "file")
            throw ValidationError("token_exchange_map[" + symbol + "]: unknown provider '" + s.provider + "'");
        out.emplace(symbol, std::move(s));
    }
    return out;
}

std::vector<PriceSample> resolve_prices(const PriceSourceMap& sources, std::vector<PriceSample> supplied,
                                        const std::vector<TokenId>& tokens, const std::filesystem::path& base_dir) {
    std::set<TokenId> have;
    for (const auto& s : supplied) have.insert(s.token);
    std::vector<PriceSample> out = std::move(supplied);
    for (const auto& t : tokens) {
        if (have.contains(t)) continue;
        auto it = sources.find(t.symbol);
        if (it == sources.end()) continue;
        const PriceSource& src = it->second;
        if (src.provider != "file")
            throw ValidationError("offline: supply prices.csv (no samples for " + t.symbol + ", source " + src.provider +
                                  ":" + src.locator + ")");
        std::filesystem::path path = src.locator;
        if (path.is_relative()) path = base_dir / path;
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open price file " + path.string());
        const io::CsvFile f = io::read_csv(in, io::kPricesHeader, path.filename().string());
        for (const auto& row : f.rows) {
            if (row.fields[1] != t.symbol) continue;
            PriceSample s{f.timestamp(row, 0), t, f.number(row, 2)};
            try {
                validate(s);
            } catch (const ValidationError& e) {
                f.fail(row, e.what());
            }
            out.push_back(std::move(s));
        }
        have.insert(t);
    }
    std::stable_sort(out.begin(), out.end(), [](const PriceSample& a, const PriceSample& b) { return a.ts < b.ts; });
    return out;
}

metrics::MetricConfig parse_metric_config(const json& j) {
    metrics::MetricConfig c;
    c.window = get_or(j, "window", c.window);
    c.markout_horizon = get_or(j, "markout_horizon", c.markout_horizon);
    c.shark_markout_horizon = get_or(j, "shark_markout_horizon", c.shark_markout_horizon);
    c.shark_quantile = get_or(j, "shark_quantile", c.shark_quantile);
    c.pin_bucket = get_or(j, "pin_bucket", c.pin_bucket);
    c.pin_window = get_or(j, "pin_window", c.pin_window);
    c.validate();
    return c;
}

bocd::DetectorConfig parse_detector_config(const json& j) {
    bocd::DetectorConfig c;
    c.hazard_lambda = get_or(j, "hazard_lambda", c.hazard_lambda);
    if (j.is_object() && j.contains("prior")) c.prior = parse_ng(j.at("prior"), c.prior);
    c.prob_floor = get_or(j, "prob_floor", c.prob_floor);
    c.max_run_length = get_or(j, "max_run_length", c.max_run_length);
    if (j.is_object() && j.contains("predictive"))
        c.predictive = bocd::parse_predictive_scale(j.at("predictive").get<std::string>());
    c.validate();
    return c;
}

json to_json(const bocd::DetectorConfig& c) {
    return json{{"hazard_lambda", c.hazard_lambda},
                {"prior", ng_json(c.prior)},
                {"prob_floor", c.prob_floor},
                {"max_run_length", c.max_run_length},
                {"predictive", bocd::to_string(c.predictive)}};
}

evaluation::ScoringConfig parse_scoring_config(const json& j) {
    evaluation::ScoringConfig c;
    c.margin_m = get_or(j, "margin_m", c.margin_m);
    c.f_beta = get_or(j, "f_beta", c.f_beta);
    c.depeg_threshold = get_or(j, "depeg_threshold", c.depeg_threshold);
    c.validate();
    return c;
}

evaluation::GridSpace parse_grid_space(const json& j) {
    evaluation::GridSpace g;
    g.exponent_lo = get_or(j, "exponent_lo", g.exponent_lo);
    g.exponent_hi = get_or(j, "exponent_hi", g.exponent_hi);
    g.base = get_or(j, "base", g.base);
    g.validate();
    return g;
}

sim::ScenarioConfig default_scenario(std::uint64_t seed) {
    sim::ScenarioConfig c;
    c.seed = seed;
    c.pool_id = "sim3pool";
    c.start_ts = 1672531200; // 2023-01-01T00:00:00Z
    c.duration = 15 * 86400;
    c.step = 300;
    c.snapshot_period = kDefaultPeriod;
    c.tokens = {TokenId("USDC"), TokenId("USDT"), TokenId("DAI")};
    c.pool.balances = {1e7, 1e7, 1e7};
    c.pool.amp = 100.0;
    c.pool.fee = 0.0004;
    c.pool.lp_supply = 3e7;
    c.depeg_events.push_back({TokenId("USDC"), c.start_ts + 10 * 86400, 0.85, 6 * 3600, std::nullopt});
    c.noise_vol = 0.0003;
    c.noise_reversion = 0.05;
    c.arb_threshold = 0.0005;
    c.n_noise_traders = 20;
    c.noise_trade_prob = 0.3;
    c.noise_trade_fraction = 0.0005;
    c.n_informed = 3;
    c.informed_lead = 6 * 3600;
    c.informed_fraction = 0.005;
    c.n_lps = 5;
    c.lp_event_prob = 0.02;
    c.lp_event_fraction = 0.002;
    return c;
}

sim::ScenarioConfig parse_scenario(const json& j) {
    sim::ScenarioConfig c = default_scenario(get_or<std::uint64_t>(j, "seed", 1));
    c.rng = get_or(j, "rng", c.rng);
    c.pool_id = get_or(j, "pool_id", c.pool_id);
    c.start_ts = get_or(j, "start_ts", c.start_ts);
    c.duration = get_or(j, "duration", c.duration);
    c.step = get_or(j, "step", c.step);
    c.snapshot_period = get_or(j, "snapshot_period", c.snapshot_period);
    if (j.is_object() && j.contains("tokens")) {
        c.tokens.clear();
        for (const auto& t : j.at("tokens")) c.tokens.push_back(parse_token(t));
    }
    if (j.is_object() && j.contains("pool")) {
        const json& p = j.at("pool");
        c.pool.balances = get_or(p, "balances", c.pool.balances);
        c.pool.amp = get_or(p, "amp", c.pool.amp);
        c.pool.fee = get_or(p, "fee", c.pool.fee);
        c.pool.lp_supply = get_or(p, "lp_supply", c.pool.lp_supply);
    }
    if (j.is_object() && j.contains("peg_prices")) {
        c.peg_prices.clear();
        for (const auto& [sym, v] : j.at("peg_prices").items()) c.peg_prices[TokenId(sym)] = v.get<double>();
    }
    if (j.is_object() && j.contains("depeg_events")) {
        c.depeg_events.clear();
        for (const auto& e : j.at("depeg_events")) {
            sim::DepegEvent ev{parse_token(e.at("token")), get_or<Timestamp>(e, "start", 0),
                               get_or(e, "target_price", 1.0), get_or<Timestamp>(e, "ramp", 3600), std::nullopt};
            if (e.contains("recovery") && !e.at("recovery").is_null()) ev.recovery = e.at("recovery").get<Timestamp>();
            c.depeg_events.push_back(std::move(ev));
        }
    }
    c.noise_vol = get_or(j, "noise_vol", c.noise_vol);
    c.noise_reversion = get_or(j, "noise_reversion", c.noise_reversion);
    c.arb_threshold = get_or(j, "arb_threshold", c.arb_threshold);
    c.n_noise_traders = get_or(j, "n_noise_traders", c.n_noise_traders);
    c.noise_trade_prob = get_or(j, "noise_trade_prob", c.noise_trade_prob);
    c.noise_trade_fraction = get_or(j, "noise_trade_fraction", c.noise_trade_fraction);
    c.n_informed = get_or(j, "n_informed", c.n_informed);
    c.informed_lead = get_or(j, "informed_lead", c.informed_lead);
    c.informed_fraction = get_or(j, "informed_fraction", c.informed_fraction);
    c.n_lps = get_or(j, "n_lps", c.n_lps);
    c.lp_event_prob = get_or(j, "lp_event_prob", c.lp_event_prob);
    c.lp_event_fraction = get_or(j, "lp_event_fraction", c.lp_event_fraction);
    c.validate();
    return c;
}

json to_json(const sim::ScenarioConfig& c) {
    json tokens = json::array();
    for (const auto& t : c.tokens) tokens.push_back(token_json(t));
    json pegs = json::object();
    for (const auto& [t, v] : c.peg_prices) pegs[t.symbol] = v;
    json events = json::array();
    for (const auto& e : c.depeg_events) {
        json ev{{"token", e.token.symbol}, {"start", e.start}, {"target_price", e.target_price}, {"ramp", e.ramp}};
        ev["recovery"] = e.recovery ? json(*e.recovery) : json(nullptr);
        events.push_back(std::move(ev));
    }
    return json{{"seed", c.seed},
                {"rng", c.rng},
                {"pool_id", c.pool_id},
                {"start_ts", c.start_ts},
                {"duration", c.duration},
                {"step", c.step},
                {"snapshot_period", c.snapshot_period},
                {"tokens", tokens},
                {"pool", {{"balances", c.pool.balances}, {"amp", c.pool.amp}, {"fee", c.pool.fee}, {"lp_supply", c.pool.lp_supply}}},
                {"peg_prices", pegs},
                {"depeg_events", events},
                {"noise_vol", c.noise_vol},
                {"noise_reversion", c.noise_reversion},
                {"arb_threshold", c.arb_threshold},
                {"n_noise_traders", c.n_noise_traders},
                {"noise_trade_prob", c.noise_trade_prob},
                {"noise_trade_fraction", c.noise_trade_fraction},
                {"n_informed", c.n_informed},
                {"informed_lead", c.informed_lead},
                {"informed_fraction", c.informed_fraction},
                {"n_lps", c.n_lps},
                {"lp_event_prob", c.lp_event_prob},
                {"lp_event_fraction", c.lp_event_fraction}};
}

PoolRegistryEntry registry_entry(const sim::ScenarioConfig& cfg) {
    PoolRegistryEntry e;
    e.pool_id = cfg.pool_id;
    e.name = cfg.pool_id;
    e.tokens = cfg.tokens;
    e.amp = cfg.pool.amp;
    e.fee = cfg.pool.fee;
    e.watch_token = cfg.depeg_events.empty() ? cfg.tokens.front() : cfg.depeg_events.front().token;
    return e;
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<io::MetricRow> MetricSet::rows() const {
    std::vector<io::MetricRow> out;
    for (const auto& [token, s] : by_token) {
        for (const auto& p : s.points) out.push_back({p.ts, token, p.value});
    }
    std::stable_sort(out.begin(), out.end(), [](const io::MetricRow& a, const io::MetricRow& b) { return a.ts < b.ts; });
    return out;
}

const MetricSeries& MetricSet::primary(const TokenId& watch) const {
    auto it = by_token.find(per_token ? watch.symbol : std::string{});
    if (it == by_token.end()) throw ValidationError("metric " + metric + " has no series for " + watch.symbol);
    return it->second;
}

std::vector<std::string> metric_names(const metrics::MetricConfig& cfg) {
    return {"shannonsEntropy", "giniCoefficient", "netSwapFlow", "netLPFlow",
            "logReturns",      std::to_string(cfg.markout_horizon) + ".Markout", "sharkflow", "pin"};
}

Transform transform_for(const std::string& metric) {
    if (metric == "shannonsEntropy") return Transform::log_diff;
    if (metric == "giniCoefficient" || metric == "pin") return Transform::diff;
    return Transform::none;
}

std::string to_string(Transform t) {
    switch (t) {
    case Transform::none: return "none";
    case Transform::diff: return "diff";
    case Transform::log_diff: return "log_diff";
    }
    return "none";
}

Transform parse_transform(const std::string& s) {
    if (s == "none") return Transform::none;
    if (s == "diff") return Transform::diff;
    if (s == "log_diff") return Transform::log_diff;
    throw ValidationError("unknown transform '" + s + "'");
}

std::optional<BucketSpan> stream_span(const EventStream& stream, Timestamp period) {
    std::optional<Timestamp> lo, hi;
    auto see = [&](Timestamp ts) {
        lo = lo ? std::min(*lo, ts) : ts;
        hi = hi ? std::max(*hi, ts) : ts;
    };
    for (const auto& t : stream.trades) see(t.ts);
    for (const auto& l : stream.liquidity) see(l.ts);
    for (const auto& r : stream.reserves) see(r.ts);
    if (!lo) return std::nullopt;
    return BucketSpan{bucket_end(*lo, period), bucket_end(*hi, period)};
}

std::vector<MetricSet> compute_metrics(const EventStream& stream, const metrics::PriceTable& prices,
                                       const metrics::MetricConfig& cfg, const std::set<std::string>& which) {
    cfg.validate();
    const auto span = stream_span(stream, cfg.window);
    const std::string markout_name = std::to_string(cfg.markout_horizon) + ".Markout";
    std::vector<MetricSet> out;
    auto wanted = [&](const std::string& m) { return which.empty() || which.contains(m); };
    auto add = [&](const std::string& metric, bool per_token) -> MetricSet& {
        out.push_back(MetricSet{metric, per_token, {}, transform_for(metric)});
        return out.back();
    };

    auto composition = [&](const std::string& metric, double (*f)(std::span<const double>)) {
        MetricSet& set = add(metric, false);
        std::vector<SeriesPoint> pts;
        for (const auto& r : stream.reserves) pts.push_back({r.ts, f(r.balances)});
        set.by_token[""] = named(span ? aggregate(pts, cfg.window, AggregateMode::last, span) : MetricSeries{}, metric,
                                 stream.pool_id);
    };
    if (wanted("shannonsEntropy")) composition("shannonsEntropy", metrics::shannon_entropy);
    if (wanted("giniCoefficient")) composition("giniCoefficient", metrics::gini);

    if (wanted("netSwapFlow")) {
        MetricSet& set = add("netSwapFlow", true);
        for (const auto& t : stream.tokens)
            set.by_token[t.symbol] = named(span ? metrics::net_swap_flow(stream.trades, t, cfg.window, span) : MetricSeries{},
                                           set.metric, stream.pool_id);
    }
    if (wanted("netLPFlow")) {
        MetricSet& set = add("netLPFlow", true);
        for (const auto& t : stream.tokens)
            set.by_token[t.symbol] = named(span ? metrics::net_lp_flow(stream.liquidity, t, cfg.window, span) : MetricSeries{},
                                           set.metric, stream.pool_id);
    }
    if (wanted("logReturns")) {
        MetricSet& set = add("logReturns", true);
        for (const auto& t : stream.tokens) {
            MetricSeries s;
            if (span) {
                const MetricSeries px = prices.series(t);
                if (!px.empty()) s = log_diff(aggregate(px.points, cfg.window, AggregateMode::last, span));
            }
            set.by_token[t.symbol] = named(std::move(s), set.metric, stream.pool_id);
        }
    }
    if (wanted(markout_name)) {
        MetricSet& set = add(markout_name, false);
        MetricSeries s;
        if (span) s = metrics::pool_markout_series(stream.trades, prices, cfg.markout_horizon, cfg.window, span).series;
        set.by_token[""] = named(std::move(s), markout_name, stream.pool_id);
    }
    if (wanted("sharkflow")) {
        MetricSet& set = add("sharkflow", true);
        const auto sharks = span ? metrics::classify_sharks(stream.trades, prices, cfg) : std::set<std::string>{};
        for (const auto& t : stream.tokens)
            set.by_token[t.symbol] =
                named(span ? metrics::shark_flow(stream.trades, sharks, t, cfg.window, span) : MetricSeries{}, set.metric,
                      stream.pool_id);
    }
    if (wanted("pin")) {
        MetricSet& set = add("pin", true);
        const auto pin_span = stream_span(stream, cfg.pin_bucket);
        for (const auto& t : stream.tokens) {
            MetricSeries s;
            if (pin_span) {
                const auto buckets = metrics::pin_buckets(stream.trades, t, cfg.pin_bucket, pin_span);
                if (buckets.size() >= cfg.pin_window) s = metrics::rolling_pin(buckets, cfg.pin_window);
            }
            set.by_token[t.symbol] = named(std::move(s), "pin", stream.pool_id);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Labels

Valuation valuation(const EventStream& stream, const PoolRegistryEntry& entry, const metrics::PriceTable& prices,
                    Timestamp tolerance) {
    Valuation v{{"sharePrice", stream.pool_id, {}}, {"virtualPrice", stream.pool_id, {}}};
    if (stream.tokens.size() != entry.tokens.size())
        throw ValidationError("pool " + stream.pool_id + ": stream tokens do not match the registry");
    for (const auto& snap : stream.reserves) {
        if (!(snap.lp_supply > 0.0)) continue;
        std::vector<double> px;
        for (const auto& t : stream.tokens) {
            auto p = prices.lookup(t, snap.ts, tolerance);
            if (!p) break;
            px.push_back(*p);
        }
        if (px.size() != stream.tokens.size()) continue;
        if (entry.numeraire) {
            auto base = prices.lookup(*entry.numeraire, snap.ts, tolerance);
            if (!base) continue;
            for (double& p : px) p /= *base;
        }
        const stableswap::PoolState s{snap.balances, entry.amp, entry.fee, snap.lp_supply};
        v.share_price.points.push_back({snap.ts, stableswap::lp_share_price(s, px)});
        v.virtual_price.points.push_back({snap.ts, stableswap::virtual_price(s)});
    }
    return v;
}

// ---------------------------------------------------------------------------
// Detection

DetectorSession::DetectorSession(bocd::DetectorConfig cfg, Transform t)
    : config(cfg), state(bocd::RunLengthState::initial(cfg)), transform(t) {
    config.validate();
}

bocd::Detection DetectorSession::feed(const MetricSeries& raw) {
    bocd::Detector det(config, state);
    bocd::Detection out;
    for (const auto& p : raw.points) {
        if (last_ts && p.ts <= *last_ts) continue;
        last_ts = p.ts;
        double x = p.value;
        if (transform != Transform::none) {
            const std::optional<double> prev = tail;
            tail = p.value;
            if (!prev) continue;
            if (transform == Transform::diff) {
                x = p.value - *prev;
            } else {
                if (!(p.value > 0.0) || !(*prev > 0.0))
                    throw DomainError("log_diff: non-positive value at ts " + std::to_string(p.ts));
                x = std::log(p.value / *prev);
            }
        }
        if (stats) x = (x - stats->mean) / stats->std;
        auto [tp, cp] = det.observe(x, p.ts);
        out.trace.push_back(tp);
        if (cp) out.changepoints.push_back(*cp);
    }
    state = det.state();
    return out;
}

json save_session(const DetectorSession& s) {
    json hyps = json::array();
    for (const auto& h : s.state.hypotheses) {
        if (!std::isfinite(h.log_prob)) throw NumericalError("detector state holds a non-finite log probability");
        hyps.push_back(json::array({h.run_length, h.log_prob, h.params.mu, h.params.alpha, h.params.beta, h.params.kappa}));
    }
    json j{{"version", kStateVersion},
           {"config", to_json(s.config)},
           {"transform", to_string(s.transform)},
           {"tail", s.tail ? json(*s.tail) : json(nullptr)},
           {"last_ts", s.last_ts ? json(*s.last_ts) : json(nullptr)},
           {"stats", s.stats ? json{{"mean", s.stats->mean}, {"std", s.stats->std}} : json(nullptr)},
           {"state",
            {{"t", s.state.t},
             {"prev_gamma", s.state.prev_gamma},
             {"log_evidence", s.state.log_evidence},
             {"hypotheses", hyps}}}};
    return j;
}

DetectorSession load_session(const json& j) {
    try {
        const int version = j.at("version").get<int>();
        if (version != kStateVersion)
            throw ValidationError("detector state version " + std::to_string(version) + " cannot be resumed (expected " +
                                  std::to_string(kStateVersion) + "); rerun from the start");
        DetectorSession s(parse_detector_config(j.at("config")), parse_transform(j.at("transform").get<std::string>()));
        if (!j.at("tail").is_null()) s.tail = j.at("tail").get<double>();
        if (!j.at("last_ts").is_null()) s.last_ts = j.at("last_ts").get<Timestamp>();
        if (!j.at("stats").is_null()) s.stats = SeriesStats{j.at("stats").at("mean").get<double>(), j.at("stats").at("std").get<double>()};
        const json& st = j.at("state");
        s.state.t = st.at("t").get<std::uint64_t>();
        s.state.prev_gamma = st.at("prev_gamma").get<std::size_t>();
        s.state.log_evidence = st.at("log_evidence").get<double>();
        s.state.hypotheses.clear();
        for (const auto& h : st.at("hypotheses")) {
            s.state.hypotheses.push_back(
                {h.at(0).get<std::size_t>(), h.at(1).get<double>(),
                 bocd::NGParams{h.at(2).get<double>(), h.at(3).get<double>(), h.at(4).get<double>(), h.at(5).get<double>()}});
        }
        if (s.state.hypotheses.empty()) throw ValidationError("detector state has no hypotheses");
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed detector state: ") + e.what());
    }
}

MetricSeries apply_transform(const MetricSeries& raw, Transform t) {
    switch (t) {
    case Transform::none: return raw;
    case Transform::diff: return diff(raw);
    case Transform::log_diff: return log_diff(raw);
    }
    return raw;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalItem> eval_items(const EventStream& stream, const PoolRegistryEntry& entry,
                                 const metrics::PriceTable& prices, const metrics::MetricConfig& cfg,
                                 const std::set<std::string>& which) {
    std::vector<EvalItem> out;
    for (const auto& set : compute_metrics(stream, prices, cfg, which)) {
        out.push_back({stream.pool_id, entry.label(), set.metric,
                       apply_transform(set.primary(entry.watch_token), set.transform)});
    }
    return out;
}

evaluation::LabelSet pool_labels(const EventStream& stream, const PoolRegistryEntry& entry,
                                 const metrics::PriceTable& prices, const evaluation::ScoringConfig& scoring,
                                 Timestamp tolerance) {
    const Valuation v = valuation(stream, entry, prices, tolerance);
    return evaluation::label_depegs(v.share_price, v.virtual_price, scoring);
}

SeriesStats training_stats(const MetricSeries& input, Timestamp split) {
    const MetricSeries train = input.slice(std::numeric_limits<Timestamp>::min(), split);
    if (train.empty()) throw ValidationError(input.metric_name + ": no training points before the split");
    return usable_stats(train);
}

bocd::Detection detect_standardized(const MetricSeries& input, const SeriesStats& stats,
                                    const bocd::DetectorConfig& cfg) {
    return bocd::detect_series(standardize(input, stats.mean, stats.std), cfg);
}

std::vector<TunedItem> tune_items(const std::vector<EvalItem>& items,
                                  const std::map<std::string, std::vector<Timestamp>>& labels, Timestamp split,
                                  const evaluation::GridSpace& space, const evaluation::ScoringConfig& scoring,
                                  const bocd::DetectorConfig& base, unsigned workers) {
    std::vector<TunedItem> out;
    for (const auto& item : items) {
        const MetricSeries train = item.input.slice(std::numeric_limits<Timestamp>::min(), split);
        std::vector<Timestamp> train_labels;
        if (auto it = labels.find(item.pool_id); it != labels.end()) {
            for (Timestamp t : it->second) {
                if (t < split) train_labels.push_back(t);
            }
        }
        if (train.size() < 2) throw ValidationError(item.pool_id + "/" + item.metric + ": training slice too short");
        const SeriesStats st = usable_stats(train);
        const auto result =
            evaluation::tune(standardize(train, st.mean, st.std), train_labels, space, scoring, base, workers);
        out.push_back({{item.pool_label, item.metric, result.report.lf_score, result.report.precision,
                        result.report.weighted_recall, result.best.params},
                       st});
    }
    return out;
}

void write_table(std::ostream& out, const std::vector<TunedRow>& rows) {
    out << "pool,metric,F,P,R,alpha,beta,kappa\n";
    for (const auto& r : rows) {
        out << r.pool << ',' << r.metric << ',' << io::format_double(r.f) << ',' << io::format_double(r.p) << ','
            << io::format_double(r.r) << ',' << io::format_double(r.params.alpha) << ','
            << io::format_double(r.params.beta) << ',' << io::format_double(r.params.kappa) << '\n';
    }
}

std::vector<TunedRow> read_table(std::istream& in, std::string name) {
    const io::CsvFile f = io::read_csv(in, "pool,metric,F,P,R,alpha,beta,kappa", std::move(name));
    std::vector<TunedRow> rows;
    for (const auto& row : f.rows) {
        TunedRow r{row.fields[0], row.fields[1], f.number(row, 2), f.number(row, 3), f.number(row, 4), {}};
        r.params.alpha = f.number(row, 5);
        r.params.beta = f.number(row, 6);
        r.params.kappa = f.number(row, 7);
        if (!r.params.valid()) f.fail(row, "alpha, beta and kappa must be > 0");
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Manifests

json to_json(const RunManifest& m) {
    return json{{"tool", kToolName},     {"version", kToolVersion}, {"command", m.command},
                {"config", m.config},    {"inputs", m.inputs},      {"outputs", m.outputs}};
}

RunManifest manifest_from_json(const json& j) {
    try {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.config = j.value("config", json::object());
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
}

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
    io::write_text(out_dir / "manifests" / (m.command + ".json"), to_json(m).dump(2) + "\n");
}

std::vector<std::string> verify_manifests(const std::filesystem::path& out_dir) {
    const auto dir = out_dir / "manifests";
    if (!std::filesystem::is_directory(dir)) throw ValidationError("no manifests under " + out_dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> problems;
    for (const auto& f : files) {
        const RunManifest m = manifest_from_json(json::parse(io::read_text(f)));
        auto check = [&](const std::filesystem::path& p, const std::string& shown, const std::string& want) {
            if (!std::filesystem::exists(p)) {
                problems.push_back(m.command + ": missing " + shown);
            } else if (io::sha256_file(p) != want) {
                problems.push_back(m.command + ": digest mismatch for " + shown);
            }
        };
        for (const auto& [path, digest] : m.inputs) check(path, path, digest);
        for (const auto& [path, digest] : m.outputs) check(out_dir / path, path, digest);
    }
    return problems;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < n; k = next++) {
                    try {
                        fn(k);
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

} // namespace depeg::pipeline
