// One PASS/FAIL line per acceptance criterion; exit status is the number of failures.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "depeg/bocd.hpp"
#include "depeg/evaluation.hpp"
#include "depeg/io.hpp"
#include "depeg/metrics.hpp"
#include "depeg/pin.hpp"
#include "depeg/pipeline.hpp"
#include "depeg/rng.hpp"
#include "depeg/simulator.hpp"
#include "depeg/stableswap.hpp"
#include "oracles/bocd_enumeration.hpp"

using namespace depeg;
namespace ss = depeg::stableswap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Result {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

MetricSeries indexed(const std::vector<double>& xs) {
    MetricSeries s{"x", "", {}};
    for (std::size_t k = 0; k < xs.size(); ++k) s.points.push_back({static_cast<Timestamp>(k + 1), xs[k]});
    return s;
}

Result bocd_exactness() {
    Result r;
    const auto t0 = Clock::now();
    Philox4x32 rng(2024, 0);
    double worst = 0.0;
    for (int seq = 0; seq < 12; ++seq) {
        const std::size_t len = 1 + static_cast<std::size_t>(rng.below(10));
        std::vector<double> xs;
        for (std::size_t k = 0; k < len; ++k) xs.push_back(rng.normal(rng.bernoulli(0.5) ? 0.0 : 3.0, 1.0));
        bocd::DetectorConfig cfg;
        cfg.hazard_lambda = 2.0 + 20.0 * rng.uniform();
        cfg.prob_floor = 0.0;
        cfg.prior = {rng.normal(), 0.5 + 2 * rng.uniform(), 0.5 + 2 * rng.uniform(), 0.5 + 2 * rng.uniform()};
        const auto want = oracle::run_length_posteriors(xs, cfg.prior, bocd::hazard(cfg), cfg.predictive);
        auto st = bocd::RunLengthState::initial(cfg);
        for (std::size_t t = 0; t < len; ++t) {
            st = bocd::step(st, xs[t], cfg, static_cast<Timestamp>(t + 1)).state;
            const auto got = st.posterior();
            if (got.size() != want[t].size()) {
                r.require(false, "support size differs");
                continue;
            }
            for (std::size_t l = 0; l < got.size(); ++l) worst = std::max(worst, std::abs(got[l] - want[t][l]));
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream err;
    err << "max abs error " << std::scientific << std::setprecision(2) << worst;
    r.require(worst <= 1e-8, err.str());
    r.require(secs < 1.0, "runtime " + std::to_string(secs) + " s");
    if (r.ok) r.detail = err.str();
    return r;
}

Result bocd_detection() {
    Result r;
    const auto t0 = Clock::now();
    Philox4x32 rng(42, 0);
    std::vector<double> xs;
    for (int k = 0; k < 500; ++k) xs.push_back(rng.normal(0.0, 1.0));
    for (int k = 0; k < 500; ++k) xs.push_back(rng.normal(5.0, 1.0));
    bocd::DetectorConfig cfg;
    cfg.hazard_lambda = 100.0;
    cfg.prior = {0.0, 1.0, 1.0, 1.0};
    const auto det = bocd::detect_series(indexed(xs), cfg);
    std::size_t in_window = 0, early = 0;
    for (const auto& c : det.changepoints) {
        if (c.step >= 500 && c.step <= 505) ++in_window;
        if (c.step >= 10 && c.step <= 499) ++early;
    }
    cfg.prob_floor = 0.0;
    const auto exact = bocd::detect_series(indexed(xs), cfg);
    const double secs = seconds_since(t0);
    r.require(in_window == 1, std::to_string(in_window) + " emissions in [500, 505]");
    r.require(early == 0, std::to_string(early) + " emissions in [10, 499]");
    r.require(exact.changepoints == det.changepoints, "pruning changed the emissions");
    r.require(secs < 1.0, "runtime " + std::to_string(secs) + " s");
    if (r.ok) r.detail = std::to_string(det.changepoints.size()) + " emissions in total";
    return r;
}

Result scoring_golden() {
    Result r;
    evaluation::ScoringConfig cfg;
    cfg.margin_m = 10;
    cfg.f_beta = 1.0;
    const std::vector<Timestamp> t{100};
    const auto a = evaluation::lf_score(t, std::vector<Timestamp>{98}, cfg);
    r.require(a.precision == 1.0 && a.weighted_recall == 0.2 && a.lf_score == 1.0 / 3.0,
              "X={98} gave (" + std::to_string(a.precision) + ", " + std::to_string(a.weighted_recall) + ", " +
                  std::to_string(a.lf_score) + ")");
    const auto b = evaluation::lf_score(t, std::vector<Timestamp>{98, 50}, cfg);
    r.require(std::abs(b.lf_score - 2.0 / 7.0) <= 1e-12, "X={98,50} gave F=" + std::to_string(b.lf_score));
    return r;
}

Result stableswap_checks() {
    Result r;
    const ss::PoolState balanced{{1e6, 1e6, 1e6}, 100.0, 0.0004, 3e6};
    r.require(ss::compute_d(balanced).d == 3e6, "balanced D != sum");

    Philox4x32 rng(7, 0);
    ss::PoolState pool = balanced;
    double worst = 0.0;
    double vp = ss::virtual_price(pool);
    bool monotone = true;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t i = static_cast<std::size_t>(rng.below(3));
        const std::size_t j = (i + 1 + static_cast<std::size_t>(rng.below(2))) % 3;
        const double dx = pool.balances[i] * 0.05 * rng.uniform() + 1e-6;
        pool = ss::apply_swap(pool, i, j, dx).state;
        const auto sol = ss::compute_d(pool);
        worst = std::max(worst, sol.residual / sol.d);
        const double next = sol.d / pool.lp_supply;
        if (next < vp) monotone = false;
        vp = next;
    }
    r.require(worst < 1e-10, "relative residual " + std::to_string(worst));
    r.require(monotone, "virtual price decreased");

    const std::vector<double> amps{5, 50, 500};
    const auto rows = sim::slippage_experiment(balanced, amps, 4.0);
    r.require(rows[0].marginal_price < rows[1].marginal_price && rows[1].marginal_price < rows[2].marginal_price,
              "marginal price not increasing in A");
    return r;
}

Result metric_analytics() {
    Result r;
    const auto t0 = Clock::now();
    const std::vector<double> half{50, 50};
    const std::vector<double> skew{1, 1, 4};
    r.require(std::abs(metrics::shannon_entropy(half) - 1.0) <= 1e-12, "entropy([50,50]) != 1");
    r.require(std::abs(metrics::gini(skew) - 0.5) <= 1e-12, "gini([1,1,4]) != 0.5");

    Philox4x32 rng(9, 0);
    const TokenId a("A"), b("B");
    std::vector<PriceSample> prices;
    for (Timestamp t = 0; t <= 100000; t += 300) {
        prices.push_back({t, a, 1.0 + 0.01 * rng.normal()});
        prices.push_back({t, b, 1.0 + 0.01 * rng.normal()});
    }
    const metrics::PriceTable table(prices);
    double taker = 0.0, lp = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const bool ab = rng.bernoulli(0.5);
        const TradeEvent t{static_cast<Timestamp>(rng.uniform() * 90000), "x", ab ? a : b, 1 + 1000 * rng.uniform(),
                           ab ? b : a, 1 + 1000 * rng.uniform()};
        taker += *metrics::trade_markout(t, table, 300, metrics::MarkoutSide::taker, 300);
        lp += *metrics::trade_markout(t, table, 300, metrics::MarkoutSide::lp, 300);
    }
    r.require(taker + lp == 0.0, "taker + LP markout = " + std::to_string(taker + lp));

    r.require(metrics::pin_value({0.5, 0.5, 20.0, 10.0, 10.0}) == 1.0 / 3.0, "symmetric PIN != 1/3");

    const metrics::PinParams truth{0.4, 0.1, 40.0, 50.0, 50.0};
    Philox4x32 pr(10, 0);
    std::vector<metrics::PinBucket> buckets;
    for (int d = 0; d < 200; ++d) {
        double buy = truth.eps_b, sell = truth.eps_s;
        if (pr.bernoulli(truth.alpha)) (pr.bernoulli(truth.theta) ? sell : buy) += truth.eps_i;
        buckets.push_back({static_cast<Timestamp>(d) * 86400, pr.poisson(buy), pr.poisson(sell)});
    }
    const auto est = metrics::estimate_pin(buckets);
    const double secs = seconds_since(t0);
    r.require(std::abs(est.pin - metrics::pin_value(truth)) <= 0.05,
              "PIN estimate " + std::to_string(est.pin) + " vs " + std::to_string(metrics::pin_value(truth)));
    r.require(secs < 30.0, "runtime " + std::to_string(secs) + " s");
    if (r.ok) r.detail = "PIN estimate " + std::to_string(est.pin);
    return r;
}

struct ScenarioData {
    sim::ScenarioConfig cfg;
    sim::ScenarioOutput out;
    pipeline::PoolRegistryEntry entry;
    metrics::PriceTable prices;
    EventStream stream;
    evaluation::LabelSet labels;
};

ScenarioData scenario(std::uint64_t seed, const evaluation::ScoringConfig& scoring, Timestamp period) {
    ScenarioData d;
    d.cfg = pipeline::default_scenario(seed);
    d.out = sim::run_scenario(d.cfg);
    d.entry = pipeline::registry_entry(d.cfg);
    d.prices = metrics::PriceTable(d.out.prices);
    d.stream = d.out.stream();
    d.labels = pipeline::pool_labels(d.stream, d.entry, d.prices, scoring, period);
    return d;
}

Result end_to_end() {
    Result r;
    const auto t0 = Clock::now();
    const metrics::MetricConfig mcfg;
    const evaluation::ScoringConfig scoring;
    const bocd::DetectorConfig base;
    const std::set<std::string> which{"netSwapFlow", "shannonsEntropy", std::to_string(mcfg.markout_horizon) + ".Markout"};

    const auto train = scenario(101, scoring, mcfg.window);
    const auto test = scenario(202, scoring, mcfg.window);
    r.require(!test.labels.labels.empty(), "no labels on the test scenario");
    r.require(!train.labels.labels.empty(), "no labels on the training scenario");
    if (!r.ok) return r;

    const auto train_items = pipeline::eval_items(train.stream, train.entry, train.prices, mcfg, which);
    const std::map<std::string, std::vector<Timestamp>> train_labels{{train.entry.pool_id, train.labels.timestamps()}};
    const auto tuned = pipeline::tune_items(train_items, train_labels, std::numeric_limits<Timestamp>::max(),
                                            evaluation::GridSpace{}, scoring, base, pipeline::default_workers());

    // First hour the depegging token trades below 0.99.
    const auto& ev = test.cfg.depeg_events.front();
    auto hourly = aggregate(test.out.truth.external_prices.at(ev.token).points, mcfg.window,
                                     AggregateMode::last);
    const auto crossings = evaluation::price_threshold_crossings(hourly, 0.99);
    r.require(!crossings.empty(), "price never crosses 0.99");
    if (!r.ok) return r;
    const Timestamp crossing = crossings.front();

    const auto test_items = pipeline::eval_items(test.stream, test.entry, test.prices, mcfg, which);
    int leading = 0;
    double best_f = 0.0;
    std::ostringstream detail;
    for (std::size_t k = 0; k < test_items.size(); ++k) {
        auto cfg = base;
        cfg.prior = tuned[k].row.params;
        const auto det = pipeline::detect_standardized(test_items[k].input, tuned[k].stats, cfg);
        std::vector<Timestamp> preds;
        for (const auto& c : det.changepoints) preds.push_back(c.ts);
        const auto lt = evaluation::lead_times(std::vector<Timestamp>{crossing}, preds, scoring.margin_m);
        const auto rep = evaluation::lf_score(test.labels.timestamps(), preds, scoring);
        if (lt.front().changepoint) ++leading;
        best_f = std::max(best_f, rep.lf_score);
        detail << test_items[k].metric << " lead " << (lt.front().changepoint ? lt.front().lead_seconds / 3600.0 : -1.0)
               << "h lF " << rep.lf_score << (k + 1 < test_items.size() ? "; " : "");
    }
    const double secs = seconds_since(t0);
    r.require(leading >= 2, std::to_string(leading) + " of 3 detectors lead the crossing");
    r.require(best_f > 0.0, "lF is 0 for every detector");
    r.require(secs < 120.0, "runtime " + std::to_string(secs) + " s");
    r.detail = detail.str() + (r.detail.empty() ? "" : "; " + r.detail);
    return r;
}

std::map<std::string, std::string> simulate_digests(std::uint64_t seed) {
    auto cfg = pipeline::default_scenario(seed);
    cfg.duration = 3 * 86400;
    cfg.depeg_events.front().start = cfg.start_ts + 2 * 86400;
    const auto out = sim::run_scenario(cfg);
    const std::vector<EventStream> pools{out.stream()};
    std::map<std::string, std::string> digests;
    auto put = [&](const std::string& name, const std::function<void(std::ostream&)>& f) {
        std::ostringstream s;
        f(s);
        digests[name] = io::sha256_hex(s.str());
    };
    put("trades.csv", [&](std::ostream& s) { io::write_trades(s, pools); });
    put("liquidity.csv", [&](std::ostream& s) { io::write_liquidity(s, pools); });
    put("reserves.csv", [&](std::ostream& s) { io::write_reserves(s, pools); });
    put("prices.csv", [&](std::ostream& s) { io::write_prices(s, out.prices); });
    return digests;
}

Result determinism() {
    Result r;
    Philox4x32 rng(77, 0);
    MetricSeries s{"m", "", {}};
    for (int k = 1; k <= 600; ++k) s.points.push_back({k * 3600, rng.normal() + (k > 300 ? 3.0 : 0.0)});

    pipeline::DetectorSession whole(bocd::DetectorConfig{});
    const auto all = whole.feed(s);
    pipeline::DetectorSession head(bocd::DetectorConfig{});
    auto part = head.feed(s.slice(0, 250 * 3600));
    auto resumed = pipeline::load_session(nlohmann::json::parse(pipeline::save_session(head).dump()));
    const auto tail = resumed.feed(s);
    part.trace.insert(part.trace.end(), tail.trace.begin(), tail.trace.end());
    part.changepoints.insert(part.changepoints.end(), tail.changepoints.begin(), tail.changepoints.end());
    r.require(part.trace == all.trace && part.changepoints == all.changepoints, "split-stream detection differs");
    r.require(pipeline::save_session(resumed).dump() == pipeline::save_session(whole).dump(), "final states differ");

    const auto a = simulate_digests(5), b = simulate_digests(5), c = simulate_digests(6);
    r.require(a == b, "identical seeds gave different digests");
    r.require(a != c, "different seeds gave identical digests");
    return r;
}

Result grid_search() {
    Result r;
    const auto pts = evaluation::grid_points(evaluation::GridSpace{});
    r.require(pts.size() == 1000, std::to_string(pts.size()) + " configs");
    const std::vector<bocd::NGParams> table{{0, 0.1, 1000, 1},   {0, 0.00001, 1, 10000}, {0, 100, 100, 10000},
                                            {0, 0.1, 100, 1000}, {0, 0.01, 1000, 1},     {0, 10, 100, 0.0001}};
    for (const auto& want : table) {
        bool found = false;
        for (const auto& p : pts) {
            auto near = [](double x, double y) { return std::abs(x - y) <= 1e-12 * std::abs(y); };
            found |= near(p.params.alpha, want.alpha) && near(p.params.beta, want.beta) && near(p.params.kappa, want.kappa);
        }
        r.require(found, "missing (" + std::to_string(want.alpha) + ", " + std::to_string(want.beta) + ", " +
                             std::to_string(want.kappa) + ")");
    }
    return r;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Result()>>> criteria{
        {"1 bocd exactness", bocd_exactness},   {"2 bocd synthetic detection", bocd_detection},
        {"3 scoring golden values", scoring_golden}, {"4 stableswap", stableswap_checks},
        {"5 metric analytics", metric_analytics}, {"6 end-to-end scenario", end_to_end},
        {"7 determinism and resume", determinism}, {"8 grid search", grid_search},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Result r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r.ok = false;
            r.detail = std::string("exception: ") + e.what();
        }
        if (!r.ok) ++failures;
        std::cout << (r.ok ? "PASS " : "FAIL ") << name << (r.detail.empty() ? "" : " (" + r.detail + ")") << std::endl;
    }
    return failures;
}
