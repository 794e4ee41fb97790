#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "depeg/bocd.hpp"
#include "depeg/evaluation.hpp"
#include "depeg/io.hpp"
#include "depeg/metrics.hpp"
#include "depeg/series.hpp"
#include "depeg/simulator.hpp"
#include "depeg/types.hpp"

namespace depeg::pipeline {

using json = nlohmann::json;

inline constexpr std::string_view kToolName = "depeg";
inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kStateVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

struct PoolRegistryEntry {
    std::string pool_id;
    std::string name;
    std::string address;
    std::vector<TokenId> tokens;
    double amp = 100.0;
    double fee = 0.0004;
    TokenId watch_token;                // per-token metrics are scored on this token
    std::optional<TokenId> numeraire;   // share price in units of this token; USD when unset

    const std::string& label() const { return address.empty() ? pool_id : address; }
};

std::vector<PoolRegistryEntry> parse_pool_registry(const json& j);
json to_json(const PoolRegistryEntry& e);
io::PoolTokens pool_tokens(const std::vector<PoolRegistryEntry>& registry);

struct PriceSource {
    std::string provider; // ccxt | chainlink | file
    std::string locator;
};

using PriceSourceMap = std::map<std::string, PriceSource>;

// Accepts {"token_exchange_map": {...}} or the bare map; symbol -> [provider, locator].
PriceSourceMap parse_price_sources(const json& j);

// Prices for `tokens`: samples already supplied win; the rest come from file providers.
// Live providers fail with an "offline: supply prices.csv" error.
std::vector<PriceSample> resolve_prices(const PriceSourceMap& sources, std::vector<PriceSample> supplied,
                                        const std::vector<TokenId>& tokens, const std::filesystem::path& base_dir);

metrics::MetricConfig parse_metric_config(const json& j);
bocd::DetectorConfig parse_detector_config(const json& j);
evaluation::ScoringConfig parse_scoring_config(const json& j);
evaluation::GridSpace parse_grid_space(const json& j);
sim::ScenarioConfig parse_scenario(const json& j);
json to_json(const sim::ScenarioConfig& cfg);
json to_json(const bocd::DetectorConfig& cfg);

// A 15-day 3-stablecoin pool with one permanent 0.85 depeg of the first token and
// six hours of informed selling before it.
sim::ScenarioConfig default_scenario(std::uint64_t seed);

PoolRegistryEntry registry_entry(const sim::ScenarioConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

enum class Transform { none, diff, log_diff };

struct MetricSet {
    std::string metric;
    bool per_token = false;
    std::map<std::string, MetricSeries> by_token; // "" for pool-level metrics
    Transform transform = Transform::none;

    std::vector<io::MetricRow> rows() const;
    // Pool-level series, or the watch token's.
    const MetricSeries& primary(const TokenId& watch) const;
};

std::vector<std::string> metric_names(const metrics::MetricConfig& cfg);
Transform transform_for(const std::string& metric);
std::string to_string(Transform t);
Transform parse_transform(const std::string& s);

// Buckets spanned by every event in the stream.
std::optional<BucketSpan> stream_span(const EventStream& stream, Timestamp period);

// Computes `which` (all metrics when empty) on one pool, bucketed by cfg.window.
std::vector<MetricSet> compute_metrics(const EventStream& stream, const metrics::PriceTable& prices,
                                       const metrics::MetricConfig& cfg, const std::set<std::string>& which = {});

// ---------------------------------------------------------------------------
// Labels

struct Valuation {
    MetricSeries share_price;
    MetricSeries virtual_price;
};

// Share and virtual price at every snapshot that has a price for each token.
Valuation valuation(const EventStream& stream, const PoolRegistryEntry& entry, const metrics::PriceTable& prices,
                    Timestamp tolerance);

// ---------------------------------------------------------------------------
// Detection with resumable state

struct DetectorSession {
    bocd::DetectorConfig config;
    bocd::RunLengthState state;
    Transform transform = Transform::none;
    std::optional<double> tail;          // last raw value, for diff transforms
    std::optional<Timestamp> last_ts;
    std::optional<SeriesStats> stats;    // standardization fitted on the training slice

    explicit DetectorSession(bocd::DetectorConfig cfg, Transform t = Transform::none);

    // Transforms, standardizes and feeds every point after last_ts.
    bocd::Detection feed(const MetricSeries& raw);
};

json save_session(const DetectorSession& s);
DetectorSession load_session(const json& j);

// Transformed series (no standardization).
MetricSeries apply_transform(const MetricSeries& raw, Transform t);

// ---------------------------------------------------------------------------
// Evaluation over a pool

struct EvalItem {
    std::string pool_id;
    std::string pool_label;
    std::string metric;
    MetricSeries input; // transformed, unstandardized
};

struct TunedRow {
    std::string pool;
    std::string metric;
    double f = 0.0;
    double p = 0.0;
    double r = 0.0;
    bocd::NGParams params;
};

struct TunedItem {
    TunedRow row;
    SeriesStats stats; // standardization fitted on the training points
};

// One item per metric: the pool-level series or the watch token's, transformed.
std::vector<EvalItem> eval_items(const EventStream& stream, const PoolRegistryEntry& entry,
                                 const metrics::PriceTable& prices, const metrics::MetricConfig& cfg,
                                 const std::set<std::string>& which = {});

evaluation::LabelSet pool_labels(const EventStream& stream, const PoolRegistryEntry& entry,
                                 const metrics::PriceTable& prices, const evaluation::ScoringConfig& scoring,
                                 Timestamp tolerance);

// Mean and std of the points before `split`; std 0 is replaced by 1.
SeriesStats training_stats(const MetricSeries& input, Timestamp split);

// Tunes each item on the points before `split` against the labels of its pool.
std::vector<TunedItem> tune_items(const std::vector<EvalItem>& items,
                                  const std::map<std::string, std::vector<Timestamp>>& labels, Timestamp split,
                                  const evaluation::GridSpace& space, const evaluation::ScoringConfig& scoring,
                                  const bocd::DetectorConfig& base, unsigned workers);

bocd::Detection detect_standardized(const MetricSeries& input, const SeriesStats& stats,
                                    const bocd::DetectorConfig& cfg);

void write_table(std::ostream& out, const std::vector<TunedRow>& rows);
std::vector<TunedRow> read_table(std::istream& in, std::string name);

// ---------------------------------------------------------------------------
// Manifests

struct RunManifest {
    std::string command;
    json config;
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::map<std::string, std::string> outputs; // path relative to the output dir -> sha256
};

json to_json(const RunManifest& m);
RunManifest manifest_from_json(const json& j);

// Writes <out_dir>/manifests/<command>.json.
void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m);

// Re-hashes every file named by every manifest under out_dir; returns mismatch descriptions.
std::vector<std::string> verify_manifests(const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------

// Runs fn(0..n-1) on at most `workers` threads; fn must only write its own slot.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

unsigned default_workers();

} // namespace depeg::pipeline
