#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depeg/bocd.hpp"
#include "depeg/types.hpp"

namespace depeg::io {

inline constexpr std::string_view kTradesHeader = "ts,pool_id,trader,token_in,amount_in,token_out,amount_out";
inline constexpr std::string_view kLiquidityHeader = "ts,pool_id,provider,token,delta,lp_token_delta";
inline constexpr std::string_view kReservesHeader = "ts,pool_id,token,balance,lp_supply";
inline constexpr std::string_view kPricesHeader = "ts,token,usd_price";
inline constexpr std::string_view kChangepointsHeader = "ts,step,run_length,probability";
inline constexpr std::string_view kMetricHeader = "ts,token,value";

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// One parsed CSV file; rows keep their 1-based line numbers for error messages.
struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

struct CsvFile {
    std::string name;
    std::vector<CsvRow> rows;

    // Throws ValidationError "<name>:<line>: <what>".
    [[noreturn]] void fail(const CsvRow& row, const std::string& what) const;
    double number(const CsvRow& row, std::size_t col) const;
    Timestamp timestamp(const CsvRow& row, std::size_t col) const;
};

// Reads a comma-separated file and checks its header matches exactly.
CsvFile read_csv(std::istream& in, std::string_view expected_header, std::string name);
CsvFile read_csv_file(const std::filesystem::path& path, std::string_view expected_header);

// Token order per pool, used to lay out reserve snapshots.
using PoolTokens = std::map<std::string, std::vector<TokenId>>;

struct IngestPaths {
    std::filesystem::path trades;
    std::filesystem::path liquidity;
    std::filesystem::path reserves;
    std::filesystem::path prices;

    // <dir>/trades.csv and so on.
    static IngestPaths in_dir(const std::filesystem::path& dir);
};

struct IngestResult {
    std::map<std::string, EventStream> pools;
    std::vector<PriceSample> prices;
};

struct IngestOptions {
    Timestamp period = kDefaultPeriod; // out-of-order tolerance
    // When set, pools and their token order come from here and unknown pool ids are
    // rejected; otherwise tokens are ordered by first appearance in reserves.csv.
    std::optional<PoolTokens> known_pools;
};

IngestResult ingest(std::istream& trades, std::istream& liquidity, std::istream& reserves, std::istream& prices,
                    const IngestOptions& opts);
IngestResult ingest(const IngestPaths& paths, const IngestOptions& opts);

void write_trades(std::ostream& out, std::span<const EventStream> pools);
void write_liquidity(std::ostream& out, std::span<const EventStream> pools);
void write_reserves(std::ostream& out, std::span<const EventStream> pools);
void write_prices(std::ostream& out, std::span<const PriceSample> prices);

// Rows of one metric file; `token` is empty for pool-level metrics.
struct MetricRow {
    Timestamp ts = 0;
    std::string token;
    double value = 0.0;
};

void write_metric(std::ostream& out, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metric(std::istream& in, std::string name);
// Rows for one token (empty string selects pool-level rows) as a series.
MetricSeries select_metric(std::span<const MetricRow> rows, const std::string& token, std::string metric_name);

void write_changepoints(std::ostream& out, std::span<const bocd::Changepoint> cps);
void write_runlength(std::ostream& out, std::span<const bocd::TracePoint> trace);
std::vector<bocd::Changepoint> read_changepoints(std::istream& in, std::string name);

// Whole file as a string; throws ValidationError when unreadable.
std::string read_text(const std::filesystem::path& path);
// Replaces the file contents.
void write_text(const std::filesystem::path& path, std::string_view text);

// Hex SHA-256 of a byte string or file.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

} // namespace depeg::io
