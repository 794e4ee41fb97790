#include "depeg/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "depeg/errors.hpp"

namespace depeg::io {

std::string format_double(double v) {
    if (!std::isfinite(v)) throw NumericalError("cannot serialize non-finite value");
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw NumericalError("double formatting failed");
    return std::string(buf, end);
}

namespace {

std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

void check_field(const std::string& s, const char* what) {
    if (s.find_first_of(",\n\r") != std::string::npos)
        throw ValidationError(std::string(what) + " '" + s + "' contains a separator");
}

TokenId token_at(const CsvFile& f, const CsvRow& row, std::size_t col) {
    try {
        return TokenId(row.fields[col]);
    } catch (const ValidationError& e) {
        f.fail(row, e.what());
    }
}

// Rejects rows more than one period older than the newest row seen for the same key.
class OrderCheck {
public:
    OrderCheck(const CsvFile& f, Timestamp tolerance) : file_(f), tolerance_(tolerance) {}

    void see(const CsvRow& row, const std::string& key, Timestamp ts) {
        auto [it, fresh] = max_.try_emplace(key, ts);
        if (fresh) return;
        if (ts < it->second - tolerance_)
            file_.fail(row, "timestamp " + std::to_string(ts) + " is out of order by more than one period");
        it->second = std::max(it->second, ts);
    }

private:
    const CsvFile& file_;
    Timestamp tolerance_;
    std::map<std::string, Timestamp> max_;
};

template <class T>
void sort_by_ts(std::vector<T>& v) {
    std::stable_sort(v.begin(), v.end(), [](const T& a, const T& b) { return a.ts < b.ts; });
}

std::size_t token_slot(const std::vector<TokenId>& tokens, const TokenId& t) {
    auto it = std::find(tokens.begin(), tokens.end(), t);
    return it == tokens.end() ? tokens.size() : static_cast<std::size_t>(it - tokens.begin());
}

} // namespace

void CsvFile::fail(const CsvRow& row, const std::string& what) const {
    throw ValidationError(name + ":" + std::to_string(row.line) + ": " + what);
}

double CsvFile::number(const CsvRow& row, std::size_t col) const {
    const std::string& s = row.fields[col];
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v))
        fail(row, "column " + std::to_string(col + 1) + " is not a finite number: '" + s + "'");
    return v;
}

Timestamp CsvFile::timestamp(const CsvRow& row, std::size_t col) const {
    const std::string& s = row.fields[col];
    Timestamp v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) fail(row, "bad timestamp '" + s + "'");
    if (v < 0) fail(row, "negative timestamp");
    return v;
}

CsvFile read_csv(std::istream& in, std::string_view expected_header, std::string name) {
    CsvFile f{std::move(name), {}};
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    const std::size_t ncols = split(expected_header).size();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header) {
            if (line != expected_header)
                throw ValidationError(f.name + ":1: header '" + line + "' does not match '" +
                                      std::string(expected_header) + "'");
            header = true;
            continue;
        }
        if (line.empty()) continue;
        CsvRow row{lineno, split(line)};
        if (row.fields.size() != ncols)
            f.fail(row, "expected " + std::to_string(ncols) + " columns, got " + std::to_string(row.fields.size()));
        f.rows.push_back(std::move(row));
    }
    if (!header) throw ValidationError(f.name + ": missing header");
    return f;
}

CsvFile read_csv_file(const std::filesystem::path& path, std::string_view expected_header) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    return read_csv(in, expected_header, path.filename().string());
}

IngestPaths IngestPaths::in_dir(const std::filesystem::path& dir) {
    return {dir / "trades.csv", dir / "liquidity.csv", dir / "reserves.csv", dir / "prices.csv"};
}

IngestResult ingest(std::istream& trades_in, std::istream& liq_in, std::istream& res_in, std::istream& px_in,
                    const IngestOptions& opts) {
    IngestResult out;
    auto pool_for = [&](const CsvFile& f, const CsvRow& row) -> EventStream& {
        const std::string& id = row.fields[1];
        if (id.empty()) f.fail(row, "empty pool_id");
        auto it = out.pools.find(id);
        if (it != out.pools.end()) return it->second;
        EventStream s;
        s.pool_id = id;
        if (opts.known_pools) {
            auto known = opts.known_pools->find(id);
            if (known == opts.known_pools->end()) f.fail(row, "unknown pool_id '" + id + "'");
            s.tokens = known->second;
        }
        return out.pools.emplace(id, std::move(s)).first->second;
    };
    if (opts.known_pools) {
        for (const auto& [id, tokens] : *opts.known_pools) out.pools[id] = EventStream{id, tokens, {}, {}, {}};
    }
    auto require_member = [&](const CsvFile& f, const CsvRow& row, EventStream& pool, const TokenId& t) {
        if (token_slot(pool.tokens, t) < pool.tokens.size()) return;
        if (opts.known_pools) f.fail(row, "token " + t.symbol + " is not in pool " + pool.pool_id);
    };

    // Reserves first: they fix token order for pools not in the registry.
    {
        const CsvFile f = read_csv(res_in, kReservesHeader, "reserves.csv");
        OrderCheck order(f, opts.period);
        std::size_t r = 0;
        while (r < f.rows.size()) {
            const CsvRow& head = f.rows[r];
            EventStream& pool = pool_for(f, head);
            const Timestamp ts = f.timestamp(head, 0);
            order.see(head, pool.pool_id, ts);
            std::vector<std::pair<TokenId, double>> legs;
            const double lp_supply = f.number(head, 4);
            std::size_t e = r;
            for (; e < f.rows.size() && f.rows[e].fields[0] == head.fields[0] && f.rows[e].fields[1] == head.fields[1];
                 ++e) {
                const CsvRow& row = f.rows[e];
                TokenId t = token_at(f, row, 2);
                const double bal = f.number(row, 3);
                if (!(bal > 0.0)) f.fail(row, "balance must be > 0");
                if (f.number(row, 4) != lp_supply) f.fail(row, "lp_supply differs within one snapshot");
                for (const auto& [seen, v] : legs) {
                    if (seen == t) f.fail(row, "token " + t.symbol + " repeated in snapshot");
                }
                require_member(f, row, pool, t);
                legs.emplace_back(std::move(t), bal);
            }
            if (pool.tokens.empty()) {
                for (const auto& [t, v] : legs) pool.tokens.push_back(t);
            }
            if (legs.size() != pool.tokens.size())
                f.fail(head, "snapshot lists " + std::to_string(legs.size()) + " tokens, pool has " +
                                 std::to_string(pool.tokens.size()));
            ReserveSnapshot snap{ts, std::vector<double>(pool.tokens.size(), 0.0), lp_supply};
            for (const auto& [t, v] : legs) {
                const std::size_t slot = token_slot(pool.tokens, t);
                if (slot == pool.tokens.size()) f.fail(head, "token " + t.symbol + " not seen in earlier snapshots");
                snap.balances[slot] = v;
            }
            pool.reserves.push_back(std::move(snap));
            r = e;
        }
    }
    {
        const CsvFile f = read_csv(trades_in, kTradesHeader, "trades.csv");
        OrderCheck order(f, opts.period);
        for (const CsvRow& row : f.rows) {
            EventStream& pool = pool_for(f, row);
            TradeEvent t{f.timestamp(row, 0), row.fields[2], token_at(f, row, 3), f.number(row, 4),
                         token_at(f, row, 5), f.number(row, 6)};
            try {
                validate(t);
            } catch (const ValidationError& e) {
                f.fail(row, e.what());
            }
            require_member(f, row, pool, t.token_in);
            require_member(f, row, pool, t.token_out);
            order.see(row, pool.pool_id, t.ts);
            pool.trades.push_back(std::move(t));
        }
    }
    {
        const CsvFile f = read_csv(liq_in, kLiquidityHeader, "liquidity.csv");
        OrderCheck order(f, opts.period);
        std::size_t r = 0;
        while (r < f.rows.size()) {
            const CsvRow& head = f.rows[r];
            EventStream& pool = pool_for(f, head);
            LiquidityEvent ev;
            ev.ts = f.timestamp(head, 0);
            ev.provider = head.fields[2];
            ev.lp_token_delta = f.number(head, 5);
            order.see(head, pool.pool_id, ev.ts);
            std::size_t e = r;
            for (; e < f.rows.size(); ++e) {
                const CsvRow& row = f.rows[e];
                if (row.fields[0] != head.fields[0] || row.fields[1] != head.fields[1] ||
                    row.fields[2] != head.fields[2] || row.fields[5] != head.fields[5])
                    break;
                TokenId t = token_at(f, row, 3);
                if (ev.deltas.contains(t)) break;
                require_member(f, row, pool, t);
                ev.deltas.emplace(std::move(t), f.number(row, 4));
            }
            try {
                validate(ev);
            } catch (const ValidationError& err) {
                f.fail(head, err.what());
            }
            pool.liquidity.push_back(std::move(ev));
            r = e;
        }
    }
    {
        const CsvFile f = read_csv(px_in, kPricesHeader, "prices.csv");
        OrderCheck order(f, opts.period);
        for (const CsvRow& row : f.rows) {
            PriceSample s{f.timestamp(row, 0), token_at(f, row, 1), f.number(row, 2)};
            try {
                validate(s);
            } catch (const ValidationError& e) {
                f.fail(row, e.what());
            }
            order.see(row, s.token.symbol, s.ts);
            out.prices.push_back(std::move(s));
        }
        sort_by_ts(out.prices);
    }
    for (auto& [id, pool] : out.pools) {
        sort_by_ts(pool.trades);
        sort_by_ts(pool.liquidity);
        sort_by_ts(pool.reserves);
    }
    return out;
}

IngestResult ingest(const IngestPaths& paths, const IngestOptions& opts) {
    auto open = [](const std::filesystem::path& p) {
        std::ifstream in(p);
        if (!in) throw ValidationError("cannot open " + p.string());
        return in;
    };
    std::ifstream t = open(paths.trades), l = open(paths.liquidity), r = open(paths.reserves), p = open(paths.prices);
    return ingest(t, l, r, p, opts);
}

void write_trades(std::ostream& out, std::span<const EventStream> pools) {
    out << kTradesHeader << '\n';
    for (const auto& pool : pools) {
        check_field(pool.pool_id, "pool_id");
        for (const auto& t : pool.trades) {
            check_field(t.trader, "trader");
            out << t.ts << ',' << pool.pool_id << ',' << t.trader << ',' << t.token_in.symbol << ','
                << format_double(t.amount_in) << ',' << t.token_out.symbol << ',' << format_double(t.amount_out) << '\n';
        }
    }
}

void write_liquidity(std::ostream& out, std::span<const EventStream> pools) {
    out << kLiquidityHeader << '\n';
    for (const auto& pool : pools) {
        for (const auto& e : pool.liquidity) {
            check_field(e.provider, "provider");
            const std::string lp = format_double(e.lp_token_delta);
            for (const auto& [token, d] : e.deltas) {
                out << e.ts << ',' << pool.pool_id << ',' << e.provider << ',' << token.symbol << ','
                    << format_double(d) << ',' << lp << '\n';
            }
        }
    }
}

void write_reserves(std::ostream& out, std::span<const EventStream> pools) {
    out << kReservesHeader << '\n';
    for (const auto& pool : pools) {
        for (const auto& s : pool.reserves) {
            if (s.balances.size() != pool.tokens.size())
                throw ValidationError("snapshot size does not match token list of " + pool.pool_id);
            const std::string lp = format_double(s.lp_supply);
            for (std::size_t k = 0; k < s.balances.size(); ++k) {
                out << s.ts << ',' << pool.pool_id << ',' << pool.tokens[k].symbol << ','
                    << format_double(s.balances[k]) << ',' << lp << '\n';
            }
        }
    }
}

void write_prices(std::ostream& out, std::span<const PriceSample> prices) {
    out << kPricesHeader << '\n';
    for (const auto& p : prices) out << p.ts << ',' << p.token.symbol << ',' << format_double(p.usd_price) << '\n';
}

void write_metric(std::ostream& out, std::span<const MetricRow> rows) {
    out << kMetricHeader << '\n';
    for (const auto& r : rows) out << r.ts << ',' << r.token << ',' << format_double(r.value) << '\n';
}

std::vector<MetricRow> read_metric(std::istream& in, std::string name) {
    const CsvFile f = read_csv(in, kMetricHeader, std::move(name));
    std::vector<MetricRow> rows;
    for (const auto& row : f.rows) rows.push_back({f.timestamp(row, 0), row.fields[1], f.number(row, 2)});
    return rows;
}

MetricSeries select_metric(std::span<const MetricRow> rows, const std::string& token, std::string metric_name) {
    MetricSeries s{std::move(metric_name), {}, {}};
    for (const auto& r : rows) {
        if (r.token != token) continue;
        if (!s.points.empty() && r.ts <= s.points.back().ts)
            throw ValidationError("metric rows for '" + token + "' are not strictly increasing in time");
        s.points.push_back({r.ts, r.value});
    }
    return s;
}

void write_changepoints(std::ostream& out, std::span<const bocd::Changepoint> cps) {
    out << kChangepointsHeader << '\n';
    for (const auto& c : cps)
        out << c.ts << ',' << c.step << ',' << c.map_run_length << ',' << format_double(c.probability) << '\n';
}

void write_runlength(std::ostream& out, std::span<const bocd::TracePoint> trace) {
    out << kChangepointsHeader << '\n';
    for (const auto& p : trace)
        out << p.ts << ',' << p.step << ',' << p.run_length << ',' << format_double(p.probability) << '\n';
}

std::vector<bocd::Changepoint> read_changepoints(std::istream& in, std::string name) {
    const CsvFile f = read_csv(in, kChangepointsHeader, std::move(name));
    std::vector<bocd::Changepoint> out;
    for (const auto& row : f.rows) {
        out.push_back({f.timestamp(row, 0), static_cast<std::uint64_t>(f.timestamp(row, 1)),
                       static_cast<std::size_t>(f.timestamp(row, 2)), f.number(row, 3)});
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw ValidationError("write failed for " + path.string());
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256 failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int k = 0; k < len; ++k) {
        out.push_back(kHex[md[k] >> 4]);
        out.push_back(kHex[md[k] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

} // namespace depeg::io
