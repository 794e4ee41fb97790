#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>

#include "depeg/errors.hpp"
#include "depeg/io.hpp"
#include "depeg/pipeline.hpp"
#include "depeg/simulator.hpp"

namespace fs = std::filesystem;
using namespace depeg;
using pipeline::json;

namespace {

constexpr Timestamp kMinTs = std::numeric_limits<Timestamp>::min();

struct Globals {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<Timestamp> period;
};

json section(const json& cfg, const char* key) {
    return cfg.contains(key) ? cfg.at(key) : json::object();
}

struct Context {
    Globals g;
    json cfg = json::object();
    fs::path out;
    metrics::MetricConfig metric_cfg;
    evaluation::ScoringConfig scoring;
    bocd::DetectorConfig detector;
    unsigned workers = 1;

    Timestamp period() const { return metric_cfg.window; }

    void load() {
        if (!g.config_path.empty()) {
            try {
                cfg = json::parse(io::read_text(g.config_path));
            } catch (const json::parse_error& e) {
                throw ValidationError(g.config_path + ": " + e.what());
            }
            if (!cfg.is_object()) throw ValidationError(g.config_path + ": config must be a JSON object");
        }
        out = g.out_dir;
        json m = section(cfg, "metrics");
        if (g.period) m["window"] = *g.period;
        metric_cfg = pipeline::parse_metric_config(m);
        scoring = pipeline::parse_scoring_config(section(cfg, "scoring"));
        detector = pipeline::parse_detector_config(section(cfg, "detector"));
        workers = cfg.value("workers", pipeline::default_workers());
    }

    json echo() const {
        json e = cfg;
        e["period"] = period();
        if (g.seed) e["seed"] = *g.seed;
        return e;
    }
};

struct Dataset {
    fs::path dir;
    std::vector<pipeline::PoolRegistryEntry> registry;
    io::IngestResult data;
    metrics::PriceTable prices;
    std::map<std::string, std::string> digests;

    const pipeline::PoolRegistryEntry& entry(const std::string& pool_id) const {
        for (const auto& e : registry) {
            if (e.pool_id == pool_id) return e;
        }
        throw ValidationError("pool " + pool_id + " is not registered");
    }
};

Dataset load_dataset(const Context& ctx, const fs::path& dir) {
    Dataset d;
    d.dir = dir;
    const auto paths = io::IngestPaths::in_dir(dir);
    io::IngestOptions opts;
    opts.period = ctx.period();
    if (ctx.cfg.contains("pools")) {
        d.registry = pipeline::parse_pool_registry(ctx.cfg.at("pools"));
    } else if (fs::exists(dir / "pools.json")) {
        d.registry = pipeline::parse_pool_registry(json::parse(io::read_text(dir / "pools.json")));
        d.digests[(dir / "pools.json").string()] = io::sha256_file(dir / "pools.json");
    }
    if (!d.registry.empty()) opts.known_pools = pipeline::pool_tokens(d.registry);
    d.data = io::ingest(paths, opts);
    for (const auto& p : {paths.trades, paths.liquidity, paths.reserves, paths.prices})
        d.digests[p.string()] = io::sha256_file(p);

    if (d.registry.empty()) {
        std::cerr << "warning: no pool registry; assuming amp 100 and fee 0.0004\n";
        for (const auto& [id, s] : d.data.pools) {
            if (s.tokens.size() < 2) throw ValidationError("pool " + id + ": fewer than two tokens seen");
            pipeline::PoolRegistryEntry e;
            e.pool_id = e.name = id;
            e.tokens = s.tokens;
            e.watch_token = s.tokens.front();
            d.registry.push_back(std::move(e));
        }
    }
    std::vector<TokenId> tokens;
    for (const auto& e : d.registry) tokens.insert(tokens.end(), e.tokens.begin(), e.tokens.end());
    pipeline::PriceSourceMap sources;
    if (ctx.cfg.contains("token_exchange_map")) sources = pipeline::parse_price_sources(ctx.cfg);
    d.prices = metrics::PriceTable(pipeline::resolve_prices(sources, d.data.prices, tokens, dir));
    return d;
}

// Writes a file under out_dir and records its digest.
struct Outputs {
    fs::path root;
    std::map<std::string, std::string> digests;

    void put(const std::string& rel, const std::string& text) {
        io::write_text(root / rel, text);
        digests[rel] = io::sha256_hex(text);
    }
};

void finish(const Context& ctx, const std::string& command, const std::map<std::string, std::string>& inputs,
            const Outputs& outs) {
    pipeline::write_manifest(ctx.out, {command, ctx.echo(), inputs, outs.digests});
}

std::set<std::string> split_list(const std::string& s) {
    std::set<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.insert(item);
    }
    return out;
}

template <class F>
std::string render(F&& f) {
    std::ostringstream ss;
    f(ss);
    return ss.str();
}

// --------------------------------------------------------------------------

int cmd_simulate(Context& ctx) {
    sim::ScenarioConfig sc = ctx.cfg.contains("scenario") ? pipeline::parse_scenario(ctx.cfg.at("scenario"))
                                                          : pipeline::default_scenario(1);
    if (ctx.g.seed) sc.seed = *ctx.g.seed;
    if (ctx.g.period) sc.snapshot_period = *ctx.g.period;
    const auto out = sim::run_scenario(sc);
    const std::vector<EventStream> pools{out.stream()};

    Outputs o{ctx.out, {}};
    o.put("trades.csv", render([&](std::ostream& s) { io::write_trades(s, pools); }));
    o.put("liquidity.csv", render([&](std::ostream& s) { io::write_liquidity(s, pools); }));
    o.put("reserves.csv", render([&](std::ostream& s) { io::write_reserves(s, pools); }));
    o.put("prices.csv", render([&](std::ostream& s) { io::write_prices(s, out.prices); }));
    json truth = pipeline::to_json(sc);
    truth = json{{"pool_id", sc.pool_id}, {"depeg_events", truth.at("depeg_events")}, {"truncated", out.truncated}};
    o.put("truth.json", truth.dump(2) + "\n");
    o.put("pools.json", json{{"pools", json::array({pipeline::to_json(pipeline::registry_entry(sc))})}}.dump(2) + "\n");
    json echo = ctx.echo();
    echo["scenario"] = pipeline::to_json(sc);
    pipeline::write_manifest(ctx.out, {"simulate", echo, {}, o.digests});
    std::cout << "simulated " << out.trades.size() << " trades, " << out.liquidity.size() << " liquidity events, "
              << out.reserves.size() << " snapshots" << (out.truncated ? " (truncated: pool drained)" : "") << "\n";
    return 0;
}

int cmd_metrics(Context& ctx, const fs::path& in, const std::string& only) {
    const Dataset d = load_dataset(ctx, in);
    const std::set<std::string> which = split_list(only);
    struct Item {
        const EventStream* stream;
        std::string metric;
        std::string text;
    };
    std::vector<Item> items;
    for (const auto& [id, s] : d.data.pools) {
        for (const auto& m : pipeline::metric_names(ctx.metric_cfg)) {
            if (which.empty() || which.contains(m)) items.push_back({&s, m, {}});
        }
    }
    pipeline::parallel_for(items.size(), ctx.workers, [&](std::size_t k) {
        auto sets = pipeline::compute_metrics(*items[k].stream, d.prices, ctx.metric_cfg, {items[k].metric});
        const auto rows = sets.at(0).rows();
        items[k].text = render([&](std::ostream& s) { io::write_metric(s, rows); });
    });
    Outputs o{ctx.out, {}};
    for (const auto& it : items) o.put("metrics/" + it.stream->pool_id + "/" + it.metric + ".csv", it.text);
    finish(ctx, "metrics", d.digests, o);
    std::cout << "wrote " << items.size() << " metric files\n";
    return 0;
}

int cmd_label(Context& ctx, const fs::path& in) {
    const Dataset d = load_dataset(ctx, in);
    Outputs o{ctx.out, {}};
    for (const auto& [id, s] : d.data.pools) {
        const auto v = pipeline::valuation(s, d.entry(id), d.prices, ctx.period());
        const auto labels = evaluation::label_depegs(v.share_price, v.virtual_price, ctx.scoring);
        const auto ts = labels.timestamps();
        const std::set<Timestamp> depeg(ts.begin(), ts.end());
        const std::set<Timestamp> first(labels.first_crossings.begin(), labels.first_crossings.end());
        o.put("labels/" + id + ".csv", render([&](std::ostream& out) {
                  out << "ts,share_price,virtual_price,deviation,depeg,first_crossing\n";
                  for (std::size_t k = 0; k < v.share_price.size(); ++k) {
                      const Timestamp t = v.share_price.points[k].ts;
                      const double sp = v.share_price.points[k].value, vp = v.virtual_price.points[k].value;
                      out << t << ',' << io::format_double(sp) << ',' << io::format_double(vp) << ','
                          << io::format_double((vp - sp) / vp) << ',' << depeg.contains(t) << ','
                          << first.contains(t) << '\n';
                  }
              }));
        std::cout << id << ": " << labels.labels.size() << " labelled hours, " << labels.first_crossings.size()
                  << " depeg episodes\n";
    }
    finish(ctx, "label", d.digests, o);
    return 0;
}

int cmd_detect(Context& ctx, const fs::path& metric_file, const std::string& token, std::string state_path,
               bool resume, std::optional<Timestamp> train_until, const std::string& transform) {
    std::ifstream in(metric_file);
    if (!in) throw ValidationError("cannot open " + metric_file.string());
    const auto rows = io::read_metric(in, metric_file.filename().string());
    const std::string metric = metric_file.stem().string();
    const MetricSeries raw = io::select_metric(rows, token, metric);
    if (state_path.empty()) state_path = (ctx.out / "state.json").string();

    std::optional<pipeline::DetectorSession> session;
    if (resume) {
        if (!fs::exists(state_path)) throw ValidationError("--resume: state file " + state_path + " does not exist");
        session = pipeline::load_session(json::parse(io::read_text(state_path)));
    } else {
        session.emplace(ctx.detector,
                        transform.empty() ? pipeline::transform_for(metric) : pipeline::parse_transform(transform));
        if (train_until) {
            const MetricSeries x = pipeline::apply_transform(raw, session->transform);
            session->stats = pipeline::training_stats(x, *train_until);
        }
    }
    const auto det = session->feed(raw);

    Outputs o{ctx.out, {}};
    o.put("changepoints.csv", render([&](std::ostream& s) { io::write_changepoints(s, det.changepoints); }));
    o.put("runlength.csv", render([&](std::ostream& s) { io::write_runlength(s, det.trace); }));
    const std::string state_text = pipeline::save_session(*session).dump(2) + "\n";
    io::write_text(state_path, state_text);
    std::map<std::string, std::string> inputs{{metric_file.string(), io::sha256_file(metric_file)}};
    const fs::path rel = fs::proximate(state_path, ctx.out);
    if (!rel.empty() && *rel.begin() != "..") o.digests[rel.generic_string()] = io::sha256_hex(state_text);
    finish(ctx, "detect", inputs, o);
    std::cout << det.trace.size() << " observations, " << det.changepoints.size() << " changepoints\n";
    return 0;
}

struct TuneFile {
    std::optional<Timestamp> test_from;
    std::vector<json> items;
};

Timestamp default_split(const Context& ctx, const Dataset& d) {
    if (ctx.cfg.contains("split_ts")) return ctx.cfg.at("split_ts").get<Timestamp>();
    const double frac = ctx.cfg.value("train_fraction", 0.5);
    if (!(frac > 0.0 && frac < 1.0)) throw ValidationError("train_fraction must be in (0, 1)");
    Timestamp lo = std::numeric_limits<Timestamp>::max(), hi = kMinTs;
    for (const auto& [id, s] : d.data.pools) {
        if (auto span = pipeline::stream_span(s, ctx.period())) {
            lo = std::min(lo, span->first);
            hi = std::max(hi, span->last);
        }
    }
    if (hi == kMinTs) throw ValidationError("no events to split");
    return bucket_end(lo + static_cast<Timestamp>(frac * static_cast<double>(hi - lo)), ctx.period());
}

int cmd_tune(Context& ctx, const fs::path& in, const std::string& train_dir, const std::string& only) {
    const Dataset d = load_dataset(ctx, train_dir.empty() ? in : fs::path(train_dir));
    const Timestamp split = train_dir.empty() ? default_split(ctx, d) : std::numeric_limits<Timestamp>::max();
    const auto space = pipeline::parse_grid_space(section(ctx.cfg, "grid"));
    std::vector<pipeline::EvalItem> items;
    std::map<std::string, std::vector<Timestamp>> labels;
    for (const auto& [id, s] : d.data.pools) {
        const auto& e = d.entry(id);
        auto its = pipeline::eval_items(s, e, d.prices, ctx.metric_cfg, split_list(only));
        items.insert(items.end(), its.begin(), its.end());
        labels[id] = pipeline::pool_labels(s, e, d.prices, ctx.scoring, ctx.period()).timestamps();
    }
    const auto tuned = pipeline::tune_items(items, labels, split, space, ctx.scoring, ctx.detector, ctx.workers);

    json doc{{"test_from", train_dir.empty() ? json(split) : json(nullptr)}, {"items", json::array()}};
    std::vector<pipeline::TunedRow> rows;
    for (std::size_t k = 0; k < tuned.size(); ++k) {
        const auto& t = tuned[k];
        rows.push_back(t.row);
        doc["items"].push_back({{"pool_id", items[k].pool_id},
                                {"metric", items[k].metric},
                                {"alpha", t.row.params.alpha},
                                {"beta", t.row.params.beta},
                                {"kappa", t.row.params.kappa},
                                {"mu", t.row.params.mu},
                                {"mean", t.stats.mean},
                                {"std", t.stats.std}});
    }
    Outputs o{ctx.out, {}};
    o.put("tune.csv", render([&](std::ostream& s) { pipeline::write_table(s, rows); }));
    o.put("tune.json", doc.dump(2) + "\n");
    finish(ctx, "tune", d.digests, o);
    pipeline::write_table(std::cout, rows);
    return 0;
}

struct Scored {
    std::vector<pipeline::TunedRow> rows;
    std::vector<std::string> lead_lines;
};

Scored score_dataset(const Context& ctx, const Dataset& d) {
    const fs::path tune_path = ctx.out / "tune.json";
    if (!fs::exists(tune_path)) throw ValidationError("missing " + tune_path.string() + "; run tune first");
    const json doc = json::parse(io::read_text(tune_path));
    const Timestamp test_from = doc.at("test_from").is_null() ? kMinTs : doc.at("test_from").get<Timestamp>();

    Scored out;
    for (const auto& [id, s] : d.data.pools) {
        const auto& e = d.entry(id);
        const auto labels = pipeline::pool_labels(s, e, d.prices, ctx.scoring, ctx.period());
        std::vector<Timestamp> test_labels, crossings;
        for (Timestamp t : labels.timestamps()) {
            if (t >= test_from) test_labels.push_back(t);
        }
        for (Timestamp t : labels.first_crossings) {
            if (t >= test_from) crossings.push_back(t);
        }
        for (const auto& item : pipeline::eval_items(s, e, d.prices, ctx.metric_cfg)) {
            const json* tuned = nullptr;
            for (const auto& t : doc.at("items")) {
                if (t.at("pool_id") == id && t.at("metric") == item.metric) tuned = &t;
            }
            if (!tuned) continue;
            bocd::DetectorConfig cfg = ctx.detector;
            cfg.prior = {tuned->at("mu").get<double>(), tuned->at("alpha").get<double>(), tuned->at("beta").get<double>(),
                         tuned->at("kappa").get<double>()};
            const SeriesStats st{tuned->at("mean").get<double>(), tuned->at("std").get<double>()};
            const auto det = pipeline::detect_standardized(item.input, st, cfg);
            std::vector<Timestamp> preds, all;
            for (const auto& cp : det.changepoints) {
                all.push_back(cp.ts);
                if (cp.ts >= test_from) preds.push_back(cp.ts);
            }
            const auto rep = evaluation::lf_score(test_labels, preds, ctx.scoring);
            out.rows.push_back({e.label(), item.metric, rep.lf_score, rep.precision, rep.weighted_recall, cfg.prior});
            for (const auto& lt : evaluation::lead_times(crossings, all, ctx.scoring.margin_m)) {
                out.lead_lines.push_back(e.label() + "," + item.metric + "," + std::to_string(lt.crossing) + "," +
                                         (lt.changepoint ? std::to_string(*lt.changepoint) : std::string{}) + "," +
                                         (lt.changepoint ? std::to_string(lt.lead_seconds) : std::string{}));
            }
        }
    }
    return out;
}

int cmd_score(Context& ctx, const fs::path& in) {
    const Dataset d = load_dataset(ctx, in);
    const Scored sc = score_dataset(ctx, d);
    Outputs o{ctx.out, {}};
    o.put("score.csv", render([&](std::ostream& s) { pipeline::write_table(s, sc.rows); }));
    auto inputs = d.digests;
    inputs[(ctx.out / "tune.json").string()] = io::sha256_file(ctx.out / "tune.json");
    finish(ctx, "score", inputs, o);
    pipeline::write_table(std::cout, sc.rows);
    return 0;
}

int cmd_report(Context& ctx, const fs::path& in) {
    const Dataset d = load_dataset(ctx, in);
    const Scored sc = score_dataset(ctx, d);
    Outputs o{ctx.out, {}};
    const std::string table = render([&](std::ostream& s) { pipeline::write_table(s, sc.rows); });
    const std::string leads = render([&](std::ostream& s) {
        s << "pool,metric,crossing,changepoint,lead_seconds\n";
        for (const auto& l : sc.lead_lines) s << l << '\n';
    });
    o.put("report_pool_results.csv", table);
    o.put("report_lead_times.csv", leads);
    auto inputs = d.digests;
    inputs[(ctx.out / "tune.json").string()] = io::sha256_file(ctx.out / "tune.json");
    finish(ctx, "report", inputs, o);
    std::cout << "# pool results\n" << table << "\n# lead times\n" << leads;
    return 0;
}

int cmd_verify(Context& ctx) {
    const auto problems = pipeline::verify_manifests(ctx.out);
    for (const auto& p : problems) std::cout << p << '\n';
    if (!problems.empty()) return 2;
    std::cout << "ok\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stablecoin depeg detection on StableSwap pools"};
    app.require_subcommand(1);
    app.fallthrough();
    Context ctx;
    app.add_option("--config", ctx.g.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--out-dir", ctx.g.out_dir, "output directory")->capture_default_str();
    app.add_option("--seed", ctx.g.seed, "scenario seed");
    app.add_option("--period", ctx.g.period, "aggregation period in seconds")->check(CLI::PositiveNumber);

    std::string in_dir;
    std::string only;
    auto add_in = [&](CLI::App* c) { c->add_option("--in", in_dir, "input directory (default: --out-dir)"); };

    auto* simulate = app.add_subcommand("simulate", "run a synthetic market scenario");
    auto* metrics_cmd = app.add_subcommand("metrics", "compute metric series per pool");
    add_in(metrics_cmd);
    metrics_cmd->add_option("--metrics", only, "comma-separated metric names");
    auto* label = app.add_subcommand("label", "label potential depegs from LP share prices");
    add_in(label);

    auto* detect = app.add_subcommand("detect", "run changepoint detection on a metric file");
    std::string metric_file, token, state_path, transform;
    bool resume = false;
    std::optional<Timestamp> train_until;
    detect->add_option("--metric", metric_file, "metric CSV")->required()->check(CLI::ExistingFile);
    detect->add_option("--token", token, "token column value (empty for pool-level metrics)");
    detect->add_option("--state", state_path, "detector state file (default: <out-dir>/state.json)");
    detect->add_flag("--resume", resume, "continue from --state");
    detect->add_option("--train-until", train_until, "standardize with stats of points before this ts");
    detect->add_option("--transform", transform, "none | diff | log_diff (default by metric)");

    std::string train_dir;
    auto* tune = app.add_subcommand("tune", "grid-search detector priors");
    add_in(tune);
    tune->add_option("--train-dir", train_dir, "tune on this dataset instead of a split of --in");
    tune->add_option("--metrics", only, "comma-separated metric names");
    auto* score = app.add_subcommand("score", "score tuned detectors");
    add_in(score);
    auto* report = app.add_subcommand("report", "pool results and lead times");
    add_in(report);
    auto* verify = app.add_subcommand("verify", "re-check manifest digests");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        ctx.load();
        const fs::path in = in_dir.empty() ? ctx.out : fs::path(in_dir);
        if (*simulate) return cmd_simulate(ctx);
        if (*metrics_cmd) return cmd_metrics(ctx, in, only);
        if (*label) return cmd_label(ctx, in);
        if (*detect) return cmd_detect(ctx, metric_file, token, state_path, resume, train_until, transform);
        if (*tune) return cmd_tune(ctx, in, train_dir, only);
        if (*score) return cmd_score(ctx, in);
        if (*report) return cmd_report(ctx, in);
        if (*verify) return cmd_verify(ctx);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
