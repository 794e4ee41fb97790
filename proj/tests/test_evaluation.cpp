#include <doctest.h>

#include <cmath>

#include "depeg/errors.hpp"
#include "depeg/evaluation.hpp"
#include "depeg/rng.hpp"

using namespace depeg;
using namespace depeg::evaluation;

namespace {

MetricSeries series(const std::vector<SeriesPoint>& pts) { return {"m", "p", pts}; }

ScoringConfig with_margin(Timestamp m) {
    ScoringConfig c;
    c.margin_m = m;
    return c;
}

} // namespace

TEST_CASE("labels mark every hour past the threshold") {
    const auto sp = series({{1, 1.0}, {2, 0.96}, {3, 0.95}, {4, 0.90}, {5, 0.99}, {6, 0.94}});
    const auto vp = series({{1, 1.0}, {2, 1.0}, {3, 1.0}, {4, 1.0}, {5, 1.0}, {6, 1.0}});
    const auto ls = label_depegs(sp, vp, ScoringConfig{});
    CHECK(ls.timestamps() == std::vector<Timestamp>{3, 4, 6});
    CHECK(ls.first_crossings == std::vector<Timestamp>{3, 6});
    CHECK(ls.labels[1].deviation == doctest::Approx(0.10));

    CHECK_THROWS_AS(label_depegs(sp, series({{1, 1.0}}), ScoringConfig{}), ValidationError);
    CHECK_THROWS_AS(label_depegs(series({{1, 1.0}}), series({{2, 1.0}}), ScoringConfig{}), ValidationError);
    CHECK_THROWS_AS(label_depegs(series({{1, 1.0}}), series({{1, 0.0}}), ScoringConfig{}), DomainError);
}

TEST_CASE("price threshold crossings") {
    const auto s = series({{1, 1.0}, {2, 0.97}, {3, 0.99}, {4, 0.98}, {5, 0.95}, {6, 0.96}});
    CHECK(price_threshold_crossings(s, 0.98) == std::vector<Timestamp>{2, 5});
}

TEST_CASE("matching worked example") {
    const std::vector<Timestamp> t{100, 200};
    const std::vector<Timestamp> x{50, 90, 150};
    const auto r = lf_score(t, x, with_margin(100));
    REQUIRE(r.matches.size() == 2);
    CHECK(r.matches[0] == Match{100, 50, 0.5});
    CHECK(r.matches[1] == Match{200, 150, 0.5});
    CHECK(r.false_positives == std::vector<Timestamp>{90});
    CHECK(r.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.weighted_recall == doctest::Approx(0.5));
    CHECK(r.lf_score == doctest::Approx(4.0 / 7.0));
}

TEST_CASE("matching edge cases") {
    const std::vector<Timestamp> t{100};
    CHECK(match_true_positives(t, std::vector<Timestamp>{101}, 100).empty());
    CHECK(match_true_positives(t, std::vector<Timestamp>{-1}, 100).empty());
    const auto at_label = match_true_positives(t, std::vector<Timestamp>{100}, 100);
    REQUIRE(at_label.size() == 1);
    CHECK(at_label[0].weight == 0.0);
    const auto at_margin = match_true_positives(t, std::vector<Timestamp>{0}, 100);
    REQUIRE(at_margin.size() == 1);
    CHECK(at_margin[0].weight == 1.0);
    // One prediction cannot serve two labels.
    CHECK(match_true_positives(std::vector<Timestamp>{100, 110}, std::vector<Timestamp>{90}, 100).size() == 1);

    const auto none = lf_score(std::vector<Timestamp>{}, std::vector<Timestamp>{}, ScoringConfig{});
    CHECK(none.lf_score == 0.0);
    CHECK(none.precision == 0.0);
    CHECK_THROWS_AS(match_true_positives(t, t, 0), ValidationError);
}

TEST_CASE("score properties on random inputs") {
    Philox4x32 rng(21, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Timestamp> t, x;
        const auto nt = rng.poisson(5), nx = rng.poisson(8);
        for (std::uint64_t k = 0; k < nt; ++k) t.push_back(static_cast<Timestamp>(rng.uniform() * 1000));
        for (std::uint64_t k = 0; k < nx; ++k) x.push_back(static_cast<Timestamp>(rng.uniform() * 1000));
        ScoringConfig cfg = with_margin(50);
        cfg.f_beta = 0.5 + rng.uniform();
        const auto r = lf_score(t, x, cfg);
        CHECK(r.matches.size() + r.false_positives.size() == x.size());
        CHECK(r.matches.size() <= std::min(t.size(), x.size()));
        CHECK(r.precision >= 0.0);
        CHECK(r.precision <= 1.0);
        CHECK(r.weighted_recall >= 0.0);
        CHECK(r.weighted_recall <= 1.0);
        CHECK(r.lf_score <= std::max(r.precision, r.weighted_recall) + 1e-12);
        for (const auto& m : r.matches) {
            CHECK(m.label - m.prediction >= 0);
            CHECK(m.label - m.prediction <= 50);
            CHECK(m.weight == doctest::Approx(static_cast<double>(m.label - m.prediction) / 50.0));
        }
        const double b2 = cfg.f_beta * cfg.f_beta;
        if (r.precision + r.weighted_recall > 0)
            CHECK(r.lf_score == doctest::Approx((1 + b2) * r.precision * r.weighted_recall /
                                                (b2 * r.precision + r.weighted_recall)));
        // Order of the inputs does not matter.
        std::reverse(x.begin(), x.end());
        std::reverse(t.begin(), t.end());
        CHECK(lf_score(t, x, cfg).lf_score == r.lf_score);
    }
}

TEST_CASE("grid") {
    const GridSpace space;
    const auto pts = grid_points(space);
    CHECK(pts.size() == 1000);
    CHECK(pts.front().params.alpha == 1e-5);
    CHECK(pts.back().params.kappa == 1e4);
    CHECK(grid_value(10, -3) == 1.0 / 1000.0);
    CHECK(grid_value(10, 4) == 10000.0);
    for (const auto& p : pts) {
        CHECK(p.params.mu == 0.0);
        CHECK(p.params.valid());
    }
    CHECK_THROWS_AS(grid_points(GridSpace{3, 2, 10}), ValidationError);
}

TEST_CASE("tune agrees with exhaustive scoring and ignores worker count") {
    Philox4x32 rng(22, 0);
    MetricSeries s{"m", "p", {}};
    for (Timestamp k = 1; k <= 120; ++k) s.points.push_back({k * 3600, rng.normal() + (k > 80 ? 5.0 : 0.0)});
    const std::vector<Timestamp> labels{83 * 3600, 84 * 3600};
    const GridSpace space{-2, 1, 10};
    const ScoringConfig scoring;
    const bocd::DetectorConfig base;

    const auto r1 = tune(s, labels, space, scoring, base, 1);
    const auto r4 = tune(s, labels, space, scoring, base, 4);
    CHECK(r1.evaluated == 64);
    CHECK(r1.best.i == r4.best.i);
    CHECK(r1.best.j == r4.best.j);
    CHECK(r1.best.k == r4.best.k);
    CHECK(r1.report.lf_score == r4.report.lf_score);

    double best_f = -1.0, best_p = -1.0;
    for (const auto& gp : grid_points(space)) {
        auto cfg = base;
        cfg.prior = gp.params;
        std::vector<Timestamp> preds;
        for (const auto& c : bocd::detect_series(s, cfg).changepoints) preds.push_back(c.ts);
        const auto r = lf_score(labels, preds, scoring);
        if (r.lf_score > best_f || (r.lf_score == best_f && r.precision > best_p)) {
            best_f = r.lf_score;
            best_p = r.precision;
        }
    }
    CHECK(r1.report.lf_score == best_f);
    CHECK(r1.report.precision == best_p);
    CHECK(r1.report.lf_score > 0.0);
    CHECK_FALSE(r1.all_zero);

    CHECK_THROWS_AS(tune(s, std::vector<Timestamp>{}, space, scoring, base), ValidationError);
}

TEST_CASE("lead times") {
    const std::vector<Timestamp> crossings{1000, 5000};
    const std::vector<Timestamp> cps{100, 700, 950, 4999};
    const auto lt = lead_times(crossings, cps, 500);
    REQUIRE(lt.size() == 2);
    CHECK(lt[0].changepoint == 700);
    CHECK(lt[0].lead_seconds == 300);
    CHECK(lt[1].changepoint == 4999);
    CHECK(lt[1].lead_seconds == 1);
    const auto none = lead_times(std::vector<Timestamp>{10}, std::vector<Timestamp>{20}, 500);
    CHECK_FALSE(none[0].changepoint);
}

TEST_CASE("scoring config validation") {
    ScoringConfig c;
    c.depeg_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.f_beta = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}
