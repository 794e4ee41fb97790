#include "depeg/bocd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "depeg/errors.hpp"

namespace depeg::bocd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lgamma_ratio(double alpha) { return std::lgamma(alpha + 0.5) - std::lgamma(alpha); }

// Student-t log density with the gamma-function ratio supplied by the caller.
double logpdf_with(double x, const NGParams& p, PredictiveScale scale, double log_gamma_ratio) {
    const double dev2 = (x - p.mu) * (x - p.mu);
    const double power = p.alpha + 0.5;
    if (scale == PredictiveScale::literal) {
        const double denom = 2.0 * p.alpha * p.beta;
        return log_gamma_ratio - 0.5 * std::log(denom * std::numbers::pi) - power * std::log1p(p.kappa * dev2 / denom);
    }
    // nu * scale^2 = 2 beta (kappa + 1) / kappa
    const double nu_s2 = 2.0 * p.beta * (p.kappa + 1.0) / p.kappa;
    return log_gamma_ratio - 0.5 * std::log(nu_s2 * std::numbers::pi) - power * std::log1p(dev2 / nu_s2);
}

double log_sum_exp(const std::vector<double>& v) {
    double m = kNegInf;
    for (double a : v) m = std::max(m, a);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double a : v) s += std::exp(a - m);
    return m + std::log(s);
}

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Emission {
    std::size_t gamma = 0;
    double gamma_probability = 0.0;
    std::optional<Changepoint> changepoint;
};

// The recursion, in place. `ratio_cache` (optional) memoizes lgamma ratios by run length.
Emission advance(RunLengthState& st, double x, const DetectorConfig& cfg, Timestamp ts,
                 std::vector<double>* ratio_cache) {
    if (!std::isfinite(x)) throw ValidationError("bocd: non-finite observation at ts=" + std::to_string(ts));
    const double h = hazard(cfg);
    const double log_h = std::log(h);
    const double log_1mh = std::log1p(-h);

    auto ratio_for = [&](const Hypothesis& hyp) {
        if (ratio_cache == nullptr) return lgamma_ratio(hyp.params.alpha);
        // alpha for run length r is the prior alpha after r additions of 1/2, exactly as
        // ng_update produces it, so cached and uncached paths agree bit for bit.
        auto& cache = *ratio_cache;
        if (cache.empty()) cache.push_back(lgamma_ratio(cfg.prior.alpha));
        if (cache.size() <= hyp.run_length) {
            double a = cfg.prior.alpha;
            for (std::size_t r = 1; r < cache.size(); ++r) a += 0.5;
            while (cache.size() <= hyp.run_length) {
                a += 0.5;
                cache.push_back(lgamma_ratio(a));
            }
        }
        return cache[hyp.run_length];
    };

    const std::size_t n = st.hypotheses.size();
    std::vector<double> joint(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& hyp = st.hypotheses[k];
        joint[k] = hyp.log_prob + logpdf_with(x, hyp.params, cfg.predictive, ratio_for(hyp));
    }
    const double log_cp = log_sum_exp(joint) + log_h;

    std::vector<Hypothesis> next;
    next.reserve(n + 1);
    next.push_back({0, log_cp, cfg.prior});
    for (std::size_t k = 0; k < n; ++k) {
        const auto& hyp = st.hypotheses[k];
        next.push_back({hyp.run_length + 1, joint[k] + log_1mh, ng_update(hyp.params, x)});
    }

    // Normalize.
    std::vector<double> logs(next.size());
    for (std::size_t k = 0; k < next.size(); ++k) logs[k] = next[k].log_prob;
    const double log_norm = log_sum_exp(logs);
    if (!std::isfinite(log_norm)) throw NumericalError("bocd: run-length posterior collapsed at ts=" + std::to_string(ts));
    for (auto& hyp : next) hyp.log_prob -= log_norm;

    // Prune, folding the dropped mass into r = 0.
    const double log_floor = cfg.prob_floor > 0.0 ? std::log(cfg.prob_floor) : kNegInf;
    double dropped = kNegInf;
    std::vector<Hypothesis> kept;
    kept.reserve(next.size());
    kept.push_back(next.front());
    for (std::size_t k = 1; k < next.size(); ++k) {
        if (next[k].run_length > cfg.max_run_length || next[k].log_prob < log_floor) {
            dropped = log_add(dropped, next[k].log_prob);
        } else {
            kept.push_back(std::move(next[k]));
        }
    }
    kept.front().log_prob = log_add(kept.front().log_prob, dropped);

    st.t += 1;
    st.log_evidence += log_norm;
    st.hypotheses = std::move(kept);

    Emission e;
    double best = kNegInf;
    for (const auto& hyp : st.hypotheses) {
        if (hyp.log_prob > best) {
            best = hyp.log_prob;
            e.gamma = hyp.run_length;
        }
    }
    e.gamma_probability = std::exp(best);
    if (e.gamma != st.prev_gamma + 1) {
        e.changepoint = Changepoint{ts, st.t, e.gamma, e.gamma_probability};
    }
    st.prev_gamma = e.gamma;
    return e;
}

} // namespace

bool NGParams::valid() const {
    return std::isfinite(mu) && alpha > 0.0 && beta > 0.0 && kappa > 0.0 && std::isfinite(alpha) &&
           std::isfinite(beta) && std::isfinite(kappa);
}

PredictiveScale parse_predictive_scale(const std::string& s) {
    if (s == "literal") return PredictiveScale::literal;
    if (s == "posterior_predictive") return PredictiveScale::posterior_predictive;
    throw ValidationError("unknown predictive_scale '" + s + "'");
}

std::string to_string(PredictiveScale p) {
    return p == PredictiveScale::literal ? "literal" : "posterior_predictive";
}

void DetectorConfig::validate() const {
    if (!(hazard_lambda > 1.0)) throw ValidationError("hazard_lambda must be > 1");
    if (!prior.valid()) throw ValidationError("prior Normal-Gamma parameters must be positive");
    if (!(prob_floor >= 0.0 && prob_floor < 1e-6)) throw ValidationError("prob_floor must lie in [0, 1e-6)");
    if (max_run_length < 1) throw ValidationError("max_run_length must be >= 1");
}

double hazard(const DetectorConfig& cfg) { return 1.0 / cfg.hazard_lambda; }

double student_t_logpdf(double x, const NGParams& p, PredictiveScale scale) {
    return logpdf_with(x, p, scale, lgamma_ratio(p.alpha));
}

NGParams ng_update(const NGParams& p, double x) {
    return {(p.kappa * p.mu + x) / (p.kappa + 1.0), p.alpha + 0.5,
            p.beta + p.kappa * (x - p.mu) * (x - p.mu) / (2.0 * (p.kappa + 1.0)), p.kappa + 1.0};
}

RunLengthState RunLengthState::initial(const DetectorConfig& cfg) {
    cfg.validate();
    RunLengthState st;
    st.hypotheses.push_back({0, 0.0, cfg.prior});
    return st;
}

double RunLengthState::total_probability() const {
    double s = 0.0;
    for (const auto& h : hypotheses) s += std::exp(h.log_prob);
    return s;
}

std::vector<double> RunLengthState::posterior() const {
    std::vector<double> p(static_cast<std::size_t>(t) + 1, 0.0);
    for (const auto& h : hypotheses) p.at(h.run_length) = std::exp(h.log_prob);
    return p;
}

StepOutput step(const RunLengthState& state, double x, const DetectorConfig& cfg, Timestamp ts) {
    StepOutput out{state, 0, 0.0, std::nullopt};
    auto e = advance(out.state, x, cfg, ts, nullptr);
    out.gamma = e.gamma;
    out.gamma_probability = e.gamma_probability;
    out.changepoint = e.changepoint;
    return out;
}

Detector::Detector(DetectorConfig cfg) : cfg_(cfg), state_(RunLengthState::initial(cfg_)) {}

Detector::Detector(DetectorConfig cfg, RunLengthState state) : cfg_(cfg), state_(std::move(state)) {
    cfg_.validate();
}

std::pair<TracePoint, std::optional<Changepoint>> Detector::observe(double x, Timestamp ts) {
    auto e = advance(state_, x, cfg_, ts, &log_gamma_ratio_);
    return {TracePoint{ts, state_.t, e.gamma, e.gamma_probability}, e.changepoint};
}

Detection Detector::run(const MetricSeries& series) {
    Detection d;
    d.trace.reserve(series.size());
    for (const auto& p : series.points) {
        auto [tp, cp] = observe(p.value, p.ts);
        d.trace.push_back(tp);
        if (cp) d.changepoints.push_back(*cp);
    }
    return d;
}

Detection detect_series(const MetricSeries& series, const DetectorConfig& cfg) {
    Detector det(cfg);
    return det.run(series);
}

} // namespace depeg::bocd
