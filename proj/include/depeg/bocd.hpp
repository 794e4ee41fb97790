#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depeg/types.hpp"

namespace depeg::bocd {

// Normal-Gamma hyperparameters. As a Student-t: nu = 2 alpha, sigma^2 = beta / (alpha kappa).
struct NGParams {
    double mu = 0.0;
    double alpha = 1.0;
    double beta = 1.0;
    double kappa = 1.0;

    bool valid() const;
    double nu() const { return 2.0 * alpha; }
    double sigma2() const { return beta / (alpha * kappa); }

    friend bool operator==(const NGParams&, const NGParams&) = default;
};

// Which Student-t scale the predictive density uses.
//   literal:              the density as written
//                         G((2a+1)/2) / (sqrt(2 a b pi) G(a)) (1 + k (x-mu)^2 / (2 a b))^-((2a+1)/2)
//   posterior_predictive: Student-t with nu = 2a, location mu, scale^2 = b (k+1) / (a k)
enum class PredictiveScale { literal, posterior_predictive };

PredictiveScale parse_predictive_scale(const std::string& s);
std::string to_string(PredictiveScale p);

struct DetectorConfig {
    double hazard_lambda = 100.0;
    NGParams prior{};
    double prob_floor = 1e-12;          // 0 disables probability pruning
    std::size_t max_run_length = 5000;
    PredictiveScale predictive = PredictiveScale::posterior_predictive;

    void validate() const;
};

// Constant hazard 1 / lambda.
double hazard(const DetectorConfig& cfg);

double student_t_logpdf(double x, const NGParams& p, PredictiveScale scale = PredictiveScale::literal);

// Conjugate update with one observation.
NGParams ng_update(const NGParams& p, double x);

struct Hypothesis {
    std::size_t run_length = 0;
    double log_prob = 0.0; // log P(r_t = run_length | x_{1:t})
    NGParams params;
};

struct RunLengthState {
    std::uint64_t t = 0;
    std::vector<Hypothesis> hypotheses; // ascending run length
    std::size_t prev_gamma = 0;
    double log_evidence = 0.0;          // log P(x_{1:t})

    // P(r_0 = 0) = 1 with the prior parameters.
    static RunLengthState initial(const DetectorConfig& cfg);

    double total_probability() const;
    // Posterior over run lengths 0..t (zeros where pruned).
    std::vector<double> posterior() const;
};

struct Changepoint {
    Timestamp ts = 0;
    std::uint64_t step = 0;
    std::size_t map_run_length = 0;
    double probability = 0.0;

    friend bool operator==(const Changepoint&, const Changepoint&) = default;
};

struct StepOutput {
    RunLengthState state;
    std::size_t gamma = 0;
    double gamma_probability = 0.0;
    std::optional<Changepoint> changepoint;
};

// One recursion step. Emits a changepoint at t when the MAP run length is not
// prev_gamma + 1 (ties resolved to the smallest run length).
StepOutput step(const RunLengthState& state, double x, const DetectorConfig& cfg, Timestamp ts = 0);

struct TracePoint {
    Timestamp ts = 0;
    std::uint64_t step = 0;
    std::size_t run_length = 0;
    double probability = 0.0;

    friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct Detection {
    std::vector<Changepoint> changepoints;
    std::vector<TracePoint> trace;
};

// Streaming detector that owns its state; steps are sequential.
class Detector {
public:
    explicit Detector(DetectorConfig cfg);
    Detector(DetectorConfig cfg, RunLengthState state);

    // Processes one observation; returns the MAP trace point and any emission.
    std::pair<TracePoint, std::optional<Changepoint>> observe(double x, Timestamp ts);

    Detection run(const MetricSeries& series);

    const RunLengthState& state() const { return state_; }
    const DetectorConfig& config() const { return cfg_; }

private:
    DetectorConfig cfg_;
    RunLengthState state_;
    std::vector<double> log_gamma_ratio_; // lgamma(a + 1/2) - lgamma(a) by run length
};

Detection detect_series(const MetricSeries& series, const DetectorConfig& cfg);

} // namespace depeg::bocd
