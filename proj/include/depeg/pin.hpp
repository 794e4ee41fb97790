#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "depeg/series.hpp"
#include "depeg/types.hpp"

namespace depeg::metrics {

// Mixture of Poisson order-arrival processes. With probability alpha an information
// event occurs; it drives informed buying with probability 1 - theta and informed
// selling with probability theta. Informed orders arrive at eps_i, uninformed buys
// and sells at eps_b and eps_s.
struct PinParams {
    double alpha = 0.0;
    double theta = 0.0;
    double eps_i = 0.0;
    double eps_b = 0.0;
    double eps_s = 0.0;

    bool valid() const;
};

// Buy and sell order counts in one bucket (typically a day).
struct PinBucket {
    Timestamp ts = 0;
    std::uint64_t buys = 0;
    std::uint64_t sells = 0;
};

// alpha * eps_i / (eps_b + eps_s + alpha * eps_i).
double pin_value(const PinParams& p);

// Log-likelihood summed over buckets; -infinity for invalid parameters.
double pin_likelihood(std::span<const PinBucket> buckets, const PinParams& p);

struct PinEstimate {
    PinParams params;
    double pin = 0.0;
    double log_likelihood = 0.0;
    std::vector<PinParams> starts;
    std::vector<double> start_log_likelihoods;
};

// Multi-start Nelder-Mead maximum likelihood in (logit alpha, logit theta, log rates).
PinEstimate estimate_pin(std::span<const PinBucket> buckets);

// estimate_pin over each trailing window of `window` buckets.
MetricSeries rolling_pin(std::span<const PinBucket> buckets, std::size_t window);

// Counts buys (token_out == token) and sells (token_in == token) per bucket.
std::vector<PinBucket> pin_buckets(std::span<const TradeEvent> trades, const TokenId& token, Timestamp bucket,
                                   std::optional<BucketSpan> span = std::nullopt);

} // namespace depeg::metrics
