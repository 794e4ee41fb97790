#pragma once

#include <optional>
#include <span>

#include "depeg/types.hpp"

namespace depeg {

enum class AggregateMode { sum, last, mean };

AggregateMode parse_aggregate_mode(const std::string& s);

// Label of the bucket containing ts. Buckets are right-closed, (k*period, (k+1)*period],
// anchored to the epoch and labelled by their end; ts = 0 belongs to the first bucket.
Timestamp bucket_end(Timestamp ts, Timestamp period);

// Inclusive range of bucket labels an aggregation must cover.
struct BucketSpan {
    Timestamp first = 0;
    Timestamp last = 0;
};

// One output point per bucket between the first and last input points (or over `span`).
// Empty buckets read 0 in sum mode and carry the previous value forward otherwise;
// in last/mean mode leading empty buckets of an explicit span are omitted.
MetricSeries aggregate(std::span<const SeriesPoint> points, Timestamp period, AggregateMode mode,
                       std::optional<BucketSpan> span = std::nullopt);

// value_k = ln(v_{k+1} / v_k), stamped at the later point.
MetricSeries log_diff(const MetricSeries& series);

// value_k = v_{k+1} - v_k, stamped at the later point.
MetricSeries diff(const MetricSeries& series);

struct SeriesStats {
    double mean = 0.0;
    double std = 1.0; // population (divisor N)
};

SeriesStats fit_stats(const MetricSeries& series);
MetricSeries standardize(const MetricSeries& series, double ref_mean, double ref_std);
MetricSeries unstandardize(const MetricSeries& series, double ref_mean, double ref_std);

} // namespace depeg
