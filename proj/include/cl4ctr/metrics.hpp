#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cl4ctr/data.hpp"

namespace cl4ctr {

struct EvalResult {
    double auc = 0.0;
    double logloss = 0.0;
    std::size_t count = 0;
    bool auc_defined = true;  // false when only one class is present
};

// Probability that a random positive outranks a random negative, computed
// from average ranks; tied scores credit half. Throws when the labels are
// single-class.
double auc(std::span<const double> scores, std::span<const double> labels);

// Mean binary cross entropy with probabilities clamped to
// [1e-15, 1 - 1e-15] so perfect predictions stay finite.
double logloss(std::span<const double> probas, std::span<const double> labels);

// Both metrics at once; a single-class slice yields auc_defined = false
// instead of throwing.
EvalResult evaluate_predictions(std::span<const double> probas,
                                std::span<const double> labels);

// Occurrence count of every global feature index over a dataset. Pass the
// training split so the bucket analysis never sees test-set frequencies.
std::vector<std::uint64_t> feature_frequencies(const EncodedDataset& data,
                                               std::uint32_t total_features);

enum class BucketStatistic { kMin, kMean };

BucketStatistic bucket_statistic_from_string(const std::string& name);

struct FrequencyBucket {
    double low = 0.0;     // exclusive lower edge; -inf opens the first bucket
    double high = 0.0;    // inclusive upper edge; +inf closes the last
    std::size_t count = 0;
    double logloss = 0.0;
    double delta_logloss = 0.0;  // baseline minus model, when a baseline is given
    bool has_delta = false;
};

struct FrequencyBucketReport {
    std::vector<FrequencyBucket> buckets;  // empty buckets are omitted
    BucketStatistic statistic = BucketStatistic::kMin;
};

// Splits the instances by their minimum (or mean) per-feature training
// frequency and reports logloss per bucket. `edges` are inclusive upper
// bounds, strictly increasing; a closing +inf edge is appended when absent.
// `baseline_probas`, when nonempty, fills delta_logloss per bucket.
FrequencyBucketReport frequency_bucket_logloss(
    std::span<const double> probas, std::span<const double> labels,
    const EncodedDataset& data, std::span<const std::uint64_t> frequencies,
    std::vector<double> edges, BucketStatistic statistic = BucketStatistic::kMin,
    std::span<const double> baseline_probas = {});

// CSV rows "bucket_low,bucket_high,count,logloss,delta_logloss"; the delta
// column is empty when no baseline was supplied.
std::string bucket_report_csv(const FrequencyBucketReport& report);

}  // namespace cl4ctr
