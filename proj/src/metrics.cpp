#include "cl4ctr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cl4ctr {

namespace {

constexpr double kProbFloor = 1e-15;

void check_binary_labels(std::span<const double> labels) {
    for (double y : labels) {
        if (y != 0.0 && y != 1.0) {
            throw std::invalid_argument("labels must be 0 or 1");
        }
    }
}

double instance_statistic(std::span<const std::uint32_t> features,
                          std::span<const std::uint64_t> frequencies,
                          BucketStatistic statistic) {
    double acc = statistic == BucketStatistic::kMin
                     ? std::numeric_limits<double>::infinity()
                     : 0.0;
    for (std::uint32_t f : features) {
        if (f >= frequencies.size()) {
            throw std::invalid_argument("feature index outside the frequency table");
        }
        double v = static_cast<double>(frequencies[f]);
        if (statistic == BucketStatistic::kMin) {
            acc = std::min(acc, v);
        } else {
            acc += v;
        }
    }
    if (statistic == BucketStatistic::kMean && !features.empty()) {
        acc /= static_cast<double>(features.size());
    }
    return acc;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("auc: scores and labels must be nonempty and equal-sized");
    }
    check_binary_labels(labels);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::size_t positives = 0;
    for (double y : labels) positives += y == 1.0;
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw std::invalid_argument("auc: needs at least one positive and one negative label");
    }

    // Average ranks across tie groups give tied pairs exactly half credit.
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1.0) positive_rank_sum += avg_rank;
        }
        i = j;
    }

    const double p = static_cast<double>(positives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) /
           (p * static_cast<double>(negatives));
}

double logloss(std::span<const double> probas, std::span<const double> labels) {
    if (probas.size() != labels.size() || probas.empty()) {
        throw std::invalid_argument("logloss: probas and labels must be nonempty and equal-sized");
    }
    check_binary_labels(labels);
    double total = 0.0;
    for (std::size_t i = 0; i < probas.size(); ++i) {
        double p = std::clamp(probas[i], kProbFloor, 1.0 - kProbFloor);
        total -= labels[i] == 1.0 ? std::log(p) : std::log(1.0 - p);
    }
    return total / static_cast<double>(probas.size());
}

EvalResult evaluate_predictions(std::span<const double> probas,
                                std::span<const double> labels) {
    EvalResult r;
    r.count = probas.size();
    r.logloss = logloss(probas, labels);
    bool has_pos = false, has_neg = false;
    for (double y : labels) (y == 1.0 ? has_pos : has_neg) = true;
    r.auc_defined = has_pos && has_neg;
    if (r.auc_defined) r.auc = auc(probas, labels);
    return r;
}

std::vector<std::uint64_t> feature_frequencies(const EncodedDataset& data,
                                               std::uint32_t total_features) {
    std::vector<std::uint64_t> counts(total_features, 0);
    for (std::uint32_t f : data.features) {
        if (f >= total_features) {
            throw std::invalid_argument("feature index outside the vocabulary");
        }
        ++counts[f];
    }
    return counts;
}

BucketStatistic bucket_statistic_from_string(const std::string& name) {
    if (name == "min") return BucketStatistic::kMin;
    if (name == "mean") return BucketStatistic::kMean;
    throw std::invalid_argument("unknown bucket statistic: " + name);
}

FrequencyBucketReport frequency_bucket_logloss(
    std::span<const double> probas, std::span<const double> labels,
    const EncodedDataset& data, std::span<const std::uint64_t> frequencies,
    std::vector<double> edges, BucketStatistic statistic,
    std::span<const double> baseline_probas) {
    if (probas.size() != data.size() || labels.size() != data.size()) {
        throw std::invalid_argument("bucket analysis: predictions must cover the dataset");
    }
    if (!baseline_probas.empty() && baseline_probas.size() != data.size()) {
        throw std::invalid_argument("bucket analysis: baseline must cover the dataset");
    }
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (edges[i] <= edges[i - 1]) {
            throw std::invalid_argument("bucket edges must be strictly increasing");
        }
    }
    const double inf = std::numeric_limits<double>::infinity();
    if (edges.empty() || edges.back() < inf) edges.push_back(inf);

    // Gather instance rows per bucket, then reuse the plain metrics on each.
    std::vector<std::vector<std::size_t>> members(edges.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        double stat = instance_statistic(data.instance(i), frequencies, statistic);
        std::size_t b = std::lower_bound(edges.begin(), edges.end(), stat) - edges.begin();
        members[b].push_back(i);
    }

    FrequencyBucketReport report;
    report.statistic = statistic;
    for (std::size_t b = 0; b < edges.size(); ++b) {
        if (members[b].empty()) continue;
        FrequencyBucket bucket;
        bucket.low = b == 0 ? -inf : edges[b - 1];
        bucket.high = edges[b];
        bucket.count = members[b].size();

        std::vector<double> p, y, base;
        p.reserve(bucket.count);
        y.reserve(bucket.count);
        for (std::size_t i : members[b]) {
            p.push_back(probas[i]);
            y.push_back(labels[i]);
            if (!baseline_probas.empty()) base.push_back(baseline_probas[i]);
        }
        bucket.logloss = logloss(p, y);
        if (!base.empty()) {
            bucket.delta_logloss = logloss(base, y) - bucket.logloss;
            bucket.has_delta = true;
        }
        report.buckets.push_back(bucket);
    }
    return report;
}

std::string bucket_report_csv(const FrequencyBucketReport& report) {
    std::ostringstream out;
    out << "bucket_low,bucket_high,count,logloss,delta_logloss\n";
    out.precision(12);
    for (const FrequencyBucket& b : report.buckets) {
        out << b.low << "," << b.high << "," << b.count << "," << b.logloss << ",";
        if (b.has_delta) out << b.delta_logloss;
        out << "\n";
    }
    return out.str();
}

}  // namespace cl4ctr
