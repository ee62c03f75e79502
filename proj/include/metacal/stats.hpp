#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metacal/errors.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/rng.hpp"

namespace metacal {

// Before/after payloads for the same unit; resampling draws the unit, so both
// conditions always see the identical multiset of units.
template <typename T>
struct PairedSample {
    std::string unit_id;
    T before;
    T after;
};

// Computes one metric over one condition's payloads. Throws
// MetricUndefinedError when the metric does not exist on the input (e.g. AUC
// with a single-class resample); the bootstrap redraws such replicates.
template <typename T>
using MetricSelector = std::function<double(const std::vector<T>&)>;

struct BootstrapResult {
    std::string metric;
    double before = 0.0;
    double after = 0.0;
    double delta = 0.0;  // after - before on the full sample
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool significant = false;  // 0 outside [ci_low, ci_high]
    int n_resamples = 0;
    std::uint64_t redraws = 0;
    std::uint64_t seed = 0;
};

Json bootstrap_result_to_json(const BootstrapResult& result);
BootstrapResult bootstrap_result_from_json(const Json& doc);

// Linear-interpolation percentile over the values (q in [0,1]).
double percentile(std::vector<double> values, double q);

namespace detail {
// Shared non-template tail: percentile CI and significance flag.
void finish_bootstrap(BootstrapResult& result, std::vector<double>& deltas, double alpha);
}  // namespace detail

// Percentile-CI paired bootstrap. Per replicate r, a stream forked from
// (seed, r) draws unit indices with replacement and both conditions are
// evaluated on that one resample. Undefined-metric replicates are redrawn
// from (seed, r, attempt); if total redraws ever exceed n_resamples (a >50%
// redraw rate) the metric is too unstable at this sample size.
template <typename T>
BootstrapResult paired_bootstrap(const std::vector<PairedSample<T>>& samples,
                                 const std::string& metric_name,
                                 const MetricSelector<T>& metric, int n_resamples = 1000,
                                 double alpha = 0.05, std::uint64_t seed = 0) {
    if (samples.empty()) throw ConfigError("paired_bootstrap needs at least one sample");
    if (n_resamples < 1) throw ConfigError("n_resamples must be >= 1");
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha must be in (0,1)");
    if (!metric) throw ConfigError("paired_bootstrap needs a metric selector");

    const std::size_t n = samples.size();
    std::vector<T> before_full;
    std::vector<T> after_full;
    before_full.reserve(n);
    after_full.reserve(n);
    for (const PairedSample<T>& sample : samples) {
        before_full.push_back(sample.before);
        after_full.push_back(sample.after);
    }

    BootstrapResult result;
    result.metric = metric_name;
    result.n_resamples = n_resamples;
    result.seed = seed;
    // Undefined on the full sample is a setup error, not a redraw case.
    result.before = metric(before_full);
    result.after = metric(after_full);
    result.delta = result.after - result.before;

    const RngStream root(seed);
    const std::uint64_t max_redraws = static_cast<std::uint64_t>(n_resamples);
    std::vector<double> deltas;
    deltas.reserve(static_cast<std::size_t>(n_resamples));
    std::vector<T> before_draw(n);
    std::vector<T> after_draw(n);

    for (int replicate = 0; replicate < n_resamples; ++replicate) {
        const RngStream replicate_stream = root.fork(static_cast<std::uint64_t>(replicate));
        for (std::uint64_t attempt = 0;; ++attempt) {
            RngStream draw = replicate_stream.fork(attempt);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t pick = static_cast<std::size_t>(draw.below(n));
                before_draw[i] = samples[pick].before;
                after_draw[i] = samples[pick].after;
            }
            try {
                const double b = metric(before_draw);
                const double a = metric(after_draw);
                deltas.push_back(a - b);
                break;
            } catch (const MetricUndefinedError&) {
                result.redraws += 1;
                if (result.redraws > max_redraws) {
                    throw MetricUndefinedError(
                        "metric '" + metric_name + "' undefined on more than half of " +
                        std::to_string(n_resamples) +
                        " bootstrap replicates; sample too small for this metric");
                }
            }
        }
    }

    detail::finish_bootstrap(result, deltas, alpha);
    return result;
}

enum class PoolingMode { concatenate, per_group_mean };

// Cross-group metric: either one metric over the concatenated payloads, or
// the unweighted mean of per-group metrics.
template <typename T>
MetricSelector<T> make_pooled_selector(MetricSelector<T> base,
                                       std::function<std::string(const T&)> group_of,
                                       PoolingMode mode) {
    if (!base) throw ConfigError("pooled selector needs a base metric");
    if (mode == PoolingMode::concatenate) return base;
    if (!group_of) throw ConfigError("per-group pooling needs a group key");
    return [base = std::move(base),
            group_of = std::move(group_of)](const std::vector<T>& items) {
        std::vector<std::string> order;
        std::vector<std::vector<T>> groups;
        for (const T& item : items) {
            const std::string key = group_of(item);
            std::size_t at = order.size();
            for (std::size_t g = 0; g < order.size(); ++g) {
                if (order[g] == key) {
                    at = g;
                    break;
                }
            }
            if (at == order.size()) {
                order.push_back(key);
                groups.emplace_back();
            }
            groups[at].push_back(item);
        }
        if (groups.empty()) throw MetricUndefinedError("pooled metric over empty input");
        double sum = 0.0;
        for (const std::vector<T>& group : groups) sum += base(group);
        return sum / static_cast<double>(groups.size());
    };
}

struct CoverageReport {
    int trials = 0;
    int covered = 0;      // CI contained the true difference
    int significant = 0;  // CI excluded zero
    double coverage() const;
    double significance_rate() const;
};

// Self-test harness: runs the bootstrap on freshly generated paired data with
// a known true difference and counts CI coverage. The generator receives an
// independent stream per trial.
template <typename T>
CoverageReport coverage_check(
    const std::function<std::vector<PairedSample<T>>(RngStream&)>& generator,
    double true_delta, int trials, const MetricSelector<T>& metric, std::uint64_t seed,
    int n_resamples = 1000, double alpha = 0.05) {
    if (trials < 1) throw ConfigError("coverage_check needs at least one trial");
    if (!generator) throw ConfigError("coverage_check needs a generator");
    CoverageReport report;
    report.trials = trials;
    const RngStream root(seed);
    for (int trial = 0; trial < trials; ++trial) {
        RngStream data_stream = root.fork("data").fork(static_cast<std::uint64_t>(trial));
        const auto samples = generator(data_stream);
        const BootstrapResult result =
            paired_bootstrap(samples, "coverage", metric, n_resamples, alpha,
                             root.fork("boot").fork(static_cast<std::uint64_t>(trial)).next_u64());
        if (result.ci_low <= true_delta && true_delta <= result.ci_high) report.covered += 1;
        if (result.significant) report.significant += 1;
    }
    return report;
}

}  // namespace metacal
