#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "metacal/errors.hpp"
#include "metacal/metrics.hpp"
#include "metacal/stats.hpp"

using namespace metacal;

namespace {

PairedSample<double> paired(std::string id, double before, double after) {
    return PairedSample<double>{std::move(id), before, after};
}

const MetricSelector<double> mean_metric = [](const std::vector<double>& values) {
    if (values.empty()) throw MetricUndefinedError("mean of nothing");
    return std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
};

MetricSelector<ConfidenceReport> auc_metric() {
    return [](const std::vector<ConfidenceReport>& reports) { return auc(reports); };
}

}  // namespace

TEST_CASE("percentile interpolates linearly over sorted values") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(static_cast<double>(i));
    CHECK(percentile(values, 0.0) == 1.0);
    CHECK(percentile(values, 1.0) == 100.0);
    CHECK(percentile(values, 0.5) == doctest::Approx(50.5).epsilon(1e-12));
    CHECK(percentile(values, 0.025) == doctest::Approx(1.0 + 0.025 * 99).epsilon(1e-12));
    CHECK(percentile(values, 0.975) == doctest::Approx(1.0 + 0.975 * 99).epsilon(1e-12));

    CHECK(percentile({7.0}, 0.0) == 7.0);
    CHECK(percentile({7.0}, 1.0) == 7.0);
    CHECK(percentile({3.0, 1.0}, 0.5) == 2.0);  // unsorted input is sorted first

    CHECK_THROWS_AS(percentile({}, 0.5), ConfigError);
    CHECK_THROWS_AS(percentile({1.0}, -0.1), ConfigError);
    CHECK_THROWS_AS(percentile({1.0}, 1.1), ConfigError);
}

TEST_CASE("identical conditions give a degenerate zero interval") {
    std::vector<PairedSample<double>> samples;
    for (int i = 0; i < 40; ++i) {
        const double value = 0.1 * (i % 10);
        samples.push_back(paired("u" + std::to_string(i), value, value));
    }
    const BootstrapResult result = paired_bootstrap(samples, "mean", mean_metric, 200, 0.05, 9);
    CHECK(result.before == result.after);
    CHECK(result.delta == 0.0);
    CHECK(result.ci_low == 0.0);
    CHECK(result.ci_high == 0.0);
    CHECK_FALSE(result.significant);
    CHECK(result.redraws == 0);
    CHECK(result.n_resamples == 200);
}

TEST_CASE("pairing holds: a constant shift yields a degenerate interval at the shift") {
    // Payload values are dyadic so before/after sums differ by exactly 0.75*n.
    std::vector<PairedSample<double>> samples;
    for (int i = 0; i < 30; ++i) {
        const double value = 0.25 * (i % 3);
        samples.push_back(paired("u" + std::to_string(i), value, value + 0.75));
    }
    const BootstrapResult result = paired_bootstrap(samples, "mean", mean_metric, 300, 0.05, 4);
    CHECK(result.delta == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(result.ci_low == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(result.ci_high == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(std::abs(result.ci_high - result.ci_low) < 1e-9);
    CHECK(result.significant);
}

TEST_CASE("bootstrap flags a constructed AUC improvement as significant") {
    std::vector<PairedSample<ConfidenceReport>> samples;
    RngStream rng(77);
    for (int i = 0; i < 500; ++i) {
        const bool correct = rng.bernoulli(0.6);
        ConfidenceReport before;
        before.question_id = "q" + std::to_string(i);
        before.confidence = 0.9;
        before.correct = correct;
        ConfidenceReport after = before;
        const double wiggle = 0.01 * (rng.uniform() - 0.5);
        after.confidence = (correct ? 0.99 : 0.01) + wiggle;
        samples.push_back({before.question_id, before, after});
    }
    const BootstrapResult result = paired_bootstrap(samples, "auc", auc_metric(), 1000, 0.05, 3);
    CHECK(result.before == 0.5);  // constant confidence: every pair ties
    CHECK(result.after > 0.99);
    CHECK(result.ci_low > 0.4);
    CHECK(result.significant);
    CHECK(result.redraws == 0);
}

TEST_CASE("fixed seed reproduces the result bit for bit") {
    std::vector<PairedSample<double>> samples;
    RngStream rng(15);
    for (int i = 0; i < 80; ++i) {
        const double value = rng.uniform();
        samples.push_back(paired("u" + std::to_string(i), value, value + rng.normal() * 0.1));
    }
    const BootstrapResult first = paired_bootstrap(samples, "mean", mean_metric, 400, 0.05, 21);
    const BootstrapResult second = paired_bootstrap(samples, "mean", mean_metric, 400, 0.05, 21);
    CHECK(bootstrap_result_to_json(first) == bootstrap_result_to_json(second));

    const BootstrapResult other = paired_bootstrap(samples, "mean", mean_metric, 400, 0.05, 22);
    CHECK(bootstrap_result_to_json(first) != bootstrap_result_to_json(other));
}

TEST_CASE("undefined replicates are redrawn and reported") {
    // One incorrect unit out of ten: ~35% of resamples lack an incorrect
    // answer, so AUC is undefined there and must be redrawn.
    std::vector<PairedSample<ConfidenceReport>> samples;
    for (int i = 0; i < 10; ++i) {
        ConfidenceReport report;
        report.question_id = "q" + std::to_string(i);
        report.correct = i > 0;
        report.confidence = report.correct ? 0.8 : 0.4;
        samples.push_back({report.question_id, report, report});
    }
    const BootstrapResult result = paired_bootstrap(samples, "auc", auc_metric(), 500, 0.05, 5);
    CHECK(result.redraws > 50);
    CHECK(result.delta == 0.0);
    CHECK_FALSE(result.significant);

    const BootstrapResult again = paired_bootstrap(samples, "auc", auc_metric(), 500, 0.05, 5);
    CHECK(again.redraws == result.redraws);
}

TEST_CASE("metric undefined on the full sample is an error, not a redraw") {
    std::vector<PairedSample<ConfidenceReport>> samples;
    for (int i = 0; i < 10; ++i) {
        ConfidenceReport report;
        report.question_id = "q" + std::to_string(i);
        report.correct = true;
        report.confidence = 0.9;
        samples.push_back({report.question_id, report, report});
    }
    CHECK_THROWS_AS(paired_bootstrap(samples, "auc", auc_metric(), 100, 0.05, 1),
                    MetricUndefinedError);
}

TEST_CASE("a mostly-undefined metric aborts with a redraw-rate error") {
    // Defined on the full sample, undefined on any resample missing u0 or u1
    // (~60% of them), which crosses the 50% redraw budget.
    std::vector<PairedSample<double>> samples;
    for (int i = 0; i < 40; ++i) {
        samples.push_back(paired("u" + std::to_string(i), static_cast<double>(i), i + 0.5));
    }
    int call_count = 0;
    const MetricSelector<double> fussy = [&call_count](const std::vector<double>& values) {
        ++call_count;
        bool has_zero = false;
        bool has_one = false;
        for (const double v : values) {
            if (v == 0.0 || v == 0.5) has_zero = true;
            if (v == 1.0 || v == 1.5) has_one = true;
        }
        if (!has_zero || !has_one) throw MetricUndefinedError("marker units missing");
        return values.front();
    };
    try {
        paired_bootstrap(samples, "fussy", fussy, 400, 0.05, 11);
        FAIL("expected MetricUndefinedError");
    } catch (const MetricUndefinedError& e) {
        CHECK(std::string(e.what()).find("more than half") != std::string::npos);
    }
    CHECK(call_count > 400);
}

TEST_CASE("input validation") {
    CHECK_THROWS_AS(paired_bootstrap<double>({}, "mean", mean_metric, 100, 0.05, 1),
                    ConfigError);
    const std::vector<PairedSample<double>> samples = {paired("u", 0.1, 0.2)};
    CHECK_THROWS_AS(paired_bootstrap(samples, "mean", mean_metric, 0, 0.05, 1), ConfigError);
    CHECK_THROWS_AS(paired_bootstrap(samples, "mean", mean_metric, 100, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(paired_bootstrap(samples, "mean", mean_metric, 100, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(paired_bootstrap(samples, "mean", MetricSelector<double>{}, 100, 0.05, 1),
                    ConfigError);
}

TEST_CASE("bootstrap result json round-trip") {
    std::vector<PairedSample<double>> samples;
    for (int i = 0; i < 20; ++i) {
        samples.push_back(paired("u" + std::to_string(i), 0.1 * (i % 7), 0.1 * (i % 5)));
    }
    const BootstrapResult result = paired_bootstrap(samples, "mean", mean_metric, 250, 0.05, 2);
    const Json doc = bootstrap_result_to_json(result);
    const std::set<std::string> expected_keys = {"metric",      "before",    "after",
                                                 "delta",       "ci",        "significant",
                                                 "resamples",   "redraws",   "seed"};
    std::set<std::string> keys;
    for (const auto& [key, value] : doc.items()) keys.insert(key);
    CHECK(keys == expected_keys);
    CHECK(doc.at("ci").size() == 2);

    const BootstrapResult loaded = bootstrap_result_from_json(doc);
    CHECK(bootstrap_result_to_json(loaded) == doc);
    CHECK_THROWS_AS(bootstrap_result_from_json(Json{{"metric", "x"}}), DependencyError);
}

TEST_CASE("per-group pooling averages group metrics, concatenation does not") {
    struct Tagged {
        std::string group;
        double value;
    };
    const MetricSelector<Tagged> base = [](const std::vector<Tagged>& items) {
        if (items.empty()) throw MetricUndefinedError("empty");
        double sum = 0.0;
        for (const Tagged& item : items) sum += item.value;
        return sum / static_cast<double>(items.size());
    };
    const auto group_of = [](const Tagged& item) { return item.group; };

    // Group a: mean 0.2 over 8 items; group b: mean 0.8 over 2 items.
    std::vector<Tagged> items;
    for (int i = 0; i < 8; ++i) items.push_back({"a", 0.2});
    for (int i = 0; i < 2; ++i) items.push_back({"b", 0.8});

    const auto concat = make_pooled_selector<Tagged>(base, group_of, PoolingMode::concatenate);
    CHECK(concat(items) == doctest::Approx(0.32).epsilon(1e-12));

    const auto grouped =
        make_pooled_selector<Tagged>(base, group_of, PoolingMode::per_group_mean);
    CHECK(grouped(items) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(make_pooled_selector<Tagged>(nullptr, group_of, PoolingMode::concatenate),
                    ConfigError);
    CHECK_THROWS_AS(
        make_pooled_selector<Tagged>(base, nullptr, PoolingMode::per_group_mean),
        ConfigError);
}

TEST_CASE("zero-effect coverage is near the nominal level") {
    const std::function<std::vector<PairedSample<double>>(RngStream&)> generator =
        [](RngStream& rng) {
            std::vector<PairedSample<double>> samples;
            for (int i = 0; i < 60; ++i) {
                const double base = rng.normal();
                samples.push_back(
                    {"u" + std::to_string(i), base, base + 0.5 * rng.normal()});
            }
            return samples;
        };
    const CoverageReport report =
        coverage_check<double>(generator, 0.0, 120, mean_metric, 19, 400, 0.05);
    CHECK(report.trials == 120);
    CHECK(report.coverage() >= 0.88);
    CHECK(report.coverage() <= 1.0);
    // Type-I error mirrors coverage for the zero-effect generator.
    CHECK(report.significance_rate() <= 0.12);
}

TEST_CASE("large effects are flagged significant essentially always") {
    const std::function<std::vector<PairedSample<double>>(RngStream&)> generator =
        [](RngStream& rng) {
            std::vector<PairedSample<double>> samples;
            for (int i = 0; i < 50; ++i) {
                const double base = rng.normal() * 0.1;
                samples.push_back({"u" + std::to_string(i), base, base + 2.0});
            }
            return samples;
        };
    const CoverageReport report =
        coverage_check<double>(generator, 2.0, 30, mean_metric, 23, 300, 0.05);
    CHECK(report.significance_rate() == 1.0);
    CHECK(report.coverage() >= 0.8);

    const CoverageReport single =
        coverage_check<double>(generator, 2.0, 1, mean_metric, 23, 100, 0.05);
    CHECK((single.coverage() == 0.0 || single.coverage() == 1.0));
}
