#include "metacal/stats.hpp"

#include <algorithm>
#include <cmath>

namespace metacal {

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ConfigError("percentile needs values");
    if (q < 0.0 || q > 1.0) throw ConfigError("percentile q must be in [0,1]");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lower = static_cast<std::size_t>(std::floor(rank));
    if (lower + 1 >= values.size()) return values.back();
    const double fraction = rank - static_cast<double>(lower);
    return values[lower] + fraction * (values[lower + 1] - values[lower]);
}

namespace detail {

void finish_bootstrap(BootstrapResult& result, std::vector<double>& deltas, double alpha) {
    result.ci_low = percentile(deltas, alpha / 2.0);
    result.ci_high = percentile(deltas, 1.0 - alpha / 2.0);
    result.significant = result.ci_low > 0.0 || result.ci_high < 0.0;
}

}  // namespace detail

Json bootstrap_result_to_json(const BootstrapResult& result) {
    return Json{{"metric", result.metric},
                {"before", result.before},
                {"after", result.after},
                {"delta", result.delta},
                {"ci", Json::array({result.ci_low, result.ci_high})},
                {"significant", result.significant},
                {"resamples", result.n_resamples},
                {"redraws", result.redraws},
                {"seed", result.seed}};
}

BootstrapResult bootstrap_result_from_json(const Json& doc) {
    BootstrapResult result;
    try {
        result.metric = doc.at("metric").get<std::string>();
        result.before = doc.at("before").get<double>();
        result.after = doc.at("after").get<double>();
        result.delta = doc.at("delta").get<double>();
        result.ci_low = doc.at("ci").at(0).get<double>();
        result.ci_high = doc.at("ci").at(1).get<double>();
        result.significant = doc.at("significant").get<bool>();
        result.n_resamples = doc.at("resamples").get<int>();
        result.redraws = doc.at("redraws").get<std::uint64_t>();
        result.seed = doc.at("seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed bootstrap result: ") + e.what());
    }
    return result;
}

double CoverageReport::coverage() const {
    return trials > 0 ? static_cast<double>(covered) / trials : 0.0;
}

double CoverageReport::significance_rate() const {
    return trials > 0 ? static_cast<double>(significant) / trials : 0.0;
}

}  // namespace metacal
