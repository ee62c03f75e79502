#include "metacal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "metacal/errors.hpp"

namespace metacal {

namespace {

void check_confidence(double c) {
    if (!(c >= 0.0 && c <= 1.0)) {
        throw ConfigError("confidence " + std::to_string(c) + " outside [0,1]");
    }
}

void check_consistency(double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ConfigError("consistency score " + std::to_string(s) + " outside [0,1]");
    }
}

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::size_t bin_index(double c, std::size_t bins_total, BinScheme scheme) {
    if (bins_total == 1) return 0;
    const double intervals = static_cast<double>(bins_total - 1);
    if (scheme == BinScheme::interval_with_top_singleton) {
        if (c == 1.0) return bins_total - 1;
        const auto idx = static_cast<std::size_t>(c * intervals);
        return std::min(idx, bins_total - 2);
    }
    const auto idx = static_cast<std::size_t>(std::floor(c * intervals + 0.5));
    return std::min(idx, bins_total - 1);
}

std::string bin_label(std::size_t m, std::size_t bins_total, BinScheme scheme) {
    if (bins_total == 1) return "[0.00,1.00]";
    const double intervals = static_cast<double>(bins_total - 1);
    if (scheme == BinScheme::interval_with_top_singleton) {
        if (m == bins_total - 1) return "{1.00}";
        return "[" + two_decimals(static_cast<double>(m) / intervals) + "," +
               two_decimals(static_cast<double>(m + 1) / intervals) + ")";
    }
    const double half = 0.5 / intervals;
    const double center = static_cast<double>(m) / intervals;
    const double lo = std::max(0.0, center - half);
    const double hi = std::min(1.0, center + half);
    if (m == bins_total - 1) return "[" + two_decimals(lo) + "," + two_decimals(hi) + "]";
    return "[" + two_decimals(lo) + "," + two_decimals(hi) + ")";
}

}  // namespace

const char* to_string(PairChoice choice) {
    return choice == PairChoice::Q1 ? "Q1" : "Q2";
}

PairChoice pair_choice_from_string(const std::string& name) {
    if (name == "Q1") return PairChoice::Q1;
    if (name == "Q2") return PairChoice::Q2;
    throw ConfigError("pair choice must be 'Q1' or 'Q2', got '" + name + "'");
}

std::vector<CalibrationBin> bin_reports(const std::vector<ConfidenceReport>& reports,
                                        std::size_t bins_total, BinScheme scheme) {
    if (bins_total < 1) throw ConfigError("bin count must be >= 1");
    std::vector<CalibrationBin> bins(bins_total);
    for (std::size_t m = 0; m < bins_total; ++m) {
        bins[m].index = m;
        bins[m].range_label = bin_label(m, bins_total, scheme);
    }
    for (const ConfidenceReport& report : reports) {
        check_confidence(report.confidence);
        CalibrationBin& bin = bins[bin_index(report.confidence, bins_total, scheme)];
        bin.count += 1;
        bin.sum_confidence += report.confidence;
        bin.correct_count += report.correct ? 1 : 0;
    }
    return bins;
}

double accuracy(const std::vector<ConfidenceReport>& reports) {
    if (reports.empty()) throw MetricUndefinedError("accuracy undefined on empty report set");
    std::size_t correct = 0;
    for (const ConfidenceReport& r : reports) correct += r.correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(reports.size());
}

double ece(const std::vector<ConfidenceReport>& reports, std::size_t bins_total,
           BinScheme scheme) {
    if (reports.empty()) throw MetricUndefinedError("ece undefined on empty report set");
    const std::vector<CalibrationBin> bins = bin_reports(reports, bins_total, scheme);
    const double n = static_cast<double>(reports.size());
    double total = 0.0;
    for (const CalibrationBin& bin : bins) {
        if (bin.count == 0) continue;
        total += (static_cast<double>(bin.count) / n) *
                 std::fabs(bin.accuracy() - bin.mean_confidence());
    }
    return total;
}

PairCounts auc_pair_counts(const std::vector<ConfidenceReport>& reports) {
    std::vector<double> correct_c;
    std::vector<double> incorrect_c;
    for (const ConfidenceReport& r : reports) {
        check_confidence(r.confidence);
        (r.correct ? correct_c : incorrect_c).push_back(r.confidence);
    }
    std::sort(incorrect_c.begin(), incorrect_c.end());
    // Integer twice-counts keep the tally exact: a strict win adds 2, a tie
    // adds 1, and halving at the end is lossless in binary.
    std::uint64_t twice_concordant = 0;
    for (const double c : correct_c) {
        const auto lo = std::lower_bound(incorrect_c.begin(), incorrect_c.end(), c);
        const auto hi = std::upper_bound(lo, incorrect_c.end(), c);
        twice_concordant += 2 * static_cast<std::uint64_t>(lo - incorrect_c.begin());
        twice_concordant += static_cast<std::uint64_t>(hi - lo);
    }
    PairCounts counts;
    counts.permissible =
        static_cast<double>(correct_c.size()) * static_cast<double>(incorrect_c.size());
    counts.concordant = static_cast<double>(twice_concordant) * 0.5;
    return counts;
}

double auc(const std::vector<ConfidenceReport>& reports) {
    const PairCounts counts = auc_pair_counts(reports);
    if (counts.permissible == 0.0) {
        throw MetricUndefinedError(
            "confidence auc undefined: needs at least one correct and one incorrect report");
    }
    return counts.concordant / counts.permissible;
}

double auc_c(const std::vector<ComparisonOutcome>& outcomes) {
    std::uint64_t permissible = 0;
    std::uint64_t concordant = 0;
    for (const ComparisonOutcome& o : outcomes) {
        check_consistency(o.s1);
        check_consistency(o.s2);
        if (o.s1 == o.s2) continue;
        ++permissible;
        const PairChoice higher = o.s1 > o.s2 ? PairChoice::Q1 : PairChoice::Q2;
        if (o.model_choice == higher) ++concordant;
    }
    if (permissible == 0) {
        throw MetricUndefinedError(
            "consistency auc undefined: no pairs with unequal consistency");
    }
    return static_cast<double>(concordant) / static_cast<double>(permissible);
}

double auc_a(const std::vector<ComparisonOutcome>& outcomes) {
    std::uint64_t permissible = 0;
    std::uint64_t concordant = 0;
    for (const ComparisonOutcome& o : outcomes) {
        if (o.correct_q1 == o.correct_q2) continue;
        ++permissible;
        const PairChoice right = o.correct_q1 ? PairChoice::Q1 : PairChoice::Q2;
        if (o.model_choice == right) ++concordant;
    }
    if (permissible == 0) {
        throw MetricUndefinedError(
            "accuracy auc undefined: no pairs with exactly one correct answer");
    }
    return static_cast<double>(concordant) / static_cast<double>(permissible);
}

std::vector<DiagramRow> reliability_diagram(const std::vector<ConfidenceReport>& reports,
                                            std::size_t bins_total, BinScheme scheme) {
    const std::vector<CalibrationBin> bins = bin_reports(reports, bins_total, scheme);
    const double n = static_cast<double>(reports.size());
    std::vector<DiagramRow> rows;
    rows.reserve(bins.size());
    for (const CalibrationBin& bin : bins) {
        DiagramRow row;
        row.range = bin.range_label;
        row.count = bin.count;
        row.proportion = n == 0.0 ? 0.0 : static_cast<double>(bin.count) / n;
        if (bin.count > 0) {
            row.accuracy = bin.accuracy();
            row.mean_confidence = bin.mean_confidence();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string reliability_csv(const std::vector<DiagramRow>& rows) {
    std::string out = "range,count,proportion,accuracy,mean_confidence\n";
    for (const DiagramRow& row : rows) {
        out += "\"" + row.range + "\"," + std::to_string(row.count) + ",";
        out += Json(row.proportion).dump();
        out += ",";
        if (row.accuracy) out += Json(*row.accuracy).dump();
        out += ",";
        if (row.mean_confidence) out += Json(*row.mean_confidence).dump();
        out += "\n";
    }
    return out;
}

Json confidence_report_to_json(const ConfidenceReport& report) {
    check_confidence(report.confidence);
    return Json{{"id", report.question_id},
                {"confidence", report.confidence},
                {"correct", report.correct},
                {"answer", report.answer}};
}

ConfidenceReport confidence_report_from_json(const Json& doc) {
    try {
        ConfidenceReport report;
        report.question_id = doc.at("id").get<std::string>();
        report.confidence = doc.at("confidence").get<double>();
        report.correct = doc.at("correct").get<bool>();
        report.answer = doc.at("answer").get<std::string>();
        check_confidence(report.confidence);
        return report;
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed confidence report record: ") + e.what());
    } catch (const ConfigError& e) {
        throw DependencyError(std::string("malformed confidence report record: ") + e.what());
    }
}

Json comparison_outcome_to_json(const ComparisonOutcome& outcome) {
    check_consistency(outcome.s1);
    check_consistency(outcome.s2);
    return Json{{"q1", outcome.q1_id},
                {"q2", outcome.q2_id},
                {"choice", to_string(outcome.model_choice)},
                {"s1", outcome.s1},
                {"s2", outcome.s2},
                {"correct_q1", outcome.correct_q1},
                {"correct_q2", outcome.correct_q2}};
}

ComparisonOutcome comparison_outcome_from_json(const Json& doc) {
    try {
        ComparisonOutcome outcome;
        outcome.q1_id = doc.at("q1").get<std::string>();
        outcome.q2_id = doc.at("q2").get<std::string>();
        outcome.model_choice = pair_choice_from_string(doc.at("choice").get<std::string>());
        outcome.s1 = doc.at("s1").get<double>();
        outcome.s2 = doc.at("s2").get<double>();
        outcome.correct_q1 = doc.at("correct_q1").get<bool>();
        outcome.correct_q2 = doc.at("correct_q2").get<bool>();
        check_consistency(outcome.s1);
        check_consistency(outcome.s2);
        return outcome;
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed comparison outcome record: ") + e.what());
    } catch (const ConfigError& e) {
        throw DependencyError(std::string("malformed comparison outcome record: ") + e.what());
    }
}

Json metrics_report_json(const std::vector<ConfidenceReport>& reports, std::size_t bins_total,
                         BinScheme scheme) {
    Json bins = Json::array();
    for (const DiagramRow& row : reliability_diagram(reports, bins_total, scheme)) {
        Json entry{{"range", row.range},
                   {"count", row.count},
                   {"proportion", row.proportion},
                   {"accuracy", nullptr},
                   {"mean_confidence", nullptr}};
        if (row.accuracy) entry["accuracy"] = *row.accuracy;
        if (row.mean_confidence) entry["mean_confidence"] = *row.mean_confidence;
        bins.push_back(std::move(entry));
    }
    return Json{{"n", reports.size()},
                {"accuracy", accuracy(reports)},
                {"ece", ece(reports, bins_total, scheme)},
                {"auc", auc(reports)},
                {"auc_c", nullptr},
                {"auc_a", nullptr},
                {"bins", std::move(bins)}};
}

Json metrics_report_json(const std::vector<ConfidenceReport>& reports,
                         const std::vector<ComparisonOutcome>& outcomes, std::size_t bins_total,
                         BinScheme scheme) {
    Json doc = metrics_report_json(reports, bins_total, scheme);
    if (!outcomes.empty()) {
        doc["auc_c"] = auc_c(outcomes);
        doc["auc_a"] = auc_a(outcomes);
    }
    return doc;
}

}  // namespace metacal
