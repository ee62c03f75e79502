#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "metacal/jsonl.hpp"

namespace metacal {

// One model statement about one question: the verbalized confidence and
// whether the graded answer was correct.
struct ConfidenceReport {
    std::string question_id;
    double confidence = 0.0;  // in [0,1]
    bool correct = false;
    std::string answer;
};

enum class PairChoice { Q1, Q2 };

const char* to_string(PairChoice choice);
PairChoice pair_choice_from_string(const std::string& name);

// One model statement about a question pair: which question it claims more
// confidence on, the reference consistency scores, and per-question
// correctness graded from the answers it gave inside the same completion.
struct ComparisonOutcome {
    std::string q1_id;
    std::string q2_id;
    PairChoice model_choice = PairChoice::Q1;
    double s1 = 0.0;
    double s2 = 0.0;
    bool correct_q1 = false;
    bool correct_q2 = false;
};

// Default geometry: bins_total-1 equal-width intervals over [0,1) plus a
// singleton top bin holding exactly 1.0, so 11 bins come out as
// [0,0.1) ... [0.9,1.0) and {1.0}. The centered scheme instead centers
// bins_total bins on multiples of 1/(bins_total-1).
enum class BinScheme { interval_with_top_singleton, centered };

struct CalibrationBin {
    std::size_t index = 0;
    std::string range_label;
    std::size_t count = 0;
    double sum_confidence = 0.0;
    std::size_t correct_count = 0;

    // Only meaningful when count > 0; empty bins carry no acc/conf and
    // contribute zero weight to the calibration error.
    double accuracy() const { return static_cast<double>(correct_count) / static_cast<double>(count); }
    double mean_confidence() const { return sum_confidence / static_cast<double>(count); }
};

std::vector<CalibrationBin> bin_reports(const std::vector<ConfidenceReport>& reports,
                                        std::size_t bins_total = 11,
                                        BinScheme scheme = BinScheme::interval_with_top_singleton);

double accuracy(const std::vector<ConfidenceReport>& reports);

// Bin-weighted mean absolute gap between bin accuracy and bin confidence.
double ece(const std::vector<ConfidenceReport>& reports, std::size_t bins_total = 11,
           BinScheme scheme = BinScheme::interval_with_top_singleton);

struct PairCounts {
    double permissible = 0.0;
    double concordant = 0.0;  // ties contribute 0.5 for the confidence AUC
};

// Correct-vs-incorrect concordance counts behind the confidence AUC.
PairCounts auc_pair_counts(const std::vector<ConfidenceReport>& reports);

// Probability that a randomly chosen correct answer carries strictly higher
// confidence than a randomly chosen incorrect one, ties counting one half.
// Undefined (typed error) when either class is empty.
double auc(const std::vector<ConfidenceReport>& reports);

// Fraction of unequal-consistency pairs where the stated choice names the
// higher-consistency question.
double auc_c(const std::vector<ComparisonOutcome>& outcomes);

// Fraction of exactly-one-correct pairs where the stated choice names the
// question answered correctly.
double auc_a(const std::vector<ComparisonOutcome>& outcomes);

struct DiagramRow {
    std::string range;
    std::size_t count = 0;
    double proportion = 0.0;
    std::optional<double> accuracy;
    std::optional<double> mean_confidence;
};

std::vector<DiagramRow> reliability_diagram(
    const std::vector<ConfidenceReport>& reports, std::size_t bins_total = 11,
    BinScheme scheme = BinScheme::interval_with_top_singleton);

// CSV with header range,count,proportion,accuracy,mean_confidence; empty
// cells for the undefined columns of empty bins.
std::string reliability_csv(const std::vector<DiagramRow>& rows);

Json confidence_report_to_json(const ConfidenceReport& report);
ConfidenceReport confidence_report_from_json(const Json& doc);

Json comparison_outcome_to_json(const ComparisonOutcome& outcome);
ComparisonOutcome comparison_outcome_from_json(const Json& doc);

// {"n", "accuracy", "ece", "auc", "auc_c", "auc_a", "bins": [...]}. The
// comparison columns are null unless pair outcomes are supplied.
Json metrics_report_json(const std::vector<ConfidenceReport>& reports,
                         std::size_t bins_total = 11,
                         BinScheme scheme = BinScheme::interval_with_top_singleton);
Json metrics_report_json(const std::vector<ConfidenceReport>& reports,
                         const std::vector<ComparisonOutcome>& outcomes,
                         std::size_t bins_total = 11,
                         BinScheme scheme = BinScheme::interval_with_top_singleton);

}  // namespace metacal
