#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "metacal/corpus.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/pipeline.hpp"

namespace testutil {

// Numeric question bank: ids <prefix>-0000.., gold = 2*i. Numeric answers
// normalize trivially, so consistency scores depend only on the simulated
// latent p.
inline metacal::QuestionSet synthetic_bank(std::size_t n, const std::string& prefix = "q") {
    std::vector<metacal::Question> questions;
    questions.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s-%05zu", prefix.c_str(), i);
        metacal::Question q;
        q.id = id;
        q.domain_tag = "synthetic";
        q.answer_format = metacal::AnswerFormat::numeric;
        q.text = "What is " + std::to_string(i) + " + " + std::to_string(i) + "?";
        q.gold = std::to_string(2 * i);
        questions.push_back(std::move(q));
    }
    return metacal::make_question_set(std::move(questions), "synthetic");
}

// Baseline pipeline config over a bank written to dir/bank.jsonl.
inline metacal::RunConfig synthetic_config(const std::filesystem::path& dir, std::size_t bank_n,
                                           std::size_t n_train, std::size_t n_test) {
    const metacal::QuestionSet bank = synthetic_bank(bank_n);
    save_corpus(bank, dir / "bank.jsonl");
    metacal::RunConfig config;
    config.corpus_path = dir / "bank.jsonl";
    config.backend = metacal::BackendKind::simulated;
    config.n_samples = 10;
    config.temperature = 1.0;
    config.max_gap = 0.20;
    config.n_train = n_train;
    config.n_test = n_test;
    config.n_pairs = 0;
    config.n_eval_pairs = 0;
    config.parallelism = 4;
    config.bins = 11;
    config.out_dir = dir / "run";
    config.seeds = metacal::derive_seeds(42);
    config.bootstrap.resamples = 300;
    config.bootstrap.alpha = 0.05;
    config.simulated.p_choices = {0.1, 0.3, 0.5, 0.7, 0.9};
    config.simulated.distractor_count = 3;
    config.simulated.fixed_confidence = 0.9;
    return config;
}

inline metacal::Json config_json(const metacal::RunConfig& config) {
    metacal::Json doc = config.to_json();
    doc["out_dir"] = config.out_dir.string();
    doc["parallelism"] = config.parallelism;
    return doc;
}

}  // namespace testutil
