#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "metacal/corpus.hpp"
#include "metacal/errors.hpp"
#include "support/test_util.hpp"

using namespace metacal;

namespace {

std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(METACAL_SOURCE_DIR) / "data" / "fixtures" / name;
}

QuestionSet synthetic_bank(std::size_t n) {
    std::vector<Question> questions;
    for (std::size_t i = 0; i < n; ++i) {
        Question q;
        q.id = "q-" + std::to_string(i);
        q.domain_tag = "synthetic";
        q.answer_format = AnswerFormat::short_answer;
        q.text = "question number " + std::to_string(i) + "?";
        q.gold = "gold-" + std::to_string(i);
        questions.push_back(std::move(q));
    }
    return make_question_set(std::move(questions), "synthetic");
}

std::set<std::string> ids_of(const QuestionSet& set) {
    std::set<std::string> out;
    for (const Question& q : set.questions) out.insert(q.id);
    return out;
}

}  // namespace

TEST_CASE("load_corpus reads the demo fixture with order and fields intact") {
    const QuestionSet set = load_corpus(fixture("corpus_demo.jsonl"));
    REQUIRE(set.size() == 6);

    const Question& mc = set.questions[0];
    CHECK(mc.id == "mc-001");
    CHECK(mc.answer_format == AnswerFormat::multiple_choice);
    CHECK(mc.options.size() == 10);
    CHECK(mc.options[0].letter == "A");
    CHECK(mc.options[4].text == "interference");
    CHECK(mc.gold == "E");

    const Question& num = set.questions[1];
    CHECK(num.answer_format == AnswerFormat::numeric);
    CHECK(num.gold == "99");
    CHECK(num.options.empty());

    const Question& sa = set.questions[2];
    CHECK(sa.answer_format == AnswerFormat::short_answer);
    CHECK(sa.gold == "Yorkshire");

    CHECK(set.questions[3].id == "mc-002");
    CHECK(set.manifest.digest.size() == 64);
    CHECK(set.manifest.source == fixture("corpus_demo.jsonl").string());
}

TEST_CASE("corpus round-trips through save and load with digest equality") {
    const QuestionSet original = load_corpus(fixture("corpus_demo.jsonl"));
    testutil::TempDir tmp;
    save_corpus(original, tmp.file("copy.jsonl"));
    const QuestionSet reloaded = load_corpus(tmp.file("copy.jsonl"));
    CHECK(reloaded.manifest.digest == original.manifest.digest);
    REQUIRE(reloaded.size() == original.size());
    for (std::size_t i = 0; i < original.size(); ++i) {
        CHECK(reloaded.questions[i] == original.questions[i]);
    }
}

TEST_CASE("load_corpus rejects malformed records with line numbers") {
    testutil::TempDir tmp;

    SUBCASE("missing gold") {
        testutil::write_text(
            tmp.file("bad.jsonl"),
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"short_answer\",\"question\":\"ok?\",\"gold\":\"x\"}\n"
            "{\"id\":\"b\",\"domain\":\"d\",\"format\":\"short_answer\",\"question\":\"oops?\"}\n");
        try {
            load_corpus(tmp.file("bad.jsonl"));
            FAIL("expected CorpusError");
        } catch (const CorpusError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("line 2") != std::string::npos);
            CHECK(msg.find("gold") != std::string::npos);
        }
    }

    SUBCASE("duplicate id") {
        testutil::write_text(
            tmp.file("dup.jsonl"),
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"short_answer\",\"question\":\"x?\",\"gold\":\"1\"}\n"
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"short_answer\",\"question\":\"y?\",\"gold\":\"2\"}\n");
        CHECK_THROWS_AS(load_corpus(tmp.file("dup.jsonl")), CorpusError);
    }

    SUBCASE("multiple choice gold must be an option letter") {
        testutil::write_text(
            tmp.file("mcbad.jsonl"),
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"multiple_choice\",\"question\":\"x?\","
            "\"options\":[{\"letter\":\"A\",\"text\":\"1\"},{\"letter\":\"B\",\"text\":\"2\"}],"
            "\"gold\":\"C\"}\n");
        CHECK_THROWS_AS(load_corpus(tmp.file("mcbad.jsonl")), CorpusError);
    }

    SUBCASE("numeric gold must be an integer") {
        testutil::write_text(
            tmp.file("numbad.jsonl"),
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"numeric\",\"question\":\"x?\",\"gold\":\"9.5\"}\n");
        CHECK_THROWS_AS(load_corpus(tmp.file("numbad.jsonl")), CorpusError);
    }

    SUBCASE("options forbidden outside multiple choice") {
        testutil::write_text(
            tmp.file("optbad.jsonl"),
            "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"numeric\",\"question\":\"x?\","
            "\"options\":[{\"letter\":\"A\",\"text\":\"1\"},{\"letter\":\"B\",\"text\":\"2\"}],"
            "\"gold\":\"3\"}\n");
        CHECK_THROWS_AS(load_corpus(tmp.file("optbad.jsonl")), CorpusError);
    }

    SUBCASE("invalid json line") {
        testutil::write_text(tmp.file("broken.jsonl"), "{not json}\n");
        CHECK_THROWS(load_corpus(tmp.file("broken.jsonl")));
    }
}

TEST_CASE("format hint restricts accepted records") {
    CHECK_THROWS_AS(load_corpus(fixture("corpus_demo.jsonl"), FormatHint::numeric), CorpusError);
    testutil::TempDir tmp;
    testutil::write_text(
        tmp.file("num.jsonl"),
        "{\"id\":\"a\",\"domain\":\"d\",\"format\":\"numeric\",\"question\":\"x?\",\"gold\":\"7\"}\n");
    CHECK(load_corpus(tmp.file("num.jsonl"), FormatHint::numeric).size() == 1);
}

TEST_CASE("split_corpus produces exact-size disjoint subsets") {
    const QuestionSet bank = synthetic_bank(300);
    const CorpusSplit split = split_corpus(bank, 200, 100, 7);
    CHECK(split.train.size() == 200);
    CHECK(split.test.size() == 100);
    CHECK(split.seed == 7);

    const auto train_ids = ids_of(split.train);
    const auto test_ids = ids_of(split.test);
    CHECK(train_ids.size() == 200);
    CHECK(test_ids.size() == 100);
    for (const std::string& id : test_ids) CHECK(train_ids.count(id) == 0);
    const auto all_ids = ids_of(bank);
    for (const std::string& id : train_ids) CHECK(all_ids.count(id) == 1);
    for (const std::string& id : test_ids) CHECK(all_ids.count(id) == 1);
}

TEST_CASE("split_corpus keeps source order inside each subset") {
    const QuestionSet bank = synthetic_bank(50);
    const CorpusSplit split = split_corpus(bank, 30, 20, 11);
    std::vector<std::size_t> positions;
    for (const Question& q : split.train.questions) {
        positions.push_back(static_cast<std::size_t>(
            std::stoul(q.id.substr(2))));
    }
    CHECK(std::is_sorted(positions.begin(), positions.end()));
}

TEST_CASE("split_corpus is deterministic per seed and varies across seeds") {
    const QuestionSet bank = synthetic_bank(100);
    const CorpusSplit a = split_corpus(bank, 50, 50, 42);
    const CorpusSplit b = split_corpus(bank, 50, 50, 42);
    CHECK(ids_of(a.train) == ids_of(b.train));
    CHECK(a.train.manifest.digest == b.train.manifest.digest);
    CHECK(a.test.manifest.digest == b.test.manifest.digest);

    int differing = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const CorpusSplit lhs = split_corpus(bank, 50, 50, seed);
        const CorpusSplit rhs = split_corpus(bank, 50, 50, seed + 1000);
        if (ids_of(lhs.train) != ids_of(rhs.train)) ++differing;
    }
    CHECK(differing >= 99);
}

TEST_CASE("split_corpus boundary and error cases") {
    const QuestionSet bank = synthetic_bank(10);
    const CorpusSplit all_test = split_corpus(bank, 0, 10, 3);
    CHECK(all_test.train.size() == 0);
    CHECK(ids_of(all_test.test) == ids_of(bank));
    CHECK_THROWS_AS(split_corpus(bank, 8, 3, 3), ConfigError);
}

TEST_CASE("split manifest round-trips through apply_split_manifest") {
    const QuestionSet bank = synthetic_bank(40);
    const CorpusSplit split = split_corpus(bank, 25, 15, 99);
    const Json manifest = split_manifest(split);
    CHECK(manifest.at("seed") == 99);
    CHECK(manifest.at("train_ids").size() == 25);

    const CorpusSplit restored = apply_split_manifest(bank, manifest);
    CHECK(restored.seed == 99);
    CHECK(restored.train.manifest.digest == split.train.manifest.digest);
    CHECK(restored.test.manifest.digest == split.test.manifest.digest);
}

TEST_CASE("make_question_set rejects duplicate ids") {
    std::vector<Question> qs;
    Question q;
    q.id = "dup";
    q.domain_tag = "d";
    q.answer_format = AnswerFormat::short_answer;
    q.text = "t?";
    q.gold = "g";
    qs.push_back(q);
    qs.push_back(q);
    CHECK_THROWS_AS(make_question_set(std::move(qs), "mem"), CorpusError);
}

TEST_CASE("question set lookup by id") {
    const QuestionSet bank = synthetic_bank(5);
    CHECK(bank.find("q-3") != nullptr);
    CHECK(bank.find("missing") == nullptr);
    CHECK(bank.require("q-3").id == "q-3");
    CHECK_THROWS_AS(bank.require("missing"), CorpusError);
}
