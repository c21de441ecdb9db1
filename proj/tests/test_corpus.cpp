#include "doctest.h"

#include <filesystem>
#include <set>
#include <sstream>

#include "clirkit/corpus.hpp"
#include "clirkit/util.hpp"

using namespace clirkit;

TEST_SUITE_BEGIN("corpus");

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Document make_doc(const std::string& id, std::size_t len) {
    Document d;
    d.id = id;
    d.language = {"src"};
    for (std::size_t i = 0; i < len; ++i) d.tokens.push_back("w" + std::to_string(i));
    return d;
}

// Independent enumeration of the stated windowing rule: offsets 0, stride,
// 2*stride, ...; emit unless the span is contained in the previous emitted one.
std::vector<std::pair<std::size_t, std::size_t>> window_oracle(std::size_t len, std::size_t size,
                                                               std::size_t stride) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t off = 0; off < len; off += stride) {
        std::size_t end = std::min(off + size, len);
        if (!spans.empty() && end <= spans.back().second) continue;
        spans.emplace_back(off, end);
    }
    return spans;
}

} // namespace

TEST_CASE("tokenize lowercases and splits on whitespace and punctuation") {
    CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", "world"});
    CHECK(tokenize("a-b_c  d") == std::vector<std::string>{"a", "b", "c", "d"});
    CHECK(tokenize("  ") == std::vector<std::string>{});
    CHECK(tokenize("caf\xc3\xa9 x") == std::vector<std::string>{"caf\xc3\xa9", "x"});
}

TEST_CASE("tsv loader parses and reports malformed lines") {
    auto path = tmp_path("clirkit_tsv_test.tsv");

    write_file(path, "q1\thello world\nq2\tfoo\n");
    auto queries = load_tsv_queries(path, {"src"});
    REQUIRE(queries.size() == 2);
    CHECK(queries[0].id == "q1");
    CHECK(queries[0].tokens == std::vector<std::string>{"hello", "world"});
    CHECK(queries[0].language.code == "src");

    write_file(path, "q2\t\n");
    CHECK_THROWS_WITH_AS((void)load_tsv_records(path), doctest::Contains(":1:"), Error);

    write_file(path, "no tab here\n");
    CHECK_THROWS_AS((void)load_tsv_records(path), Error);

    write_file(path, "\thello\n");
    CHECK_THROWS_AS((void)load_tsv_records(path), Error); // empty id

    write_file(path, "q1\ta\nq1\tb\n");
    CHECK_THROWS_WITH_AS((void)load_tsv_records(path), doctest::Contains("duplicate id"), Error);

    write_file(path, "q1\ta\tb\n");
    CHECK_THROWS_AS((void)load_tsv_records(path), Error); // two tabs
}

TEST_CASE("qrels io round-trips and rejects duplicates") {
    auto path = tmp_path("clirkit_qrels_test.txt");
    Qrels qrels;
    qrels.set("q1", "d1", 2);
    qrels.set("q1", "d2", 0);
    qrels.set("q2", "d1", 3);
    save_qrels(path, qrels);
    Qrels back = load_qrels(path);
    CHECK(back.grade("q1", "d1") == 2);
    CHECK(back.grade("q1", "d2") == 0);
    CHECK(back.grade("q2", "d1") == 3);
    CHECK_FALSE(back.grade("q2", "d9").has_value());
    CHECK(back.judged("q1", "d2"));
    CHECK_FALSE(back.judged("q1", "d9"));

    write_file(path, "q1 0 d1 1\nq1 0 d1 2\n");
    CHECK_THROWS_WITH_AS((void)load_qrels(path), doctest::Contains("duplicate"), Error);
    write_file(path, "q1 0 d1\n");
    CHECK_THROWS_AS((void)load_qrels(path), Error);
}

TEST_CASE("passage ids encode (doc_id, offset) bijectively") {
    auto pid = passage_id_for("doc:42", 90);
    auto [doc, offset] = parse_passage_id(pid);
    CHECK(doc == "doc:42"); // doc ids containing ':' survive
    CHECK(offset == 90);
    CHECK_THROWS_AS((void)parse_passage_id("nocolon"), Error);
    CHECK_THROWS_AS((void)parse_passage_id("d:"), Error);
    CHECK_THROWS_AS((void)parse_passage_id("d:12x"), Error);
}

TEST_CASE("windowing matches the stated examples") {
    // len=100: one passage covering the whole document.
    auto p100 = window_document(make_doc("d", 100), 180, 90);
    REQUIRE(p100.size() == 1);
    CHECK(p100[0].offset == 0);
    CHECK(p100[0].tokens.size() == 100);

    // len=200: offsets 0 and 90; the window at 180 is contained in [90,200).
    auto p200 = window_document(make_doc("d", 200), 180, 90);
    REQUIRE(p200.size() == 2);
    CHECK(p200[0].offset == 0);
    CHECK(p200[1].offset == 90);
    CHECK(p200[1].tokens.size() == 110);

    // len=271: token 270 is uncovered by the offset-90 window, so three passages.
    auto p271 = window_document(make_doc("d", 271), 180, 90);
    REQUIRE(p271.size() == 3);
    CHECK(p271[0].offset == 0);
    CHECK(p271[1].offset == 90);
    CHECK(p271[2].offset == 180);

    CHECK(window_document(make_doc("d", 0), 180, 90).empty());
    CHECK_THROWS_AS((void)window_document(make_doc("d", 10), 0, 1), Error);
    CHECK_THROWS_AS((void)window_document(make_doc("d", 10), 4, 5), Error);
}

TEST_CASE("windowing properties: coverage, overlap, tokens match the document") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t size = 2 + rng.below(40);
        std::size_t stride = 1 + rng.below(size);
        std::size_t len = rng.below(200);
        Document doc = make_doc("d", len);
        auto passages = window_document(doc, size, stride);

        auto spans = window_oracle(len, size, stride);
        REQUIRE(passages.size() == spans.size());

        std::vector<char> covered(len, 0);
        std::size_t prev_end = 0;
        for (std::size_t i = 0; i < passages.size(); ++i) {
            const Passage& p = passages[i];
            CHECK(p.offset == spans[i].first);
            CHECK(p.offset + p.tokens.size() == spans[i].second);
            CHECK(parse_passage_id(p.id) == std::pair<std::string, std::size_t>{"d", p.offset});
            for (std::size_t t = 0; t < p.tokens.size(); ++t) {
                CHECK(p.tokens[t] == doc.tokens[p.offset + t]);
                covered[p.offset + t] = 1;
            }
            // Consecutive full windows overlap in exactly size - stride tokens.
            if (i > 0 && p.tokens.size() == size && passages[i - 1].tokens.size() == size &&
                p.offset == passages[i - 1].offset + stride) {
                CHECK(prev_end - p.offset == size - stride);
            }
            prev_end = p.offset + p.tokens.size();
        }
        for (std::size_t t = 0; t < len; ++t) CHECK(covered[t] == 1);
    }
}

TEST_CASE("synthetic corpus is a pure function of config and seed") {
    SynthConfig cfg;
    cfg.vocab = 60;
    cfg.target_vocab = 50;
    cfg.documents = 40;
    cfg.queries = 10;
    cfg.relevant_per_query = 2;
    cfg.topics = 5;
    cfg.doc_tokens_min = 20;
    cfg.doc_tokens_max = 50;

    auto a = generate_synthetic_corpus(cfg, 7);
    auto b = generate_synthetic_corpus(cfg, 7);
    auto c = generate_synthetic_corpus(cfg, 8);

    std::ostringstream sa, sb;
    for (const auto& d : a.documents) save_tsv_record(sa, d.id, d.tokens);
    for (const auto& d : b.documents) save_tsv_record(sb, d.id, d.tokens);
    CHECK(sa.str() == sb.str());
    CHECK(a.queries.size() == b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i)
        CHECK(a.queries[i].tokens == b.queries[i].tokens);

    std::ostringstream sc;
    for (const auto& d : c.documents) save_tsv_record(sc, d.id, d.tokens);
    CHECK(sa.str() != sc.str());
}

TEST_CASE("synthetic corpus invariants") {
    SynthConfig cfg;
    cfg.vocab = 80;
    cfg.target_vocab = 60;
    cfg.documents = 60;
    cfg.queries = 12;
    cfg.relevant_per_query = 2;
    cfg.judged_nonrelevant_per_query = 2;
    cfg.topics = 6;
    cfg.doc_tokens_min = 30;
    cfg.doc_tokens_max = 60;
    auto out = generate_synthetic_corpus(cfg, 11);

    CHECK(out.documents.size() == 60);
    CHECK(out.queries.size() == 12);

    std::set<std::string> doc_ids;
    for (const auto& d : out.documents) {
        CHECK(!d.tokens.empty());
        CHECK(doc_ids.insert(d.id).second);
    }

    // Every query has at least one grade>0 judgment on a real document,
    // and judged non-relevant pairs exist with grade exactly 0.
    std::size_t zero_grades = 0;
    for (const auto& q : out.queries) {
        CHECK(!q.tokens.empty());
        auto row = out.qrels.by_query().find(q.id);
        REQUIRE(row != out.qrels.by_query().end());
        bool has_positive = false;
        for (const auto& [docid, grade] : row->second) {
            CHECK(doc_ids.count(docid) == 1);
            CHECK(grade >= 0);
            CHECK(grade <= 3);
            if (grade > 0) has_positive = true;
            if (grade == 0) ++zero_grades;
        }
        CHECK(has_positive);
    }
    CHECK(zero_grades > 0);

    // Lexicon rows normalize to 1 and have 1..3 targets.
    for (const auto& [source, entries] : out.lexicon.entries()) {
        CHECK(entries.size() >= 1);
        CHECK(entries.size() <= 3);
        double sum = 0.0;
        for (const auto& e : entries) sum += e.prob;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(out.lexicon.entries().size() == cfg.vocab);
}

TEST_CASE("single-topic corpus keeps every query satisfiable") {
    SynthConfig cfg;
    cfg.vocab = 50;
    cfg.documents = 20;
    cfg.queries = 5;
    cfg.relevant_per_query = 3;
    cfg.topics = 1;
    cfg.doc_tokens_min = 20;
    cfg.doc_tokens_max = 30;
    auto out = generate_synthetic_corpus(cfg, 3);
    for (const auto& q : out.queries) {
        bool has_positive = false;
        for (const auto& [docid, grade] : out.qrels.by_query().at(q.id))
            if (grade > 0) has_positive = true;
        CHECK(has_positive);
    }
}

TEST_CASE("infeasible synthetic config errors out") {
    SynthConfig cfg;
    cfg.vocab = 50;
    cfg.documents = 10;
    cfg.queries = 4;
    cfg.relevant_per_query = 6; // only 10/2=5 docs per topic
    cfg.topics = 2;
    CHECK_THROWS_WITH_AS((void)generate_synthetic_corpus(cfg, 1), doctest::Contains("relevant"),
                         Error);
    cfg.relevant_per_query = 2;
    cfg.vocab = 10;
    CHECK_THROWS_AS((void)generate_synthetic_corpus(cfg, 1), Error); // vocab floor is 50
}

TEST_SUITE_END();
