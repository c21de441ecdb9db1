#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clirkit/lexicon.hpp"

namespace clirkit {

struct LanguageTag {
    std::string code;
    bool operator==(const LanguageTag&) const = default;
    auto operator<=>(const LanguageTag&) const = default;
};

struct Query {
    std::string id;
    std::vector<std::string> tokens;
    LanguageTag language;
};

struct Document {
    std::string id;
    std::vector<std::string> tokens;
    LanguageTag language;
};

// tokens are exactly document.tokens[offset .. offset+len); the id encodes
// (doc_id, offset) bijectively via passage_id_for.
struct Passage {
    std::string id;
    std::string doc_id;
    std::size_t offset = 0;
    std::vector<std::string> tokens;
    LanguageTag language;
};

// Graded relevance judgments. Absent pairs are unjudged, distinct from an
// explicit grade 0 (judged non-relevant).
class Qrels {
public:
    void set(const std::string& query_id, const std::string& doc_id, int grade);
    std::optional<int> grade(const std::string& query_id, const std::string& doc_id) const;
    int grade_or_zero(const std::string& query_id, const std::string& doc_id) const;
    bool judged(const std::string& query_id, const std::string& doc_id) const;

    const std::map<std::string, std::map<std::string, int>>& by_query() const { return grades_; }
    std::size_t size() const;

private:
    std::map<std::string, std::map<std::string, int>> grades_;
};

// Lowercases and splits on whitespace/punctuation. Bytes >= 0x80 are token
// content, so UTF-8 passes through intact.
std::vector<std::string> tokenize(std::string_view text);

struct TsvRecord {
    std::string id;
    std::vector<std::string> tokens;
};

// id<TAB>text, one record per line. Malformed lines and duplicate ids are
// reported with their line number.
std::vector<TsvRecord> load_tsv_records(const std::string& path);
std::vector<Query> load_tsv_queries(const std::string& path, const LanguageTag& language);
std::vector<Document> load_tsv_documents(const std::string& path, const LanguageTag& language);
void save_tsv_record(std::ostream& out, const std::string& id, const std::vector<std::string>& tokens);

// TREC qrels: query_id 0 doc_id grade, space-separated.
Qrels load_qrels(const std::string& path);
void save_qrels(const std::string& path, const Qrels& qrels);

std::string passage_id_for(const std::string& doc_id, std::size_t offset);
std::pair<std::string, std::size_t> parse_passage_id(const std::string& passage_id);

// Sliding windows at offsets 0, stride, 2*stride, ...; a window is dropped
// when its span is contained in the previously emitted window, which keeps
// every token covered while suppressing redundant tails.
std::vector<Passage> window_document(const Document& doc, std::size_t size, std::size_t stride);

struct SynthConfig {
    std::size_t vocab = 400;              // source-language term count, >= 50
    std::size_t target_vocab = 400;       // target-language term pool
    std::size_t documents = 600;
    std::size_t queries = 250;
    std::size_t relevant_per_query = 3;
    std::size_t judged_nonrelevant_per_query = 3;
    std::size_t topics = 20;
    std::size_t doc_tokens_min = 80;
    std::size_t doc_tokens_max = 240;
    std::size_t query_tokens_min = 3;
    std::size_t query_tokens_max = 6;
    std::size_t topic_core_terms = 25;    // per-topic high-probability vocabulary
    double topic_core_prob = 0.6;         // chance a document token is drawn from the core
    std::size_t query_terms_per_topic = 0; // query tokens come from this prefix of the core; 0 = whole core
    std::size_t grade_term_boost = 2;     // query-term injections per grade point
    LanguageTag language{"src"};
};

struct SynthOutput {
    std::vector<Query> queries;
    std::vector<Document> documents;
    Qrels qrels;
    BilingualLexicon lexicon; // source term -> 1..3 target terms
};

// Pure function of (config, seed). Documents draw from topic-specific term
// distributions; each query shares a topic with its relevant documents, and
// relevant documents receive grade-proportional injections of the query's
// terms so graded judgments are learnable from text.
SynthOutput generate_synthetic_corpus(const SynthConfig& config, std::uint64_t seed);

} // namespace clirkit
