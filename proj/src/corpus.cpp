#include "clirkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace clirkit {

void Qrels::set(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0) fail("qrels: negative grade %d for (%s, %s)", grade, query_id.c_str(), doc_id.c_str());
    grades_[query_id][doc_id] = grade;
}

std::optional<int> Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
    auto qit = grades_.find(query_id);
    if (qit == grades_.end()) return std::nullopt;
    auto dit = qit->second.find(doc_id);
    if (dit == qit->second.end()) return std::nullopt;
    return dit->second;
}

int Qrels::grade_or_zero(const std::string& query_id, const std::string& doc_id) const {
    return grade(query_id, doc_id).value_or(0);
}

bool Qrels::judged(const std::string& query_id, const std::string& doc_id) const {
    return grade(query_id, doc_id).has_value();
}

std::size_t Qrels::size() const {
    std::size_t n = 0;
    for (const auto& [q, docs] : grades_) n += docs.size();
    return n;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        bool separator = c < 0x80 && (std::isspace(c) || std::ispunct(c));
        if (separator) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::vector<TsvRecord> load_tsv_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open collection file: %s", path.c_str());
    std::vector<TsvRecord> records;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            fail("%s:%zu: missing TAB separator", path.c_str(), lineno);
        if (line.find('\t', tab + 1) != std::string::npos)
            fail("%s:%zu: more than one TAB separator", path.c_str(), lineno);
        std::string id = line.substr(0, tab);
        std::string text = line.substr(tab + 1);
        if (id.empty()) fail("%s:%zu: empty id", path.c_str(), lineno);
        auto tokens = tokenize(text);
        if (tokens.empty()) fail("%s:%zu: empty text for id '%s'", path.c_str(), lineno, id.c_str());
        if (!seen.insert(id).second)
            fail("%s:%zu: duplicate id '%s'", path.c_str(), lineno, id.c_str());
        records.push_back({std::move(id), std::move(tokens)});
    }
    return records;
}

std::vector<Query> load_tsv_queries(const std::string& path, const LanguageTag& language) {
    std::vector<Query> queries;
    for (auto& r : load_tsv_records(path))
        queries.push_back({std::move(r.id), std::move(r.tokens), language});
    return queries;
}

std::vector<Document> load_tsv_documents(const std::string& path, const LanguageTag& language) {
    std::vector<Document> docs;
    for (auto& r : load_tsv_records(path))
        docs.push_back({std::move(r.id), std::move(r.tokens), language});
    return docs;
}

void save_tsv_record(std::ostream& out, const std::string& id, const std::vector<std::string>& tokens) {
    out << id << '\t';
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out << ' ';
        out << tokens[i];
    }
    out << '\n';
}

Qrels load_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open qrels file: %s", path.c_str());
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string qid, iteration, docid;
        long grade = -1;
        if (!(ss >> qid >> iteration >> docid >> grade) || grade < 0)
            fail("%s:%zu: expected 'query_id 0 doc_id grade'", path.c_str(), lineno);
        if (qrels.judged(qid, docid))
            fail("%s:%zu: duplicate judgment (%s, %s)", path.c_str(), lineno, qid.c_str(), docid.c_str());
        qrels.set(qid, docid, static_cast<int>(grade));
    }
    return qrels;
}

void save_qrels(const std::string& path, const Qrels& qrels) {
    std::ostringstream out;
    for (const auto& [qid, docs] : qrels.by_query())
        for (const auto& [docid, grade] : docs)
            out << qid << " 0 " << docid << ' ' << grade << '\n';
    write_file(path, out.str());
}

std::string passage_id_for(const std::string& doc_id, std::size_t offset) {
    return doc_id + ':' + std::to_string(offset);
}

std::pair<std::string, std::size_t> parse_passage_id(const std::string& passage_id) {
    std::size_t sep = passage_id.rfind(':');
    if (sep == std::string::npos || sep == 0 || sep + 1 == passage_id.size())
        fail("malformed passage id '%s'", passage_id.c_str());
    const char* digits = passage_id.c_str() + sep + 1;
    char* end = nullptr;
    unsigned long long offset = std::strtoull(digits, &end, 10);
    if (*end != '\0') fail("malformed passage id '%s'", passage_id.c_str());
    return {passage_id.substr(0, sep), static_cast<std::size_t>(offset)};
}

std::vector<Passage> window_document(const Document& doc, std::size_t size, std::size_t stride) {
    if (size == 0) fail("window_document: size must be positive");
    if (stride == 0 || stride > size) fail("window_document: stride must lie in (0, size]");

    std::vector<Passage> passages;
    std::size_t len = doc.tokens.size();
    std::size_t prev_end = 0;
    for (std::size_t offset = 0; offset < len; offset += stride) {
        std::size_t end = std::min(offset + size, len);
        if (!passages.empty() && end <= prev_end) continue; // contained in predecessor
        Passage p;
        p.doc_id = doc.id;
        p.offset = offset;
        p.id = passage_id_for(doc.id, offset);
        p.tokens.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                        doc.tokens.begin() + static_cast<std::ptrdiff_t>(end));
        p.language = doc.language;
        passages.push_back(std::move(p));
        prev_end = end;
    }
    return passages;
}

namespace {

std::string padded_name(char prefix, std::size_t index, std::size_t count) {
    std::size_t width = 1;
    for (std::size_t v = count > 0 ? count - 1 : 0; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(index);
    std::string out(1, prefix);
    out.append(width > digits.size() ? width - digits.size() : 0, '0');
    out += digits;
    return out;
}

} // namespace

SynthOutput generate_synthetic_corpus(const SynthConfig& config, std::uint64_t seed) {
    if (config.vocab < 50) fail("synthetic corpus: vocab must be >= 50");
    if (config.target_vocab < 3) fail("synthetic corpus: target_vocab must be >= 3");
    if (config.documents == 0 || config.queries == 0) fail("synthetic corpus: need documents and queries");
    if (config.relevant_per_query < 1) fail("synthetic corpus: relevant_per_query must be >= 1");
    if (config.topics == 0) fail("synthetic corpus: topics must be >= 1");
    if (config.doc_tokens_min == 0 || config.doc_tokens_min > config.doc_tokens_max)
        fail("synthetic corpus: bad document length range");
    if (config.query_tokens_min == 0 || config.query_tokens_min > config.query_tokens_max)
        fail("synthetic corpus: bad query length range");
    if (config.topic_core_prob < 0.0 || config.topic_core_prob > 1.0)
        fail("synthetic corpus: topic_core_prob must lie in [0,1]");
    std::size_t docs_per_topic = config.documents / config.topics;
    if (config.relevant_per_query > docs_per_topic)
        fail("synthetic corpus: %zu relevant docs per query requested but topics hold only %zu documents",
             config.relevant_per_query, docs_per_topic);

    Rng rng(seed);

    std::vector<std::string> source_vocab(config.vocab);
    for (std::size_t i = 0; i < config.vocab; ++i) source_vocab[i] = padded_name('s', i, config.vocab);
    std::vector<std::string> target_pool(config.target_vocab);
    for (std::size_t i = 0; i < config.target_vocab; ++i)
        target_pool[i] = padded_name('t', i, config.target_vocab);

    // Lexicon: 1..3 targets per source term, Dirichlet-like weights.
    BilingualLexicon lexicon;
    for (const auto& term : source_vocab) {
        std::size_t n = 1 + rng.below(3);
        auto picks = rng.sample_without_replacement(config.target_vocab, n);
        std::vector<LexiconEntry> entries;
        double sum = 0.0;
        for (std::size_t p : picks) {
            double w = rng.uniform() + 1e-3;
            entries.push_back({target_pool[p], w});
            sum += w;
        }
        for (auto& e : entries) e.prob /= sum;
        lexicon.add(term, std::move(entries), 1e-9);
    }

    // Per-topic core vocabularies.
    std::size_t core_size = std::min(config.topic_core_terms, config.vocab);
    if (core_size == 0) core_size = 1;
    std::vector<std::vector<std::size_t>> topic_core(config.topics);
    for (std::size_t t = 0; t < config.topics; ++t)
        topic_core[t] = rng.sample_without_replacement(config.vocab, core_size);

    // Documents, round-robin over topics.
    std::vector<Document> documents(config.documents);
    std::vector<std::vector<std::size_t>> topic_docs(config.topics);
    for (std::size_t i = 0; i < config.documents; ++i) {
        std::size_t topic = i % config.topics;
        topic_docs[topic].push_back(i);
        std::size_t len =
            config.doc_tokens_min + rng.below(config.doc_tokens_max - config.doc_tokens_min + 1);
        Document& doc = documents[i];
        doc.id = padded_name('d', i, config.documents);
        doc.language = config.language;
        doc.tokens.reserve(len);
        const auto& core = topic_core[topic];
        for (std::size_t k = 0; k < len; ++k) {
            bool from_core = rng.uniform() < config.topic_core_prob;
            std::size_t term =
                from_core ? core[rng.below(core.size())] : rng.below(config.vocab);
            doc.tokens.push_back(source_vocab[term]);
        }
    }

    // Queries and graded judgments.
    std::vector<Query> queries(config.queries);
    Qrels qrels;
    for (std::size_t i = 0; i < config.queries; ++i) {
        std::size_t topic = i % config.topics;
        Query& q = queries[i];
        q.id = padded_name('q', i, config.queries);
        q.language = config.language;
        std::size_t len =
            config.query_tokens_min + rng.below(config.query_tokens_max - config.query_tokens_min + 1);
        const auto& core = topic_core[topic];
        std::size_t query_pool = core.size();
        if (config.query_terms_per_topic > 0)
            query_pool = std::min(config.query_terms_per_topic, core.size());
        for (std::size_t k = 0; k < len; ++k)
            q.tokens.push_back(source_vocab[core[rng.below(query_pool)]]);

        // Relevant documents share the query's topic; higher grades receive
        // more injected query terms so the grade ordering is recoverable.
        const auto& pool = topic_docs[topic];
        auto rel_picks = rng.sample_without_replacement(pool.size(), config.relevant_per_query);
        for (std::size_t pick : rel_picks) {
            Document& doc = documents[pool[pick]];
            int grade = 1 + static_cast<int>(rng.below(3));
            std::size_t injections =
                std::min(static_cast<std::size_t>(grade) * config.grade_term_boost * q.tokens.size(),
                         doc.tokens.size() / 2);
            auto positions = rng.sample_without_replacement(doc.tokens.size(), injections);
            for (std::size_t k = 0; k < positions.size(); ++k)
                doc.tokens[positions[k]] = q.tokens[k % q.tokens.size()];
            qrels.set(q.id, doc.id, grade);
        }

        // Judged non-relevant pairs come from other topics.
        if (config.topics > 1 && config.judged_nonrelevant_per_query > 0) {
            std::size_t added = 0;
            std::size_t guard = 0;
            while (added < config.judged_nonrelevant_per_query &&
                   guard++ < 50 * config.judged_nonrelevant_per_query) {
                std::size_t d = rng.below(config.documents);
                if (d % config.topics == topic) continue;
                if (qrels.judged(q.id, documents[d].id)) continue;
                qrels.set(q.id, documents[d].id, 0);
                ++added;
            }
        }
    }

    SynthOutput out;
    out.queries = std::move(queries);
    out.documents = std::move(documents);
    out.qrels = std::move(qrels);
    out.lexicon = std::move(lexicon);
    return out;
}

} // namespace clirkit
