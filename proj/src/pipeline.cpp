#include "clirkit/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "clirkit/plaid.hpp"
#include "clirkit/sparse.hpp"
#include "json.hpp"

namespace clirkit {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& pipeline_stage_names() {
    static const std::vector<std::string> names{"gen",   "translate", "select", "teach",
                                                "train", "index",     "search", "evaluate"};
    return names;
}

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

LanguageTag tag_or(const json& j, const char* key, const char* fallback) {
    return LanguageTag{get_or<std::string>(j, key, fallback)};
}

} // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        fail("%s: config parse error: %s", origin.c_str(), e.what());
    }

    PipelineConfig cfg;
    if (!j.contains("out_dir")) fail("%s: config must set out_dir", origin.c_str());
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.jobs = get_or<std::size_t>(j, "jobs", 4);

    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        cfg.corpus.mode = get_or<std::string>(c, "mode", "synthetic");
        cfg.corpus.train_queries = get_or<std::size_t>(c, "train_queries", 200);
        if (c.contains("synthetic")) {
            const json& s = c.at("synthetic");
            SynthConfig& sc = cfg.corpus.synthetic;
            sc.vocab = get_or<std::size_t>(s, "vocab", sc.vocab);
            sc.target_vocab = get_or<std::size_t>(s, "target_vocab", sc.vocab);
            sc.documents = get_or<std::size_t>(s, "documents", sc.documents);
            sc.queries = get_or<std::size_t>(s, "queries", sc.queries);
            sc.relevant_per_query = get_or<std::size_t>(s, "relevant_per_query", sc.relevant_per_query);
            sc.judged_nonrelevant_per_query =
                get_or<std::size_t>(s, "judged_nonrelevant_per_query", sc.judged_nonrelevant_per_query);
            sc.topics = get_or<std::size_t>(s, "topics", sc.topics);
            sc.doc_tokens_min = get_or<std::size_t>(s, "doc_tokens_min", sc.doc_tokens_min);
            sc.doc_tokens_max = get_or<std::size_t>(s, "doc_tokens_max", sc.doc_tokens_max);
            sc.query_tokens_min = get_or<std::size_t>(s, "query_tokens_min", sc.query_tokens_min);
            sc.query_tokens_max = get_or<std::size_t>(s, "query_tokens_max", sc.query_tokens_max);
            sc.topic_core_terms = get_or<std::size_t>(s, "topic_core_terms", sc.topic_core_terms);
            sc.topic_core_prob = get_or<double>(s, "topic_core_prob", sc.topic_core_prob);
            sc.query_terms_per_topic =
                get_or<std::size_t>(s, "query_terms_per_topic", sc.query_terms_per_topic);
            sc.grade_term_boost = get_or<std::size_t>(s, "grade_term_boost", sc.grade_term_boost);
            if (get_or<bool>(s, "identity_lexicon", false)) sc.target_vocab = 0; // sentinel, see gen
        }
        if (c.contains("ingest")) {
            const json& g = c.at("ingest");
            cfg.corpus.ingest.queries = get_or<std::string>(g, "queries", "");
            cfg.corpus.ingest.query_descriptions = get_or<std::string>(g, "query_descriptions", "");
            cfg.corpus.ingest.documents = get_or<std::string>(g, "documents", "");
            cfg.corpus.ingest.qrels = get_or<std::string>(g, "qrels", "");
            cfg.corpus.ingest.lexicon = get_or<std::string>(g, "lexicon", "");
        }
    }

    if (j.contains("languages")) {
        const json& l = j.at("languages");
        cfg.languages.training = tag_or(l, "training", "src");
        cfg.languages.selector_query = tag_or(l, "selector_query", "src");
        cfg.languages.selector_passage = tag_or(l, "selector_passage", "src");
        cfg.languages.scorer_query = tag_or(l, "scorer_query", "src");
        cfg.languages.scorer_passage = tag_or(l, "scorer_passage", "src");
        cfg.languages.student_query = tag_or(l, "student_query", "src");
        cfg.languages.student_passage = tag_or(l, "student_passage", "tgt");
        cfg.languages.candidate_k = get_or<std::size_t>(l, "candidate_k", 50);
    }

    if (j.contains("translation")) {
        cfg.translation.p_drop = get_or<double>(j.at("translation"), "p_drop", 0.0);
        cfg.translation.p_confuse = get_or<double>(j.at("translation"), "p_confuse", 0.0);
    }
    if (j.contains("window")) {
        cfg.window.size = get_or<std::size_t>(j.at("window"), "size", 180);
        cfg.window.stride = get_or<std::size_t>(j.at("window"), "stride", 90);
    }
    if (j.contains("selector")) {
        cfg.selector.kind = get_or<std::string>(j.at("selector"), "kind", "bm25");
        cfg.selector.checkpoint = get_or<std::string>(j.at("selector"), "checkpoint", "");
    }
    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        cfg.teacher.scale = get_or<double>(t, "scale", 1.0);
        cfg.teacher.term_loss_penalty = get_or<double>(t, "term_loss_penalty", 0.0);
        cfg.teacher.noise_sd = get_or<double>(t, "noise_sd", 0.0);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        TrainConfig& b = cfg.train.base;
        b.batch_queries = get_or<std::size_t>(t, "batch_queries", b.batch_queries);
        b.passages_per_query = get_or<std::size_t>(t, "passages_per_query", b.passages_per_query);
        b.learning_rate = get_or<double>(t, "learning_rate", b.learning_rate);
        b.weight_decay = get_or<double>(t, "weight_decay", b.weight_decay);
        b.epochs = get_or<std::size_t>(t, "epochs", b.epochs);
        b.loss.tau_student = get_or<double>(t, "tau_student", 1.0);
        b.loss.tau_teacher = get_or<double>(t, "tau_teacher", 1.0);
        b.loss.reverse_kl = get_or<bool>(t, "reverse_kl", false);
        cfg.train.dim = get_or<std::size_t>(t, "dim", 32);
        cfg.train.out_dim = get_or<std::size_t>(t, "out_dim", 16);
        cfg.train.warm_start_alpha = get_or<double>(t, "warm_start_alpha", 0.8);
        if (t.contains("models")) cfg.train.models = t.at("models").get<std::vector<std::string>>();
    }
    if (j.contains("index")) {
        const json& i = j.at("index");
        cfg.index.clusters = get_or<std::size_t>(i, "clusters", 64);
        cfg.index.nbits = get_or<std::size_t>(i, "nbits", 1);
        cfg.index.kmeans_iterations = get_or<std::size_t>(i, "kmeans_iterations", 10);
    }
    if (j.contains("search")) {
        const json& s = j.at("search");
        cfg.search.passage_k = get_or<std::size_t>(s, "passage_k", 1000);
        cfg.search.nprobe = get_or<std::size_t>(s, "nprobe", 8);
        cfg.search.run_depth = get_or<std::size_t>(s, "run_depth", 1000);
        cfg.search.psq_first_stage = get_or<bool>(s, "psq_first_stage", true);
        cfg.search.psq_min_prob = get_or<double>(s, "psq_min_prob", 0.01);
        cfg.search.psq_max_alternatives = get_or<std::size_t>(s, "psq_max_alternatives", 5);
        cfg.search.rerank_depth = get_or<std::size_t>(s, "rerank_depth", 200);
    }
    if (j.contains("evaluate")) {
        const json& e = j.at("evaluate");
        cfg.evaluate.cutoffs.ndcg_k = get_or<std::size_t>(e, "ndcg_k", 20);
        cfg.evaluate.cutoffs.recall_k = get_or<std::size_t>(e, "recall_k", 1000);
        cfg.evaluate.cutoffs.judged_k = get_or<std::size_t>(e, "judged_k", 20);
        if (e.contains("compare"))
            for (const auto& pair : e.at("compare"))
                cfg.evaluate.compare.emplace_back(pair.at(0).get<std::string>(),
                                                  pair.at(1).get<std::string>());
    }

    for (const auto& model : cfg.train.models)
        if (model != "distill" && model != "translate_train")
            fail("%s: unknown train model '%s'", origin.c_str(), model.c_str());
    if (cfg.corpus.mode != "synthetic" && cfg.corpus.mode != "ingest")
        fail("%s: corpus.mode must be 'synthetic' or 'ingest'", origin.c_str());
    if (cfg.selector.kind != "bm25" && cfg.selector.kind != "student")
        fail("%s: selector.kind must be 'bm25' or 'student'", origin.c_str());
    if (cfg.selector.kind == "student" && cfg.selector.checkpoint.empty())
        fail("%s: student selector needs selector.checkpoint", origin.c_str());
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    return parse_pipeline_config(read_file(path), path);
}

namespace {

std::string hex64(std::uint64_t v) {
    return strfmt("%016llx", static_cast<unsigned long long>(v));
}

// ---------------------------------------------------------------------------
// Stage context: paths, derived seeds, shared loaders.
// ---------------------------------------------------------------------------

struct StageContext {
    const PipelineConfig& cfg;
    std::size_t jobs;

    std::string path(const std::string& rel) const { return cfg.out_dir + "/" + rel; }

    // Manifest entries use out_dir-relative paths for internal artifacts so
    // two runs of the same config in different directories are byte-identical.
    std::string resolve(const std::string& p) const {
        return p.starts_with('/') ? p : path(p);
    }

    std::uint64_t stage_seed(const char* stage) const {
        return derive_seed(cfg.seed, {fnv1a64(stage)});
    }

    bool identity_lexicon_requested() const { return cfg.corpus.synthetic.target_vocab == 0; }

    std::vector<std::string> passage_langs() const {
        std::set<std::string> langs{cfg.languages.selector_passage.code,
                                    cfg.languages.scorer_passage.code,
                                    cfg.languages.student_passage.code};
        return {langs.begin(), langs.end()};
    }
    std::vector<std::string> query_langs() const {
        std::set<std::string> langs{cfg.languages.selector_query.code,
                                    cfg.languages.scorer_query.code,
                                    cfg.languages.student_query.code};
        return {langs.begin(), langs.end()};
    }

    std::string passages_file(const LanguageTag& lang) const { return path(rel_passages(lang)); }
    std::string train_queries_file(const LanguageTag& lang) const {
        return path(rel_train_queries(lang));
    }
    std::string eval_queries_file(const LanguageTag& lang) const {
        return path(rel_eval_queries(lang));
    }

    static std::string rel_passages(const LanguageTag& lang) {
        return "translate/passages." + lang.code + ".tsv";
    }
    static std::string rel_train_queries(const LanguageTag& lang) {
        return "translate/queries_train." + lang.code + ".tsv";
    }
    static std::string rel_eval_queries(const LanguageTag& lang) {
        return "translate/queries_eval." + lang.code + ".tsv";
    }

    std::vector<std::string> run_names() const {
        std::vector<std::string> names = cfg.train.models;
        if (cfg.search.psq_first_stage) {
            names.push_back("psq");
            names.push_back("psq_rerank");
        }
        return names;
    }

    // Tokens viewed in `lang`: identity for the training language, otherwise
    // one-best lexicon translation with the configured noise channel. MT
    // never emits empty output: drop-everything results fall back to the
    // noise-free translation.
    std::vector<std::string> view_tokens(const std::vector<std::string>& tokens,
                                         const LanguageTag& lang, const BilingualLexicon& lexicon,
                                         const std::string& record_id) const {
        if (lang == cfg.languages.training) return tokens;
        std::uint64_t seed =
            derive_seed(stage_seed("translate"), {fnv1a64(record_id), fnv1a64(lang.code)});
        auto out = translate_tokens(tokens, lexicon, cfg.translation, seed);
        if (out.empty()) out = translate_tokens(tokens, lexicon, MTNoise{}, seed);
        return out;
    }

    // Maps a query-side term to the terms that may express it on the passage
    // side. Returns an empty function for the identity (same language) case.
    TermImageFn make_term_image(const LanguageTag& query_lang, const LanguageTag& passage_lang,
                                const BilingualLexicon& lexicon) const {
        if (query_lang == passage_lang) return {};
        const LanguageTag& training = cfg.languages.training;
        std::shared_ptr<BilingualLexicon> lex;
        if (query_lang == training) {
            lex = std::make_shared<BilingualLexicon>(lexicon);
        } else if (passage_lang == training) {
            lex = std::make_shared<BilingualLexicon>(lexicon.inverted());
        } else {
            fail("no translation route between '%s' and '%s'", query_lang.code.c_str(),
                 passage_lang.code.c_str());
        }
        return [lex](const std::string& term) {
            const auto* entries = lex->lookup(term);
            std::vector<std::string> image;
            if (!entries) {
                image.push_back(term); // OOV passes through translation
            } else {
                image.reserve(entries->size());
                for (const auto& e : *entries) image.push_back(e.target);
            }
            return image;
        };
    }

    BilingualLexicon psq_lexicon(const BilingualLexicon& lexicon,
                                 const std::map<std::string, std::vector<std::string>>& passages)
        const {
        const LanguageTag& from = cfg.languages.student_passage;
        const LanguageTag& to = cfg.languages.student_query;
        if (from == to) {
            std::set<std::string> vocab;
            for (const auto& [pid, tokens] : passages) vocab.insert(tokens.begin(), tokens.end());
            return BilingualLexicon::identity({vocab.begin(), vocab.end()});
        }
        if (from == cfg.languages.training) return lexicon;
        if (to == cfg.languages.training) return lexicon.inverted();
        fail("psq: no translation route from '%s' to '%s'", from.code.c_str(), to.code.c_str());
    }
};

std::map<std::string, std::vector<std::string>> load_token_map(const std::string& path) {
    std::map<std::string, std::vector<std::string>> out;
    for (auto& r : load_tsv_records(path)) out.emplace(std::move(r.id), std::move(r.tokens));
    return out;
}

std::vector<Passage> load_passages_tsv(const std::string& path, const LanguageTag& lang) {
    std::vector<Passage> passages;
    for (auto& r : load_tsv_records(path)) {
        Passage p;
        auto [doc_id, offset] = parse_passage_id(r.id);
        p.id = std::move(r.id);
        p.doc_id = std::move(doc_id);
        p.offset = offset;
        p.tokens = std::move(r.tokens);
        p.language = lang;
        passages.push_back(std::move(p));
    }
    return passages;
}

void save_id_list(const std::string& path, const std::vector<std::string>& ids) {
    std::ostringstream out;
    for (const auto& id : ids) out << id << '\n';
    write_file(path, out.str());
}

std::vector<std::string> load_id_list(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

void save_token_map_tsv(const std::string& path,
                        const std::vector<std::pair<std::string, std::vector<std::string>>>& records) {
    std::ostringstream out;
    for (const auto& [id, tokens] : records) save_tsv_record(out, id, tokens);
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Stage implementations.
// ---------------------------------------------------------------------------

void stage_gen(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("corpus"));

    std::vector<Query> queries;
    std::vector<Document> documents;
    Qrels qrels;
    BilingualLexicon lexicon;

    if (cfg.corpus.mode == "synthetic") {
        SynthConfig synth = cfg.corpus.synthetic;
        synth.language = cfg.languages.training;
        if (ctx.identity_lexicon_requested()) {
            synth.target_vocab = 3; // placeholder; lexicon replaced below
            SynthOutput out = generate_synthetic_corpus(synth, ctx.stage_seed("gen"));
            std::set<std::string> vocab;
            for (const auto& d : out.documents) vocab.insert(d.tokens.begin(), d.tokens.end());
            for (const auto& q : out.queries) vocab.insert(q.tokens.begin(), q.tokens.end());
            queries = std::move(out.queries);
            documents = std::move(out.documents);
            qrels = std::move(out.qrels);
            lexicon = BilingualLexicon::identity({vocab.begin(), vocab.end()});
        } else {
            SynthOutput out = generate_synthetic_corpus(synth, ctx.stage_seed("gen"));
            queries = std::move(out.queries);
            documents = std::move(out.documents);
            qrels = std::move(out.qrels);
            lexicon = std::move(out.lexicon);
        }
    } else {
        const IngestConfig& ing = cfg.corpus.ingest;
        if (ing.queries.empty() || ing.documents.empty() || ing.qrels.empty() ||
            ing.lexicon.empty())
            fail("ingest mode needs corpus.ingest.{queries,documents,qrels,lexicon}");
        queries = load_tsv_queries(ing.queries, cfg.languages.training);
        if (!ing.query_descriptions.empty()) {
            // Title + description concatenation for TREC-style topics.
            auto desc = load_token_map(ing.query_descriptions);
            for (auto& q : queries) {
                auto it = desc.find(q.id);
                if (it != desc.end())
                    q.tokens.insert(q.tokens.end(), it->second.begin(), it->second.end());
            }
        }
        documents = load_tsv_documents(ing.documents, cfg.languages.training);
        qrels = load_qrels(ing.qrels);
        lexicon = load_lexicon(ing.lexicon);
    }

    if (cfg.corpus.train_queries < 1 || cfg.corpus.train_queries >= queries.size())
        fail("corpus.train_queries=%zu must leave at least one evaluation query (total %zu)",
             cfg.corpus.train_queries, queries.size());

    std::vector<std::pair<std::string, std::vector<std::string>>> query_records, doc_records;
    for (const auto& q : queries) query_records.emplace_back(q.id, q.tokens);
    for (const auto& d : documents) doc_records.emplace_back(d.id, d.tokens);
    save_token_map_tsv(ctx.path("corpus/queries.tsv"), query_records);
    save_token_map_tsv(ctx.path("corpus/docs.tsv"), doc_records);
    save_qrels(ctx.path("corpus/qrels.txt"), qrels);
    save_lexicon(ctx.path("corpus/lexicon.tsv"), lexicon);

    std::vector<std::string> ids;
    for (const auto& q : queries) ids.push_back(q.id);
    std::sort(ids.begin(), ids.end());
    std::vector<std::string> train_ids(ids.begin(),
                                       ids.begin() + static_cast<std::ptrdiff_t>(cfg.corpus.train_queries));
    std::vector<std::string> eval_ids(ids.begin() + static_cast<std::ptrdiff_t>(cfg.corpus.train_queries),
                                      ids.end());
    save_id_list(ctx.path("corpus/train_query_ids.txt"), train_ids);
    save_id_list(ctx.path("corpus/eval_query_ids.txt"), eval_ids);
}

void stage_translate(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("translate"));

    auto documents = load_tsv_documents(ctx.path("corpus/docs.tsv"), cfg.languages.training);
    auto queries = load_token_map(ctx.path("corpus/queries.tsv"));
    auto lexicon = load_lexicon(ctx.path("corpus/lexicon.tsv"));
    auto train_ids = load_id_list(ctx.path("corpus/train_query_ids.txt"));
    auto eval_ids = load_id_list(ctx.path("corpus/eval_query_ids.txt"));

    std::vector<Passage> passages;
    for (const auto& doc : documents) {
        auto windows = window_document(doc, cfg.window.size, cfg.window.stride);
        passages.insert(passages.end(), std::make_move_iterator(windows.begin()),
                        std::make_move_iterator(windows.end()));
    }
    if (passages.empty()) fail("translate: windowing produced no passages");

    for (const auto& lang_code : ctx.passage_langs()) {
        LanguageTag lang{lang_code};
        std::vector<std::pair<std::string, std::vector<std::string>>> records(passages.size());
        parallel_for(passages.size(), ctx.jobs, [&](std::size_t i) {
            records[i] = {passages[i].id,
                          ctx.view_tokens(passages[i].tokens, lang, lexicon, passages[i].id)};
        });
        save_token_map_tsv(ctx.passages_file(lang), records);
    }

    auto write_queries = [&](const std::vector<std::string>& ids, const std::string& out_path,
                             const LanguageTag& lang) {
        std::vector<std::pair<std::string, std::vector<std::string>>> records(ids.size());
        parallel_for(ids.size(), ctx.jobs, [&](std::size_t i) {
            auto it = queries.find(ids[i]);
            if (it == queries.end()) fail("translate: unknown query id '%s'", ids[i].c_str());
            records[i] = {ids[i], ctx.view_tokens(it->second, lang, lexicon, ids[i])};
        });
        save_token_map_tsv(out_path, records);
    };
    for (const auto& lang_code : ctx.query_langs()) {
        LanguageTag lang{lang_code};
        write_queries(train_ids, ctx.train_queries_file(lang), lang);
    }
    write_queries(eval_ids, ctx.eval_queries_file(cfg.languages.student_query),
                  cfg.languages.student_query);
}

void stage_select(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("select"));

    auto passage_map = load_token_map(ctx.passages_file(cfg.languages.selector_passage));
    auto queries_raw = load_token_map(ctx.train_queries_file(cfg.languages.selector_query));
    std::vector<Query> queries;
    for (auto& [qid, tokens] : queries_raw)
        queries.push_back({qid, tokens, cfg.languages.selector_query});

    std::vector<std::string> pids;
    pids.reserve(passage_map.size());
    for (const auto& [pid, tokens] : passage_map) pids.push_back(pid);

    SelectorFn selector;
    SparseIndex sparse;
    EncoderParams params;
    EncodedPassages encoded;
    if (cfg.selector.kind == "bm25") {
        std::map<std::string, WeightedBag> bags;
        for (const auto& [pid, tokens] : passage_map) {
            WeightedBag bag;
            for (const auto& t : tokens) bag.add(t, 1.0);
            bags.emplace(pid, std::move(bag));
        }
        sparse = build_sparse_index(bags);
        std::size_t all = pids.size();
        selector = [&sparse, all](const Query& q) { return bm25_search(sparse, q.tokens, all); };
    } else {
        params = load_encoder(cfg.selector.checkpoint);
        std::vector<Passage> passages =
            load_passages_tsv(ctx.passages_file(cfg.languages.selector_passage),
                              cfg.languages.selector_passage);
        encoded = encode_passages(params, passages, ctx.jobs);
        std::size_t all = pids.size();
        selector = [&params, &encoded, all](const Query& q) {
            return exact_search(params, encoded, q.tokens, all);
        };
    }

    CandidateSet candidates =
        select_candidates(selector, queries, pids, cfg.languages.candidate_k, ctx.jobs);
    save_candidate_set(ctx.path("select/candidates.tsv"), candidates);
}

void stage_teach(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("teach"));

    auto candidates = load_candidate_set(ctx.path("select/candidates.tsv"));
    auto scorer_queries = load_token_map(ctx.train_queries_file(cfg.languages.scorer_query));
    auto scorer_passages = load_token_map(ctx.passages_file(cfg.languages.scorer_passage));
    auto qrels = load_qrels(ctx.path("corpus/qrels.txt"));
    auto lexicon = load_lexicon(ctx.path("corpus/lexicon.tsv"));

    TermImageFn image =
        ctx.make_term_image(cfg.languages.scorer_query, cfg.languages.scorer_passage, lexicon);

    OracleTeacherConfig teacher_cfg;
    teacher_cfg.scale = cfg.teacher.scale;
    teacher_cfg.term_loss_penalty = cfg.teacher.term_loss_penalty;
    teacher_cfg.noise_sd = cfg.teacher.noise_sd;
    teacher_cfg.seed = ctx.stage_seed("teach");

    TeacherScores scores = oracle_teacher(candidates, scorer_queries, scorer_passages, qrels,
                                          image, teacher_cfg, ctx.jobs);
    save_teacher_scores(ctx.path("teach/teacher_scores.tsv"), scores);
}

std::string model_ckpt(const StageContext& ctx, const std::string& model) {
    return ctx.path("train/" + model + ".ckpt");
}

void stage_train(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("train"));

    auto candidates = load_candidate_set(ctx.path("select/candidates.tsv"));
    auto lexicon = load_lexicon(ctx.path("corpus/lexicon.tsv"));
    TrainInputs inputs;
    inputs.queries = load_token_map(ctx.train_queries_file(cfg.languages.student_query));
    inputs.passages = load_token_map(ctx.passages_file(cfg.languages.student_passage));
    auto eval_queries = load_token_map(ctx.eval_queries_file(cfg.languages.student_query));

    // Shared bilingual vocabulary: everything the student may ever see.
    std::set<std::string> vocab;
    for (const auto& [id, tokens] : inputs.queries) vocab.insert(tokens.begin(), tokens.end());
    for (const auto& [id, tokens] : eval_queries) vocab.insert(tokens.begin(), tokens.end());
    for (const auto& [id, tokens] : inputs.passages) vocab.insert(tokens.begin(), tokens.end());
    for (const auto& [source, entries] : lexicon.entries()) {
        vocab.insert(source);
        for (const auto& e : entries) vocab.insert(e.target);
    }

    EncoderParams init = init_encoder_multilingual({vocab.begin(), vocab.end()}, cfg.train.dim,
                                                   cfg.train.out_dim, ctx.stage_seed("encoder-init"),
                                                   lexicon, cfg.train.warm_start_alpha);

    for (const auto& model : cfg.train.models) {
        TrainConfig train_cfg = cfg.train.base;
        train_cfg.seed = derive_seed(ctx.stage_seed("train"), {fnv1a64(model)});
        TrainResult result;
        if (model == "distill") {
            auto scores = load_teacher_scores(ctx.path("teach/teacher_scores.tsv"));
            result = train_student(init, inputs, candidates, scores, train_cfg);
        } else if (model == "translate_train") {
            auto qrels = load_qrels(ctx.path("corpus/qrels.txt"));
            result = train_translate_train(init, inputs, candidates, qrels, train_cfg);
        } else {
            fail("train: unknown model '%s'", model.c_str());
        }
        save_encoder(model_ckpt(ctx, model), result.params);
        save_training_log(ctx.path("train/" + model + "_log.tsv"), result.log);
    }
}

void stage_index(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("index"));

    std::vector<Passage> passages = load_passages_tsv(
        ctx.passages_file(cfg.languages.student_passage), cfg.languages.student_passage);
    for (const auto& model : cfg.train.models) {
        EncoderParams params = load_encoder(model_ckpt(ctx, model));
        PlaidIndex index = build_index(params, passages, cfg.index.clusters,
                                       derive_seed(ctx.stage_seed("index"), {fnv1a64(model)}),
                                       cfg.index.nbits, cfg.index.kmeans_iterations, ctx.jobs);
        save_index(ctx.path("index/" + model), index);
    }
}

void stage_search(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("search"));

    auto eval_queries = load_token_map(ctx.eval_queries_file(cfg.languages.student_query));
    std::vector<std::string> qids;
    for (const auto& [qid, tokens] : eval_queries) qids.push_back(qid);

    auto to_run = [&](const std::string& tag,
                      const std::map<std::string, std::map<std::string, double>>& doc_scores) {
        std::map<std::string, std::vector<std::pair<std::string, double>>> scored;
        for (const auto& [qid, docs] : doc_scores) {
            auto& list = scored[qid];
            list.assign(docs.begin(), docs.end());
            std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            if (list.size() > cfg.search.run_depth) list.resize(cfg.search.run_depth);
        }
        return make_run(tag, scored);
    };

    for (const auto& model : cfg.train.models) {
        EncoderParams params = load_encoder(model_ckpt(ctx, model));
        PlaidIndex index = load_index(ctx.path("index/" + model));
        std::size_t k = std::min(cfg.search.passage_k, index.passage_ids.size());

        std::vector<std::map<std::string, double>> per_query(qids.size());
        parallel_for(qids.size(), ctx.jobs, [&](std::size_t i) {
            auto ranked = ann_search(index, params, eval_queries.at(qids[i]), k, cfg.search.nprobe);
            std::map<std::string, double> passage_scores(ranked.begin(), ranked.end());
            per_query[i] = maxp_aggregate(passage_scores);
        });
        std::map<std::string, std::map<std::string, double>> doc_scores;
        for (std::size_t i = 0; i < qids.size(); ++i) doc_scores[qids[i]] = std::move(per_query[i]);
        save_run(ctx.path("search/" + model + ".run"), to_run(model, doc_scores));
    }

    if (!cfg.search.psq_first_stage) return;

    auto passage_map = load_token_map(ctx.passages_file(cfg.languages.student_passage));
    auto lexicon = load_lexicon(ctx.path("corpus/lexicon.tsv"));
    BilingualLexicon psq_lex = ctx.psq_lexicon(lexicon, passage_map);

    std::vector<std::pair<std::string, const std::vector<std::string>*>> plist;
    plist.reserve(passage_map.size());
    for (const auto& [pid, tokens] : passage_map) plist.emplace_back(pid, &tokens);
    std::vector<WeightedBag> bag_slots(plist.size());
    parallel_for(plist.size(), ctx.jobs, [&](std::size_t i) {
        bag_slots[i] = psq_expand_document(*plist[i].second, psq_lex, cfg.search.psq_min_prob,
                                           cfg.search.psq_max_alternatives);
    });
    std::map<std::string, WeightedBag> bags;
    for (std::size_t i = 0; i < plist.size(); ++i) bags.emplace(plist[i].first, std::move(bag_slots[i]));
    SparseIndex sparse = build_sparse_index(bags);

    std::vector<std::map<std::string, double>> per_query(qids.size());
    parallel_for(qids.size(), ctx.jobs, [&](std::size_t i) {
        auto ranked = bm25_search(sparse, eval_queries.at(qids[i]), sparse.passage_count);
        std::map<std::string, double> passage_scores(ranked.begin(), ranked.end());
        per_query[i] = maxp_aggregate(passage_scores);
    });
    std::map<std::string, std::map<std::string, double>> doc_scores;
    for (std::size_t i = 0; i < qids.size(); ++i) doc_scores[qids[i]] = std::move(per_query[i]);
    RunFile psq_run = to_run("psq", doc_scores);
    save_run(ctx.path("search/psq.run"), psq_run);

    // Oracle teacher as document-level reranker over the PSQ first stage.
    auto qrels = load_qrels(ctx.path("corpus/qrels.txt"));
    std::map<std::string, std::set<std::string>> doc_terms;
    for (const auto& [pid, tokens] : passage_map) {
        auto& terms = doc_terms[parse_passage_id(pid).first];
        terms.insert(tokens.begin(), tokens.end());
    }
    TermImageFn image =
        ctx.make_term_image(cfg.languages.student_query, cfg.languages.student_passage, lexicon);
    std::uint64_t rerank_seed = ctx.stage_seed("rerank");
    PairScorer scorer = [&](const std::string& qid, const std::string& docid) {
        int grade = qrels.grade_or_zero(qid, docid);
        const auto& qtokens = eval_queries.at(qid);
        std::set<std::string> qterms(qtokens.begin(), qtokens.end());
        const auto& dterms = doc_terms.at(docid);
        std::size_t missing = 0;
        for (const auto& term : qterms) {
            bool found = false;
            if (image) {
                for (const auto& img : image(term))
                    if (dterms.count(img)) {
                        found = true;
                        break;
                    }
            } else {
                found = dterms.count(term) > 0;
            }
            if (!found) ++missing;
        }
        double lost = qterms.empty()
                          ? 0.0
                          : static_cast<double>(missing) / static_cast<double>(qterms.size());
        double noise = 0.0;
        if (cfg.teacher.noise_sd > 0.0) {
            Rng rng(derive_seed(rerank_seed, {fnv1a64(qid), fnv1a64(docid)}));
            noise = cfg.teacher.noise_sd * rng.normal();
        }
        return cfg.teacher.scale * grade - cfg.teacher.term_loss_penalty * lost + noise;
    };
    RunFile reranked = rerank(psq_run, scorer, cfg.search.rerank_depth, "psq_rerank");
    save_run(ctx.path("search/psq_rerank.run"), reranked);
}

void stage_evaluate(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.path("evaluate"));

    auto qrels = load_qrels(ctx.path("corpus/qrels.txt"));
    for (const auto& name : ctx.run_names()) {
        RunFile run = load_run(ctx.path("search/" + name + ".run"));
        EvalReport report = evaluate_run(run, qrels, cfg.evaluate.cutoffs);
        write_file(ctx.path("evaluate/" + name + "_per_query.tsv"), eval_report_tsv(report));
        write_file(ctx.path("evaluate/" + name + "_summary.txt"), eval_report_summary(report));
    }
    for (const auto& [a, b] : cfg.evaluate.compare) {
        RunFile run_a = load_run(ctx.path("search/" + a + ".run"));
        RunFile run_b = load_run(ctx.path("search/" + b + ".run"));
        CompareReport report = compare_runs(run_a, run_b, qrels, cfg.evaluate.cutoffs);
        write_file(ctx.path("evaluate/compare_" + a + "_vs_" + b + ".txt"),
                   compare_report_text(report));
    }
}

// ---------------------------------------------------------------------------
// Stage declarations: fingerprint + input/output file lists + runner.
// ---------------------------------------------------------------------------

// Inputs/outputs are out_dir-relative for internal artifacts; external files
// (ingest sources, selector checkpoints) stay as absolute paths.
struct StageDecl {
    std::string name;
    std::string fingerprint;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::function<void()> run;
};

std::vector<std::string> index_files(const std::string& dir) {
    std::vector<std::string> files;
    for (const char* name : {"manifest.txt", "passage_ids.txt", "centroids.f64",
                             "bucket_values.f64", "vectors.f64", "token_passage.u32",
                             "token_centroid.u32", "codes.bin", "passage_ranges.u32"})
        files.push_back(dir + "/" + name);
    return files;
}

std::vector<StageDecl> make_stage_decls(const StageContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const SynthConfig& syn = cfg.corpus.synthetic;
    std::vector<StageDecl> decls;

    std::vector<std::string> corpus_files{
        "corpus/queries.tsv",         "corpus/docs.tsv",
        "corpus/qrels.txt",           "corpus/lexicon.tsv",
        "corpus/train_query_ids.txt", "corpus/eval_query_ids.txt"};

    {
        StageDecl d;
        d.name = "gen";
        std::ostringstream fp;
        fp << "mode=" << cfg.corpus.mode << ";train_queries=" << cfg.corpus.train_queries
           << ";seed=" << ctx.stage_seed("gen") << ";lang=" << cfg.languages.training.code;
        if (cfg.corpus.mode == "synthetic") {
            fp << ";vocab=" << syn.vocab << ";tvocab=" << syn.target_vocab
               << ";docs=" << syn.documents << ";queries=" << syn.queries
               << ";rel=" << syn.relevant_per_query << ";nonrel=" << syn.judged_nonrelevant_per_query
               << ";topics=" << syn.topics << ";dlen=" << syn.doc_tokens_min << "-"
               << syn.doc_tokens_max << ";qlen=" << syn.query_tokens_min << "-"
               << syn.query_tokens_max << ";core=" << syn.topic_core_terms << ","
               << format_double(syn.topic_core_prob) << ";qpool=" << syn.query_terms_per_topic
               << ";boost=" << syn.grade_term_boost;
        } else {
            d.inputs = {cfg.corpus.ingest.queries, cfg.corpus.ingest.documents,
                        cfg.corpus.ingest.qrels, cfg.corpus.ingest.lexicon};
            if (!cfg.corpus.ingest.query_descriptions.empty())
                d.inputs.push_back(cfg.corpus.ingest.query_descriptions);
        }
        d.fingerprint = fp.str();
        d.outputs = corpus_files;
        d.run = [&ctx] { stage_gen(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "translate";
        std::ostringstream fp;
        fp << "window=" << cfg.window.size << "," << cfg.window.stride
           << ";drop=" << format_double(cfg.translation.p_drop)
           << ";confuse=" << format_double(cfg.translation.p_confuse)
           << ";seed=" << ctx.stage_seed("translate") << ";plangs=";
        for (const auto& l : ctx.passage_langs()) fp << l << ",";
        fp << ";qlangs=";
        for (const auto& l : ctx.query_langs()) fp << l << ",";
        fp << ";evallang=" << cfg.languages.student_query.code;
        d.fingerprint = fp.str();
        d.inputs = corpus_files;
        for (const auto& l : ctx.passage_langs())
            d.outputs.push_back(StageContext::rel_passages({l}));
        for (const auto& l : ctx.query_langs())
            d.outputs.push_back(StageContext::rel_train_queries({l}));
        d.outputs.push_back(StageContext::rel_eval_queries(cfg.languages.student_query));
        d.run = [&ctx] { stage_translate(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "select";
        d.fingerprint = strfmt("kind=%s;k=%zu;qlang=%s;plang=%s", cfg.selector.kind.c_str(),
                               cfg.languages.candidate_k, cfg.languages.selector_query.code.c_str(),
                               cfg.languages.selector_passage.code.c_str());
        d.inputs = {StageContext::rel_passages(cfg.languages.selector_passage),
                    StageContext::rel_train_queries(cfg.languages.selector_query)};
        if (cfg.selector.kind == "student") d.inputs.push_back(cfg.selector.checkpoint);
        d.outputs = {"select/candidates.tsv"};
        d.run = [&ctx] { stage_select(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "teach";
        d.fingerprint = strfmt("scale=%s;lambda=%s;sd=%s;seed=%llu;qlang=%s;plang=%s",
                               format_double(cfg.teacher.scale).c_str(),
                               format_double(cfg.teacher.term_loss_penalty).c_str(),
                               format_double(cfg.teacher.noise_sd).c_str(),
                               static_cast<unsigned long long>(ctx.stage_seed("teach")),
                               cfg.languages.scorer_query.code.c_str(),
                               cfg.languages.scorer_passage.code.c_str());
        d.inputs = {"select/candidates.tsv",
                    StageContext::rel_train_queries(cfg.languages.scorer_query),
                    StageContext::rel_passages(cfg.languages.scorer_passage), "corpus/qrels.txt",
                    "corpus/lexicon.tsv"};
        d.outputs = {"teach/teacher_scores.tsv"};
        d.run = [&ctx] { stage_teach(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "train";
        const TrainConfig& b = cfg.train.base;
        std::ostringstream fp;
        fp << "batch=" << b.batch_queries << ";m=" << b.passages_per_query
           << ";lr=" << format_double(b.learning_rate) << ";wd=" << format_double(b.weight_decay)
           << ";epochs=" << b.epochs << ";tau_s=" << format_double(b.loss.tau_student)
           << ";tau_t=" << format_double(b.loss.tau_teacher) << ";rev=" << b.loss.reverse_kl
           << ";dim=" << cfg.train.dim << ";out=" << cfg.train.out_dim
           << ";warm=" << format_double(cfg.train.warm_start_alpha)
           << ";seed=" << ctx.stage_seed("train") << ";models=";
        for (const auto& m : cfg.train.models) fp << m << ",";
        fp << ";qlang=" << cfg.languages.student_query.code
           << ";plang=" << cfg.languages.student_passage.code;
        d.fingerprint = fp.str();
        d.inputs = {"select/candidates.tsv",
                    StageContext::rel_train_queries(cfg.languages.student_query),
                    StageContext::rel_eval_queries(cfg.languages.student_query),
                    StageContext::rel_passages(cfg.languages.student_passage),
                    "corpus/lexicon.tsv"};
        for (const auto& model : cfg.train.models) {
            if (model == "distill") d.inputs.push_back("teach/teacher_scores.tsv");
            if (model == "translate_train") d.inputs.push_back("corpus/qrels.txt");
            d.outputs.push_back("train/" + model + ".ckpt");
            d.outputs.push_back("train/" + model + "_log.tsv");
        }
        d.run = [&ctx] { stage_train(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "index";
        d.fingerprint = strfmt("K=%zu;nbits=%zu;iters=%zu;seed=%llu;plang=%s", cfg.index.clusters,
                               cfg.index.nbits, cfg.index.kmeans_iterations,
                               static_cast<unsigned long long>(ctx.stage_seed("index")),
                               cfg.languages.student_passage.code.c_str());
        d.inputs = {StageContext::rel_passages(cfg.languages.student_passage)};
        for (const auto& model : cfg.train.models) {
            d.inputs.push_back("train/" + model + ".ckpt");
            auto files = index_files("index/" + model);
            d.outputs.insert(d.outputs.end(), files.begin(), files.end());
        }
        d.run = [&ctx] { stage_index(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "search";
        std::ostringstream fp;
        fp << "k=" << cfg.search.passage_k << ";nprobe=" << cfg.search.nprobe
           << ";depth=" << cfg.search.run_depth << ";psq=" << cfg.search.psq_first_stage
           << ";psq_min=" << format_double(cfg.search.psq_min_prob)
           << ";psq_alt=" << cfg.search.psq_max_alternatives
           << ";rerank=" << cfg.search.rerank_depth
           << ";teacher=" << format_double(cfg.teacher.scale) << ","
           << format_double(cfg.teacher.term_loss_penalty) << ","
           << format_double(cfg.teacher.noise_sd) << ";seed=" << ctx.stage_seed("rerank");
        d.fingerprint = fp.str();
        d.inputs = {StageContext::rel_eval_queries(cfg.languages.student_query)};
        for (const auto& model : cfg.train.models) {
            d.inputs.push_back("train/" + model + ".ckpt");
            auto files = index_files("index/" + model);
            d.inputs.insert(d.inputs.end(), files.begin(), files.end());
            d.outputs.push_back("search/" + model + ".run");
        }
        if (cfg.search.psq_first_stage) {
            d.inputs.push_back(StageContext::rel_passages(cfg.languages.student_passage));
            d.inputs.push_back("corpus/lexicon.tsv");
            d.inputs.push_back("corpus/qrels.txt");
            d.outputs.push_back("search/psq.run");
            d.outputs.push_back("search/psq_rerank.run");
        }
        d.run = [&ctx] { stage_search(ctx); };
        decls.push_back(std::move(d));
    }

    {
        StageDecl d;
        d.name = "evaluate";
        std::ostringstream fp;
        fp << "ndcg=" << cfg.evaluate.cutoffs.ndcg_k << ";recall=" << cfg.evaluate.cutoffs.recall_k
           << ";judged=" << cfg.evaluate.cutoffs.judged_k << ";compare=";
        for (const auto& [a, b] : cfg.evaluate.compare) fp << a << "~" << b << ",";
        d.fingerprint = fp.str();
        d.inputs = {"corpus/qrels.txt"};
        for (const auto& name : ctx.run_names()) {
            d.inputs.push_back("search/" + name + ".run");
            d.outputs.push_back("evaluate/" + name + "_per_query.tsv");
            d.outputs.push_back("evaluate/" + name + "_summary.txt");
        }
        for (const auto& [a, b] : cfg.evaluate.compare)
            d.outputs.push_back("evaluate/compare_" + a + "_vs_" + b + ".txt");
        d.run = [&ctx] { stage_evaluate(ctx); };
        decls.push_back(std::move(d));
    }

    return decls;
}

// ---------------------------------------------------------------------------
// Manifest: per-stage fingerprints and file checksums.
// ---------------------------------------------------------------------------

json load_manifest(const std::string& path) {
    if (!fs::exists(path)) return json::object();
    try {
        return json::parse(read_file(path));
    } catch (const std::exception&) {
        return json::object(); // unreadable manifest means nothing is reusable
    }
}

bool stage_reusable(const json& manifest, const StageDecl& decl, const StageContext& ctx) {
    if (!manifest.contains("stages")) return false;
    const json& stages = manifest.at("stages");
    if (!stages.contains(decl.name)) return false;
    const json& rec = stages.at(decl.name);
    if (rec.value("fingerprint", std::string{}) != decl.fingerprint) return false;

    auto files_match = [&](const char* key, const std::vector<std::string>& files) {
        if (!rec.contains(key)) return files.empty();
        const json& recorded = rec.at(key);
        if (recorded.size() != files.size()) return false;
        for (const auto& file : files) {
            std::string full = ctx.resolve(file);
            if (!recorded.contains(file)) return false;
            if (!fs::exists(full)) return false;
            if (recorded.at(file).get<std::string>() != hex64(checksum_file(full))) return false;
        }
        return true;
    };
    return files_match("inputs", decl.inputs) && files_match("outputs", decl.outputs);
}

void record_stage(json& manifest, const StageDecl& decl, const StageContext& ctx) {
    json rec;
    rec["fingerprint"] = decl.fingerprint;
    json inputs = json::object(), outputs = json::object();
    for (const auto& file : decl.inputs) inputs[file] = hex64(checksum_file(ctx.resolve(file)));
    for (const auto& file : decl.outputs) outputs[file] = hex64(checksum_file(ctx.resolve(file)));
    rec["inputs"] = std::move(inputs);
    rec["outputs"] = std::move(outputs);
    manifest["stages"][decl.name] = std::move(rec);
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg_in, const RunOptions& opts) {
    if (cfg_in.out_dir.empty()) fail("pipeline: out_dir not set");

    // External file references become absolute so out_dir-relative manifest
    // entries cannot collide with them.
    PipelineConfig cfg = cfg_in;
    auto absolutize = [](std::string& p) {
        if (!p.empty() && p[0] != '/') p = fs::absolute(p).string();
    };
    absolutize(cfg.selector.checkpoint);
    absolutize(cfg.corpus.ingest.queries);
    absolutize(cfg.corpus.ingest.query_descriptions);
    absolutize(cfg.corpus.ingest.documents);
    absolutize(cfg.corpus.ingest.qrels);
    absolutize(cfg.corpus.ingest.lexicon);
    fs::create_directories(cfg.out_dir);

    StageContext ctx{cfg, opts.jobs.value_or(cfg.jobs)};
    std::vector<StageDecl> decls = make_stage_decls(ctx);

    auto known = [&](const std::string& name) {
        for (const auto& d : decls)
            if (d.name == name) return true;
        return false;
    };
    if (opts.through_stage && !known(*opts.through_stage))
        fail("pipeline: unknown stage '%s'", opts.through_stage->c_str());
    if (opts.only_stage && !known(*opts.only_stage))
        fail("pipeline: unknown stage '%s'", opts.only_stage->c_str());

    std::string manifest_path = cfg.out_dir + "/manifest.json";
    json manifest = load_manifest(manifest_path);

    // Effective config hash: the concatenation of all stage fingerprints.
    std::string combined;
    for (const auto& d : decls) combined += d.name + "{" + d.fingerprint + "}";
    manifest["config"] = hex64(fnv1a64(combined));

    PipelineResult result;
    bool upstream_ran = false;
    for (const auto& decl : decls) {
        if (opts.only_stage && decl.name != *opts.only_stage) continue;
        bool force = opts.only_stage.has_value();
        bool reusable = !force && !upstream_ran && stage_reusable(manifest, decl, ctx);
        if (reusable) {
            result.stages.push_back({decl.name, false});
        } else {
            try {
                decl.run();
            } catch (const std::exception& e) {
                fail("pipeline stage '%s' failed (artifacts under %s): %s", decl.name.c_str(),
                     cfg.out_dir.c_str(), e.what());
            }
            record_stage(manifest, decl, ctx);
            write_file(manifest_path, manifest.dump(2) + "\n");
            upstream_ran = true;
            result.stages.push_back({decl.name, true});
        }
        if (opts.through_stage && decl.name == *opts.through_stage) break;
    }
    return result;
}

} // namespace clirkit
