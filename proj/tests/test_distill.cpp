#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "clirkit/distill.hpp"
#include "clirkit/plaid.hpp"
#include "clirkit/sparse.hpp"
#include "clirkit/util.hpp"

using namespace clirkit;

TEST_SUITE_BEGIN("distill");

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// A tiny training world: topical queries, passages with query terms injected
// into the relevant ones, graded qrels.
struct MiniWorld {
    std::vector<Query> queries;
    std::vector<Passage> passages;
    std::vector<std::string> passage_ids;
    Qrels qrels;
    TrainInputs inputs;
    CandidateSet candidates;
    std::vector<std::string> vocab;
};

MiniWorld make_world(std::uint64_t seed, std::size_t n_queries = 8, std::size_t n_docs = 24,
                     std::size_t candidate_k = 8) {
    Rng rng(seed);
    MiniWorld w;
    for (int i = 0; i < 30; ++i) w.vocab.push_back("w" + std::to_string(i));

    for (std::size_t qi = 0; qi < n_queries; ++qi) {
        Query q;
        q.id = "q" + std::to_string(qi);
        q.language = {"src"};
        for (int t = 0; t < 3; ++t) q.tokens.push_back(w.vocab[rng.below(w.vocab.size())]);
        w.queries.push_back(q);
    }
    for (std::size_t di = 0; di < n_docs; ++di) {
        Passage p;
        p.doc_id = "d" + std::to_string(di);
        p.offset = 0;
        p.id = passage_id_for(p.doc_id, 0);
        p.language = {"src"};
        for (int t = 0; t < 12; ++t) p.tokens.push_back(w.vocab[rng.below(w.vocab.size())]);
        // Each doc is relevant to query di % n_queries with grade 1..3;
        // inject grade-many copies of the query terms.
        std::size_t qi = di % n_queries;
        int grade = 1 + static_cast<int>(rng.below(3));
        if (di < n_docs / 2) {
            w.qrels.set(w.queries[qi].id, p.doc_id, grade);
            for (int g = 0; g < grade; ++g)
                for (const auto& t : w.queries[qi].tokens)
                    p.tokens[rng.below(p.tokens.size())] = t;
        } else if (rng.below(2) == 0) {
            w.qrels.set(w.queries[qi].id, p.doc_id, 0); // judged non-relevant
        }
        w.passages.push_back(p);
        w.passage_ids.push_back(p.id);
        w.inputs.passages[p.id] = p.tokens;
    }
    for (const auto& q : w.queries) w.inputs.queries[q.id] = q.tokens;

    // Candidates: BM25 over raw term frequencies.
    std::map<std::string, WeightedBag> bags;
    for (const auto& p : w.passages) {
        WeightedBag bag;
        for (const auto& t : p.tokens) bag.add(t, 1.0);
        bags.emplace(p.id, std::move(bag));
    }
    SparseIndex index = build_sparse_index(bags);
    SelectorFn selector = [&](const Query& q) {
        return bm25_search(index, q.tokens, w.passage_ids.size());
    };
    w.candidates = select_candidates(selector, w.queries, w.passage_ids, candidate_k);
    return w;
}

TeacherScores world_teacher(const MiniWorld& w, double noise_sd = 0.0) {
    OracleTeacherConfig cfg;
    cfg.scale = 2.0;
    cfg.term_loss_penalty = 1.0;
    cfg.noise_sd = noise_sd;
    cfg.seed = 5;
    return oracle_teacher(w.candidates, w.inputs.queries, w.inputs.passages, w.qrels, {}, cfg);
}

} // namespace

TEST_CASE("select_candidates with k = |P| returns every passage in score order") {
    MiniWorld w = make_world(1);
    SelectorFn constant_gap = [&](const Query& q) {
        std::vector<std::pair<std::string, double>> scored;
        double s = static_cast<double>(w.passage_ids.size());
        for (const auto& pid : w.passage_ids) scored.emplace_back(pid, s--);
        return scored;
    };
    auto cs = select_candidates(constant_gap, w.queries, w.passage_ids, w.passage_ids.size());
    for (const auto& q : w.queries) {
        CHECK(cs.at(q.id).size() == w.passage_ids.size());
        CHECK(cs.at(q.id) == w.passage_ids); // already id-sorted = score order here
    }
}

TEST_CASE("empty ranking degrades to a deterministic id-ordered prefix") {
    MiniWorld w = make_world(2);
    SelectorFn empty = [](const Query&) {
        return std::vector<std::pair<std::string, double>>{};
    };
    auto cs = select_candidates(empty, w.queries, w.passage_ids, 5);
    std::vector<std::string> sorted_ids = w.passage_ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    sorted_ids.resize(5);
    for (const auto& q : w.queries) CHECK(cs.at(q.id) == sorted_ids);
}

TEST_CASE("candidate sets satisfy the in-set >= out-of-set ordering condition") {
    MiniWorld w = make_world(3);
    std::map<std::string, std::map<std::string, double>> score_of;
    SelectorFn bm25_like = [&](const Query& q) {
        Rng rng(derive_seed(77, {fnv1a64(q.id)}));
        std::vector<std::pair<std::string, double>> scored;
        for (const auto& pid : w.passage_ids) {
            double s = rng.uniform();
            score_of[q.id][pid] = s;
            scored.emplace_back(pid, s);
        }
        return scored;
    };
    std::size_t k = 6;
    auto cs = select_candidates(bm25_like, w.queries, w.passage_ids, k);
    for (const auto& q : w.queries) {
        const auto& in_set = cs.at(q.id);
        CHECK(in_set.size() == k);
        double min_in = HUGE_VAL;
        for (const auto& pid : in_set) min_in = std::min(min_in, score_of[q.id][pid]);
        std::set<std::string> in(in_set.begin(), in_set.end());
        for (const auto& pid : w.passage_ids)
            if (!in.count(pid)) CHECK(score_of[q.id][pid] <= min_in);
        // Ordering is score-descending.
        for (std::size_t i = 1; i < in_set.size(); ++i)
            CHECK(score_of[q.id][in_set[i - 1]] >= score_of[q.id][in_set[i]]);
    }
}

TEST_CASE("exact maxsim selector agrees with a brute-force top-k oracle") {
    MiniWorld w = make_world(4);
    EncoderParams params = init_encoder(w.vocab, 16, 8, 9);
    EncodedPassages encoded = encode_passages(params, w.passages);
    SelectorFn student = [&](const Query& q) {
        return exact_search(params, encoded, q.tokens, w.passage_ids.size());
    };
    std::size_t k = 5;
    auto cs = select_candidates(student, w.queries, w.passage_ids, k);
    for (const auto& q : w.queries) {
        // Brute force: score every passage directly, sort, take k.
        MultiVector qmv = encode(params, q.tokens, Role::query);
        std::vector<std::pair<double, std::string>> brute;
        for (std::size_t i = 0; i < encoded.ids.size(); ++i)
            brute.emplace_back(-maxsim_score(qmv, encoded.vectors[i]), encoded.ids[i]);
        std::sort(brute.begin(), brute.end());
        std::vector<std::string> expect;
        for (std::size_t i = 0; i < k; ++i) expect.push_back(brute[i].second);
        CHECK(cs.at(q.id) == expect);
    }
}

TEST_CASE("selector failure aborts with the query id") {
    MiniWorld w = make_world(5);
    SelectorFn boom = [&](const Query& q) -> std::vector<std::pair<std::string, double>> {
        if (q.id == "q3") throw Error("backend down");
        return {};
    };
    CHECK_THROWS_WITH_AS((void)select_candidates(boom, w.queries, w.passage_ids, 4),
                         doctest::Contains("q3"), Error);
}

TEST_CASE("oracle teacher composes grade, term loss, and seeded noise") {
    CandidateSet candidates{{"q1", {"dr:0", "dn:0"}}};
    std::map<std::string, std::vector<std::string>> queries{{"q1", {"apple", "pear"}}};
    std::map<std::string, std::vector<std::string>> passages{
        {"dr:0", {"apple", "pear", "plum"}},
        {"dn:0", {"other", "tokens"}},
    };
    Qrels qrels;
    qrels.set("q1", "dr", 2);

    OracleTeacherConfig cfg;
    cfg.scale = 1.0;
    auto plain = oracle_teacher(candidates, queries, passages, qrels, {}, cfg);
    CHECK(plain.at("q1", "dr:0") == doctest::Approx(2.0)); // scale * grade
    CHECK(plain.at("q1", "dn:0") == doctest::Approx(0.0)); // unjudged -> grade 0

    cfg.term_loss_penalty = 1.0;
    auto lossy = oracle_teacher(candidates, queries, passages, qrels, {}, cfg);
    CHECK(lossy.at("q1", "dr:0") == doctest::Approx(2.0)); // nothing lost
    CHECK(lossy.at("q1", "dn:0") == doctest::Approx(-1.0)); // all query terms lost

    cfg.noise_sd = 0.1;
    cfg.seed = 4;
    auto noisy1 = oracle_teacher(candidates, queries, passages, qrels, {}, cfg);
    auto noisy2 = oracle_teacher(candidates, queries, passages, qrels, {}, cfg);
    CHECK(noisy1.at("q1", "dr:0") == noisy2.at("q1", "dr:0"));
    CHECK(noisy1.at("q1", "dr:0") != plain.at("q1", "dr:0"));
}

TEST_CASE("identity term image leaves oracle scores unchanged") {
    MiniWorld w = make_world(6);
    OracleTeacherConfig cfg;
    cfg.scale = 1.5;
    cfg.term_loss_penalty = 0.7;
    auto direct = oracle_teacher(w.candidates, w.inputs.queries, w.inputs.passages, w.qrels, {}, cfg);
    TermImageFn identity_image = [](const std::string& term) {
        return std::vector<std::string>{term};
    };
    auto imaged =
        oracle_teacher(w.candidates, w.inputs.queries, w.inputs.passages, w.qrels, identity_image, cfg);
    for (const auto& [qid, row] : direct.by_query())
        for (const auto& [pid, score] : row) CHECK(imaged.at(qid, pid) == score);
}

TEST_CASE("teacher scores io round-trips and validates") {
    MiniWorld w = make_world(7);
    auto scores = world_teacher(w, 0.05);
    auto path = tmp_path("clirkit_teacher_test.tsv");
    save_teacher_scores(path, scores);
    auto back = load_teacher_scores(path);
    CHECK(back.size() == scores.size());
    for (const auto& [qid, row] : scores.by_query())
        for (const auto& [pid, score] : row) CHECK(back.at(qid, pid) == score); // exact

    write_file(path, "q1\tp1\t1.0\nq1\tp1\t2.0\n");
    CHECK_THROWS_WITH_AS((void)load_teacher_scores(path), doctest::Contains("duplicate"), Error);
    write_file(path, "q1\tp1\tnan\n");
    CHECK_THROWS_WITH_AS((void)load_teacher_scores(path), doctest::Contains("non-finite"), Error);
    write_file(path, "q1 p1 1.0\n");
    CHECK_THROWS_AS((void)load_teacher_scores(path), Error);
}

TEST_CASE("sample_batch samples without replacement, re-drawn per epoch") {
    CandidateSet candidates;
    std::vector<std::string> pool;
    for (int i = 0; i < 50; ++i) pool.push_back("p" + std::to_string(i));
    candidates["q1"] = pool;
    candidates["q2"] = {"a", "b", "c"};

    auto s1 = sample_batch(candidates, 6, 0, 42);
    auto s2 = sample_batch(candidates, 6, 0, 42);
    CHECK(s1 == s2); // same (seed, epoch) -> identical
    auto s3 = sample_batch(candidates, 6, 1, 42);
    CHECK(s1.at("q1") != s3.at("q1")); // epochs re-draw

    CHECK(s1.at("q1").size() == 6);
    std::set<std::string> uniq(s1.at("q1").begin(), s1.at("q1").end());
    CHECK(uniq.size() == 6);
    CHECK(s1.at("q2").size() == 3); // min(m, |C_q|), whole set
    CHECK_THROWS_AS((void)sample_batch(candidates, 1, 0, 1), Error);
}

TEST_CASE("sample_batch inclusion frequency matches the binomial oracle") {
    CandidateSet candidates;
    std::vector<std::string> pool;
    for (int i = 0; i < 50; ++i) pool.push_back("p" + std::to_string(i));
    candidates["q"] = pool;

    const std::size_t epochs = 10000, m = 6;
    std::map<std::string, std::size_t> freq;
    for (std::size_t e = 0; e < epochs; ++e) {
        auto sample = sample_batch(candidates, m, e, 9);
        for (const auto& pid : sample.at("q")) ++freq[pid];
    }

    double p = static_cast<double>(m) / 50.0;
    double mean = epochs * p;
    double sigma = std::sqrt(epochs * p * (1.0 - p));
    for (const auto& pid : pool) {
        double count = static_cast<double>(freq[pid]);
        CHECK(std::fabs(count - mean) <= 3.0 * sigma);
    }
}

TEST_CASE("adamw leaves parameters untouched under zero gradients without decay") {
    EncoderParams params = init_encoder({"a", "b"}, 4, 2, 1);
    EncoderParams before = params;
    EncoderGrads zeros = EncoderGrads::zeros_like(params);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamWState opt(params);
    for (int i = 0; i < 5; ++i) opt.step(params, zeros, cfg);
    CHECK(params.embeddings == before.embeddings);
    CHECK(params.projection == before.projection);

    // With decay the contraction is exactly lr * wd per step.
    TrainConfig decay = cfg;
    decay.weight_decay = 0.01;
    AdamWState opt2(params);
    double w0 = params.embeddings[0];
    opt2.step(params, zeros, decay);
    CHECK(params.embeddings[0] == doctest::Approx(w0 * (1.0 - decay.learning_rate * 0.01)));
}

TEST_CASE("self-distillation is a fixed point of training") {
    MiniWorld w = make_world(8);
    EncoderParams params = init_encoder(w.vocab, 8, 4, 3);

    // Teacher scores are the student's own logits for every candidate pair.
    TeacherScores self_scores;
    for (const auto& [qid, pids] : w.candidates) {
        std::vector<std::vector<std::string>> ptoks;
        for (const auto& pid : pids) ptoks.push_back(w.inputs.passages.at(pid));
        auto trace = compute_logits(params, w.inputs.queries.at(qid), ptoks);
        for (std::size_t i = 0; i < pids.size(); ++i)
            self_scores.set(qid, pids[i], trace.logits[i]);
    }

    TrainConfig cfg;
    cfg.batch_queries = 4;
    cfg.passages_per_query = 4;
    cfg.epochs = 3;
    cfg.weight_decay = 0.0;
    cfg.seed = 17;
    auto result = train_student(params, w.inputs, w.candidates, self_scores, cfg);
    for (const auto& e : result.log.epochs) CHECK(e.mean_loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(result.params.embeddings == params.embeddings); // zero gradient, zero update
    CHECK(result.params.projection == params.projection);
}

TEST_CASE("distillation training reduces the loss and is deterministic") {
    MiniWorld w = make_world(9, 10, 30, 10);
    auto scores = world_teacher(w, 0.02);
    EncoderParams params = init_encoder(w.vocab, 16, 8, 21);
    TrainConfig cfg;
    cfg.batch_queries = 5;
    cfg.passages_per_query = 4;
    cfg.epochs = 20;
    cfg.learning_rate = 1e-2;
    cfg.seed = 33;

    auto r1 = train_student(params, w.inputs, w.candidates, scores, cfg);
    auto r2 = train_student(params, w.inputs, w.candidates, scores, cfg);
    CHECK(training_log_to_text(r1.log) == training_log_to_text(r2.log)); // bit-identical
    CHECK(r1.params.embeddings == r2.params.embeddings);

    REQUIRE(r1.log.epochs.size() == 20);
    CHECK(r1.log.epochs.back().mean_loss < r1.log.epochs.front().mean_loss);
}

TEST_CASE("training rejects candidates without teacher scores, naming the pair") {
    MiniWorld w = make_world(10);
    auto scores = world_teacher(w);
    // Remove one pair by rebuilding without it.
    TeacherScores missing;
    const std::string& victim_q = w.candidates.begin()->first;
    const std::string& victim_p = w.candidates.begin()->second.front();
    for (const auto& [qid, row] : scores.by_query())
        for (const auto& [pid, s] : row)
            if (!(qid == victim_q && pid == victim_p)) missing.set(qid, pid, s);

    EncoderParams params = init_encoder(w.vocab, 8, 4, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS((void)train_student(params, w.inputs, w.candidates, missing, cfg),
                         doctest::Contains(victim_q.c_str()), Error);
}

TEST_CASE("translate-train: uniform logits give ln(m) loss") {
    // One positive and five negatives with identical token lists make the
    // softmax uniform over 6 entries.
    TrainInputs inputs;
    inputs.queries["q1"] = {"w1", "w2"};
    std::vector<std::string> same_tokens{"z1", "z2", "z3"};
    CandidateSet candidates;
    Qrels qrels;
    qrels.set("q1", "dp", 1);
    inputs.passages["dp:0"] = same_tokens;
    for (int i = 0; i < 5; ++i) {
        std::string pid = "dn" + std::to_string(i) + ":0";
        inputs.passages[pid] = same_tokens;
        candidates["q1"].push_back(pid);
    }

    EncoderParams params = init_encoder({"w1", "w2", "z1", "z2", "z3"}, 8, 4, 5);
    TrainConfig cfg;
    cfg.batch_queries = 1;
    cfg.passages_per_query = 6;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-6;
    cfg.seed = 2;
    auto result = train_translate_train(params, inputs, candidates, qrels, cfg);
    REQUIRE(result.log.epochs.size() == 1);
    CHECK(result.log.epochs[0].mean_loss == doctest::Approx(std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("translate-train skips queries without positives and counts them") {
    MiniWorld w = make_world(11);
    Qrels empty; // nobody has positives
    EncoderParams params = init_encoder(w.vocab, 8, 4, 6);
    TrainConfig cfg;
    cfg.batch_queries = 4;
    cfg.passages_per_query = 4;
    cfg.epochs = 2;
    auto result = train_translate_train(params, w.inputs, w.candidates, empty, cfg);
    CHECK(result.log.skipped_queries == 2 * w.queries.size());
    for (const auto& e : result.log.epochs) CHECK(e.queries == 0);
}

TEST_CASE("translate-train training is deterministic and reduces loss") {
    MiniWorld w = make_world(12, 10, 30, 10);
    EncoderParams params = init_encoder(w.vocab, 16, 8, 4);
    TrainConfig cfg;
    cfg.batch_queries = 5;
    cfg.passages_per_query = 4;
    cfg.epochs = 20;
    cfg.seed = 3;
    auto r1 = train_translate_train(params, w.inputs, w.candidates, w.qrels, cfg);
    auto r2 = train_translate_train(params, w.inputs, w.candidates, w.qrels, cfg);
    CHECK(training_log_to_text(r1.log) == training_log_to_text(r2.log));
    CHECK(r1.log.epochs.back().mean_loss < r1.log.epochs.front().mean_loss);
}

TEST_CASE("candidate set files round-trip") {
    MiniWorld w = make_world(13);
    auto path = tmp_path("clirkit_candidates_test.tsv");
    save_candidate_set(path, w.candidates);
    auto back = load_candidate_set(path);
    CHECK(back == w.candidates);

    write_file(path, "q1\tp1\t2\n");
    CHECK_THROWS_WITH_AS((void)load_candidate_set(path), doctest::Contains("rank"), Error);
    write_file(path, "q1\tp1\t1\nq1\tp1\t2\n");
    CHECK_THROWS_WITH_AS((void)load_candidate_set(path), doctest::Contains("duplicate"), Error);
}

TEST_SUITE_END();
