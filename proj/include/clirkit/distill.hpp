#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clirkit/corpus.hpp"
#include "clirkit/encoder.hpp"

namespace clirkit {

// Input languages for each pipeline stage. Selector, scorer, and student
// languages are independent of each other.
struct LanguageConfig {
    LanguageTag selector_query{"src"};
    LanguageTag selector_passage{"src"};
    LanguageTag scorer_query{"src"};
    LanguageTag scorer_passage{"src"};
    LanguageTag student_query{"src"};
    LanguageTag student_passage{"tgt"};
    LanguageTag training{"src"};
    std::size_t candidate_k = 50;
};

// query_id -> candidate passage ids in selector score-descending order.
using CandidateSet = std::map<std::string, std::vector<std::string>>;

class TeacherScores {
public:
    void set(const std::string& query_id, const std::string& passage_id, double score);
    std::optional<double> get(const std::string& query_id, const std::string& passage_id) const;
    double at(const std::string& query_id, const std::string& passage_id) const;
    std::size_t size() const;
    const std::map<std::string, std::map<std::string, double>>& by_query() const { return scores_; }

private:
    std::map<std::string, std::map<std::string, double>> scores_;
};

struct TrainConfig {
    std::size_t batch_queries = 64;
    std::size_t passages_per_query = 6; // m
    double learning_rate = 1e-2;        // desk-scale default
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    LossConfig loss;
};

// Full ranking (possibly partial: missing passages score 0) for one query.
using SelectorFn =
    std::function<std::vector<std::pair<std::string, double>>(const Query&)>;

// Top-min(k, |P|) passages per query; every in-set score >= every out-of-set
// score, boundary ties broken by passage_id ascending. Relevant passages are
// not removed. Queries must already be in the selector's language.
CandidateSet select_candidates(const SelectorFn& selector, const std::vector<Query>& queries,
                               const std::vector<std::string>& passage_ids, std::size_t k,
                               std::size_t jobs = 1);

struct OracleTeacherConfig {
    double scale = 1.0;
    double term_loss_penalty = 0.0; // lambda
    double noise_sd = 0.0;
    std::uint64_t seed = 0;
};

// Maps a scorer-language query term to the terms that could express it in
// the scorer-language passages (identity within one language, lexicon image
// across languages).
using TermImageFn = std::function<std::vector<std::string>(const std::string&)>;

// s(q,p) = scale * grade(q, doc(p)) - lambda * lost(q,p) + N(0, noise_sd),
// where lost is the fraction of distinct query terms whose image is absent
// from the passage as the scorer sees it. Unjudged pairs use grade 0. Noise
// is seeded per (query, passage), so output is independent of iteration
// order and parallelism.
TeacherScores oracle_teacher(const CandidateSet& candidates,
                             const std::map<std::string, std::vector<std::string>>& scorer_queries,
                             const std::map<std::string, std::vector<std::string>>& scorer_passages,
                             const Qrels& qrels, const TermImageFn& term_image,
                             const OracleTeacherConfig& cfg, std::size_t jobs = 1);

// query_id<TAB>passage_id<TAB>score. Duplicate pairs and non-finite scores
// are load errors; save/load round-trips exactly.
TeacherScores load_teacher_scores(const std::string& path);
void save_teacher_scores(const std::string& path, const TeacherScores& scores);

// query_id<TAB>passage_id<TAB>rank, rank 1-based in selector order.
CandidateSet load_candidate_set(const std::string& path);
void save_candidate_set(const std::string& path, const CandidateSet& candidates);

// Uniform sample without replacement of size min(m, |C_q|) per query,
// re-drawn each epoch; deterministic given (seed, epoch, query_id).
std::map<std::string, std::vector<std::string>> sample_batch(const CandidateSet& candidates,
                                                             std::size_t m, std::size_t epoch,
                                                             std::uint64_t seed);

struct TrainingLog {
    struct Epoch {
        std::size_t epoch = 0;
        double mean_loss = 0.0;
        std::size_t batches = 0;
        std::size_t queries = 0;
    };
    std::vector<Epoch> epochs;
    std::size_t skipped_queries = 0;
};

std::string training_log_to_text(const TrainingLog& log);
void save_training_log(const std::string& path, const TrainingLog& log);

// Decoupled-weight-decay adaptive-moment update over all parameter blocks.
class AdamWState {
public:
    explicit AdamWState(const EncoderParams& params);
    void step(EncoderParams& params, const EncoderGrads& grads, const TrainConfig& cfg);
    std::size_t steps() const { return t_; }

private:
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

// Student-language token views, keyed by id. Training touches nothing else:
// translations, candidates, and teacher scores are all precomputed.
struct TrainInputs {
    std::map<std::string, std::vector<std::string>> queries;  // q^~L_Q
    std::map<std::string, std::vector<std::string>> passages; // p^~L_D
};

struct TrainResult {
    EncoderParams params;
    TrainingLog log;
};

// Knowledge distillation: per epoch, shuffle queries, batch, and minimize the
// mean KL distillation loss between student and teacher candidate
// distributions. Every candidate pair must carry a teacher score.
TrainResult train_student(EncoderParams params, const TrainInputs& inputs,
                          const CandidateSet& candidates, const TeacherScores& scores,
                          const TrainConfig& cfg);

// Baseline: cross-entropy of softmax over MaxSim logits of one positive
// passage against m-1 candidates sampled as negatives (candidates minus
// positives). Queries with no positive passage are skipped and counted.
TrainResult train_translate_train(EncoderParams params, const TrainInputs& inputs,
                                  const CandidateSet& candidates, const Qrels& qrels,
                                  const TrainConfig& cfg);

} // namespace clirkit
