#include "clirkit/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace clirkit {

void TeacherScores::set(const std::string& query_id, const std::string& passage_id, double score) {
    if (!std::isfinite(score))
        fail("teacher scores: non-finite score for (%s, %s)", query_id.c_str(), passage_id.c_str());
    auto [it, inserted] = scores_[query_id].emplace(passage_id, score);
    if (!inserted)
        fail("teacher scores: duplicate pair (%s, %s)", query_id.c_str(), passage_id.c_str());
}

std::optional<double> TeacherScores::get(const std::string& query_id,
                                         const std::string& passage_id) const {
    auto qit = scores_.find(query_id);
    if (qit == scores_.end()) return std::nullopt;
    auto pit = qit->second.find(passage_id);
    if (pit == qit->second.end()) return std::nullopt;
    return pit->second;
}

double TeacherScores::at(const std::string& query_id, const std::string& passage_id) const {
    auto v = get(query_id, passage_id);
    if (!v) fail("teacher scores: missing pair (%s, %s)", query_id.c_str(), passage_id.c_str());
    return *v;
}

std::size_t TeacherScores::size() const {
    std::size_t n = 0;
    for (const auto& [q, row] : scores_) n += row.size();
    return n;
}

CandidateSet select_candidates(const SelectorFn& selector, const std::vector<Query>& queries,
                               const std::vector<std::string>& passage_ids, std::size_t k,
                               std::size_t jobs) {
    if (k < 2) fail("select_candidates: k must be >= 2");
    if (passage_ids.empty()) fail("select_candidates: no passages");
    std::vector<std::string> sorted_pids = passage_ids;
    std::sort(sorted_pids.begin(), sorted_pids.end());

    std::vector<std::vector<std::string>> per_query(queries.size());
    parallel_for(queries.size(), jobs, [&](std::size_t qi) {
        const Query& query = queries[qi];
        std::vector<std::pair<std::string, double>> ranking;
        try {
            ranking = selector(query);
        } catch (const std::exception& e) {
            fail("select_candidates: selector failed on query '%s': %s", query.id.c_str(), e.what());
        }
        std::map<std::string, double> score_of;
        for (const auto& [pid, score] : ranking)
            if (!score_of.emplace(pid, score).second)
                fail("select_candidates: selector returned duplicate passage '%s' for query '%s'",
                     pid.c_str(), query.id.c_str());

        // Passages missing from the ranking score 0, so short selector output
        // degrades into an id-ordered tail rather than a short candidate set.
        std::vector<std::pair<double, const std::string*>> scored;
        scored.reserve(sorted_pids.size());
        for (const auto& pid : sorted_pids) {
            auto it = score_of.find(pid);
            scored.emplace_back(it == score_of.end() ? 0.0 : it->second, &pid);
        }
        std::size_t take = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                          scored.end(), [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return *a.second < *b.second;
                          });
        auto& out = per_query[qi];
        out.reserve(take);
        for (std::size_t i = 0; i < take; ++i) out.push_back(*scored[i].second);
    });

    CandidateSet candidates;
    for (std::size_t qi = 0; qi < queries.size(); ++qi)
        candidates[queries[qi].id] = std::move(per_query[qi]);
    return candidates;
}

TeacherScores oracle_teacher(const CandidateSet& candidates,
                             const std::map<std::string, std::vector<std::string>>& scorer_queries,
                             const std::map<std::string, std::vector<std::string>>& scorer_passages,
                             const Qrels& qrels, const TermImageFn& term_image,
                             const OracleTeacherConfig& cfg, std::size_t jobs) {
    if (cfg.scale <= 0.0) fail("oracle_teacher: scale must be positive");
    if (cfg.term_loss_penalty < 0.0 || cfg.noise_sd < 0.0)
        fail("oracle_teacher: penalty and noise_sd must be non-negative");

    struct Pair {
        const std::string* qid;
        const std::string* pid;
        double score = 0.0;
    };
    std::vector<Pair> pairs;
    for (const auto& [qid, pids] : candidates) {
        if (!scorer_queries.count(qid)) fail("oracle_teacher: no scorer view of query '%s'", qid.c_str());
        for (const auto& pid : pids) {
            if (!scorer_passages.count(pid))
                fail("oracle_teacher: no scorer view of passage '%s'", pid.c_str());
            pairs.push_back({&qid, &pid});
        }
    }

    // Passage term sets, shared across queries.
    std::map<std::string, std::set<std::string>> passage_terms;
    for (const auto& [pid, tokens] : scorer_passages)
        passage_terms.emplace(pid, std::set<std::string>(tokens.begin(), tokens.end()));

    parallel_for(pairs.size(), jobs, [&](std::size_t i) {
        const std::string& qid = *pairs[i].qid;
        const std::string& pid = *pairs[i].pid;
        int grade = qrels.grade_or_zero(qid, parse_passage_id(pid).first);

        double lost = 0.0;
        if (cfg.term_loss_penalty > 0.0) {
            const auto& qtokens = scorer_queries.at(qid);
            const auto& pterms = passage_terms.at(pid);
            std::set<std::string> qterms(qtokens.begin(), qtokens.end());
            std::size_t missing = 0;
            for (const auto& term : qterms) {
                bool found = false;
                if (term_image) {
                    for (const auto& image : term_image(term))
                        if (pterms.count(image)) {
                            found = true;
                            break;
                        }
                } else {
                    found = pterms.count(term) > 0;
                }
                if (!found) ++missing;
            }
            lost = qterms.empty() ? 0.0
                                  : static_cast<double>(missing) / static_cast<double>(qterms.size());
        }

        double noise = 0.0;
        if (cfg.noise_sd > 0.0) {
            Rng rng(derive_seed(cfg.seed, {fnv1a64(qid), fnv1a64(pid)}));
            noise = cfg.noise_sd * rng.normal();
        }
        pairs[i].score = cfg.scale * grade - cfg.term_loss_penalty * lost + noise;
    });

    TeacherScores scores;
    for (const auto& p : pairs) scores.set(*p.qid, *p.pid, p.score);
    return scores;
}

TeacherScores load_teacher_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open teacher scores: %s", path.c_str());
    TeacherScores scores;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            fail("%s:%zu: expected query_id<TAB>passage_id<TAB>score", path.c_str(), lineno);
        std::string qid = line.substr(0, t1);
        std::string pid = line.substr(t1 + 1, t2 - t1 - 1);
        std::string score_str = line.substr(t2 + 1);
        char* end = nullptr;
        double score = std::strtod(score_str.c_str(), &end);
        if (end == score_str.c_str() || *end != '\0')
            fail("%s:%zu: bad score '%s'", path.c_str(), lineno, score_str.c_str());
        if (!std::isfinite(score))
            fail("%s:%zu: non-finite score '%s'", path.c_str(), lineno, score_str.c_str());
        scores.set(qid, pid, score); // duplicate pairs rejected here
    }
    return scores;
}

void save_teacher_scores(const std::string& path, const TeacherScores& scores) {
    std::ostringstream out;
    for (const auto& [qid, row] : scores.by_query())
        for (const auto& [pid, score] : row)
            out << qid << '\t' << pid << '\t' << format_double(score) << '\n';
    write_file(path, out.str());
}

CandidateSet load_candidate_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open candidate set: %s", path.c_str());
    CandidateSet candidates;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            fail("%s:%zu: expected query_id<TAB>passage_id<TAB>rank", path.c_str(), lineno);
        std::string qid = line.substr(0, t1);
        std::string pid = line.substr(t1 + 1, t2 - t1 - 1);
        unsigned long rank = std::strtoul(line.c_str() + t2 + 1, nullptr, 10);
        auto& pids = candidates[qid];
        if (rank != pids.size() + 1)
            fail("%s:%zu: rank %lu out of order for query '%s'", path.c_str(), lineno, rank,
                 qid.c_str());
        if (std::find(pids.begin(), pids.end(), pid) != pids.end())
            fail("%s:%zu: duplicate candidate '%s' for query '%s'", path.c_str(), lineno,
                 pid.c_str(), qid.c_str());
        pids.push_back(pid);
    }
    return candidates;
}

void save_candidate_set(const std::string& path, const CandidateSet& candidates) {
    std::ostringstream out;
    for (const auto& [qid, pids] : candidates) {
        std::size_t rank = 1;
        for (const auto& pid : pids) out << qid << '\t' << pid << '\t' << rank++ << '\n';
    }
    write_file(path, out.str());
}

std::map<std::string, std::vector<std::string>> sample_batch(const CandidateSet& candidates,
                                                             std::size_t m, std::size_t epoch,
                                                             std::uint64_t seed) {
    if (m < 2) fail("sample_batch: m must be >= 2");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [qid, pids] : candidates) {
        Rng rng(derive_seed(seed, {fnv1a64("sample"), epoch, fnv1a64(qid)}));
        std::size_t take = std::min(m, pids.size());
        auto idx = rng.sample_without_replacement(pids.size(), take);
        auto& picked = out[qid];
        picked.reserve(take);
        for (std::size_t i : idx) picked.push_back(pids[i]);
    }
    return out;
}

std::string training_log_to_text(const TrainingLog& log) {
    std::ostringstream out;
    out << "epoch\tmean_loss\tbatches\tqueries\n";
    for (const auto& e : log.epochs)
        out << e.epoch << '\t' << format_double(e.mean_loss) << '\t' << e.batches << '\t'
            << e.queries << '\n';
    out << "# skipped_queries\t" << log.skipped_queries << '\n';
    return out.str();
}

void save_training_log(const std::string& path, const TrainingLog& log) {
    write_file(path, training_log_to_text(log));
}

AdamWState::AdamWState(const EncoderParams& params)
    : m_(params.parameter_count(), 0.0), v_(params.parameter_count(), 0.0) {}

void AdamWState::step(EncoderParams& params, const EncoderGrads& grads, const TrainConfig& cfg) {
    ++t_;
    double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));

    std::size_t offset = 0;
    auto update = [&](std::vector<double>& param, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < param.size(); ++i) {
            double g = grad[i];
            double& m = m_[offset + i];
            double& v = v_[offset + i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            double mhat = m / bias1;
            double vhat = v / bias2;
            param[i] -= cfg.learning_rate *
                        (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * param[i]);
        }
        offset += param.size();
    };
    update(params.embeddings, grads.embeddings);
    update(params.projection, grads.projection);
    update(params.query_marker, grads.query_marker);
    update(params.passage_marker, grads.passage_marker);
    if (offset != m_.size()) fail("AdamWState: parameter shape changed mid-training");
}

namespace {

// Shared epoch/batch loop. per_query computes loss and accumulates gradients
// for one query against the current params, or returns false to skip it.
TrainResult run_training(
    EncoderParams params, const CandidateSet& candidates, const TrainConfig& cfg,
    const std::function<bool(const EncoderParams& current, const std::string& qid, std::size_t epoch,
                             EncoderGrads& sink, double& loss)>& per_query) {
    if (cfg.batch_queries == 0) fail("train: batch_queries must be positive");
    if (cfg.learning_rate <= 0.0) fail("train: learning_rate must be positive");
    if (cfg.passages_per_query < 2) fail("train: passages_per_query must be >= 2");

    std::vector<std::string> query_ids;
    query_ids.reserve(candidates.size());
    for (const auto& [qid, pids] : candidates) query_ids.push_back(qid);

    TrainResult result;
    AdamWState opt(params);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::string> order = query_ids;
        Rng shuffle_rng(derive_seed(cfg.seed, {fnv1a64("shuffle"), epoch}));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_queries = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_queries) {
            std::size_t end = std::min(start + cfg.batch_queries, order.size());
            EncoderGrads batch_grads = EncoderGrads::zeros_like(params);
            double batch_loss = 0.0;
            std::size_t used = 0;
            for (std::size_t i = start; i < end; ++i) {
                double loss = 0.0;
                if (!per_query(params, order[i], epoch, batch_grads, loss)) {
                    ++result.log.skipped_queries;
                    continue;
                }
                if (!std::isfinite(loss))
                    fail("train: non-finite loss at epoch %zu batch %zu query '%s'", epoch, batches,
                         order[i].c_str());
                batch_loss += loss;
                ++used;
            }
            ++batches;
            if (used == 0) continue;
            EncoderGrads mean_grads = EncoderGrads::zeros_like(params);
            mean_grads.accumulate(batch_grads, 1.0 / static_cast<double>(used));
            opt.step(params, mean_grads, cfg);
            epoch_loss += batch_loss;
            epoch_queries += used;
        }
        double mean = epoch_queries ? epoch_loss / static_cast<double>(epoch_queries) : 0.0;
        if (!std::isfinite(mean)) fail("train: non-finite epoch loss at epoch %zu", epoch);
        result.log.epochs.push_back({epoch, mean, batches, epoch_queries});
    }
    result.params = std::move(params);
    return result;
}

const std::vector<std::string>& tokens_for(const std::map<std::string, std::vector<std::string>>& view,
                                           const std::string& id, const char* what) {
    auto it = view.find(id);
    if (it == view.end()) fail("train: missing %s tokens for '%s'", what, id.c_str());
    return it->second;
}

} // namespace

TrainResult train_student(EncoderParams params, const TrainInputs& inputs,
                          const CandidateSet& candidates, const TeacherScores& scores,
                          const TrainConfig& cfg) {
    // Training consumes only precomputed artifacts; verify them up front.
    for (const auto& [qid, pids] : candidates) {
        tokens_for(inputs.queries, qid, "query");
        for (const auto& pid : pids) {
            tokens_for(inputs.passages, pid, "passage");
            scores.at(qid, pid); // hard error listing (q, p) when absent
        }
    }

    return run_training(
        std::move(params), candidates, cfg,
        [&](const EncoderParams& current, const std::string& qid, std::size_t epoch,
            EncoderGrads& sink, double& loss) {
            const auto& pool = candidates.at(qid);
            if (pool.size() < 2) return false;
            Rng rng(derive_seed(cfg.seed, {fnv1a64("sample"), epoch, fnv1a64(qid)}));
            std::size_t take = std::min(cfg.passages_per_query, pool.size());
            auto idx = rng.sample_without_replacement(pool.size(), take);

            std::vector<std::vector<std::string>> passage_tokens;
            std::vector<double> teacher;
            passage_tokens.reserve(take);
            teacher.reserve(take);
            for (std::size_t i : idx) {
                const std::string& pid = pool[i];
                passage_tokens.push_back(tokens_for(inputs.passages, pid, "passage"));
                teacher.push_back(scores.at(qid, pid));
            }
            auto result = score_and_grad(current, tokens_for(inputs.queries, qid, "query"),
                                         passage_tokens, teacher, cfg.loss);
            loss = result.loss;
            sink.accumulate(result.grads);
            return true;
        });
}

TrainResult train_translate_train(EncoderParams params, const TrainInputs& inputs,
                                  const CandidateSet& candidates, const Qrels& qrels,
                                  const TrainConfig& cfg) {
    // Positive pool per query: passages of docs judged grade > 0.
    std::map<std::string, std::vector<std::string>> doc_passages;
    for (const auto& [pid, tokens] : inputs.passages)
        doc_passages[parse_passage_id(pid).first].push_back(pid);

    std::map<std::string, std::vector<std::string>> positives;
    for (const auto& [qid, pids] : candidates) {
        auto qit = qrels.by_query().find(qid);
        if (qit == qrels.by_query().end()) continue;
        auto& pool = positives[qid];
        for (const auto& [docid, grade] : qit->second) {
            if (grade <= 0) continue;
            auto dit = doc_passages.find(docid);
            if (dit == doc_passages.end()) continue;
            pool.insert(pool.end(), dit->second.begin(), dit->second.end());
        }
        std::sort(pool.begin(), pool.end());
    }

    return run_training(
        std::move(params), candidates, cfg,
        [&](const EncoderParams& current, const std::string& qid, std::size_t epoch,
            EncoderGrads& sink, double& loss) {
            auto pit = positives.find(qid);
            if (pit == positives.end() || pit->second.empty()) return false;
            const auto& pos_pool = pit->second;
            std::set<std::string> pos_set(pos_pool.begin(), pos_pool.end());

            std::vector<std::string> neg_pool;
            for (const auto& pid : candidates.at(qid))
                if (!pos_set.count(pid)) neg_pool.push_back(pid);
            if (neg_pool.empty()) return false;

            Rng rng(derive_seed(cfg.seed, {fnv1a64("tt"), epoch, fnv1a64(qid)}));
            const std::string& positive = pos_pool[rng.below(pos_pool.size())];
            std::size_t n_neg = std::min(cfg.passages_per_query - 1, neg_pool.size());
            auto idx = rng.sample_without_replacement(neg_pool.size(), n_neg);

            std::vector<std::vector<std::string>> passage_tokens;
            passage_tokens.push_back(tokens_for(inputs.passages, positive, "passage"));
            for (std::size_t i : idx)
                passage_tokens.push_back(tokens_for(inputs.passages, neg_pool[i], "passage"));

            LogitsTrace trace =
                compute_logits(current, tokens_for(inputs.queries, qid, "query"), passage_tokens);
            auto probs = softmax(trace.logits, 1.0);
            loss = -std::log(probs[0]);
            std::vector<double> dlogits = probs;
            dlogits[0] -= 1.0;
            sink.accumulate(backprop_logits(current, trace, dlogits));
            return true;
        });
}

} // namespace clirkit
