#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clirkit/corpus.hpp"

namespace clirkit {

struct RunEntry {
    std::string doc_id;
    double score = 0.0;
};

// Ranked results per query; per-query doc ids unique, scores non-increasing.
struct RunFile {
    std::string tag;
    std::map<std::string, std::vector<RunEntry>> results;
};

// Sorts by (score desc, doc_id asc) and validates uniqueness.
RunFile make_run(const std::string& tag,
                 const std::map<std::string, std::vector<std::pair<std::string, double>>>& scored);

// TREC format: query_id Q0 doc_id rank score tag.
void save_run(const std::string& path, const RunFile& run);
RunFile load_run(const std::string& path);

// Document score = max over its scored passages (MaxP). doc_of defaults to
// decoding the document id out of the passage id.
std::map<std::string, double> maxp_aggregate(
    const std::map<std::string, double>& passage_scores,
    const std::function<std::string(const std::string&)>& doc_of = {});

struct PerQueryMetric {
    std::map<std::string, double> per_query;
    double mean = 0.0;
    std::vector<std::string> flagged; // e.g. run queries without judgments
};

// Linear gain DCG with log2(rank+1) discount; unjudged docs gain 0; queries
// with no relevant docs score 0. Mean is the micro-average over run queries.
PerQueryMetric ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 20);

// Fraction of grade>0 docs retrieved in the top k; queries with no relevant
// docs are excluded from the mean.
PerQueryMetric recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 1000);

// Fraction of the top min(k, run length) docs with any judgment.
PerQueryMetric judged_at_k(const RunFile& run, const Qrels& qrels, std::size_t k = 20);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
};

// Classic paired t on differences; two-sided p from the t-distribution CDF
// via regularized incomplete beta. All-zero differences give t=0, p=1.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

using PairScorer = std::function<double(const std::string& query_id, const std::string& doc_id)>;

// Rescores the top-depth block per query; docs below depth keep their order,
// with scores shifted below the reranked block to stay non-increasing.
RunFile rerank(const RunFile& first_stage, const PairScorer& scorer, std::size_t depth = 200,
               const std::string& tag = "reranked");

struct EvalCutoffs {
    std::size_t ndcg_k = 20;
    std::size_t recall_k = 1000;
    std::size_t judged_k = 20;
};

struct EvalReport {
    std::string run_tag;
    EvalCutoffs cutoffs;
    PerQueryMetric ndcg, recall, judged;
};

EvalReport evaluate_run(const RunFile& run, const Qrels& qrels, const EvalCutoffs& cutoffs = {});
std::string eval_report_tsv(const EvalReport& report);     // per-query values
std::string eval_report_summary(const EvalReport& report); // aggregate block

struct CompareMetric {
    std::string name;
    double mean_a = 0.0, mean_b = 0.0, delta = 0.0;
    double a_pct_of_b = 0.0; // 100 * mean_a / mean_b, 0 when undefined
    TTestResult ttest;
};

struct CompareReport {
    std::string tag_a, tag_b;
    std::vector<CompareMetric> metrics;
};

// Both runs must cover the same query set; mismatch errors list the
// symmetric difference.
CompareReport compare_runs(const RunFile& a, const RunFile& b, const Qrels& qrels,
                           const EvalCutoffs& cutoffs = {});
std::string compare_report_text(const CompareReport& report);

} // namespace clirkit
