#include "clirkit/evalir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace clirkit {

RunFile make_run(const std::string& tag,
                 const std::map<std::string, std::vector<std::pair<std::string, double>>>& scored) {
    RunFile run;
    run.tag = tag;
    for (const auto& [qid, docs] : scored) {
        std::vector<RunEntry> entries;
        entries.reserve(docs.size());
        std::set<std::string> seen;
        for (const auto& [docid, score] : docs) {
            if (!std::isfinite(score)) fail("run '%s': non-finite score for (%s, %s)", tag.c_str(),
                                            qid.c_str(), docid.c_str());
            if (!seen.insert(docid).second)
                fail("run '%s': duplicate doc '%s' for query '%s'", tag.c_str(), docid.c_str(),
                     qid.c_str());
            entries.push_back({docid, score});
        }
        std::sort(entries.begin(), entries.end(), [](const RunEntry& a, const RunEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        run.results[qid] = std::move(entries);
    }
    return run;
}

void save_run(const std::string& path, const RunFile& run) {
    std::ostringstream out;
    for (const auto& [qid, entries] : run.results) {
        std::size_t rank = 1;
        for (const auto& e : entries)
            out << qid << " Q0 " << e.doc_id << ' ' << rank++ << ' ' << format_double(e.score)
                << ' ' << run.tag << '\n';
    }
    write_file(path, out.str());
}

RunFile load_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open run file: %s", path.c_str());
    RunFile run;
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::set<std::string>> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string qid, q0, docid, tag;
        std::size_t rank = 0;
        double score = 0.0;
        if (!(ss >> qid >> q0 >> docid >> rank >> score >> tag) || q0 != "Q0")
            fail("%s:%zu: expected 'query_id Q0 doc_id rank score tag'", path.c_str(), lineno);
        if (!std::isfinite(score)) fail("%s:%zu: non-finite score", path.c_str(), lineno);
        auto& entries = run.results[qid];
        if (rank != entries.size() + 1)
            fail("%s:%zu: rank %zu out of order for query '%s'", path.c_str(), lineno, rank,
                 qid.c_str());
        if (!entries.empty() && entries.back().score < score)
            fail("%s:%zu: scores increase with rank for query '%s'", path.c_str(), lineno,
                 qid.c_str());
        if (!seen[qid].insert(docid).second)
            fail("%s:%zu: duplicate doc '%s' for query '%s'", path.c_str(), lineno, docid.c_str(),
                 qid.c_str());
        entries.push_back({docid, score});
        run.tag = tag;
    }
    return run;
}

std::map<std::string, double> maxp_aggregate(
    const std::map<std::string, double>& passage_scores,
    const std::function<std::string(const std::string&)>& doc_of) {
    std::map<std::string, double> doc_scores;
    for (const auto& [pid, score] : passage_scores) {
        std::string doc = doc_of ? doc_of(pid) : parse_passage_id(pid).first;
        auto [it, inserted] = doc_scores.emplace(doc, score);
        if (!inserted) it->second = std::max(it->second, score);
    }
    return doc_scores;
}

PerQueryMetric ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
    if (k < 1) fail("ndcg_at_k: k must be >= 1");
    PerQueryMetric metric;
    for (const auto& [qid, entries] : run.results) {
        auto qit = qrels.by_query().find(qid);
        if (qit == qrels.by_query().end()) {
            metric.per_query[qid] = 0.0;
            metric.flagged.push_back(qid);
            continue;
        }
        double dcg = 0.0;
        std::size_t depth = std::min(k, entries.size());
        for (std::size_t i = 0; i < depth; ++i)
            dcg += qrels.grade_or_zero(qid, entries[i].doc_id) /
                   std::log2(static_cast<double>(i) + 2.0);
        std::vector<int> grades;
        for (const auto& [docid, grade] : qit->second)
            if (grade > 0) grades.push_back(grade);
        std::sort(grades.rbegin(), grades.rend());
        double idcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, grades.size()); ++i)
            idcg += grades[i] / std::log2(static_cast<double>(i) + 2.0);
        metric.per_query[qid] = idcg > 0.0 ? dcg / idcg : 0.0;
    }
    double sum = 0.0;
    for (const auto& [qid, v] : metric.per_query) sum += v;
    metric.mean = metric.per_query.empty() ? 0.0 : sum / metric.per_query.size();
    return metric;
}

PerQueryMetric recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
    if (k < 1) fail("recall_at_k: k must be >= 1");
    PerQueryMetric metric;
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& [qid, entries] : run.results) {
        auto qit = qrels.by_query().find(qid);
        std::set<std::string> relevant;
        if (qit != qrels.by_query().end())
            for (const auto& [docid, grade] : qit->second)
                if (grade > 0) relevant.insert(docid);
        if (relevant.empty()) {
            metric.flagged.push_back(qid); // excluded from the mean
            continue;
        }
        std::size_t found = 0;
        for (std::size_t i = 0; i < std::min(k, entries.size()); ++i)
            if (relevant.count(entries[i].doc_id)) ++found;
        double r = static_cast<double>(found) / static_cast<double>(relevant.size());
        metric.per_query[qid] = r;
        sum += r;
        ++counted;
    }
    metric.mean = counted ? sum / static_cast<double>(counted) : 0.0;
    return metric;
}

PerQueryMetric judged_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
    if (k < 1) fail("judged_at_k: k must be >= 1");
    PerQueryMetric metric;
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& [qid, entries] : run.results) {
        std::size_t depth = std::min(k, entries.size());
        if (depth == 0) {
            metric.flagged.push_back(qid);
            continue;
        }
        std::size_t judged = 0;
        for (std::size_t i = 0; i < depth; ++i)
            if (qrels.judged(qid, entries[i].doc_id)) ++judged;
        double j = static_cast<double>(judged) / static_cast<double>(depth);
        metric.per_query[qid] = j;
        sum += j;
        ++counted;
    }
    metric.mean = counted ? sum / static_cast<double>(counted) : 0.0;
    return metric;
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz).
double betacf(double a, double b, double x) {
    constexpr int max_iterations = 300;
    constexpr double eps = 3e-14;
    constexpr double fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iterations; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) fail("incomplete_beta: a and b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                         b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail("paired_t_test: length mismatch %zu vs %zu", a.size(), b.size());
    if (a.size() < 2) fail("paired_t_test: need at least 2 pairs");
    std::size_t n = a.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);

    TTestResult result;
    result.df = n - 1;
    if (var == 0.0) {
        if (mean == 0.0) return {0.0, 1.0, n - 1};
        return {mean > 0.0 ? HUGE_VAL : -HUGE_VAL, 0.0, n - 1};
    }
    result.t = mean / std::sqrt(var / static_cast<double>(n));
    double df = static_cast<double>(result.df);
    result.p = incomplete_beta(df / 2.0, 0.5, df / (df + result.t * result.t));
    return result;
}

RunFile rerank(const RunFile& first_stage, const PairScorer& scorer, std::size_t depth,
               const std::string& tag) {
    if (depth < 1) fail("rerank: depth must be >= 1");
    RunFile out;
    out.tag = tag;
    for (const auto& [qid, entries] : first_stage.results) {
        std::size_t head_len = std::min(depth, entries.size());
        std::vector<RunEntry> head(entries.begin(),
                                   entries.begin() + static_cast<std::ptrdiff_t>(head_len));
        for (auto& e : head) {
            try {
                e.score = scorer(qid, e.doc_id);
            } catch (const std::exception& ex) {
                fail("rerank: scorer failed on query '%s': %s", qid.c_str(), ex.what());
            }
            if (!std::isfinite(e.score))
                fail("rerank: scorer returned non-finite score on query '%s'", qid.c_str());
        }
        std::sort(head.begin(), head.end(), [](const RunEntry& x, const RunEntry& y) {
            if (x.score != y.score) return x.score > y.score;
            return x.doc_id < y.doc_id;
        });
        // Tail keeps first-stage order with scores shifted below the block.
        if (head_len < entries.size()) {
            double base = head.empty() ? 0.0 : head.back().score;
            double step = 1e-6 * (1.0 + std::fabs(base));
            for (std::size_t i = head_len; i < entries.size(); ++i) {
                RunEntry e = entries[i];
                e.score = base - step * static_cast<double>(i - head_len + 1);
                head.push_back(e);
            }
        }
        out.results[qid] = std::move(head);
    }
    return out;
}

EvalReport evaluate_run(const RunFile& run, const Qrels& qrels, const EvalCutoffs& cutoffs) {
    EvalReport report;
    report.run_tag = run.tag;
    report.cutoffs = cutoffs;
    report.ndcg = ndcg_at_k(run, qrels, cutoffs.ndcg_k);
    report.recall = recall_at_k(run, qrels, cutoffs.recall_k);
    report.judged = judged_at_k(run, qrels, cutoffs.judged_k);
    return report;
}

std::string eval_report_tsv(const EvalReport& report) {
    std::ostringstream out;
    out << "query_id\tmetric\tvalue\n";
    auto dump = [&](const char* name, std::size_t k, const PerQueryMetric& m) {
        for (const auto& [qid, v] : m.per_query)
            out << qid << '\t' << name << '@' << k << '\t' << format_double(v) << '\n';
    };
    dump("ndcg", report.cutoffs.ndcg_k, report.ndcg);
    dump("recall", report.cutoffs.recall_k, report.recall);
    dump("judged", report.cutoffs.judged_k, report.judged);
    return out.str();
}

std::string eval_report_summary(const EvalReport& report) {
    std::ostringstream out;
    out << "run\t" << report.run_tag << '\n';
    out << "ndcg@" << report.cutoffs.ndcg_k << '\t' << strfmt("%.4f", report.ndcg.mean) << '\n';
    out << "recall@" << report.cutoffs.recall_k << '\t' << strfmt("%.4f", report.recall.mean) << '\n';
    out << "judged@" << report.cutoffs.judged_k << '\t' << strfmt("%.4f", report.judged.mean) << '\n';
    out << "queries\t" << report.ndcg.per_query.size() << '\n';
    if (!report.ndcg.flagged.empty()) {
        out << "unjudged_queries";
        for (const auto& q : report.ndcg.flagged) out << ' ' << q;
        out << '\n';
    }
    return out.str();
}

CompareReport compare_runs(const RunFile& a, const RunFile& b, const Qrels& qrels,
                           const EvalCutoffs& cutoffs) {
    std::vector<std::string> only_a, only_b;
    for (const auto& [qid, entries] : a.results)
        if (!b.results.count(qid)) only_a.push_back(qid);
    for (const auto& [qid, entries] : b.results)
        if (!a.results.count(qid)) only_b.push_back(qid);
    if (!only_a.empty() || !only_b.empty()) {
        std::string msg = "compare_runs: query sets differ;";
        for (const auto& q : only_a) msg += " +a:" + q;
        for (const auto& q : only_b) msg += " +b:" + q;
        fail("%s", msg.c_str());
    }

    EvalReport ra = evaluate_run(a, qrels, cutoffs);
    EvalReport rb = evaluate_run(b, qrels, cutoffs);

    CompareReport report;
    report.tag_a = a.tag;
    report.tag_b = b.tag;
    auto add = [&](const std::string& name, const PerQueryMetric& ma, const PerQueryMetric& mb) {
        CompareMetric m;
        m.name = name;
        m.mean_a = ma.mean;
        m.mean_b = mb.mean;
        m.delta = ma.mean - mb.mean;
        m.a_pct_of_b = mb.mean != 0.0 ? 100.0 * ma.mean / mb.mean : 0.0;
        std::vector<double> va, vb;
        for (const auto& [qid, v] : ma.per_query) {
            auto it = mb.per_query.find(qid);
            if (it == mb.per_query.end()) continue;
            va.push_back(v);
            vb.push_back(it->second);
        }
        if (va.size() >= 2) m.ttest = paired_t_test(va, vb);
        report.metrics.push_back(std::move(m));
        return;
    };
    add(strfmt("ndcg@%zu", cutoffs.ndcg_k), ra.ndcg, rb.ndcg);
    add(strfmt("recall@%zu", cutoffs.recall_k), ra.recall, rb.recall);
    add(strfmt("judged@%zu", cutoffs.judged_k), ra.judged, rb.judged);
    return report;
}

std::string compare_report_text(const CompareReport& report) {
    std::ostringstream out;
    out << "metric\tmean[" << report.tag_a << "]\tmean[" << report.tag_b
        << "]\tdelta\ta_pct_of_b\tt\tp\n";
    for (const auto& m : report.metrics)
        out << m.name << '\t' << strfmt("%.4f", m.mean_a) << '\t' << strfmt("%.4f", m.mean_b)
            << '\t' << strfmt("%+.4f", m.delta) << '\t' << strfmt("%.1f%%", m.a_pct_of_b) << '\t'
            << strfmt("%.4f", m.ttest.t) << '\t' << strfmt("%.4f", m.ttest.p) << '\n';
    return out.str();
}

} // namespace clirkit
