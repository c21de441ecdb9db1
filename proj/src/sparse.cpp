#include "clirkit/sparse.hpp"

#include <algorithm>
#include <cmath>

namespace clirkit {

SparseIndex build_sparse_index(const std::map<std::string, WeightedBag>& bags) {
    if (bags.empty()) fail("build_sparse_index: no passages");
    SparseIndex index;
    double total_length = 0.0;
    for (const auto& [pid, bag] : bags) {
        double length = 0.0;
        for (const auto& [term, weight] : bag.weights()) {
            index.postings[term].push_back({pid, weight});
            length += weight;
        }
        index.doc_lengths[pid] = length;
        total_length += length;
    }
    index.passage_count = bags.size();
    index.avg_doc_length = total_length / static_cast<double>(bags.size());
    // std::map iteration already yields passage_id-ascending postings.
    return index;
}

std::vector<std::pair<std::string, double>> bm25_search(const SparseIndex& index,
                                                        const std::vector<std::string>& query_tokens,
                                                        std::size_t k,
                                                        const Bm25Params& params) {
    if (k < 1) fail("bm25_search: k must be >= 1");
    std::map<std::string, double> scores;
    double n = static_cast<double>(index.passage_count);
    for (const auto& term : query_tokens) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const auto& postings = it->second;
        double df = static_cast<double>(postings.size());
        double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& post : postings) {
            double len = index.doc_lengths.at(post.passage_id);
            double norm = params.k1 * (1.0 - params.b + params.b * len / index.avg_doc_length);
            scores[post.passage_id] += idf * post.weight * (params.k1 + 1.0) / (post.weight + norm);
        }
    }
    std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

} // namespace clirkit
