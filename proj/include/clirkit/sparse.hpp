#pragma once

#include <map>
#include <string>
#include <vector>

#include "clirkit/lexicon.hpp"

namespace clirkit {

struct Posting {
    std::string passage_id;
    double weight = 0.0; // fractional term frequency (PSQ bags plug in directly)
};

struct SparseIndex {
    std::map<std::string, std::vector<Posting>> postings; // each list sorted by passage_id
    std::map<std::string, double> doc_lengths;            // passage_id -> total bag weight
    double avg_doc_length = 0.0;
    std::size_t passage_count = 0;
};

SparseIndex build_sparse_index(const std::map<std::string, WeightedBag>& bags);

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

// score(p) = sum over query tokens of idf(t) * w(t,p)*(k1+1) /
//            (w(t,p) + k1*(1-b+b*len(p)/avglen)),
// idf(t) = ln(1 + (N-df+0.5)/(df+0.5)). Top-k by score descending, ties by
// passage_id ascending; zero-score passages excluded.
std::vector<std::pair<std::string, double>> bm25_search(const SparseIndex& index,
                                                        const std::vector<std::string>& query_tokens,
                                                        std::size_t k,
                                                        const Bm25Params& params = {});

} // namespace clirkit
