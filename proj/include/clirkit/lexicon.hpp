#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clirkit/util.hpp"

namespace clirkit {

struct LexiconEntry {
    std::string target;
    double prob = 0.0;
};

// Per-source-term probability distribution over target terms.
// Entries for each source are kept sorted by (prob desc, target asc), so the
// first entry is the argmax translation and prefixes are top-k cuts.
class BilingualLexicon {
public:
    // Validates: non-empty targets, no duplicate target, probs in (0,1],
    // sum within tol of 1. Renormalizes to exactly sum 1.
    void add(const std::string& source, std::vector<LexiconEntry> targets, double tol = 1e-6);

    const std::vector<LexiconEntry>* lookup(const std::string& source) const;
    bool contains(const std::string& source) const { return lookup(source) != nullptr; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const std::map<std::string, std::vector<LexiconEntry>>& entries() const { return entries_; }

    // Sorted, deduplicated union of all target terms.
    std::vector<std::string> all_targets() const;

    // Transposed table: each target becomes a source whose distribution is
    // the renormalized column of incoming probabilities.
    BilingualLexicon inverted() const;

    // term -> [(term, 1.0)] for every term in vocab.
    static BilingualLexicon identity(const std::vector<std::string>& vocab);

private:
    std::map<std::string, std::vector<LexiconEntry>> entries_;
};

// Bag of terms with strictly positive finite weights.
class WeightedBag {
public:
    void add(const std::string& term, double weight);
    const std::map<std::string, double>& weights() const { return weights_; }
    double total() const;
    bool empty() const { return weights_.empty(); }

private:
    std::map<std::string, double> weights_;
};

struct MTNoise {
    double p_drop = 0.0;
    double p_confuse = 0.0;
};

// One-best synthetic machine translation. Per token, independently:
// dropped with p_drop, else confused (uniform random lexicon target) with
// p_confuse, else mapped to the argmax target; OOV tokens pass through.
// Output order follows input order. Deterministic given seed.
std::vector<std::string> translate_tokens(const std::vector<std::string>& tokens,
                                          const BilingualLexicon& lex,
                                          const MTNoise& noise,
                                          std::uint64_t seed);

// Probabilistic document expansion: weight(e) += tf(t) * P(e|t) over the top
// max_alternatives targets with P(e|t) >= min_prob; OOV terms keep their own
// term frequency.
WeightedBag psq_expand_document(const std::vector<std::string>& tokens,
                                const BilingualLexicon& lex,
                                double min_prob = 0.01,
                                std::size_t max_alternatives = 5);

// TSV: source<TAB>target<TAB>probability. Loader validates per-source
// normalization within 1e-6 and renormalizes.
BilingualLexicon load_lexicon(const std::string& path);
void save_lexicon(const std::string& path, const BilingualLexicon& lex);

} // namespace clirkit
