#include "clirkit/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace clirkit {

void BilingualLexicon::add(const std::string& source, std::vector<LexiconEntry> targets, double tol) {
    if (source.empty()) fail("lexicon: empty source term");
    if (targets.empty()) fail("lexicon: source '%s' has no targets", source.c_str());
    if (entries_.count(source)) fail("lexicon: duplicate source '%s'", source.c_str());

    double sum = 0.0;
    std::set<std::string> seen;
    for (const auto& e : targets) {
        if (e.target.empty()) fail("lexicon: source '%s' has an empty target", source.c_str());
        if (!seen.insert(e.target).second)
            fail("lexicon: duplicate target '%s' under source '%s'", e.target.c_str(), source.c_str());
        if (!std::isfinite(e.prob) || e.prob <= 0.0 || e.prob > 1.0 + tol)
            fail("lexicon: probability %g out of (0,1] for %s -> %s", e.prob, source.c_str(),
                 e.target.c_str());
        sum += e.prob;
    }
    if (std::fabs(sum - 1.0) > tol)
        fail("lexicon: probabilities for source '%s' sum to %.9f, expected 1", source.c_str(), sum);
    for (auto& e : targets) e.prob /= sum;

    std::sort(targets.begin(), targets.end(), [](const LexiconEntry& a, const LexiconEntry& b) {
        if (a.prob != b.prob) return a.prob > b.prob;
        return a.target < b.target;
    });
    entries_.emplace(source, std::move(targets));
}

const std::vector<LexiconEntry>* BilingualLexicon::lookup(const std::string& source) const {
    auto it = entries_.find(source);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> BilingualLexicon::all_targets() const {
    std::set<std::string> targets;
    for (const auto& [src, entries] : entries_)
        for (const auto& e : entries) targets.insert(e.target);
    return {targets.begin(), targets.end()};
}

BilingualLexicon BilingualLexicon::inverted() const {
    std::map<std::string, std::vector<LexiconEntry>> cols;
    for (const auto& [src, entries] : entries_)
        for (const auto& e : entries) cols[e.target].push_back({src, e.prob});
    BilingualLexicon inv;
    for (auto& [tgt, entries] : cols) {
        double sum = 0.0;
        for (const auto& e : entries) sum += e.prob;
        for (auto& e : entries) e.prob /= sum;
        // Renormalized columns can carry rounding; add() re-validates with a
        // loose tolerance then normalizes exactly.
        inv.add(tgt, std::move(entries), 1e-9);
    }
    return inv;
}

BilingualLexicon BilingualLexicon::identity(const std::vector<std::string>& vocab) {
    BilingualLexicon lex;
    for (const auto& term : vocab) lex.add(term, {{term, 1.0}});
    return lex;
}

void WeightedBag::add(const std::string& term, double weight) {
    if (!std::isfinite(weight) || weight <= 0.0)
        fail("WeightedBag: weight %g for term '%s' must be positive and finite", weight, term.c_str());
    weights_[term] += weight;
}

double WeightedBag::total() const {
    double t = 0.0;
    for (const auto& [term, w] : weights_) t += w;
    return t;
}

std::vector<std::string> translate_tokens(const std::vector<std::string>& tokens,
                                          const BilingualLexicon& lex,
                                          const MTNoise& noise,
                                          std::uint64_t seed) {
    if (noise.p_drop < 0.0 || noise.p_drop > 1.0 || noise.p_confuse < 0.0 || noise.p_confuse > 1.0)
        fail("translate_tokens: noise probabilities must lie in [0,1]");

    std::vector<std::string> confusables;
    if (noise.p_confuse > 0.0) confusables = lex.all_targets();

    Rng rng(seed);
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) {
        if (rng.uniform() < noise.p_drop) continue;
        if (noise.p_confuse > 0.0 && rng.uniform() < noise.p_confuse && !confusables.empty()) {
            out.push_back(confusables[rng.below(confusables.size())]);
            continue;
        }
        const auto* entries = lex.lookup(tok);
        // Entries are (prob desc, target asc): front() is the argmax with
        // lexicographic tie-break. OOV passes through.
        out.push_back(entries ? entries->front().target : tok);
    }
    return out;
}

WeightedBag psq_expand_document(const std::vector<std::string>& tokens,
                                const BilingualLexicon& lex,
                                double min_prob,
                                std::size_t max_alternatives) {
    if (min_prob < 0.0 || min_prob >= 1.0) fail("psq_expand_document: min_prob must lie in [0,1)");
    if (max_alternatives < 1) fail("psq_expand_document: max_alternatives must be >= 1");

    std::map<std::string, double> tf;
    for (const auto& tok : tokens) tf[tok] += 1.0;

    WeightedBag bag;
    for (const auto& [term, count] : tf) {
        const auto* entries = lex.lookup(term);
        if (!entries) {
            bag.add(term, count);
            continue;
        }
        std::size_t kept = 0;
        for (const auto& e : *entries) {
            if (kept == max_alternatives) break;
            if (e.prob < min_prob) break; // sorted desc: nothing later qualifies
            bag.add(e.target, count * e.prob);
            ++kept;
        }
    }
    return bag;
}

BilingualLexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open lexicon file: %s", path.c_str());

    // Collect rows per source first; add() validates whole distributions.
    std::map<std::string, std::vector<LexiconEntry>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            fail("%s:%zu: expected source<TAB>target<TAB>probability", path.c_str(), lineno);
        std::string source = line.substr(0, t1);
        std::string target = line.substr(t1 + 1, t2 - t1 - 1);
        std::string prob_str = line.substr(t2 + 1);
        if (source.empty() || target.empty())
            fail("%s:%zu: empty source or target", path.c_str(), lineno);
        char* end = nullptr;
        double prob = std::strtod(prob_str.c_str(), &end);
        if (end == prob_str.c_str() || *end != '\0' || !std::isfinite(prob))
            fail("%s:%zu: bad probability '%s'", path.c_str(), lineno, prob_str.c_str());
        for (const auto& e : rows[source])
            if (e.target == target)
                fail("%s:%zu: duplicate pair %s -> %s", path.c_str(), lineno, source.c_str(),
                     target.c_str());
        rows[source].push_back({target, prob});
    }
    BilingualLexicon lex;
    for (auto& [source, entries] : rows) lex.add(source, std::move(entries), 1e-6);
    if (lex.empty()) fail("lexicon file is empty: %s", path.c_str());
    return lex;
}

void save_lexicon(const std::string& path, const BilingualLexicon& lex) {
    std::ostringstream out;
    for (const auto& [source, entries] : lex.entries())
        for (const auto& e : entries)
            out << source << '\t' << e.target << '\t' << format_double(e.prob) << '\n';
    write_file(path, out.str());
}

} // namespace clirkit
