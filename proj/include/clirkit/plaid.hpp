#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clirkit/corpus.hpp"
#include "clirkit/encoder.hpp"

namespace clirkit {

struct KmeansResult {
    std::vector<double> centroids;       // K x dim
    std::vector<double> inertia_history; // one entry per Lloyd iteration
};

// k-means++ seeding, Lloyd iterations with empty-cluster repair (empty
// clusters take the point farthest from its assigned centroid). Assignment
// ties go to the lowest centroid id. Deterministic given seed.
KmeansResult kmeans(const std::vector<double>& vectors, std::size_t n, std::size_t dim,
                    std::size_t k, std::size_t iterations, std::uint64_t seed,
                    std::size_t jobs = 1);

// Centroid-clustered token index with sign-anchored residual codes.
// nbits=1: code bit per dimension is 1 iff residual >= 0 and bucket values
// are the per-dimension sign-bucket means over the whole collection. Higher
// nbits subdivide each sign bucket by equal-count quantiles.
struct PlaidIndex {
    std::size_t clusters = 0; // K
    std::size_t dim = 0;      // d'
    std::size_t nbits = 1;

    std::vector<double> centroids;     // K x dim
    std::vector<std::string> passage_ids; // sorted
    std::vector<std::uint32_t> token_passage;  // token -> passage index
    std::vector<std::uint32_t> token_centroid; // token -> centroid id
    std::vector<std::uint8_t> codes;           // token-major packed codes
    std::vector<double> bucket_values;         // dim x 2^nbits
    std::vector<double> vectors;               // full-precision token rows
    std::vector<std::pair<std::uint32_t, std::uint32_t>> passage_token_range;
    std::vector<std::vector<std::uint32_t>> inverted; // centroid -> token positions

    std::size_t token_count() const { return token_centroid.size(); }
    std::size_t code_bytes_per_token() const { return (dim * nbits + 7) / 8; }
    std::size_t code_at(std::size_t token, std::size_t d) const;

    // normalize(centroid + code-selected bucket values); unit norm.
    void decode_token(std::size_t token, double* out) const;
};

PlaidIndex build_index(const EncoderParams& params, const std::vector<Passage>& passages,
                       std::size_t k_clusters, std::uint64_t seed, std::size_t nbits = 1,
                       std::size_t kmeans_iterations = 10, std::size_t jobs = 1);

// Stage 1: probe the nprobe nearest centroids per query row and collect
// passages owning any token there. Stage 2: exact MaxSim on reconstructed
// vectors. Stage 3: rescore the top 4k with full-precision vectors.
std::vector<std::pair<std::string, double>> ann_search(const PlaidIndex& index,
                                                       const EncoderParams& params,
                                                       const std::vector<std::string>& query_tokens,
                                                       std::size_t k, std::size_t nprobe);

struct EncodedPassages {
    std::vector<std::string> ids; // sorted
    std::vector<MultiVector> vectors;
};

EncodedPassages encode_passages(const EncoderParams& params, const std::vector<Passage>& passages,
                                std::size_t jobs = 1);

// Brute-force MaxSim over every passage; the oracle for ANN fidelity.
std::vector<std::pair<std::string, double>> exact_search(const EncoderParams& params,
                                                         const EncodedPassages& passages,
                                                         const std::vector<std::string>& query_tokens,
                                                         std::size_t k);
std::vector<std::pair<std::string, double>> exact_search(const EncoderParams& params,
                                                         const std::vector<Passage>& passages,
                                                         const std::vector<std::string>& query_tokens,
                                                         std::size_t k);

// Directory layout: text manifest with counts and per-file checksums plus
// flat little-endian arrays. Loading validates the checksums.
void save_index(const std::string& dir, const PlaidIndex& index);
PlaidIndex load_index(const std::string& dir);

} // namespace clirkit
