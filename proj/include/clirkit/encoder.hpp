#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clirkit/util.hpp"

namespace clirkit {

enum class Role { query, passage };

// Token embedding + linear projection + per-token unit normalization over a
// shared bilingual vocabulary. The last embedding row is the OOV row.
struct EncoderParams {
    std::size_t dim = 32;     // embedding width d
    std::size_t out_dim = 16; // projected width d'
    std::vector<std::string> vocab; // sorted, unique
    std::vector<double> embeddings; // (vocab.size()+1) x dim
    std::vector<double> projection; // dim x out_dim
    std::vector<double> query_marker;   // dim
    std::vector<double> passage_marker; // dim

    std::size_t oov_row() const { return vocab.size(); }
    std::size_t row_for(const std::string& term) const;
    void rebuild_lookup();
    std::size_t parameter_count() const;

private:
    std::unordered_map<std::string, std::size_t> row_of_;
};

EncoderParams init_encoder(std::vector<std::string> vocab, std::size_t dim, std::size_t out_dim,
                           std::uint64_t seed);

class BilingualLexicon;

// Stand-in for a pretrained multilingual encoder: target-term embedding rows
// are blended toward the probability-weighted mix of their source terms'
// rows, with blend weight alpha in [0,1) and fresh noise keeping the
// expected row norm. alpha=0 matches init_encoder.
EncoderParams init_encoder_multilingual(std::vector<std::string> vocab, std::size_t dim,
                                        std::size_t out_dim, std::uint64_t seed,
                                        const BilingualLexicon& lexicon, double alpha);

// Per-token embedding matrix; every row has unit L2 norm.
struct MultiVector {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> data; // rows x dim, row-major

    const double* row(std::size_t i) const { return data.data() + i * dim; }
    double* row(std::size_t i) { return data.data() + i * dim; }
};

MultiVector encode(const EncoderParams& params, const std::vector<std::string>& tokens, Role role);

// Late interaction: sum over query rows of the max dot product against any
// passage row. Bounded by q.rows since all rows are unit-norm.
double maxsim_score(const MultiVector& q, const MultiVector& p);

struct EncoderGrads {
    std::vector<double> embeddings;
    std::vector<double> projection;
    std::vector<double> query_marker;
    std::vector<double> passage_marker;

    static EncoderGrads zeros_like(const EncoderParams& params);
    void accumulate(const EncoderGrads& other, double scale = 1.0);
    double max_abs() const;
};

struct LossConfig {
    double tau_student = 1.0;
    double tau_teacher = 1.0;
    bool reverse_kl = false; // teacher||student instead of student||teacher
};

// Forward pass with everything needed for the exact backward pass:
// pre-projection token vectors, pre-normalization norms, and the MaxSim
// argmax indices (ties resolved toward the lowest passage row).
struct EncodeTrace {
    MultiVector out;
    std::vector<std::size_t> rows;  // embedding row per token
    std::vector<double> pre;        // n x dim, embedding + role marker
    std::vector<double> norms;      // pre-normalization row norms
};

struct LogitsTrace {
    EncodeTrace query;
    std::vector<EncodeTrace> passages;
    std::vector<std::vector<std::uint32_t>> argmax; // [passage][query row] -> passage row
    std::vector<double> logits;
};

LogitsTrace compute_logits(const EncoderParams& params, const std::vector<std::string>& query_tokens,
                           const std::vector<std::vector<std::string>>& passage_token_lists);

// Exact gradients for an arbitrary upstream dL/dlogits through MaxSim
// (argmax treated constant), normalization, projection, markers, embeddings.
EncoderGrads backprop_logits(const EncoderParams& params, const LogitsTrace& trace,
                             const std::vector<double>& dloss_dlogits);

std::vector<double> softmax(const std::vector<double>& logits, double temperature);

struct ScoreGradResult {
    double loss = 0.0;
    EncoderGrads grads;
    std::vector<double> logits;
    std::vector<double> student_probs;
    std::vector<double> teacher_probs;
};

// Distillation loss over one query's sampled candidates: softmax both score
// lists, then KL between the two distributions (direction per config).
ScoreGradResult score_and_grad(const EncoderParams& params,
                               const std::vector<std::string>& query_tokens,
                               const std::vector<std::vector<std::string>>& passage_token_lists,
                               const std::vector<double>& teacher_scores,
                               const LossConfig& config = {});

// Flat little-endian binary checkpoint; round-trips bit-exactly.
void save_encoder(const std::string& path, const EncoderParams& params);
EncoderParams load_encoder(const std::string& path);

} // namespace clirkit
