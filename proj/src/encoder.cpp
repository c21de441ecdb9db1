#include "clirkit/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "clirkit/lexicon.hpp"

namespace clirkit {

std::size_t EncoderParams::row_for(const std::string& term) const {
    auto it = row_of_.find(term);
    return it == row_of_.end() ? oov_row() : it->second;
}

void EncoderParams::rebuild_lookup() {
    row_of_.clear();
    row_of_.reserve(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) row_of_[vocab[i]] = i;
}

std::size_t EncoderParams::parameter_count() const {
    return embeddings.size() + projection.size() + query_marker.size() + passage_marker.size();
}

EncoderParams init_encoder(std::vector<std::string> vocab, std::size_t dim, std::size_t out_dim,
                           std::uint64_t seed) {
    if (dim == 0 || out_dim == 0) fail("init_encoder: dims must be positive");
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

    EncoderParams p;
    p.dim = dim;
    p.out_dim = out_dim;
    p.vocab = std::move(vocab);
    Rng rng(seed);
    p.embeddings.resize((p.vocab.size() + 1) * dim);
    for (auto& v : p.embeddings) v = rng.normal();
    double proj_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    p.projection.resize(dim * out_dim);
    for (auto& v : p.projection) v = rng.normal() * proj_scale;
    // Markers start small so token identity dominates the row geometry.
    p.query_marker.resize(dim);
    for (auto& v : p.query_marker) v = rng.normal() * 0.25;
    p.passage_marker.resize(dim);
    for (auto& v : p.passage_marker) v = rng.normal() * 0.25;
    p.rebuild_lookup();
    return p;
}

EncoderParams init_encoder_multilingual(std::vector<std::string> vocab, std::size_t dim,
                                        std::size_t out_dim, std::uint64_t seed,
                                        const BilingualLexicon& lexicon, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) fail("init_encoder_multilingual: alpha must lie in [0,1)");
    EncoderParams p = init_encoder(std::move(vocab), dim, out_dim, seed);
    if (alpha == 0.0) return p;

    // Two-phase: read all blends from the purely random rows, then overwrite,
    // so terms appearing on both sides of the lexicon stay well-defined.
    const std::vector<double> base = p.embeddings;
    Rng rng(derive_seed(seed, {fnv1a64("warm")}));
    double keep = std::sqrt(1.0 - alpha * alpha);
    BilingualLexicon inverted = lexicon.inverted();
    for (const auto& [target, sources] : inverted.entries()) {
        std::size_t row = p.row_for(target);
        if (row == p.oov_row()) continue;
        std::vector<double> mix(dim, 0.0);
        double used = 0.0;
        for (const auto& e : sources) {
            std::size_t src_row = p.row_for(e.target);
            if (src_row == p.oov_row()) continue;
            const double* src = base.data() + src_row * dim;
            for (std::size_t a = 0; a < dim; ++a) mix[a] += e.prob * src[a];
            used += e.prob;
        }
        if (used <= 0.0) continue;
        // Rescale the mix to unit expected component norm before blending.
        double norm = 0.0;
        for (double v : mix) norm += v * v;
        norm = std::sqrt(norm / static_cast<double>(dim));
        if (norm < 1e-12) continue;
        double* dst = p.embeddings.data() + row * dim;
        for (std::size_t a = 0; a < dim; ++a)
            dst[a] = alpha * mix[a] / norm + keep * rng.normal();
    }
    return p;
}

namespace {

EncodeTrace encode_traced(const EncoderParams& params, const std::vector<std::string>& tokens,
                          Role role) {
    if (tokens.empty()) fail("encode: empty token list");
    std::size_t n = tokens.size(), d = params.dim, dp = params.out_dim;
    const std::vector<double>& marker =
        role == Role::query ? params.query_marker : params.passage_marker;

    EncodeTrace trace;
    trace.rows.resize(n);
    trace.pre.resize(n * d);
    trace.norms.resize(n);
    trace.out.rows = n;
    trace.out.dim = dp;
    trace.out.data.resize(n * dp);

    for (std::size_t i = 0; i < n; ++i) {
        std::size_t row = params.row_for(tokens[i]);
        trace.rows[i] = row;
        const double* emb = params.embeddings.data() + row * d;
        double* x = trace.pre.data() + i * d;
        for (std::size_t a = 0; a < d; ++a) x[a] = emb[a] + marker[a];

        double* y = trace.out.row(i);
        for (std::size_t b = 0; b < dp; ++b) {
            double acc = 0.0;
            for (std::size_t a = 0; a < d; ++a) acc += x[a] * params.projection[a * dp + b];
            y[b] = acc;
        }
        double norm2 = 0.0;
        for (std::size_t b = 0; b < dp; ++b) norm2 += y[b] * y[b];
        double norm = std::sqrt(norm2);
        if (!std::isfinite(norm) || norm < 1e-12)
            fail("encode: degenerate row norm %g for token '%s'", norm, tokens[i].c_str());
        for (std::size_t b = 0; b < dp; ++b) y[b] /= norm;
        trace.norms[i] = norm;
    }
    return trace;
}

} // namespace

MultiVector encode(const EncoderParams& params, const std::vector<std::string>& tokens, Role role) {
    return encode_traced(params, tokens, role).out;
}

double maxsim_score(const MultiVector& q, const MultiVector& p) {
    if (q.dim != p.dim) fail("maxsim_score: dimension mismatch %zu vs %zu", q.dim, p.dim);
    double score = 0.0;
    for (std::size_t i = 0; i < q.rows; ++i) {
        const double* qi = q.row(i);
        double best = -HUGE_VAL;
        for (std::size_t j = 0; j < p.rows; ++j) {
            const double* pj = p.row(j);
            double dot = 0.0;
            for (std::size_t b = 0; b < q.dim; ++b) dot += qi[b] * pj[b];
            if (dot > best) best = dot;
        }
        score += best;
    }
    return score;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& params) {
    EncoderGrads g;
    g.embeddings.assign(params.embeddings.size(), 0.0);
    g.projection.assign(params.projection.size(), 0.0);
    g.query_marker.assign(params.query_marker.size(), 0.0);
    g.passage_marker.assign(params.passage_marker.size(), 0.0);
    return g;
}

void EncoderGrads::accumulate(const EncoderGrads& other, double scale) {
    auto axpy = [scale](std::vector<double>& dst, const std::vector<double>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    };
    axpy(embeddings, other.embeddings);
    axpy(projection, other.projection);
    axpy(query_marker, other.query_marker);
    axpy(passage_marker, other.passage_marker);
}

double EncoderGrads::max_abs() const {
    double m = 0.0;
    for (const auto* block : {&embeddings, &projection, &query_marker, &passage_marker})
        for (double v : *block) m = std::max(m, std::fabs(v));
    return m;
}

LogitsTrace compute_logits(const EncoderParams& params, const std::vector<std::string>& query_tokens,
                           const std::vector<std::vector<std::string>>& passage_token_lists) {
    LogitsTrace trace;
    trace.query = encode_traced(params, query_tokens, Role::query);
    trace.passages.reserve(passage_token_lists.size());
    trace.argmax.resize(passage_token_lists.size());
    trace.logits.resize(passage_token_lists.size());

    std::size_t nq = trace.query.out.rows, dp = params.out_dim;
    for (std::size_t c = 0; c < passage_token_lists.size(); ++c) {
        trace.passages.push_back(encode_traced(params, passage_token_lists[c], Role::passage));
        const MultiVector& pv = trace.passages.back().out;
        auto& winners = trace.argmax[c];
        winners.resize(nq);
        double logit = 0.0;
        for (std::size_t i = 0; i < nq; ++i) {
            const double* qi = trace.query.out.row(i);
            double best = -HUGE_VAL;
            std::uint32_t best_j = 0;
            for (std::size_t j = 0; j < pv.rows; ++j) {
                const double* pj = pv.row(j);
                double dot = 0.0;
                for (std::size_t b = 0; b < dp; ++b) dot += qi[b] * pj[b];
                if (dot > best) { // strict: ties keep the lowest row index
                    best = dot;
                    best_j = static_cast<std::uint32_t>(j);
                }
            }
            winners[i] = best_j;
            logit += best;
        }
        if (!std::isfinite(logit)) fail("score_and_grad: non-finite logit at maxsim stage");
        trace.logits[c] = logit;
    }
    return trace;
}

namespace {

// Pushes a gradient on one encoded output row back to embeddings, marker,
// and projection. grad_u is dL/d(unit row i).
void backprop_row(const EncoderParams& params, const EncodeTrace& trace, std::size_t i,
                  const double* grad_u, Role role, EncoderGrads& grads) {
    std::size_t d = params.dim, dp = params.out_dim;
    const double* u = trace.out.row(i);
    double norm = trace.norms[i];

    // Through normalization: grad_y = (grad_u - (grad_u . u) u) / ||y||.
    double proj_coeff = 0.0;
    for (std::size_t b = 0; b < dp; ++b) proj_coeff += grad_u[b] * u[b];
    double grad_y[64];
    for (std::size_t b = 0; b < dp; ++b) grad_y[b] = (grad_u[b] - proj_coeff * u[b]) / norm;

    // Through projection: grad_x = grad_y . P^T, grad_P += x^T grad_y.
    const double* x = trace.pre.data() + i * d;
    std::vector<double>& marker_grad =
        role == Role::query ? grads.query_marker : grads.passage_marker;
    double* emb_grad = grads.embeddings.data() + trace.rows[i] * d;
    for (std::size_t a = 0; a < d; ++a) {
        const double* proj_row = params.projection.data() + a * dp;
        double* proj_grad_row = grads.projection.data() + a * dp;
        double gx = 0.0;
        for (std::size_t b = 0; b < dp; ++b) {
            gx += grad_y[b] * proj_row[b];
            proj_grad_row[b] += x[a] * grad_y[b];
        }
        emb_grad[a] += gx;
        marker_grad[a] += gx;
    }
}

} // namespace

EncoderGrads backprop_logits(const EncoderParams& params, const LogitsTrace& trace,
                             const std::vector<double>& dloss_dlogits) {
    if (dloss_dlogits.size() != trace.logits.size())
        fail("backprop_logits: gradient size mismatch");
    std::size_t dp = params.out_dim;
    if (dp > 64) fail("backprop_logits: out_dim > 64 unsupported");
    std::size_t nq = trace.query.out.rows;

    EncoderGrads grads = EncoderGrads::zeros_like(params);

    // Query rows receive sum over candidates of g_c * winning passage row;
    // each winning passage row receives g_c * query row.
    std::vector<double> grad_q(nq * dp, 0.0);
    for (std::size_t c = 0; c < trace.passages.size(); ++c) {
        double g = dloss_dlogits[c];
        if (g == 0.0) continue;
        const EncodeTrace& ptrace = trace.passages[c];
        std::vector<double> grad_p(ptrace.out.rows * dp, 0.0);
        for (std::size_t i = 0; i < nq; ++i) {
            std::uint32_t j = trace.argmax[c][i];
            const double* vj = ptrace.out.row(j);
            const double* qi = trace.query.out.row(i);
            double* gq = grad_q.data() + i * dp;
            double* gp = grad_p.data() + j * dp;
            for (std::size_t b = 0; b < dp; ++b) {
                gq[b] += g * vj[b];
                gp[b] += g * qi[b];
            }
        }
        for (std::size_t j = 0; j < ptrace.out.rows; ++j)
            backprop_row(params, ptrace, j, grad_p.data() + j * dp, Role::passage, grads);
    }
    for (std::size_t i = 0; i < nq; ++i)
        backprop_row(params, trace.query, i, grad_q.data() + i * dp, Role::query, grads);
    return grads;
}

std::vector<double> softmax(const std::vector<double>& logits, double temperature) {
    if (logits.empty()) fail("softmax: empty input");
    if (temperature <= 0.0) fail("softmax: temperature must be positive");
    double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((logits[i] - max_logit) / temperature);
        sum += probs[i];
    }
    for (auto& p : probs) p /= sum;
    return probs;
}

ScoreGradResult score_and_grad(const EncoderParams& params,
                               const std::vector<std::string>& query_tokens,
                               const std::vector<std::vector<std::string>>& passage_token_lists,
                               const std::vector<double>& teacher_scores,
                               const LossConfig& config) {
    if (passage_token_lists.size() < 2) fail("score_and_grad: need at least 2 candidate passages");
    if (teacher_scores.size() != passage_token_lists.size())
        fail("score_and_grad: teacher score missing for some candidates");
    for (double s : teacher_scores)
        if (!std::isfinite(s)) fail("score_and_grad: non-finite teacher score");

    ScoreGradResult result;
    LogitsTrace trace = compute_logits(params, query_tokens, passage_token_lists);
    result.logits = trace.logits;
    result.student_probs = softmax(trace.logits, config.tau_student);
    result.teacher_probs = softmax(teacher_scores, config.tau_teacher);

    std::size_t n = trace.logits.size();
    std::vector<double> dlogits(n);
    double loss = 0.0;
    if (!config.reverse_kl) {
        // L = sum_c p_c ln(p_c / t_c); dL/ds_c = p_c (ln(p_c/t_c) - L) / tau_s.
        for (std::size_t c = 0; c < n; ++c)
            loss += result.student_probs[c] *
                    std::log(result.student_probs[c] / result.teacher_probs[c]);
        for (std::size_t c = 0; c < n; ++c)
            dlogits[c] = result.student_probs[c] *
                         (std::log(result.student_probs[c] / result.teacher_probs[c]) - loss) /
                         config.tau_student;
    } else {
        // L = sum_c t_c ln(t_c / p_c); dL/ds_c = (p_c - t_c) / tau_s.
        for (std::size_t c = 0; c < n; ++c)
            loss += result.teacher_probs[c] *
                    std::log(result.teacher_probs[c] / result.student_probs[c]);
        for (std::size_t c = 0; c < n; ++c)
            dlogits[c] = (result.student_probs[c] - result.teacher_probs[c]) / config.tau_student;
    }
    if (!std::isfinite(loss)) fail("score_and_grad: non-finite loss at kl stage");
    result.loss = loss;
    result.grads = backprop_logits(params, trace, dlogits);
    return result;
}

namespace {

constexpr char kMagic[] = "CLIRKITENC1\n";

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) fail("checkpoint truncated: %s", path.c_str());
    return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::vector<double>& v, std::size_t n, const std::string& path) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) fail("checkpoint truncated: %s", path.c_str());
}

} // namespace

void save_encoder(const std::string& path, const EncoderParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open checkpoint for writing: %s", path.c_str());
    out.write(kMagic, sizeof(kMagic) - 1);
    write_u64(out, params.dim);
    write_u64(out, params.out_dim);
    write_u64(out, params.vocab.size());
    for (const auto& term : params.vocab) {
        write_u64(out, term.size());
        out.write(term.data(), static_cast<std::streamsize>(term.size()));
    }
    write_doubles(out, params.embeddings);
    write_doubles(out, params.projection);
    write_doubles(out, params.query_marker);
    write_doubles(out, params.passage_marker);
    if (!out) fail("checkpoint write failed: %s", path.c_str());
}

EncoderParams load_encoder(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open checkpoint: %s", path.c_str());
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        fail("not an encoder checkpoint: %s", path.c_str());
    EncoderParams p;
    p.dim = read_u64(in, path);
    p.out_dim = read_u64(in, path);
    std::size_t vocab_size = read_u64(in, path);
    if (p.dim == 0 || p.out_dim == 0 || vocab_size > (1ULL << 32))
        fail("corrupt checkpoint header: %s", path.c_str());
    p.vocab.resize(vocab_size);
    for (auto& term : p.vocab) {
        std::size_t len = read_u64(in, path);
        if (len > (1ULL << 20)) fail("corrupt checkpoint term: %s", path.c_str());
        term.resize(len);
        in.read(term.data(), static_cast<std::streamsize>(len));
        if (!in) fail("checkpoint truncated: %s", path.c_str());
    }
    read_doubles(in, p.embeddings, (vocab_size + 1) * p.dim, path);
    read_doubles(in, p.projection, p.dim * p.out_dim, path);
    read_doubles(in, p.query_marker, p.dim, path);
    read_doubles(in, p.passage_marker, p.dim, path);
    in.peek();
    if (!in.eof()) fail("trailing bytes in checkpoint: %s", path.c_str());
    p.rebuild_lookup();
    return p;
}

} // namespace clirkit
