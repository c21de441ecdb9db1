#include "clirkit/plaid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace clirkit {

namespace {

double dist2(const double* a, const double* b, std::size_t dim) {
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

std::uint32_t nearest_centroid(const double* v, const std::vector<double>& centroids,
                               std::size_t k, std::size_t dim, double* best_out = nullptr) {
    double best = HUGE_VAL;
    std::uint32_t best_id = 0;
    for (std::size_t c = 0; c < k; ++c) {
        double d = dist2(v, centroids.data() + c * dim, dim);
        if (d < best) { // strict: ties keep the lowest centroid id
            best = d;
            best_id = static_cast<std::uint32_t>(c);
        }
    }
    if (best_out) *best_out = best;
    return best_id;
}

} // namespace

KmeansResult kmeans(const std::vector<double>& vectors, std::size_t n, std::size_t dim,
                    std::size_t k, std::size_t iterations, std::uint64_t seed, std::size_t jobs) {
    if (n == 0) fail("kmeans: no input vectors");
    if (vectors.size() != n * dim) fail("kmeans: vector buffer size mismatch");
    if (k < 1 || k > n) fail("kmeans: K must lie in [1, n]");
    if (iterations < 1) fail("kmeans: iterations must be >= 1");

    Rng rng(seed);
    KmeansResult result;
    result.centroids.resize(k * dim);

    // k-means++ seeding.
    std::size_t first = rng.below(n);
    std::copy_n(vectors.data() + first * dim, dim, result.centroids.data());
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i)
        d2[i] = dist2(vectors.data() + i * dim, result.centroids.data(), dim);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick;
        if (total <= 0.0) {
            pick = rng.below(n); // all points coincide with chosen centroids
        } else {
            double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        }
        double* dst = result.centroids.data() + c * dim;
        std::copy_n(vectors.data() + pick * dim, dim, dst);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], dist2(vectors.data() + i * dim, dst, dim));
    }

    std::vector<std::uint32_t> assign(n);
    std::vector<double> point_d2(n);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < iterations; ++it) {
        parallel_for(n, jobs, [&](std::size_t i) {
            assign[i] = nearest_centroid(vectors.data() + i * dim, result.centroids, k, dim,
                                         &point_d2[i]);
        });
        double inertia = 0.0;
        for (double d : point_d2) inertia += d;
        result.inertia_history.push_back(inertia);

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* v = vectors.data() + i * dim;
            double* s = sums.data() + assign[i] * dim;
            for (std::size_t a = 0; a < dim; ++a) s[a] += v[a];
            ++counts[assign[i]];
        }
        std::vector<char> claimed(n, 0);
        for (std::size_t c = 0; c < k; ++c) {
            double* dst = result.centroids.data() + c * dim;
            if (counts[c] > 0) {
                for (std::size_t a = 0; a < dim; ++a) dst[a] = sums[c * dim + a] / counts[c];
            } else {
                // Empty cluster: take the unclaimed point farthest from its
                // assigned centroid. Replacing an unused centroid cannot
                // increase inertia, so the history stays non-increasing.
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (!claimed[i] && point_d2[i] > far_d) {
                        far_d = point_d2[i];
                        far = i;
                    }
                claimed[far] = 1;
                std::copy_n(vectors.data() + far * dim, dim, dst);
            }
        }
    }
    return result;
}

std::size_t PlaidIndex::code_at(std::size_t token, std::size_t d) const {
    std::size_t bit = d * nbits;
    std::size_t byte = token * code_bytes_per_token() + bit / 8;
    std::size_t shift = bit % 8;
    // nbits is 1, 2, or 4: a field never straddles a byte boundary.
    return (codes[byte] >> shift) & ((1u << nbits) - 1u);
}

void PlaidIndex::decode_token(std::size_t token, double* out) const {
    const double* centroid = centroids.data() + token_centroid[token] * dim;
    std::size_t buckets = std::size_t{1} << nbits;
    double norm2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        out[d] = centroid[d] + bucket_values[d * buckets + code_at(token, d)];
        norm2 += out[d] * out[d];
    }
    double norm = std::sqrt(norm2);
    if (norm < 1e-12) {
        std::fill(out, out + dim, 0.0);
        out[0] = 1.0;
        return;
    }
    for (std::size_t d = 0; d < dim; ++d) out[d] /= norm;
}

PlaidIndex build_index(const EncoderParams& params, const std::vector<Passage>& passages,
                       std::size_t k_clusters, std::uint64_t seed, std::size_t nbits,
                       std::size_t kmeans_iterations, std::size_t jobs) {
    if (passages.empty()) fail("build_index: no passages");
    if (nbits != 1 && nbits != 2 && nbits != 4) fail("build_index: nbits must be 1, 2, or 4");

    EncodedPassages encoded = encode_passages(params, passages, jobs);

    PlaidIndex index;
    index.dim = params.out_dim;
    index.nbits = nbits;
    index.passage_ids = encoded.ids;

    std::size_t total_tokens = 0;
    for (const auto& mv : encoded.vectors) total_tokens += mv.rows;
    index.vectors.reserve(total_tokens * index.dim);
    index.token_passage.reserve(total_tokens);
    index.passage_token_range.reserve(encoded.ids.size());
    for (std::size_t p = 0; p < encoded.vectors.size(); ++p) {
        std::uint32_t start = static_cast<std::uint32_t>(index.token_passage.size());
        const MultiVector& mv = encoded.vectors[p];
        index.vectors.insert(index.vectors.end(), mv.data.begin(), mv.data.end());
        for (std::size_t r = 0; r < mv.rows; ++r)
            index.token_passage.push_back(static_cast<std::uint32_t>(p));
        index.passage_token_range.emplace_back(start,
                                               static_cast<std::uint32_t>(index.token_passage.size()));
    }

    if (k_clusters < 1 || k_clusters > total_tokens)
        fail("build_index: K=%zu must lie in [1, %zu]", k_clusters, total_tokens);
    index.clusters = k_clusters;
    index.centroids =
        kmeans(index.vectors, total_tokens, index.dim, k_clusters, kmeans_iterations, seed, jobs)
            .centroids;

    index.token_centroid.resize(total_tokens);
    parallel_for(total_tokens, jobs, [&](std::size_t t) {
        index.token_centroid[t] = nearest_centroid(index.vectors.data() + t * index.dim,
                                                   index.centroids, k_clusters, index.dim);
    });

    // Residual statistics: per dimension, sign-anchored equal-count buckets.
    std::size_t half = std::size_t{1} << (nbits - 1);
    std::size_t buckets = std::size_t{1} << nbits;
    index.bucket_values.assign(index.dim * buckets, 0.0);
    std::vector<double> thresholds(index.dim * (buckets - 2), 0.0); // inner cuts per side

    std::vector<double> residuals(total_tokens);
    for (std::size_t d = 0; d < index.dim; ++d) {
        std::vector<double> neg, pos;
        for (std::size_t t = 0; t < total_tokens; ++t) {
            const double* centroid = index.centroids.data() + index.token_centroid[t] * index.dim;
            double r = index.vectors[t * index.dim + d] - centroid[d];
            residuals[t] = r;
            (r < 0.0 ? neg : pos).push_back(r);
        }
        std::sort(neg.begin(), neg.end());
        std::sort(pos.begin(), pos.end());

        auto side_cuts = [&](const std::vector<double>& side, double* cuts) {
            for (std::size_t j = 1; j < half; ++j)
                cuts[j - 1] = side.empty() ? 0.0 : side[j * side.size() / half];
        };
        double* neg_cuts = thresholds.data() + d * (buckets - 2);
        double* pos_cuts = neg_cuts + (half - 1);
        if (half > 1) {
            side_cuts(neg, neg_cuts);
            side_cuts(pos, pos_cuts);
        }

        auto cell_of = [&](double r) -> std::size_t {
            std::size_t cell = 0;
            const double* cuts = r < 0.0 ? neg_cuts : pos_cuts;
            for (std::size_t j = 0; j + 1 < half; ++j)
                if (r >= cuts[j]) cell = j + 1;
            return (r < 0.0 ? 0 : half) + cell;
        };

        std::vector<double> sums(buckets, 0.0);
        std::vector<std::size_t> counts(buckets, 0);
        for (std::size_t t = 0; t < total_tokens; ++t) {
            std::size_t cell = cell_of(residuals[t]);
            sums[cell] += residuals[t];
            ++counts[cell];
        }
        for (std::size_t cbkt = 0; cbkt < buckets; ++cbkt)
            index.bucket_values[d * buckets + cbkt] = counts[cbkt] ? sums[cbkt] / counts[cbkt] : 0.0;

        // Write codes for this dimension.
        if (d == 0) index.codes.assign(total_tokens * index.code_bytes_per_token(), 0);
        for (std::size_t t = 0; t < total_tokens; ++t) {
            std::size_t cell = cell_of(residuals[t]);
            std::size_t bit = d * nbits;
            index.codes[t * index.code_bytes_per_token() + bit / 8] |=
                static_cast<std::uint8_t>(cell << (bit % 8));
        }
    }

    index.inverted.resize(k_clusters);
    for (std::size_t t = 0; t < total_tokens; ++t)
        index.inverted[index.token_centroid[t]].push_back(static_cast<std::uint32_t>(t));
    return index;
}

EncodedPassages encode_passages(const EncoderParams& params, const std::vector<Passage>& passages,
                                std::size_t jobs) {
    std::vector<std::size_t> order(passages.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return passages[a].id < passages[b].id;
    });

    EncodedPassages out;
    out.ids.resize(passages.size());
    out.vectors.resize(passages.size());
    parallel_for(passages.size(), jobs, [&](std::size_t i) {
        const Passage& p = passages[order[i]];
        out.ids[i] = p.id;
        out.vectors[i] = encode(params, p.tokens, Role::passage);
    });
    for (std::size_t i = 1; i < out.ids.size(); ++i)
        if (out.ids[i] == out.ids[i - 1]) fail("encode_passages: duplicate passage id '%s'",
                                               out.ids[i].c_str());
    return out;
}

namespace {

std::vector<std::pair<std::string, double>> top_k_ranked(
    std::vector<std::pair<std::string, double>> scored, std::size_t k) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

} // namespace

std::vector<std::pair<std::string, double>> ann_search(const PlaidIndex& index,
                                                       const EncoderParams& params,
                                                       const std::vector<std::string>& query_tokens,
                                                       std::size_t k, std::size_t nprobe) {
    if (k < 1) fail("ann_search: k must be >= 1");
    if (nprobe < 1 || nprobe > index.clusters)
        fail("ann_search: nprobe must lie in [1, %zu]", index.clusters);
    MultiVector qmv = encode(params, query_tokens, Role::query);
    if (qmv.dim != index.dim) fail("ann_search: query dimension mismatch");

    // Stage 1: probe the nprobe nearest centroids per query row.
    std::vector<char> passage_hit(index.passage_ids.size(), 0);
    std::vector<std::pair<double, std::uint32_t>> centroid_dist(index.clusters);
    for (std::size_t i = 0; i < qmv.rows; ++i) {
        const double* qi = qmv.row(i);
        for (std::size_t c = 0; c < index.clusters; ++c)
            centroid_dist[c] = {dist2(qi, index.centroids.data() + c * index.dim, index.dim),
                                static_cast<std::uint32_t>(c)};
        std::partial_sort(centroid_dist.begin(),
                          centroid_dist.begin() + static_cast<std::ptrdiff_t>(nprobe),
                          centroid_dist.end());
        for (std::size_t p = 0; p < nprobe; ++p)
            for (std::uint32_t tok : index.inverted[centroid_dist[p].second])
                passage_hit[index.token_passage[tok]] = 1;
    }

    // Stage 2: exact MaxSim on reconstructed vectors for collected passages.
    std::vector<std::pair<std::string, double>> approx;
    std::vector<double> decoded(index.dim);
    for (std::size_t p = 0; p < index.passage_ids.size(); ++p) {
        if (!passage_hit[p]) continue;
        auto [start, end] = index.passage_token_range[p];
        double score = 0.0;
        for (std::size_t i = 0; i < qmv.rows; ++i) {
            const double* qi = qmv.row(i);
            double best = -HUGE_VAL;
            for (std::uint32_t t = start; t < end; ++t) {
                index.decode_token(t, decoded.data());
                double dot = 0.0;
                for (std::size_t d = 0; d < index.dim; ++d) dot += qi[d] * decoded[d];
                if (dot > best) best = dot;
            }
            score += best;
        }
        approx.emplace_back(index.passage_ids[p], score);
    }
    approx = top_k_ranked(std::move(approx), 4 * k);

    // Stage 3: rescore the surviving prefix with full-precision vectors.
    std::vector<std::pair<std::string, double>> rescored;
    rescored.reserve(approx.size());
    for (const auto& [pid, unused] : approx) {
        std::size_t p = static_cast<std::size_t>(
            std::lower_bound(index.passage_ids.begin(), index.passage_ids.end(), pid) -
            index.passage_ids.begin());
        auto [start, end] = index.passage_token_range[p];
        double score = 0.0;
        for (std::size_t i = 0; i < qmv.rows; ++i) {
            const double* qi = qmv.row(i);
            double best = -HUGE_VAL;
            for (std::uint32_t t = start; t < end; ++t) {
                const double* v = index.vectors.data() + static_cast<std::size_t>(t) * index.dim;
                double dot = 0.0;
                for (std::size_t d = 0; d < index.dim; ++d) dot += qi[d] * v[d];
                if (dot > best) best = dot;
            }
            score += best;
        }
        rescored.emplace_back(pid, score);
    }
    return top_k_ranked(std::move(rescored), k);
}

std::vector<std::pair<std::string, double>> exact_search(const EncoderParams& params,
                                                         const EncodedPassages& passages,
                                                         const std::vector<std::string>& query_tokens,
                                                         std::size_t k) {
    if (k < 1) fail("exact_search: k must be >= 1");
    MultiVector qmv = encode(params, query_tokens, Role::query);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(passages.ids.size());
    for (std::size_t p = 0; p < passages.ids.size(); ++p)
        scored.emplace_back(passages.ids[p], maxsim_score(qmv, passages.vectors[p]));
    return top_k_ranked(std::move(scored), k);
}

std::vector<std::pair<std::string, double>> exact_search(const EncoderParams& params,
                                                         const std::vector<Passage>& passages,
                                                         const std::vector<std::string>& query_tokens,
                                                         std::size_t k) {
    return exact_search(params, encode_passages(params, passages), query_tokens, k);
}

namespace {

template <class T>
void write_array(const std::string& path, const std::vector<T>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write %s", path.c_str());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!out) fail("write failed: %s", path.c_str());
}

template <class T>
void read_array(const std::string& path, std::vector<T>& v, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read %s", path.c_str());
    v.resize(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) fail("truncated array file: %s", path.c_str());
    in.peek();
    if (!in.eof()) fail("trailing bytes in %s", path.c_str());
}

} // namespace

void save_index(const std::string& dir, const PlaidIndex& index) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::ostringstream ids;
    for (const auto& pid : index.passage_ids) ids << pid << '\n';
    write_file(dir + "/passage_ids.txt", ids.str());

    std::vector<std::uint32_t> ranges;
    ranges.reserve(index.passage_token_range.size() * 2);
    for (const auto& [start, end] : index.passage_token_range) {
        ranges.push_back(start);
        ranges.push_back(end);
    }
    write_array(dir + "/centroids.f64", index.centroids);
    write_array(dir + "/bucket_values.f64", index.bucket_values);
    write_array(dir + "/vectors.f64", index.vectors);
    write_array(dir + "/token_passage.u32", index.token_passage);
    write_array(dir + "/token_centroid.u32", index.token_centroid);
    write_array(dir + "/codes.bin", index.codes);
    write_array(dir + "/passage_ranges.u32", ranges);

    std::ostringstream manifest;
    manifest << "format plaidlite-1\n";
    manifest << "clusters " << index.clusters << '\n';
    manifest << "dim " << index.dim << '\n';
    manifest << "nbits " << index.nbits << '\n';
    manifest << "tokens " << index.token_count() << '\n';
    manifest << "passages " << index.passage_ids.size() << '\n';
    for (const char* name : {"passage_ids.txt", "centroids.f64", "bucket_values.f64", "vectors.f64",
                             "token_passage.u32", "token_centroid.u32", "codes.bin",
                             "passage_ranges.u32"})
        manifest << "checksum " << name << ' ' << strfmt("%016llx",
                     static_cast<unsigned long long>(checksum_file(dir + "/" + name))) << '\n';
    write_file(dir + "/manifest.txt", manifest.str());
}

PlaidIndex load_index(const std::string& dir) {
    std::istringstream manifest(read_file(dir + "/manifest.txt"));
    std::string key;
    PlaidIndex index;
    std::size_t tokens = 0, passages = 0;
    std::string line;
    bool format_ok = false;
    while (std::getline(manifest, line)) {
        std::istringstream ss(line);
        ss >> key;
        if (key == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt != "plaidlite-1") fail("unsupported index format '%s' in %s", fmt.c_str(), dir.c_str());
            format_ok = true;
        } else if (key == "clusters") {
            ss >> index.clusters;
        } else if (key == "dim") {
            ss >> index.dim;
        } else if (key == "nbits") {
            ss >> index.nbits;
        } else if (key == "tokens") {
            ss >> tokens;
        } else if (key == "passages") {
            ss >> passages;
        } else if (key == "checksum") {
            std::string name, hex;
            ss >> name >> hex;
            std::uint64_t expected = std::stoull(hex, nullptr, 16);
            std::uint64_t actual = checksum_file(dir + "/" + name);
            if (expected != actual)
                fail("index checksum mismatch for %s/%s (expected %s, got %016llx)", dir.c_str(),
                     name.c_str(), hex.c_str(), static_cast<unsigned long long>(actual));
        }
    }
    if (!format_ok) fail("missing format line in index manifest: %s", dir.c_str());
    if (index.clusters == 0 || index.dim == 0 || tokens == 0 || passages == 0)
        fail("incomplete index manifest: %s", dir.c_str());
    if (index.nbits != 1 && index.nbits != 2 && index.nbits != 4)
        fail("bad nbits in index manifest: %s", dir.c_str());

    std::istringstream ids(read_file(dir + "/passage_ids.txt"));
    while (std::getline(ids, line)) index.passage_ids.push_back(line);
    if (index.passage_ids.size() != passages)
        fail("passage id count mismatch in %s", dir.c_str());

    read_array(dir + "/centroids.f64", index.centroids, index.clusters * index.dim);
    read_array(dir + "/bucket_values.f64", index.bucket_values,
               index.dim * (std::size_t{1} << index.nbits));
    read_array(dir + "/vectors.f64", index.vectors, tokens * index.dim);
    read_array(dir + "/token_passage.u32", index.token_passage, tokens);
    read_array(dir + "/token_centroid.u32", index.token_centroid, tokens);
    read_array(dir + "/codes.bin", index.codes, tokens * index.code_bytes_per_token());
    std::vector<std::uint32_t> ranges;
    read_array(dir + "/passage_ranges.u32", ranges, passages * 2);
    index.passage_token_range.reserve(passages);
    for (std::size_t p = 0; p < passages; ++p)
        index.passage_token_range.emplace_back(ranges[2 * p], ranges[2 * p + 1]);

    index.inverted.resize(index.clusters);
    for (std::size_t t = 0; t < tokens; ++t) {
        if (index.token_centroid[t] >= index.clusters)
            fail("corrupt token_centroid entry in %s", dir.c_str());
        index.inverted[index.token_centroid[t]].push_back(static_cast<std::uint32_t>(t));
    }
    return index;
}

} // namespace clirkit
