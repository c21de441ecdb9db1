#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "clirkit/plaid.hpp"
#include "clirkit/util.hpp"

using namespace clirkit;

TEST_SUITE_BEGIN("plaid");

namespace {

std::vector<std::string> vocab30() {
    std::vector<std::string> v;
    for (int i = 0; i < 30; ++i) v.push_back("w" + std::to_string(i));
    return v;
}

std::vector<Passage> random_passages(std::uint64_t seed, std::size_t count, std::size_t len_min = 4,
                                     std::size_t len_max = 12) {
    Rng rng(seed);
    auto vocab = vocab30();
    std::vector<Passage> passages;
    for (std::size_t i = 0; i < count; ++i) {
        Passage p;
        p.doc_id = "d" + std::to_string(i);
        p.offset = 0;
        p.id = passage_id_for(p.doc_id, 0);
        p.language = {"tgt"};
        std::size_t len = len_min + rng.below(len_max - len_min + 1);
        for (std::size_t t = 0; t < len; ++t) p.tokens.push_back(vocab[rng.below(vocab.size())]);
        passages.push_back(std::move(p));
    }
    return passages;
}

std::vector<std::string> ids_of(const std::vector<std::pair<std::string, double>>& ranked) {
    std::vector<std::string> ids;
    for (const auto& [pid, score] : ranked) ids.push_back(pid);
    return ids;
}

} // namespace

TEST_CASE("kmeans with K=1 returns the arithmetic mean") {
    std::vector<double> vectors{1.0, 2.0, 3.0, 4.0, 5.0, 6.0}; // 3 points in 2-D
    auto result = kmeans(vectors, 3, 2, 1, 4, 7);
    CHECK(result.centroids[0] == doctest::Approx(3.0));
    CHECK(result.centroids[1] == doctest::Approx(4.0));
}

TEST_CASE("kmeans on identical points gives zero inertia for any K") {
    std::vector<double> vectors;
    for (int i = 0; i < 8; ++i) {
        vectors.push_back(0.5);
        vectors.push_back(-0.25);
    }
    for (std::size_t k : {1, 3, 8}) {
        auto result = kmeans(vectors, 8, 2, k, 5, 11);
        CHECK(result.inertia_history.back() == doctest::Approx(0.0));
        for (std::size_t c = 0; c < k; ++c) {
            CHECK(result.centroids[c * 2] == doctest::Approx(0.5));
            CHECK(result.centroids[c * 2 + 1] == doctest::Approx(-0.25));
        }
    }
}

TEST_CASE("kmeans separates two well-separated blobs") {
    Rng rng(3);
    std::vector<double> vectors;
    double mean_a[2] = {0, 0}, mean_b[2] = {10, 10};
    std::size_t n_per = 40;
    double sum_a[2] = {0, 0}, sum_b[2] = {0, 0};
    for (std::size_t i = 0; i < n_per; ++i) {
        double x = rng.normal() * 0.1, y = rng.normal() * 0.1;
        vectors.push_back(mean_a[0] + x);
        vectors.push_back(mean_a[1] + y);
        sum_a[0] += mean_a[0] + x;
        sum_a[1] += mean_a[1] + y;
    }
    for (std::size_t i = 0; i < n_per; ++i) {
        double x = rng.normal() * 0.1, y = rng.normal() * 0.1;
        vectors.push_back(mean_b[0] + x);
        vectors.push_back(mean_b[1] + y);
        sum_b[0] += mean_b[0] + x;
        sum_b[1] += mean_b[1] + y;
    }
    auto result = kmeans(vectors, 2 * n_per, 2, 2, 10, 5);
    // The optimal 2-assignment puts each blob in its own cluster, so the
    // centroids are the blob means (in some order).
    double blob_a[2] = {sum_a[0] / n_per, sum_a[1] / n_per};
    double blob_b[2] = {sum_b[0] / n_per, sum_b[1] / n_per};
    const double* c0 = result.centroids.data();
    const double* c1 = result.centroids.data() + 2;
    bool direct = std::fabs(c0[0] - blob_a[0]) < 1e-6 && std::fabs(c1[0] - blob_b[0]) < 1e-6 &&
                  std::fabs(c0[1] - blob_a[1]) < 1e-6 && std::fabs(c1[1] - blob_b[1]) < 1e-6;
    bool swapped = std::fabs(c0[0] - blob_b[0]) < 1e-6 && std::fabs(c1[0] - blob_a[0]) < 1e-6 &&
                   std::fabs(c0[1] - blob_b[1]) < 1e-6 && std::fabs(c1[1] - blob_a[1]) < 1e-6;
    CHECK((direct || swapped));
}

TEST_CASE("kmeans inertia is non-increasing and seeded runs are identical") {
    Rng rng(9);
    std::vector<double> vectors(200 * 4);
    for (auto& v : vectors) v = rng.normal();
    auto a = kmeans(vectors, 200, 4, 16, 12, 21);
    auto b = kmeans(vectors, 200, 4, 16, 12, 21);
    CHECK(a.centroids == b.centroids);
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
        CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] + 1e-9);

    CHECK_THROWS_AS((void)kmeans({}, 0, 4, 1, 1, 0), Error);
    CHECK_THROWS_AS((void)kmeans(vectors, 200, 4, 201, 1, 0), Error);
    CHECK_THROWS_AS((void)kmeans(vectors, 200, 4, 16, 0, 0), Error);
}

TEST_CASE("index build: zero residuals set every sign bit and reconstruct the centroid") {
    // All passages share one token, so every token vector is identical and
    // equals the single centroid; residuals are exactly zero.
    std::vector<Passage> passages;
    for (int i = 0; i < 4; ++i) {
        Passage p;
        p.doc_id = "d" + std::to_string(i);
        p.id = passage_id_for(p.doc_id, 0);
        p.tokens = {"w0"};
        passages.push_back(p);
    }
    EncoderParams params = init_encoder(vocab30(), 8, 4, 13);
    PlaidIndex index = build_index(params, passages, 1, 3, 1);
    for (std::size_t t = 0; t < index.token_count(); ++t)
        for (std::size_t d = 0; d < index.dim; ++d) CHECK(index.code_at(t, d) == 1); // r >= 0

    std::vector<double> decoded(index.dim);
    index.decode_token(0, decoded.data());
    // Positive bucket mean is 0 (all residuals are 0), so the reconstruction
    // is the normalized centroid, which is the original unit vector.
    MultiVector mv = encode(params, {"w0"}, Role::passage);
    for (std::size_t d = 0; d < index.dim; ++d)
        CHECK(decoded[d] == doctest::Approx(mv.row(0)[d]).epsilon(1e-9));
}

TEST_CASE("reconstructions are unit norm and beat the centroid-only baseline") {
    auto passages = random_passages(31, 60);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 17);
    PlaidIndex index = build_index(params, passages, 8, 23, 1);

    double with_buckets = 0.0, centroid_only = 0.0;
    std::vector<double> rec(index.dim);
    for (std::size_t t = 0; t < index.token_count(); ++t) {
        index.decode_token(t, rec.data());
        double norm = 0.0;
        for (std::size_t d = 0; d < index.dim; ++d) norm += rec[d] * rec[d];
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

        const double* v = index.vectors.data() + t * index.dim;
        const double* c = index.centroids.data() + index.token_centroid[t] * index.dim;
        double err_b = 0.0, err_c = 0.0, cnorm = 0.0;
        for (std::size_t d = 0; d < index.dim; ++d) cnorm += c[d] * c[d];
        cnorm = std::sqrt(cnorm);
        for (std::size_t d = 0; d < index.dim; ++d) {
            double db = v[d] - rec[d];
            double dc = v[d] - (cnorm > 1e-12 ? c[d] / cnorm : c[d]);
            err_b += db * db;
            err_c += dc * dc;
        }
        with_buckets += std::sqrt(err_b);
        centroid_only += std::sqrt(err_c);
    }
    CHECK(with_buckets / index.token_count() < centroid_only / index.token_count());
}

TEST_CASE("every token is assigned to its nearest centroid and lists partition") {
    auto passages = random_passages(41, 40);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 19);
    PlaidIndex index = build_index(params, passages, 6, 29, 1);

    std::size_t listed = 0;
    std::set<std::uint32_t> seen;
    for (std::size_t c = 0; c < index.clusters; ++c) {
        for (auto t : index.inverted[c]) {
            CHECK(index.token_centroid[t] == c);
            CHECK(seen.insert(t).second);
            ++listed;
        }
    }
    CHECK(listed == index.token_count());

    for (std::size_t t = 0; t < index.token_count(); ++t) {
        const double* v = index.vectors.data() + t * index.dim;
        double best = HUGE_VAL;
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < index.clusters; ++c) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < index.dim; ++d) {
                double diff = v[d] - index.centroids[c * index.dim + d];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                best_c = c;
            }
        }
        CHECK(index.token_centroid[t] == best_c);
    }
}

TEST_CASE("ann with nprobe=K matches exact search when the rescored prefix covers everything") {
    // 40 passages with k=10 puts all collected passages inside the 4k rescore
    // prefix, so exhaustive probing must reproduce the exact ranking.
    auto passages = random_passages(51, 40);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 23);
    PlaidIndex index = build_index(params, passages, 8, 31, 1);
    EncodedPassages encoded = encode_passages(params, passages);
    Rng rng(61);
    auto vocab = vocab30();
    for (int trial = 0; trial < 15; ++trial) {
        std::vector<std::string> query;
        for (std::size_t i = 0; i < 2 + rng.below(3); ++i)
            query.push_back(vocab[rng.below(vocab.size())]);
        auto ann = ann_search(index, params, query, 10, index.clusters);
        auto exact = exact_search(params, encoded, query, 10);
        CHECK(ids_of(ann) == ids_of(exact));
        for (std::size_t i = 0; i < ann.size(); ++i)
            CHECK(ann[i].second == doctest::Approx(exact[i].second).epsilon(1e-12));
    }
}

TEST_CASE("ann top-1 agrees with the brute-force oracle for duplicated content") {
    auto passages = random_passages(71, 30);
    // Plant an exact duplicate of the query's token set.
    std::vector<std::string> query{"w1", "w2", "w3", "w4"};
    passages[7].tokens = query;
    EncoderParams params = init_encoder(vocab30(), 16, 8, 29);
    PlaidIndex index = build_index(params, passages, 4, 37, 1);

    auto ann = ann_search(index, params, query, 1, index.clusters);
    REQUIRE(ann.size() == 1);

    MultiVector qmv = encode(params, query, Role::query);
    std::string best_pid;
    double best = -HUGE_VAL;
    for (const auto& p : passages) {
        double s = maxsim_score(qmv, encode(params, p.tokens, Role::passage));
        if (s > best || (s == best && p.id < best_pid)) {
            best = s;
            best_pid = p.id;
        }
    }
    CHECK(ann[0].first == best_pid);
}

TEST_CASE("ann returns what exists when fewer than k passages are collected") {
    auto passages = random_passages(81, 5);
    EncoderParams params = init_encoder(vocab30(), 8, 4, 31);
    PlaidIndex index = build_index(params, passages, 2, 41, 1);
    auto ranked = ann_search(index, params, {"w1"}, 100, 1);
    CHECK(ranked.size() <= 5);
    CHECK(!ranked.empty());
    CHECK_THROWS_AS((void)ann_search(index, params, {"w1"}, 0, 1), Error);
    CHECK_THROWS_AS((void)ann_search(index, params, {"w1"}, 1, 3), Error); // nprobe > K
}

TEST_CASE("recall against exact search is non-decreasing in nprobe") {
    auto passages = random_passages(91, 120);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 37);
    PlaidIndex index = build_index(params, passages, 16, 43, 1);
    EncodedPassages encoded = encode_passages(params, passages);

    Rng rng(97);
    auto vocab = vocab30();
    std::vector<std::vector<std::string>> queries;
    for (int i = 0; i < 10; ++i) {
        std::vector<std::string> q;
        for (std::size_t t = 0; t < 3; ++t) q.push_back(vocab[rng.below(vocab.size())]);
        queries.push_back(q);
    }
    const std::size_t k = 10;
    double prev = -1.0;
    for (std::size_t nprobe : {1, 2, 4, 8, 16}) {
        double recall = 0.0;
        for (const auto& q : queries) {
            auto exact = ids_of(exact_search(params, encoded, q, k));
            auto ann = ids_of(ann_search(index, params, q, k, nprobe));
            std::set<std::string> truth(exact.begin(), exact.end());
            std::size_t hit = 0;
            for (const auto& pid : ann) hit += truth.count(pid);
            recall += static_cast<double>(hit) / static_cast<double>(truth.size());
        }
        recall /= queries.size();
        CHECK(recall >= prev - 1e-12);
        prev = recall;
    }
    // Exhaustive probing recovers nearly everything; the 4k rescore prefix
    // bounds it away from a hard 1.0 on coarse quantizers.
    CHECK(prev >= 0.9);
}

TEST_CASE("nbits 2 and 4 reconstruct at least as well as 1 on average") {
    auto passages = random_passages(101, 50);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 41);
    double prev_err = HUGE_VAL;
    for (std::size_t nbits : {1, 2, 4}) {
        PlaidIndex index = build_index(params, passages, 6, 47, nbits);
        std::vector<double> rec(index.dim);
        double err = 0.0;
        for (std::size_t t = 0; t < index.token_count(); ++t) {
            index.decode_token(t, rec.data());
            const double* v = index.vectors.data() + t * index.dim;
            double e = 0.0;
            for (std::size_t d = 0; d < index.dim; ++d) e += (v[d] - rec[d]) * (v[d] - rec[d]);
            err += std::sqrt(e);
        }
        err /= static_cast<double>(index.token_count());
        CHECK(err <= prev_err + 1e-9);
        prev_err = err;
    }
    CHECK_THROWS_AS((void)build_index(params, passages, 6, 47, 3), Error);
}

TEST_CASE("index directory round-trips and checksums catch corruption") {
    namespace fs = std::filesystem;
    auto passages = random_passages(111, 40);
    EncoderParams params = init_encoder(vocab30(), 16, 8, 43);
    PlaidIndex index = build_index(params, passages, 6, 53, 1);

    auto dir = (fs::temp_directory_path() / "clirkit_index_test").string();
    fs::remove_all(dir);
    save_index(dir, index);
    PlaidIndex back = load_index(dir);
    CHECK(back.clusters == index.clusters);
    CHECK(back.dim == index.dim);
    CHECK(back.nbits == index.nbits);
    CHECK(back.centroids == index.centroids);
    CHECK(back.codes == index.codes);
    CHECK(back.vectors == index.vectors);
    CHECK(back.passage_ids == index.passage_ids);

    auto q = std::vector<std::string>{"w3", "w9"};
    CHECK(ids_of(ann_search(back, params, q, 5, back.clusters)) ==
          ids_of(ann_search(index, params, q, 5, index.clusters)));

    // Rebuilding with the same seed is identical; a different seed is not required to be.
    PlaidIndex again = build_index(params, passages, 6, 53, 1);
    CHECK(again.centroids == index.centroids);
    CHECK(again.codes == index.codes);

    // Corrupt one byte of a binary array.
    {
        auto path = dir + std::string("/centroids.f64");
        auto bytes = read_file(path);
        bytes[8] = static_cast<char>(bytes[8] ^ 0x01);
        write_file(path, bytes);
    }
    CHECK_THROWS_WITH_AS((void)load_index(dir), doctest::Contains("checksum"), Error);
}

TEST_SUITE_END();
