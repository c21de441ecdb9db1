#pragma once

#include <cstdarg>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clirkit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string strfmt(const char* fmt, ...);

// Throws Error with a printf-formatted message.
[[noreturn]] void fail(const char* fmt, ...);

// 64-bit mixing and hashing primitives used for seed derivation and
// artifact checksums. Not cryptographic.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

// Combines a base seed with a sequence of context values into a fresh seed.
// Independent of evaluation order elsewhere: f(base, parts) is a pure hash.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

// Deterministic RNG: mt19937_64 engine with hand-rolled distributions so
// output is identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1), 53 bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Two engine draws per call.
    double normal();

    // Uniform integer in [0, n). n must be > 0.
    std::size_t below(std::size_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // m distinct indices drawn from [0, n), in random order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

private:
    std::mt19937_64 gen_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

std::uint64_t checksum_file(const std::string& path);

// Shortest decimal form that round-trips the exact double ("%.17g").
std::string format_double(double v);

// Runs fn(i) for i in [0, n). Work items must be independent; results must be
// written to disjoint, pre-sized slots so output is identical for any jobs.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

} // namespace clirkit
