#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clirkit/corpus.hpp"
#include "clirkit/distill.hpp"
#include "clirkit/evalir.hpp"

namespace clirkit {

struct IngestConfig {
    std::string queries;
    std::string query_descriptions; // optional; appended to the query text
    std::string documents;
    std::string qrels;
    std::string lexicon;
};

struct CorpusConfig {
    std::string mode = "synthetic"; // "synthetic" or "ingest"
    SynthConfig synthetic;
    IngestConfig ingest;
    std::size_t train_queries = 200; // first N ids train, the rest evaluate
};

struct WindowConfig {
    std::size_t size = 180;
    std::size_t stride = 90;
};

struct SelectorConfig {
    std::string kind = "bm25"; // "bm25" or "student"
    std::string checkpoint;    // encoder checkpoint for the student selector
};

struct TeacherConfig {
    double scale = 1.0;
    double term_loss_penalty = 0.0;
    double noise_sd = 0.0;
};

struct PipelineTrainConfig {
    TrainConfig base;
    std::size_t dim = 32;
    std::size_t out_dim = 16;
    // Correlated bilingual initialization strength; stands in for the
    // multilingual pretraining both students start from.
    double warm_start_alpha = 0.8;
    std::vector<std::string> models{"distill", "translate_train"};
};

struct IndexConfig {
    std::size_t clusters = 64;
    std::size_t nbits = 1;
    std::size_t kmeans_iterations = 10;
};

struct SearchConfig {
    std::size_t passage_k = 1000; // ANN passage depth before MaxP
    std::size_t nprobe = 8;
    std::size_t run_depth = 1000;
    bool psq_first_stage = true;
    double psq_min_prob = 0.01;
    std::size_t psq_max_alternatives = 5;
    std::size_t rerank_depth = 200;
};

struct EvaluateConfig {
    EvalCutoffs cutoffs;
    std::vector<std::pair<std::string, std::string>> compare; // run name pairs
};

struct PipelineConfig {
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t jobs = 4;
    CorpusConfig corpus;
    LanguageConfig languages;
    MTNoise translation;
    WindowConfig window;
    SelectorConfig selector;
    TeacherConfig teacher;
    PipelineTrainConfig train;
    IndexConfig index;
    SearchConfig search;
    EvaluateConfig evaluate;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text, const std::string& origin);

// Stages in execution order: gen, translate, select, teach, train, index,
// search, evaluate.
const std::vector<std::string>& pipeline_stage_names();

struct RunOptions {
    std::optional<std::string> through_stage; // run the prefix ending here
    std::optional<std::string> only_stage;    // run exactly this stage, no skip
    std::optional<std::size_t> jobs;
};

struct StageStatus {
    std::string name;
    bool ran = false; // false means skipped via manifest checksums
};

struct PipelineResult {
    std::vector<StageStatus> stages;
};

// Runs stages in order, skipping a stage when its recorded fingerprint,
// input checksums, and output checksums all still match and no upstream
// stage re-ran this invocation. The manifest lives at <out_dir>/manifest.json.
PipelineResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {});

} // namespace clirkit
