// Drives the installed CLI binary end to end: pipeline with stage prefixes,
// per-stage subcommands, rerank, and compare.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "clirkit/distill.hpp"
#include "clirkit/evalir.hpp"
#include "clirkit/util.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
    std::printf("%s: %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++failures;
}

int run(const std::string& cmd) {
    std::string full = cmd + " >/dev/null 2>&1";
    return std::system(full.c_str());
}

} // namespace

int main(int argc, char** argv) {
    std::string work = argc > 1 ? argv[1] : "cli_smoke_work";
    fs::remove_all(work);
    fs::create_directories(work);
    std::string bin = CLIRKIT_BIN;
    std::string out_dir = work + "/run";

    std::string config = std::string("{\n") +
        "  \"out_dir\": \"" + out_dir + "\",\n" +
        "  \"seed\": 9,\n" +
        "  \"jobs\": 2,\n" +
        "  \"corpus\": {\"train_queries\": 12, \"synthetic\": {\n" +
        "    \"vocab\": 60, \"target_vocab\": 120, \"documents\": 40, \"queries\": 16,\n" +
        "    \"relevant_per_query\": 2, \"topics\": 4, \"doc_tokens_min\": 20,\n" +
        "    \"doc_tokens_max\": 40, \"topic_core_terms\": 12, \"query_terms_per_topic\": 6}},\n" +
        "  \"languages\": {\"candidate_k\": 8},\n" +
        "  \"translation\": {\"p_drop\": 0.1, \"p_confuse\": 0.05},\n" +
        "  \"window\": {\"size\": 12, \"stride\": 6},\n" +
        "  \"teacher\": {\"scale\": 2.0, \"term_loss_penalty\": 1.0, \"noise_sd\": 0.05},\n" +
        "  \"train\": {\"batch_queries\": 6, \"passages_per_query\": 4, \"epochs\": 2,\n" +
        "             \"dim\": 8, \"out_dim\": 4},\n" +
        "  \"index\": {\"clusters\": 8, \"kmeans_iterations\": 4},\n" +
        "  \"search\": {\"passage_k\": 100, \"nprobe\": 4, \"run_depth\": 100, \"rerank_depth\": 20},\n" +
        "  \"evaluate\": {\"compare\": [[\"distill\", \"translate_train\"]]}\n" +
        "}\n";
    std::string config_path = work + "/config.json";
    clirkit::write_file(config_path, config);

    check(run(bin + " pipeline --config " + config_path + " --stage select") == 0,
          "pipeline prefix through select");
    check(fs::exists(out_dir + "/select/candidates.tsv") &&
              !fs::exists(out_dir + "/teach/teacher_scores.tsv"),
          "prefix stops after select");

    check(run(bin + " teach --config " + config_path) == 0, "teach subcommand");
    check(fs::exists(out_dir + "/teach/teacher_scores.tsv"), "teach wrote scores");

    check(run(bin + " pipeline --config " + config_path) == 0, "full pipeline");
    check(fs::exists(out_dir + "/evaluate/compare_distill_vs_translate_train.txt"),
          "compare report exists");

    // rerank: doc-level oracle scores for the psq run.
    {
        clirkit::RunFile psq = clirkit::load_run(out_dir + "/search/psq.run");
        auto qrels = clirkit::load_qrels(out_dir + "/corpus/qrels.txt");
        clirkit::TeacherScores doc_scores;
        for (const auto& [qid, entries] : psq.results)
            for (const auto& e : entries)
                doc_scores.set(qid, e.doc_id, qrels.grade_or_zero(qid, e.doc_id));
        clirkit::save_teacher_scores(work + "/doc_scores.tsv", doc_scores);
    }
    check(run(bin + " rerank --run " + out_dir + "/search/psq.run --scores " + work +
              "/doc_scores.tsv --depth 20 --out " + work + "/reranked.run --tag rr") == 0,
          "rerank subcommand");
    check(fs::exists(work + "/reranked.run"), "rerank wrote a run");

    check(run(bin + " compare --run-a " + out_dir + "/search/distill.run --run-b " + out_dir +
              "/search/translate_train.run --qrels " + out_dir + "/corpus/qrels.txt --out " +
              work + "/cmp.txt") == 0,
          "compare subcommand");
    check(clirkit::read_file(work + "/cmp.txt").find("ndcg@20") != std::string::npos,
          "compare report mentions ndcg@20");

    check(run(bin + " pipeline --config /nonexistent.json") != 0, "missing config fails");
    check(run(bin + " --help") == 0, "--help");

    return failures == 0 ? 0 : 1;
}
