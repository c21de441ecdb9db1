// Command-line front end: the full pipeline plus each stage as its own
// subcommand, and file-level rerank/compare utilities.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "clirkit/distill.hpp"
#include "clirkit/evalir.hpp"
#include "clirkit/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::size_t jobs = 0;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config,-c", args.config_path, "pipeline config (JSON)")->required();
    cmd->add_option("--jobs,-j", args.jobs, "worker thread cap (0 = config value)");
    cmd->add_option("--seed", args.seed, "override the config seed");
}

int run_stages(const CommonArgs& args, const clirkit::RunOptions& opts_in) {
    clirkit::PipelineConfig cfg = clirkit::load_pipeline_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    clirkit::RunOptions opts = opts_in;
    if (args.jobs > 0) opts.jobs = args.jobs;
    clirkit::PipelineResult result = clirkit::run_pipeline(cfg, opts);
    for (const auto& stage : result.stages)
        std::cout << stage.name << (stage.ran ? ": ran" : ": skipped (up to date)") << '\n';
    std::cout << "artifacts: " << cfg.out_dir << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"clirkit: cross-language retrieval training and evaluation pipeline"};
    app.require_subcommand(1);

    CommonArgs pipeline_args;
    std::string through_stage;
    CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "run all stages end to end");
    add_common(pipeline_cmd, pipeline_args);
    pipeline_cmd->add_option("--stage", through_stage,
                             "stop after this stage (gen, translate, select, teach, train, "
                             "index, search, evaluate)");

    // Every stage is also a standalone subcommand that runs unconditionally.
    struct StageCmd {
        const char* command;
        const char* stage;
        const char* help;
    };
    const StageCmd stage_cmds[] = {
        {"gen-corpus", "gen", "generate or ingest the collection"},
        {"translate", "translate", "window documents and materialize per-language views"},
        {"select", "select", "select candidate passages per training query"},
        {"teach", "teach", "score candidates with the oracle teacher"},
        {"train", "train", "train the configured student models"},
        {"index", "index", "build the token-level ANN index per model"},
        {"search", "search", "run retrieval for the evaluation queries"},
        {"evaluate", "evaluate", "compute metrics and comparison reports"},
    };
    CommonArgs stage_args[std::size(stage_cmds)];
    for (std::size_t i = 0; i < std::size(stage_cmds); ++i)
        add_common(app.add_subcommand(stage_cmds[i].command, stage_cmds[i].help), stage_args[i]);

    std::string rr_run, rr_scores, rr_out, rr_tag = "reranked";
    std::size_t rr_depth = 200;
    CLI::App* rerank_cmd = app.add_subcommand("rerank", "rescore the top of a run file");
    rerank_cmd->add_option("--run", rr_run, "first-stage run file")->required();
    rerank_cmd->add_option("--scores", rr_scores,
                           "query_id<TAB>doc_id<TAB>score file covering the reranked depth")
        ->required();
    rerank_cmd->add_option("--out", rr_out, "output run file")->required();
    rerank_cmd->add_option("--depth", rr_depth, "rerank depth (default 200)");
    rerank_cmd->add_option("--tag", rr_tag, "output run tag");

    std::string cmp_a, cmp_b, cmp_qrels, cmp_out;
    clirkit::EvalCutoffs cmp_cutoffs;
    CLI::App* compare_cmd = app.add_subcommand("compare", "paired comparison of two run files");
    compare_cmd->add_option("--run-a", cmp_a, "run file A")->required();
    compare_cmd->add_option("--run-b", cmp_b, "run file B")->required();
    compare_cmd->add_option("--qrels", cmp_qrels, "TREC qrels file")->required();
    compare_cmd->add_option("--ndcg-k", cmp_cutoffs.ndcg_k, "nDCG cutoff (default 20)");
    compare_cmd->add_option("--recall-k", cmp_cutoffs.recall_k, "recall cutoff (default 1000)");
    compare_cmd->add_option("--judged-k", cmp_cutoffs.judged_k, "judged cutoff (default 20)");
    compare_cmd->add_option("--out", cmp_out, "also write the report to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pipeline_cmd->parsed()) {
            clirkit::RunOptions opts;
            if (!through_stage.empty()) opts.through_stage = through_stage;
            return run_stages(pipeline_args, opts);
        }
        for (std::size_t i = 0; i < std::size(stage_cmds); ++i) {
            if (app.get_subcommand(stage_cmds[i].command)->parsed()) {
                clirkit::RunOptions opts;
                opts.only_stage = stage_cmds[i].stage;
                return run_stages(stage_args[i], opts);
            }
        }
        if (rerank_cmd->parsed()) {
            clirkit::RunFile run = clirkit::load_run(rr_run);
            clirkit::TeacherScores scores = clirkit::load_teacher_scores(rr_scores);
            clirkit::RunFile out = clirkit::rerank(
                run,
                [&scores](const std::string& qid, const std::string& docid) {
                    return scores.at(qid, docid);
                },
                rr_depth, rr_tag);
            clirkit::save_run(rr_out, out);
            std::cout << "wrote " << rr_out << '\n';
            return 0;
        }
        if (compare_cmd->parsed()) {
            clirkit::RunFile a = clirkit::load_run(cmp_a);
            clirkit::RunFile b = clirkit::load_run(cmp_b);
            clirkit::Qrels qrels = clirkit::load_qrels(cmp_qrels);
            clirkit::CompareReport report = clirkit::compare_runs(a, b, qrels, cmp_cutoffs);
            std::string text = clirkit::compare_report_text(report);
            std::cout << text;
            if (!cmp_out.empty()) clirkit::write_file(cmp_out, text);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
