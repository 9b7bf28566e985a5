#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rankssm/bench.hpp"
#include "rankssm/checkpoint.hpp"
#include "rankssm/model.hpp"
#include "rankssm/rerank.hpp"
#include "rankssm/retrieval.hpp"

namespace {

using namespace rankssm;

struct GlobalOpts {
    std::uint64_t seed = 42;
    int threads = 1;
    bool verbose = false;
};

void info(const GlobalOpts& g, const std::string& msg) {
    if (g.verbose) std::cerr << "info: " << msg << "\n";
}

std::map<std::string, std::string> as_map(
    const std::vector<std::pair<std::string, std::string>>& rows, const char* what) {
    std::map<std::string, std::string> out;
    for (const auto& [id, text] : rows) {
        if (!out.emplace(id, text).second) {
            throw DataError(std::string(what) + ": duplicate id '" + id + "'");
        }
    }
    return out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

// Every subcommand prints its resolved configuration (flags plus defaults)
// before doing any work, for reproducibility.
void print_config(const std::string& sub, const GlobalOpts& g,
                  const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cout << "config: subcommand=" << sub;
    for (const auto& [k, v] : kv) std::cout << " " << k << "=" << v;
    std::cout << " seed=" << g.seed << " threads=" << g.threads << "\n";
}

std::string fmt(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

int cmd_index(const GlobalOpts& g, const std::string& collection, const std::string& out) {
    print_config("index", g, {{"collection", collection}, {"out", out}});
    InvertedIndex idx;
    for (const auto& [id, text] : read_tsv(collection)) idx.add_document(id, text);
    idx.save(out);
    std::cout << "indexed " << idx.doc_count() << " documents, avg length "
              << idx.avg_doc_length() << "\n";
    return 0;
}

int cmd_retrieve(const GlobalOpts& g, const std::string& index_dir, const std::string& queries,
                 int k, double k1, double b, const std::string& out) {
    print_config("retrieve", g, {{"index", index_dir},
                                 {"queries", queries},
                                 {"k", std::to_string(k)},
                                 {"k1", fmt(k1)},
                                 {"b", fmt(b)},
                                 {"out", out}});
    InvertedIndex idx = InvertedIndex::load(index_dir);
    RunList run;
    for (const auto& [qid, text] : read_tsv(queries)) {
        run[qid] = retrieve_topk(text, idx, k, {k1, b});
    }
    write_trec_run(out, run, "rankssm");
    std::cout << "retrieved top-" << k << " for " << run.size() << " queries\n";
    return 0;
}

int cmd_build_train(const GlobalOpts& g, const std::string& run_path, const std::string& qrels_path,
                    const std::string& collection, const std::string& queries, int negatives,
                    const std::string& out) {
    print_config("build-train", g, {{"run", run_path},
                                    {"qrels", qrels_path},
                                    {"collection", collection},
                                    {"queries", queries},
                                    {"negatives", std::to_string(negatives)},
                                    {"out", out}});
    RunList run = read_trec_run(run_path);
    Qrels qrels = read_trec_qrels(qrels_path);
    auto coll = as_map(read_tsv(collection), "collection");
    auto qmap = as_map(read_tsv(queries), "queries");
    auto samples = build_training_samples(run, qrels, qmap, coll, negatives, g.seed);
    write_samples_jsonl(out, samples);
    std::cout << "wrote " << samples.size() << " training samples\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& samples_path, const std::string& model_cfg,
              double lr, long warmup, int epochs, int batch, int lora_rank, double lora_alpha,
              const std::string& out) {
    print_config("train", g, {{"samples", samples_path},
                              {"model-config", model_cfg},
                              {"lr", fmt(lr)},
                              {"warmup", std::to_string(warmup)},
                              {"epochs", std::to_string(epochs)},
                              {"batch", std::to_string(batch)},
                              {"lora-rank", std::to_string(lora_rank)},
                              {"lora-alpha", fmt(lora_alpha)},
                              {"out", out}});
    auto samples = read_samples_jsonl(samples_path);
    ModelFileConfig mcfg = read_model_config(model_cfg);

    TrainConfig tc;
    tc.lr = lr;
    tc.warmup_steps = warmup;
    tc.epochs = epochs;
    tc.queries_per_batch = batch;
    tc.seed = g.seed;
    if (lora_rank > 0) {
        tc.lora = {lora_rank, lora_alpha > 0 ? lora_alpha : static_cast<double>(lora_rank)};
    } else if (mcfg.lora_rank) {
        tc.lora = {*mcfg.lora_rank,
                   mcfg.lora_alpha.value_or(static_cast<double>(*mcfg.lora_rank))};
    }

    RerankerModel model = make_model(mcfg.backbone);
    info(g, "training " + std::to_string(samples.size()) + " samples");
    TrainResult result = train(samples, model, tc, out);
    write_loss_csv(out + "/loss.csv", result);

    ModelFileConfig out_cfg = mcfg;
    if (tc.lora) {
        out_cfg.lora_rank = tc.lora->first;
        out_cfg.lora_alpha = tc.lora->second;
    }
    write_model_config(out + "/model.cfg", out_cfg);
    std::cout << "trained " << result.total_steps << " steps; final loss "
              << (result.losses.empty() ? 0.0 : result.losses.back()) << "; checkpoints in "
              << out << "\n";
    return 0;
}

int cmd_rerank(const GlobalOpts& g, const std::string& run_path, const std::string& checkpoint,
               const std::string& collection, const std::string& queries,
               std::string model_cfg, const std::string& out) {
    if (model_cfg.empty()) {
        // convention: the training out-dir keeps model.cfg next to checkpoints
        model_cfg =
            (std::filesystem::path(checkpoint).parent_path() / "model.cfg").string();
    }
    print_config("rerank", g, {{"run", run_path},
                               {"checkpoint", checkpoint},
                               {"collection", collection},
                               {"queries", queries},
                               {"model-config", model_cfg},
                               {"out", out}});
    RunList run = read_trec_run(run_path);
    auto coll = as_map(read_tsv(collection), "collection");
    auto qmap = as_map(read_tsv(queries), "queries");

    ModelFileConfig mcfg = read_model_config(model_cfg);
    RerankerModel model = model_from_config(mcfg);
    NamedTensors params = named_params(model);
    load_checkpoint_into(checkpoint, params);

    const BackboneKind kind = model.backbone.cfg.kind;
    const int max_len = model.backbone.cfg.max_len;
    auto scorer = [&](const std::string& q, const std::string& d) {
        return score_value(model, format_and_tokenize(q, d, kind, max_len));
    };
    RunList reranked = rerank(run, qmap, coll, scorer, g.threads);
    write_trec_run(out, reranked, "rankssm");
    std::cout << "reranked " << reranked.size() << " queries\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& run_path, const std::string& qrels_path,
             const std::string& metrics, const std::string& out) {
    print_config("eval", g, {{"run", run_path}, {"qrels", qrels_path}, {"metrics", metrics},
                             {"out", out}});
    RunList run = read_trec_run(run_path);
    Qrels qrels = read_trec_qrels(qrels_path);

    std::vector<MetricRow> rows;
    for (const std::string& spec : split_commas(metrics)) {
        const auto at = spec.find('@');
        if (at == std::string::npos) {
            throw ConfigError("eval: metric '" + spec + "' must look like name@k");
        }
        const std::string name = spec.substr(0, at);
        int k = 0;
        try {
            k = std::stoi(spec.substr(at + 1));
        } catch (const std::exception&) {
            throw ConfigError("eval: bad cutoff in '" + spec + "'");
        }
        MetricValue mv;
        if (name == "mrr") {
            mv = mrr_at_k(run, qrels, k);
        } else if (name == "ndcg") {
            mv = ndcg_at_k(run, qrels, k);
        } else if (name == "ndcg_exp") {
            mv = ndcg_at_k(run, qrels, k, Gain::exponential);
        } else {
            throw ConfigError("eval: unknown metric '" + name + "'");
        }
        rows.push_back({name, k, mv.value, mv.num_queries});
        std::cout << name << "@" << k << " = " << mv.value << " over " << mv.num_queries
                  << " queries\n";
    }
    if (!out.empty()) write_metric_csv(out, rows);
    return 0;
}

int cmd_bench(const GlobalOpts& g, const std::string& kernels, const std::string& lengths,
              int repeats, int warmup, int d_model, int n_state, int batch,
              const std::string& out) {
    print_config("bench", g, {{"kernels", kernels},
                              {"lengths", lengths},
                              {"repeats", std::to_string(repeats)},
                              {"warmup", std::to_string(warmup)},
                              {"d_model", std::to_string(d_model)},
                              {"n_state", std::to_string(n_state)},
                              {"batch", std::to_string(batch)},
                              {"out", out}});
    std::vector<std::string> kernel_list =
        kernels == "all" ? available_kernels() : split_commas(kernels);
    std::vector<int> length_list;
    for (const std::string& tok : split_commas(lengths)) {
        try {
            length_list.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("bench: bad length '" + tok + "'");
        }
    }
    BenchConfig cfg;
    cfg.d_model = d_model;
    cfg.n_state = n_state;
    cfg.batch = batch;
    cfg.repeats = repeats;
    cfg.warmup = warmup;
    cfg.seed = g.seed;
    cfg.threads = g.threads;

    auto records = run_benchmark(kernel_list, length_list, cfg);
    write_bench_csv(out, records);
    std::string dat = out;
    if (dat.size() > 4 && dat.ends_with(".csv")) dat.resize(dat.size() - 4);
    write_bench_dat(dat + ".dat", records);

    for (const SlopeRow& row : scaling_report(records)) {
        std::cout << "slope(" << row.kernel << ") = " << row.slope << " over " << row.points
                  << " lengths\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selective state space sequence models with a document-reranking pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "intra-stage parallelism (1 = bit-reproducible)")
        ->capture_default_str();
    app.add_flag("--verbose", g.verbose, "extra progress output on stderr");

    // index
    auto* s_index = app.add_subcommand("index", "build an inverted index from a collection TSV");
    std::string ix_collection, ix_out;
    s_index->add_option("--collection", ix_collection, "docid<TAB>text file")->required();
    s_index->add_option("--out", ix_out, "output index directory")->required();

    // retrieve
    auto* s_retrieve = app.add_subcommand("retrieve", "BM25 first-stage retrieval");
    std::string rt_index, rt_queries, rt_out;
    int rt_k = 100;
    double rt_k1 = 4.46, rt_b = 0.82;
    s_retrieve->add_option("--index", rt_index, "index directory")->required();
    s_retrieve->add_option("--queries", rt_queries, "qid<TAB>text file")->required();
    s_retrieve->add_option("--k", rt_k, "retrieval depth")->capture_default_str();
    s_retrieve->add_option("--k1", rt_k1, "BM25 k1")->capture_default_str();
    s_retrieve->add_option("--b", rt_b, "BM25 b")->capture_default_str();
    s_retrieve->add_option("--out", rt_out, "output TREC run file")->required();

    // build-train
    auto* s_bt = app.add_subcommand("build-train", "assemble training samples with hard negatives");
    std::string bt_run, bt_qrels, bt_collection, bt_queries, bt_out;
    int bt_negatives = 7;
    s_bt->add_option("--run", bt_run, "first-stage TREC run")->required();
    s_bt->add_option("--qrels", bt_qrels, "TREC qrels")->required();
    s_bt->add_option("--collection", bt_collection, "docid<TAB>text file")->required();
    s_bt->add_option("--queries", bt_queries, "qid<TAB>text file")->required();
    s_bt->add_option("--negatives", bt_negatives, "hard negatives per positive")
        ->capture_default_str();
    s_bt->add_option("--out", bt_out, "output JSONL samples file")->required();

    // train
    auto* s_train = app.add_subcommand("train", "train the reranker");
    std::string tr_samples, tr_model_cfg, tr_out;
    double tr_lr = 2e-5, tr_lora_alpha = 0.0;
    long tr_warmup = 1000;
    int tr_epochs = 1, tr_batch = 4, tr_lora_rank = 0;
    s_train->add_option("--samples", tr_samples, "JSONL training samples")->required();
    s_train->add_option("--model-config", tr_model_cfg, "model config file")->required();
    s_train->add_option("--lr", tr_lr, "peak learning rate")->capture_default_str();
    s_train->add_option("--warmup", tr_warmup, "warmup steps")->capture_default_str();
    s_train->add_option("--epochs", tr_epochs, "training epochs")->capture_default_str();
    s_train->add_option("--batch", tr_batch, "queries per batch")->capture_default_str();
    s_train->add_option("--lora-rank", tr_lora_rank, "enable LoRA with this rank (0 = off)")
        ->capture_default_str();
    s_train->add_option("--lora-alpha", tr_lora_alpha, "LoRA alpha (default: rank)")
        ->capture_default_str();
    s_train->add_option("--out", tr_out, "output directory for checkpoints")->required();

    // rerank
    auto* s_rerank = app.add_subcommand("rerank", "rescore a first-stage run with a checkpoint");
    std::string rr_run, rr_ckpt, rr_collection, rr_queries, rr_model_cfg, rr_out;
    s_rerank->add_option("--run", rr_run, "first-stage TREC run")->required();
    s_rerank->add_option("--checkpoint", rr_ckpt, "model checkpoint (.rksm)")->required();
    s_rerank->add_option("--collection", rr_collection, "docid<TAB>text file")->required();
    s_rerank->add_option("--queries", rr_queries, "qid<TAB>text file")->required();
    s_rerank->add_option("--model-config", rr_model_cfg,
                         "model config (default: model.cfg next to the checkpoint)");
    s_rerank->add_option("--out", rr_out, "output TREC run file")->required();

    // eval
    auto* s_eval = app.add_subcommand("eval", "compute ranking metrics for a run");
    std::string ev_run, ev_qrels, ev_metrics = "mrr@100,ndcg@10", ev_out;
    s_eval->add_option("--run", ev_run, "TREC run file")->required();
    s_eval->add_option("--qrels", ev_qrels, "TREC qrels file")->required();
    s_eval->add_option("--metrics", ev_metrics, "comma list of name@k")->capture_default_str();
    s_eval->add_option("--out", ev_out, "output metrics CSV");

    // bench
    auto* s_bench = app.add_subcommand("bench", "throughput and memory benchmark");
    std::string bn_kernels = "all", bn_lengths = "256,512,1024,2048,4096", bn_out;
    int bn_repeats = 5, bn_warmup = 1, bn_d_model = 32, bn_n_state = 16, bn_batch = 4;
    s_bench->add_option("--kernels", bn_kernels, "comma list or 'all'")->capture_default_str();
    s_bench->add_option("--lengths", bn_lengths, "comma list of sequence lengths")
        ->capture_default_str();
    s_bench->add_option("--repeats", bn_repeats, "timed repeats per point")->capture_default_str();
    s_bench->add_option("--warmup", bn_warmup, "warmup runs per point")->capture_default_str();
    s_bench->add_option("--d-model", bn_d_model, "channel width")->capture_default_str();
    s_bench->add_option("--n-state", bn_n_state, "state size")->capture_default_str();
    s_bench->add_option("--batch", bn_batch, "sequences per repeat")->capture_default_str();
    s_bench->add_option("--out", bn_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (s_index->parsed()) return cmd_index(g, ix_collection, ix_out);
        if (s_retrieve->parsed()) {
            return cmd_retrieve(g, rt_index, rt_queries, rt_k, rt_k1, rt_b, rt_out);
        }
        if (s_bt->parsed()) {
            return cmd_build_train(g, bt_run, bt_qrels, bt_collection, bt_queries, bt_negatives,
                                   bt_out);
        }
        if (s_train->parsed()) {
            return cmd_train(g, tr_samples, tr_model_cfg, tr_lr, tr_warmup, tr_epochs, tr_batch,
                             tr_lora_rank, tr_lora_alpha, tr_out);
        }
        if (s_rerank->parsed()) {
            return cmd_rerank(g, rr_run, rr_ckpt, rr_collection, rr_queries, rr_model_cfg, rr_out);
        }
        if (s_eval->parsed()) return cmd_eval(g, ev_run, ev_qrels, ev_metrics, ev_out);
        if (s_bench->parsed()) {
            return cmd_bench(g, bn_kernels, bn_lengths, bn_repeats, bn_warmup, bn_d_model,
                             bn_n_state, bn_batch, bn_out);
        }
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
