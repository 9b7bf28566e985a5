#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rankssm/model.hpp"
#include "rankssm/retrieval.hpp"
#include "rankssm/tensor.hpp"

namespace rankssm {

// One InfoNCE unit: a query, its relevant document, and k hard negatives.
struct TrainingSample {
    std::string query_id;
    std::string query_text;
    std::string pos_id;
    std::string pos_text;
    std::vector<std::pair<std::string, std::string>> negatives;  // (id, text)
};

// Causal template; the tokenizer appends [EOS]. The query sits after the
// document so its tokens can condition on the document tokens.
std::string format_input(const std::string& q, const std::string& d);

// Token ids for either input style: the byte template above for causal
// kinds, or [CLS] q [SEP] d [EOS] for the bidirectional kind. Truncation
// trims the document first and always keeps the specials in place.
std::vector<int> format_and_tokenize(const std::string& q, const std::string& d,
                                     BackboneKind kind, int max_len);

// Uniform sample without replacement of k negatives per query from the
// first-stage candidates, excluding every document judged relevant
// (grade >= 1) for that query. Queries with fewer than k candidates are
// skipped with a warning. Deterministic for a fixed seed.
std::map<std::string, std::vector<std::string>> sample_negatives(const Qrels& qrels,
                                                                 const RunList& run, int k,
                                                                 std::uint64_t seed);

// One sample per (query, relevant doc) pair, negatives shared per query.
std::vector<TrainingSample> build_training_samples(
    const RunList& run, const Qrels& qrels, const std::map<std::string, std::string>& queries,
    const std::map<std::string, std::string>& collection, int k, std::uint64_t seed);

// loss = -log( exp(s+) / (exp(s+) + sum_j exp(s-_j)) ), stabilized by
// max subtraction. All inputs are scalar graph tensors.
Tensor infonce_loss(const Tensor& pos_score, const std::vector<Tensor>& neg_scores);

struct TrainConfig {
    double lr = 2e-5;
    long warmup_steps = 1000;
    int epochs = 1;
    int negatives_per_positive = 7;
    int queries_per_batch = 4;
    std::uint64_t seed = 0;
    std::optional<std::pair<int, double>> lora;  // (rank, alpha)
    ScanKind scan = ScanKind::sequential;
    BackwardMemory memory = BackwardMemory::store_all;
};

struct TrainResult {
    std::vector<double> losses;  // per optimizer step, batch mean
    std::vector<double> lrs;
    std::vector<std::string> checkpoint_files;  // 10 intermediate + final
    long total_steps = 0;
};

// One pass (epochs passes) over the samples in seeded shuffled order.
// Saves 10 evenly spaced intermediate checkpoints plus final.rksm under
// out_dir and returns the per-step loss log.
TrainResult train(const std::vector<TrainingSample>& samples, RerankerModel& model,
                  const TrainConfig& cfg, const std::string& out_dir);

// JSON-lines sample files: {"qid","query","pos_id","pos","negs":[{"id","text"},...]}
void write_samples_jsonl(const std::string& path, const std::vector<TrainingSample>& samples);
std::vector<TrainingSample> read_samples_jsonl(const std::string& path);

// Loss log: CSV "step,lr,loss"
void write_loss_csv(const std::string& path, const TrainResult& result);

}  // namespace rankssm
