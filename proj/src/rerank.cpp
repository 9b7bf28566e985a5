#include "rankssm/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "rankssm/checkpoint.hpp"
#include "rankssm/ops.hpp"
#include "rankssm/optim.hpp"

namespace rankssm {

std::string format_input(const std::string& q, const std::string& d) {
    return "document: " + d + "\n\nquery: " + q;
}

std::vector<int> format_and_tokenize(const std::string& q, const std::string& d,
                                     BackboneKind kind, int max_len) {
    if (kind != BackboneKind::attention_bidirectional) {
        return tokenize(format_input(q, d), max_len);
    }
    // [CLS] {q} [SEP] {d} [EOS]; trim the document first, then the query,
    // keeping all three specials.
    if (max_len < 3) throw ConfigError("format_and_tokenize: bidirectional needs max_len >= 3");
    const std::size_t budget = static_cast<std::size_t>(max_len) - 3;
    const std::size_t q_keep = std::min(q.size(), budget);
    const std::size_t d_keep = std::min(d.size(), budget - q_keep);
    std::vector<int> ids;
    ids.reserve(q_keep + d_keep + 3);
    ids.push_back(vocab::CLS);
    for (std::size_t i = 0; i < q_keep; ++i) {
        ids.push_back(static_cast<int>(static_cast<unsigned char>(q[i])));
    }
    ids.push_back(vocab::SEP);
    for (std::size_t i = 0; i < d_keep; ++i) {
        ids.push_back(static_cast<int>(static_cast<unsigned char>(d[i])));
    }
    ids.push_back(vocab::EOS);
    return ids;
}

std::map<std::string, std::vector<std::string>> sample_negatives(const Qrels& qrels,
                                                                 const RunList& run, int k,
                                                                 std::uint64_t seed) {
    if (k < 1) throw ConfigError("sample_negatives: k must be >= 1");
    Rng rng(seed);
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [qid, entries] : run) {
        const auto qit = qrels.find(qid);
        std::vector<const std::string*> candidates;
        candidates.reserve(entries.size());
        for (const RunEntry& e : entries) {
            bool relevant = false;
            if (qit != qrels.end()) {
                const auto dit = qit->second.find(e.doc_id);
                relevant = dit != qit->second.end() && dit->second >= 1;
            }
            if (!relevant) candidates.push_back(&e.doc_id);
        }
        if (static_cast<int>(candidates.size()) < k) {
            std::cerr << "warning: sample_negatives: query '" << qid << "' has only "
                      << candidates.size() << " candidates (< " << k << "), skipped\n";
            continue;
        }
        std::vector<std::string> negs;
        negs.reserve(static_cast<std::size_t>(k));
        for (std::size_t idx :
             rng.sample_without_replacement(candidates.size(), static_cast<std::size_t>(k))) {
            negs.push_back(*candidates[idx]);
        }
        out.emplace(qid, std::move(negs));
    }
    return out;
}

std::vector<TrainingSample> build_training_samples(
    const RunList& run, const Qrels& qrels, const std::map<std::string, std::string>& queries,
    const std::map<std::string, std::string>& collection, int k, std::uint64_t seed) {
    const auto negatives = sample_negatives(qrels, run, k, seed);
    std::vector<TrainingSample> samples;
    for (const auto& [qid, negs] : negatives) {
        const auto qit = qrels.find(qid);
        if (qit == qrels.end()) continue;
        const auto qtext = queries.find(qid);
        if (qtext == queries.end()) {
            throw DataError("build_training_samples: missing query text for '" + qid + "'");
        }
        for (const auto& [doc_id, grade] : qit->second) {
            if (grade < 1) continue;
            const auto pos_text = collection.find(doc_id);
            if (pos_text == collection.end()) {
                throw DataError("build_training_samples: missing document text for '" + doc_id +
                                "'");
            }
            TrainingSample s;
            s.query_id = qid;
            s.query_text = qtext->second;
            s.pos_id = doc_id;
            s.pos_text = pos_text->second;
            for (const std::string& neg_id : negs) {
                const auto neg_text = collection.find(neg_id);
                if (neg_text == collection.end()) {
                    throw DataError("build_training_samples: missing document text for '" +
                                    neg_id + "'");
                }
                s.negatives.emplace_back(neg_id, neg_text->second);
            }
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

Tensor infonce_loss(const Tensor& pos_score, const std::vector<Tensor>& neg_scores) {
    if (neg_scores.empty()) {
        throw ContractError("infonce_loss: at least one negative score required");
    }
    if (pos_score.numel() != 1) throw ContractError("infonce_loss: pos score must be scalar");
    for (const Tensor& t : neg_scores) {
        if (t.numel() != 1) throw ContractError("infonce_loss: neg scores must be scalar");
    }
    check_finite(pos_score, "infonce pos score");

    const double sp = pos_score.data()[0];
    double m = sp;
    for (const Tensor& t : neg_scores) {
        check_finite(t, "infonce neg score");
        m = std::max(m, t.data()[0]);
    }
    double z = std::exp(sp - m);
    for (const Tensor& t : neg_scores) z += std::exp(t.data()[0] - m);
    const double lse = m + std::log(z);
    Tensor loss = Tensor::scalar(lse - sp);

    std::vector<Tensor> inputs = {pos_score};
    inputs.insert(inputs.end(), neg_scores.begin(), neg_scores.end());
    auto backward = [pos_score, neg_scores, loss, lse]() mutable {
        auto gl = loss.grad_view();
        if (gl.empty()) return;
        const double g = gl[0];
        const double p_pos = std::exp(pos_score.data()[0] - lse);
        if (pos_score.requires_grad()) pos_score.grad()[0] += g * (p_pos - 1.0);
        for (const Tensor& t : neg_scores) {
            if (t.requires_grad()) t.grad()[0] += g * std::exp(t.data()[0] - lse);
        }
    };
    bool record = grad_enabled();
    if (record) {
        record = false;
        for (const Tensor& t : inputs) record = record || t.requires_grad();
    }
    if (record) {
        const int id = tape().record("infonce", inputs, std::move(backward));
        loss.set_tape_id(id);
        loss.set_requires_grad(true);
    }
    return loss;
}

TrainResult train(const std::vector<TrainingSample>& samples, RerankerModel& model,
                  const TrainConfig& cfg, const std::string& out_dir) {
    if (samples.empty()) throw ContractError("train: no samples");
    if (cfg.epochs < 1 || cfg.queries_per_batch < 1) {
        throw ConfigError("train: epochs and queries_per_batch must be >= 1");
    }
    std::filesystem::create_directories(out_dir);

    if (cfg.lora) apply_lora(model, cfg.lora->first, cfg.lora->second);
    std::vector<Tensor> params = trainable_params(model);
    AdamW opt(params);

    const long n = static_cast<long>(samples.size());
    const long steps_per_epoch = (n + cfg.queries_per_batch - 1) / cfg.queries_per_batch;
    const long total_steps = steps_per_epoch * cfg.epochs;

    // 10 evenly spaced intermediate checkpoints plus final
    std::vector<long> ckpt_steps;
    for (int i = 1; i <= 10; ++i) {
        ckpt_steps.push_back(
            static_cast<long>(std::ceil(static_cast<double>(total_steps) * i / 10.0)));
    }

    TrainResult result;
    result.total_steps = total_steps;
    Rng shuffle_rng(cfg.seed);
    const int max_len = model.backbone.cfg.max_len;
    const BackboneKind kind = model.backbone.cfg.kind;

    long step = 0;
    int next_ckpt = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        for (long b = 0; b < steps_per_epoch; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * cfg.queries_per_batch;
            const std::size_t hi =
                std::min(order.size(), lo + static_cast<std::size_t>(cfg.queries_per_batch));
            const double inv = 1.0 / static_cast<double>(hi - lo);

            opt.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                const TrainingSample& s = samples[order[i]];
                tape().clear();
                Tensor pos = score_graph(
                    model, format_and_tokenize(s.query_text, s.pos_text, kind, max_len),
                    cfg.scan, cfg.memory);
                std::vector<Tensor> negs;
                negs.reserve(s.negatives.size());
                for (const auto& [id, text] : s.negatives) {
                    negs.push_back(score_graph(
                        model, format_and_tokenize(s.query_text, text, kind, max_len), cfg.scan,
                        cfg.memory));
                }
                Tensor loss = scale(infonce_loss(pos, negs), inv);
                try {
                    backward(loss);
                } catch (const NumericError& e) {
                    tape().clear();
                    throw NumericError("train: non-finite loss at step " +
                                       std::to_string(step + 1) + " (query '" + s.query_id +
                                       "', positive '" + s.pos_id + "'): " + e.what());
                }
                batch_loss += loss.item() / inv;
                tape().clear();
            }
            ++step;
            const double lr = warmup_linear_lr(step, cfg.lr, cfg.warmup_steps, total_steps);
            opt.step(lr);
            result.losses.push_back(batch_loss * inv);
            result.lrs.push_back(lr);

            while (next_ckpt < 10 && step == ckpt_steps[static_cast<std::size_t>(next_ckpt)]) {
                char name[32];
                std::snprintf(name, sizeof(name), "checkpoint-%02d.rksm", next_ckpt + 1);
                const std::string path = out_dir + "/" + name;
                save_checkpoint(path, named_params(model));
                result.checkpoint_files.push_back(path);
                ++next_ckpt;
            }
        }
    }
    const std::string final_path = out_dir + "/final.rksm";
    save_checkpoint(final_path, named_params(model));
    result.checkpoint_files.push_back(final_path);
    return result;
}

void write_samples_jsonl(const std::string& path, const std::vector<TrainingSample>& samples) {
    std::ofstream os(path);
    if (!os) throw DataError("samples: cannot open " + path + " for writing");
    for (const TrainingSample& s : samples) {
        nlohmann::json negs = nlohmann::json::array();
        for (const auto& [id, text] : s.negatives) {
            negs.push_back({{"id", id}, {"text", text}});
        }
        nlohmann::json j = {{"qid", s.query_id},
                            {"query", s.query_text},
                            {"pos_id", s.pos_id},
                            {"pos", s.pos_text},
                            {"negs", negs}};
        os << j.dump() << "\n";
    }
}

std::vector<TrainingSample> read_samples_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("samples: cannot open " + path);
    std::vector<TrainingSample> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("samples: line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            TrainingSample s;
            s.query_id = j.at("qid").get<std::string>();
            s.query_text = j.at("query").get<std::string>();
            s.pos_id = j.at("pos_id").get<std::string>();
            s.pos_text = j.at("pos").get<std::string>();
            for (const auto& neg : j.at("negs")) {
                s.negatives.emplace_back(neg.at("id").get<std::string>(),
                                         neg.at("text").get<std::string>());
            }
            for (const auto& [id, text] : s.negatives) {
                if (id == s.pos_id) {
                    throw DataError("samples: line " + std::to_string(lineno) +
                                    ": positive '" + s.pos_id + "' appears in negatives");
                }
            }
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("samples: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return samples;
}

void write_loss_csv(const std::string& path, const TrainResult& result) {
    std::ofstream os(path);
    if (!os) throw DataError("loss log: cannot open " + path + " for writing");
    os << "step,lr,loss\n";
    char buf[96];
    for (std::size_t i = 0; i < result.losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", i + 1, result.lrs[i],
                      result.losses[i]);
        os << buf << "\n";
    }
}

}  // namespace rankssm
