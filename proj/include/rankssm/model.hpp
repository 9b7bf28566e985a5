#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankssm/checkpoint.hpp"
#include "rankssm/nn.hpp"
#include "rankssm/ssm.hpp"
#include "rankssm/tensor.hpp"

namespace rankssm {

// Byte-level vocabulary: 256 raw bytes plus four specials.
namespace vocab {
constexpr int PAD = 256;
constexpr int EOS = 257;
constexpr int SEP = 258;
constexpr int CLS = 259;
constexpr int SIZE = 260;
}  // namespace vocab

// Raw UTF-8 bytes as ids; never emits specials.
std::vector<int> encode_bytes(std::string_view text);

// Bytes truncated to max_len-1, with EOS appended last (first-window
// truncation). Empty input tokenizes to just [EOS].
std::vector<int> tokenize(std::string_view text, int max_len);

// Inverse of encode for byte ids; special tokens are skipped.
std::string decode(std::span<const int> ids);

enum class BackboneKind { mamba, attention_causal, attention_bidirectional };

BackboneKind parse_backbone_kind(const std::string& s);
std::string to_string(BackboneKind kind);

struct BackboneConfig {
    BackboneKind kind = BackboneKind::mamba;
    int n_layers = 2;
    int d_model = 64;
    int n_state = 16;  // mamba kinds
    int n_heads = 4;   // attention kinds; d_model must divide evenly
    int max_len = 512;
    std::uint64_t seed = 0;
};

struct AttentionLayerParams {
    Tensor norm1_w, norm2_w;
    std::vector<Projection> q, k, v, o;  // per head: d->hd for q/k/v, hd->d for o
    Projection ffn1, ffn2;               // d -> 4d -> d, biased
};

struct Backbone {
    BackboneConfig cfg;
    Tensor embed;  // [260 x d_model]
    Tensor pos;    // [max_len x d_model]; attention kinds only (Mamba has none)
    std::vector<MambaBlockParams> mamba_layers;
    std::vector<AttentionLayerParams> attn_layers;
    Tensor final_norm_w;
};

struct RankingHead {
    Tensor w;  // [d_model x 1]
    Tensor b;  // [1]
};

struct RerankerModel {
    Backbone backbone;
    RankingHead head;
};

RerankerModel make_model(const BackboneConfig& cfg);

// Stable creation-order listing of every parameter (including LoRA factors),
// used for checkpoints and the optimizer.
NamedTensors named_params(const RerankerModel& model);
std::vector<Tensor> trainable_params(const RerankerModel& model);

// Freezes every base parameter and attaches rank-r adapters to each linear
// projection wide enough to hold them. The ranking head stays trainable
// (it is randomly initialized and has no pre-trained weights to preserve).
void apply_lora(RerankerModel& model, int rank, double alpha);

Tensor backbone_forward(const Backbone& bb, std::span<const int> ids,
                        ScanKind kind = ScanKind::sequential,
                        BackwardMemory memory = BackwardMemory::store_all);

// Relevance score: head applied to the EOS-position representation for
// causal kinds, CLS-position for the bidirectional kind. Returns a scalar
// graph tensor; score_value is the no-grad convenience wrapper.
Tensor score_graph(const RerankerModel& model, std::span<const int> ids,
                   ScanKind kind = ScanKind::sequential,
                   BackwardMemory memory = BackwardMemory::store_all);
double score_value(const RerankerModel& model, std::span<const int> ids);

long total_param_count(const RerankerModel& model);
std::string model_summary(const RerankerModel& model);

// Line-oriented key=value model description used by the CLI.
struct ModelFileConfig {
    BackboneConfig backbone;
    std::optional<int> lora_rank;
    std::optional<double> lora_alpha;
};

ModelFileConfig read_model_config(const std::string& path);
void write_model_config(const std::string& path, const ModelFileConfig& cfg);
RerankerModel model_from_config(const ModelFileConfig& cfg);

}  // namespace rankssm
