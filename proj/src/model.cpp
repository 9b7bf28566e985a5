#include "rankssm/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rankssm/ops.hpp"

namespace rankssm {

std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::vector<int> tokenize(std::string_view text, int max_len) {
    if (max_len < 1) throw ConfigError("tokenize: max_len must be >= 1");
    std::vector<int> ids;
    const std::size_t keep = std::min(text.size(), static_cast<std::size_t>(max_len - 1));
    ids.reserve(keep + 1);
    for (std::size_t i = 0; i < keep; ++i) {
        ids.push_back(static_cast<int>(static_cast<unsigned char>(text[i])));
    }
    ids.push_back(vocab::EOS);
    return ids;
}

std::string decode(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

BackboneKind parse_backbone_kind(const std::string& s) {
    if (s == "mamba") return BackboneKind::mamba;
    if (s == "attention-causal") return BackboneKind::attention_causal;
    if (s == "attention-bidirectional") return BackboneKind::attention_bidirectional;
    throw ConfigError("unknown backbone kind '" + s + "'");
}

std::string to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::mamba: return "mamba";
        case BackboneKind::attention_causal: return "attention-causal";
        case BackboneKind::attention_bidirectional: return "attention-bidirectional";
    }
    return "?";
}

namespace {

void validate_config(const BackboneConfig& cfg) {
    if (cfg.n_layers < 1 || cfg.d_model < 1 || cfg.max_len < 1) {
        throw ConfigError("backbone config: n_layers, d_model, max_len must be >= 1");
    }
    if (cfg.kind == BackboneKind::mamba) {
        if (cfg.n_state < 1) throw ConfigError("backbone config: n_state must be >= 1");
    } else {
        if (cfg.n_heads < 1 || cfg.d_model % cfg.n_heads != 0) {
            throw ConfigError("backbone config: d_model must be divisible by n_heads");
        }
    }
}

AttentionLayerParams make_attention_layer(int d_model, int n_heads, Rng& rng) {
    AttentionLayerParams l;
    const int hd = d_model / n_heads;
    l.norm1_w = Tensor::full({d_model}, 1.0).set_requires_grad(true);
    l.norm2_w = Tensor::full({d_model}, 1.0).set_requires_grad(true);
    for (int h = 0; h < n_heads; ++h) {
        l.q.push_back(make_projection(d_model, hd, rng));
        l.k.push_back(make_projection(d_model, hd, rng));
        l.v.push_back(make_projection(d_model, hd, rng));
        l.o.push_back(make_projection(hd, d_model, rng));
    }
    l.ffn1 = make_projection(d_model, 4 * d_model, rng, /*bias=*/true);
    l.ffn2 = make_projection(4 * d_model, d_model, rng, /*bias=*/true);
    return l;
}

}  // namespace

RerankerModel make_model(const BackboneConfig& cfg) {
    validate_config(cfg);
    Rng rng(cfg.seed);
    RerankerModel m;
    m.backbone.cfg = cfg;
    m.backbone.embed = Tensor::randn({vocab::SIZE, cfg.d_model}, rng, 0.0, 0.02)
                           .set_requires_grad(true);
    if (cfg.kind != BackboneKind::mamba) {
        m.backbone.pos =
            Tensor::randn({cfg.max_len, cfg.d_model}, rng, 0.0, 0.02).set_requires_grad(true);
    }
    for (int i = 0; i < cfg.n_layers; ++i) {
        if (cfg.kind == BackboneKind::mamba) {
            m.backbone.mamba_layers.push_back(make_mamba_block(cfg.d_model, cfg.n_state, rng));
        } else {
            m.backbone.attn_layers.push_back(make_attention_layer(cfg.d_model, cfg.n_heads, rng));
        }
    }
    m.backbone.final_norm_w = Tensor::full({cfg.d_model}, 1.0).set_requires_grad(true);
    m.head.w = Tensor::randn({cfg.d_model, 1}, rng, 0.0, 0.02).set_requires_grad(true);
    m.head.b = Tensor::zeros({1}).set_requires_grad(true);
    return m;
}

namespace {

void add_projection(NamedTensors& out, const std::string& name, const Projection& p) {
    out.emplace_back(name + ".w", p.w);
    if (p.b.defined()) out.emplace_back(name + ".b", p.b);
    if (p.lora) {
        out.emplace_back(name + ".lora_down", p.lora->down);
        out.emplace_back(name + ".lora_up", p.lora->up);
    }
}

}  // namespace

NamedTensors named_params(const RerankerModel& model) {
    NamedTensors out;
    const Backbone& bb = model.backbone;
    out.emplace_back("embed.w", bb.embed);
    if (bb.pos.defined()) out.emplace_back("pos.w", bb.pos);
    for (std::size_t i = 0; i < bb.mamba_layers.size(); ++i) {
        const MambaBlockParams& l = bb.mamba_layers[i];
        const std::string p = "layers." + std::to_string(i);
        out.emplace_back(p + ".norm.w", l.norm_w);
        add_projection(out, p + ".in_x", l.in_x);
        add_projection(out, p + ".in_z", l.in_z);
        out.emplace_back(p + ".conv.w", l.conv_w);
        out.emplace_back(p + ".conv.b", l.conv_b);
        out.emplace_back(p + ".ssm.a_log", l.ssm.a_log);
        add_projection(out, p + ".ssm.delta", l.ssm.delta_proj);
        add_projection(out, p + ".ssm.b", l.ssm.b_proj);
        add_projection(out, p + ".ssm.c", l.ssm.c_proj);
        out.emplace_back(p + ".ssm.skip", l.ssm.skip_d);
        add_projection(out, p + ".out", l.out);
    }
    for (std::size_t i = 0; i < bb.attn_layers.size(); ++i) {
        const AttentionLayerParams& l = bb.attn_layers[i];
        const std::string p = "layers." + std::to_string(i);
        out.emplace_back(p + ".norm1.w", l.norm1_w);
        for (std::size_t h = 0; h < l.q.size(); ++h) {
            add_projection(out, p + ".attn.q" + std::to_string(h), l.q[h]);
            add_projection(out, p + ".attn.k" + std::to_string(h), l.k[h]);
            add_projection(out, p + ".attn.v" + std::to_string(h), l.v[h]);
            add_projection(out, p + ".attn.o" + std::to_string(h), l.o[h]);
        }
        out.emplace_back(p + ".norm2.w", l.norm2_w);
        add_projection(out, p + ".ffn1", l.ffn1);
        add_projection(out, p + ".ffn2", l.ffn2);
    }
    out.emplace_back("final_norm.w", bb.final_norm_w);
    out.emplace_back("head.w", model.head.w);
    out.emplace_back("head.b", model.head.b);
    return out;
}

std::vector<Tensor> trainable_params(const RerankerModel& model) {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params(model)) {
        if (t.requires_grad()) out.push_back(t);
    }
    return out;
}

void apply_lora(RerankerModel& model, int rank, double alpha) {
    if (rank < 1) throw ConfigError("apply_lora: rank must be >= 1");
    for (auto& [name, t] : named_params(model)) t.set_requires_grad(false);
    Rng rng(model.backbone.cfg.seed ^ 0x5eedull);
    auto wrap_if_wide = [&](Projection& p) {
        if (std::min(p.d_in(), p.d_out()) >= rank) lora_wrap(p, rank, alpha, rng);
    };
    for (MambaBlockParams& l : model.backbone.mamba_layers) {
        wrap_if_wide(l.in_x);
        wrap_if_wide(l.in_z);
        wrap_if_wide(l.ssm.delta_proj);
        wrap_if_wide(l.ssm.b_proj);
        wrap_if_wide(l.ssm.c_proj);
        wrap_if_wide(l.out);
    }
    for (AttentionLayerParams& l : model.backbone.attn_layers) {
        for (auto* heads : {&l.q, &l.k, &l.v, &l.o}) {
            for (Projection& p : *heads) wrap_if_wide(p);
        }
        wrap_if_wide(l.ffn1);
        wrap_if_wide(l.ffn2);
    }
    // the head is randomly initialized either way, so it keeps training
    model.head.w.set_requires_grad(true);
    model.head.b.set_requires_grad(true);
}

namespace {

Tensor attention_layer_forward(const Tensor& x, const AttentionLayerParams& l, bool causal) {
    const int L = x.dim(0);
    Tensor mask;
    if (causal) {
        mask = Tensor::zeros({L, L});
        auto mv = mask.mutable_data();
        for (int i = 0; i < L; ++i) {
            for (int j = i + 1; j < L; ++j) mv[static_cast<std::size_t>(i) * L + j] = -1e30;
        }
    }
    Tensor xn = rmsnorm(x, l.norm1_w);
    Tensor acc;
    const int hd = l.q[0].d_out();
    for (std::size_t h = 0; h < l.q.size(); ++h) {
        Tensor qh = forward(l.q[h], xn);
        Tensor kh = forward(l.k[h], xn);
        Tensor vh = forward(l.v[h], xn);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
        if (causal) scores = add(scores, mask);
        Tensor attn = softmax_lastdim(scores);
        Tensor oh = forward(l.o[h], matmul(attn, vh));
        acc = acc.defined() ? add(acc, oh) : oh;
    }
    Tensor y = add(x, acc);
    Tensor ffn = forward(l.ffn2, silu(forward(l.ffn1, rmsnorm(y, l.norm2_w))));
    return add(y, ffn);
}

}  // namespace

Tensor backbone_forward(const Backbone& bb, std::span<const int> ids, ScanKind kind,
                        BackwardMemory memory) {
    if (static_cast<int>(ids.size()) > bb.cfg.max_len) {
        throw ContractError("backbone_forward: input of " + std::to_string(ids.size()) +
                            " ids exceeds max_len=" + std::to_string(bb.cfg.max_len) +
                            " (tokenizer must pre-truncate)");
    }
    if (ids.empty()) throw ContractError("backbone_forward: empty input");
    std::vector<int> idvec(ids.begin(), ids.end());
    Tensor x = embedding(bb.embed, idvec);
    if (bb.pos.defined()) {
        std::vector<int> positions(ids.size());
        std::iota(positions.begin(), positions.end(), 0);
        x = add(x, embedding(bb.pos, positions));
    }
    if (bb.cfg.kind == BackboneKind::mamba) {
        for (const MambaBlockParams& l : bb.mamba_layers) {
            x = mamba_block_forward(x, l, kind, memory);
        }
    } else {
        const bool causal = bb.cfg.kind == BackboneKind::attention_causal;
        for (const AttentionLayerParams& l : bb.attn_layers) {
            x = attention_layer_forward(x, l, causal);
        }
    }
    return rmsnorm(x, bb.final_norm_w);
}

Tensor score_graph(const RerankerModel& model, std::span<const int> ids, ScanKind kind,
                   BackwardMemory memory) {
    const bool bidir = model.backbone.cfg.kind == BackboneKind::attention_bidirectional;
    if (ids.empty()) throw DataError("score: empty input");
    if (bidir) {
        if (ids.front() != vocab::CLS) {
            throw DataError("score: bidirectional input must begin with [CLS]");
        }
    } else if (ids.back() != vocab::EOS) {
        throw DataError("score: causal input must end with [EOS]");
    }
    Tensor rep = backbone_forward(model.backbone, ids, kind, memory);
    Tensor pooled = select_row(rep, bidir ? 0 : rep.dim(0) - 1);
    return add(matmul(pooled, model.head.w), model.head.b);
}

double score_value(const RerankerModel& model, std::span<const int> ids) {
    NoGradGuard ng;
    return score_graph(model, ids).item();
}

long total_param_count(const RerankerModel& model) {
    long n = 0;
    for (const auto& [name, t] : named_params(model)) n += t.numel();
    return n;
}

std::string model_summary(const RerankerModel& model) {
    std::ostringstream os;
    os << "kind=" << to_string(model.backbone.cfg.kind) << " params:\n";
    for (const auto& [name, t] : named_params(model)) {
        os << "  " << name << " " << shape_str(t.shape()) << " = " << t.numel() << "\n";
    }
    os << "total " << total_param_count(model) << "\n";
    return os.str();
}

ModelFileConfig read_model_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("model config: cannot open " + path);
    ModelFileConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError("model config: line " + std::to_string(lineno) + " is not key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "kind") cfg.backbone.kind = parse_backbone_kind(val);
            else if (key == "n_layers") cfg.backbone.n_layers = std::stoi(val);
            else if (key == "d_model") cfg.backbone.d_model = std::stoi(val);
            else if (key == "n_state") cfg.backbone.n_state = std::stoi(val);
            else if (key == "n_heads") cfg.backbone.n_heads = std::stoi(val);
            else if (key == "max_len") cfg.backbone.max_len = std::stoi(val);
            else if (key == "seed") cfg.backbone.seed = std::stoull(val);
            else if (key == "lora_rank") cfg.lora_rank = std::stoi(val);
            else if (key == "lora_alpha") cfg.lora_alpha = std::stod(val);
            else throw DataError("model config: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw DataError("model config: bad value for '" + key + "' at line " +
                            std::to_string(lineno));
        }
    }
    return cfg;
}

void write_model_config(const std::string& path, const ModelFileConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw DataError("model config: cannot open " + path + " for writing");
    os << "kind=" << to_string(cfg.backbone.kind) << "\n";
    os << "n_layers=" << cfg.backbone.n_layers << "\n";
    os << "d_model=" << cfg.backbone.d_model << "\n";
    if (cfg.backbone.kind == BackboneKind::mamba) {
        os << "n_state=" << cfg.backbone.n_state << "\n";
    } else {
        os << "n_heads=" << cfg.backbone.n_heads << "\n";
    }
    os << "max_len=" << cfg.backbone.max_len << "\n";
    os << "seed=" << cfg.backbone.seed << "\n";
    if (cfg.lora_rank) os << "lora_rank=" << *cfg.lora_rank << "\n";
    if (cfg.lora_alpha) os << "lora_alpha=" << *cfg.lora_alpha << "\n";
}

RerankerModel model_from_config(const ModelFileConfig& cfg) {
    RerankerModel m = make_model(cfg.backbone);
    if (cfg.lora_rank) {
        apply_lora(m, *cfg.lora_rank, cfg.lora_alpha.value_or(static_cast<double>(*cfg.lora_rank)));
    }
    return m;
}

}  // namespace rankssm
