#include "futu/model.hpp"

#include <algorithm>
#include <unordered_map>

namespace futu::model {

namespace {

void add_conv_count(ParamCount& pc, const std::string& name, std::size_t kh, std::size_t kw,
                    std::size_t cin, std::size_t cout) {
    pc.items.emplace_back(name + ".weight", kh * kw * cin * cout);
    pc.items.emplace_back(name + ".bias", cout);
}

void add_bn_count(ParamCount& pc, const std::string& name, std::size_t c) {
    pc.items.emplace_back(name + ".gamma", c);
    pc.items.emplace_back(name + ".beta", c);
}

void add_block_count(ParamCount& pc, const std::string& name, std::size_t cin, std::size_t f) {
    add_conv_count(pc, name + ".conv1", 3, 3, cin, f);
    add_bn_count(pc, name + ".bn1", f);
    add_conv_count(pc, name + ".conv2", 3, 3, f, f);
    add_bn_count(pc, name + ".bn2", f);
}

void add_linear_count(ParamCount& pc, const std::string& name, std::size_t din,
                      std::size_t dout) {
    pc.items.emplace_back(name + ".weight", din * dout);
    pc.items.emplace_back(name + ".bias", dout);
}

} // namespace

ParamCount count_params(const ModelConfig& cfg) {
    cfg.validate();
    ParamCount pc;
    std::size_t ch = cfg.input_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        add_block_count(pc, "enc" + std::to_string(i + 1), ch, cfg.encoder_filters[i]);
        ch = cfg.encoder_filters[i];
    }
    const auto& t = cfg.transformer;
    add_linear_count(pc, "transformer.proj", t.token_channels, t.model_dim);
    pc.items.emplace_back("transformer.pos", t.num_tokens() * t.model_dim);
    for (std::size_t i = 0; i < t.depth; ++i) {
        const std::string p = "transformer.layer" + std::to_string(i);
        add_linear_count(pc, p + ".attn.q", t.model_dim, t.model_dim);
        add_linear_count(pc, p + ".attn.k", t.model_dim, t.model_dim);
        add_linear_count(pc, p + ".attn.v", t.model_dim, t.model_dim);
        add_linear_count(pc, p + ".attn.out", t.model_dim, t.model_dim);
        pc.items.emplace_back(p + ".ln1.gamma", t.model_dim);
        pc.items.emplace_back(p + ".ln1.beta", t.model_dim);
        add_linear_count(pc, p + ".mlp1", t.model_dim, t.mlp_hidden);
        add_linear_count(pc, p + ".mlp2", t.mlp_hidden, t.model_dim);
        pc.items.emplace_back(p + ".ln2.gamma", t.model_dim);
        pc.items.emplace_back(p + ".ln2.beta", t.model_dim);
    }
    add_linear_count(pc, "transformer.back_proj", t.model_dim, t.token_channels);
    std::size_t in_ch = cfg.encoder_filters[3];
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string p = "dec" + std::to_string(i + 1);
        std::size_t up_ch = in_ch;
        if (cfg.upsample_kind == UpsampleKind::transposed) {
            up_ch = cfg.decoder_filters[i];
            add_conv_count(pc, p + ".up", 2, 2, in_ch, up_ch);
        }
        add_block_count(pc, p, up_ch + cfg.encoder_filters[3 - i], cfg.decoder_filters[i]);
        in_ch = cfg.decoder_filters[i];
    }
    add_conv_count(pc, "head", 1, 1, cfg.decoder_filters[3], 1);
    for (const auto& [name, n] : pc.items) pc.total += n;
    return pc;
}

namespace {

constexpr const char* kMetaName = "meta.config";

Tensor encode_config(const ModelConfig& cfg) {
    Tensor t({12});
    auto& d = t.data();
    d[0] = static_cast<float>(cfg.input_hw);
    d[1] = static_cast<float>(cfg.input_channels);
    for (std::size_t i = 0; i < 4; ++i) d[2 + i] = static_cast<float>(cfg.encoder_filters[i]);
    d[6] = static_cast<float>(cfg.transformer.depth);
    d[7] = static_cast<float>(cfg.transformer.heads);
    d[8] = static_cast<float>(cfg.transformer.model_dim);
    d[9] = static_cast<float>(cfg.transformer.mlp_hidden);
    d[10] = static_cast<float>(cfg.transformer.patch_size);
    d[11] = cfg.upsample_kind == UpsampleKind::transposed ? 0.0f : 1.0f;
    return t;
}

ModelConfig decode_config(const Tensor& t) {
    if (t.numel() != 12) throw IoError("malformed meta.config entry in weights file");
    const auto& d = t.data();
    ModelConfig cfg;
    cfg.input_hw = static_cast<std::size_t>(d[0]);
    cfg.input_channels = static_cast<std::size_t>(d[1]);
    for (std::size_t i = 0; i < 4; ++i) {
        cfg.encoder_filters[i] = static_cast<std::size_t>(d[2 + i]);
        cfg.decoder_filters[i] = static_cast<std::size_t>(d[5 - i]);
    }
    cfg.transformer.depth = static_cast<std::size_t>(d[6]);
    cfg.transformer.heads = static_cast<std::size_t>(d[7]);
    cfg.transformer.model_dim = static_cast<std::size_t>(d[8]);
    cfg.transformer.mlp_hidden = static_cast<std::size_t>(d[9]);
    cfg.transformer.patch_size = static_cast<std::size_t>(d[10]);
    cfg.transformer.input_hw = cfg.input_hw;
    cfg.transformer.token_channels = cfg.encoder_filters[3];
    cfg.upsample_kind = d[11] == 0.0f ? UpsampleKind::transposed : UpsampleKind::nearest;
    cfg.validate();
    return cfg;
}

} // namespace

void save_model(ModelWeightsT<float>& weights, const std::filesystem::path& path) {
    std::vector<NamedTensor> entries;
    entries.push_back(NamedTensor{kMetaName, encode_config(weights.config)});
    for (auto& [name, tensor] : weights.named_tensors())
        entries.push_back(NamedTensor{name, tensor});
    save_weights(entries, path);
}

void load_model(ModelWeightsT<float>& weights, const std::filesystem::path& path) {
    auto entries = load_weights(path);
    std::unordered_map<std::string, Tensor> loaded;
    for (auto& e : entries) loaded.emplace(e.name, e.tensor);

    if (auto meta = loaded.find(kMetaName); meta != loaded.end()) {
        const ModelConfig file_cfg = decode_config(meta->second);
        const Tensor expected = encode_config(weights.config);
        if (meta->second.data() != expected.data())
            throw IoError("weights file " + path.string() +
                          " was produced by a different model configuration");
        (void)file_cfg;
        loaded.erase(meta);
    }

    auto targets = weights.named_tensors();
    if (loaded.size() != targets.size())
        throw IoError("weights file " + path.string() + " holds " +
                      std::to_string(loaded.size()) + " tensors, model expects " +
                      std::to_string(targets.size()));
    for (auto& [name, tensor] : targets) {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw IoError("weights file " + path.string() + " is missing tensor '" + name + "'");
        if (it->second.shape() != tensor.shape())
            throw IoError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                          ", model expects " + shape_str(tensor.shape()));
        tensor.data() = it->second.data();
    }
}

ModelWeightsT<float> load_model_auto(const std::filesystem::path& path) {
    auto entries = load_weights(path);
    const auto meta = std::find_if(entries.begin(), entries.end(),
                                   [](const NamedTensor& e) { return e.name == kMetaName; });
    if (meta == entries.end())
        throw IoError("weights file " + path.string() +
                      " carries no model configuration (meta.config missing)");
    ModelWeightsT<float> weights = ModelWeightsT<float>::init(decode_config(meta->tensor), 0);
    load_model(weights, path);
    return weights;
}

} // namespace futu::model
