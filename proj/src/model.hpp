#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rng.hpp"
#include "templating.hpp"
#include "tokenizer.hpp"

namespace diglot {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq_len = 128;
    double dropout = 0.0;
    uint64_t init_seed = 42;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& doc);
};

// Padded batch of token rows. supervised marks the positions whose tokens are
// training targets (assistant content plus the closing EOT); supervised
// positions are always attended ones.
struct TokenBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> ids;             // [batch*seq]
    std::vector<uint8_t> supervised;  // [batch*seq]
    std::vector<uint8_t> attention;   // [batch*seq]
    std::vector<std::string> example_ids;

    int at(int b, int t) const { return ids[static_cast<size_t>(b) * seq + t]; }
};

// Single-row batch with layout: USER <user tokens> ASSISTANT <assistant tokens> EOT.
TokenBatch encode_chat(const ChatExample& example, const Tokenizer& tokenizer, int max_seq_len);

// Right-pads rows to a common length.
TokenBatch collate(const std::vector<TokenBatch>& rows);

// One named parameter tensor with its gradient buffer.
struct Param {
    std::string name;
    int rows = 0, cols = 0;  // cols == 1 for vectors
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;
    bool decay = false;  // weight decay applies to matrices only

    int64_t size() const { return static_cast<int64_t>(value.size()); }
};

enum class LoraTarget { attn_q, attn_k, attn_v, attn_o, ffn };
std::string to_string(LoraTarget target);
LoraTarget lora_target_from_string(std::string_view s);

struct LoraConfig {
    int rank = 16;
    double alpha = 32.0;
    double dropout = 0.05;
    std::set<LoraTarget> targets = {LoraTarget::attn_q, LoraTarget::attn_k, LoraTarget::attn_v, LoraTarget::attn_o,
                                    LoraTarget::ffn};

    void validate() const;
    nlohmann::json to_json() const;
    static LoraConfig from_json(const nlohmann::json& doc);
};

struct LoraAdapter {
    Param* a = nullptr;  // [in x rank]
    Param* b = nullptr;  // [rank x out]
    double scale = 1.0;
    double dropout = 0.0;
};

struct Linear {
    Param* w = nullptr;  // [in x out]
    Param* b = nullptr;  // [out]
    int in = 0, out = 0;
    std::optional<LoraAdapter> lora;
};

struct LayerNormParams {
    Param* gamma = nullptr;
    Param* beta = nullptr;
};

// Mean next-token cross-entropy over supervised positions (labels shifted
// left by one). Pure function of (logits, batch); errors when the batch has
// no supervised position.
double masked_loss(const std::vector<double>& logits, const TokenBatch& batch, int vocab_size);

// Pre-norm transformer decoder with learned positional embeddings and a
// weight-tied output head.
class ToyLM {
public:
    explicit ToyLM(const ModelConfig& config);

    ToyLM(const ToyLM&) = delete;
    ToyLM& operator=(const ToyLM&) = delete;
    ToyLM(ToyLM&&) = default;
    ToyLM& operator=(ToyLM&&) = default;

    const ModelConfig& config() const { return config_; }

    // Eval-mode logits, [batch*seq*vocab], causal and deterministic.
    std::vector<double> forward(const TokenBatch& batch) const;

    // Training pass: forward (with dropout when rng given and rate > 0),
    // masked loss, gradient accumulation scaled by grad_scale.
    double loss_and_backward(const TokenBatch& batch, double grad_scale = 1.0, Rng* dropout_rng = nullptr);

    double eval_loss(const TokenBatch& batch) const;

    // Incremental decoding with a KV cache.
    struct DecodeState;
    std::unique_ptr<DecodeState> begin_decode() const;
    // Feeds one token, returns the next-token logits row.
    void decode_step(DecodeState& state, int token, std::vector<double>& logits_row) const;
    static int decode_pos(const DecodeState& state);

    std::vector<Param*> parameters();
    std::vector<const Param*> parameters() const;
    int64_t num_params() const;
    int64_t num_trainable_params() const;
    void zero_grads();

    // LoRA: wraps the configured projections with rank-r adapters (delta
    // scaled by alpha/rank, A small-random, B zero) and freezes every base
    // parameter.
    void apply_lora(const LoraConfig& config);
    // Folds the adapters into the base weights and unfreezes the model;
    // errors when no adapters are attached.
    void merge_lora();
    bool has_lora() const { return lora_config_.has_value(); }
    const std::optional<LoraConfig>& lora_config() const { return lora_config_; }

    ~ToyLM();

private:
    struct Block {
        LayerNormParams ln1, ln2;
        Linear wq, wk, wv, wo, fc1, fc2;
    };

    ModelConfig config_;
    std::vector<std::unique_ptr<Param>> params_;
    Param* tok_emb_ = nullptr;  // [vocab x d_model], tied with the output head
    Param* pos_emb_ = nullptr;  // [max_seq x d_model]
    std::vector<Block> blocks_;
    LayerNormParams ln_f_;
    std::optional<LoraConfig> lora_config_;

    Param* add_param(const std::string& name, int rows, int cols, bool decay);
    Linear make_linear(const std::string& name, int in, int out, Rng& rng);
    LayerNormParams make_layernorm(const std::string& name, int dim);

    struct Activations;
    void run_forward(const TokenBatch& batch, Activations& acts, Rng* dropout_rng) const;
    friend struct ModelIo;
};

}  // namespace diglot
