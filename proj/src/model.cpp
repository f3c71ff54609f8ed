#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "error.hpp"

namespace diglot {

namespace {

// y[M x N] = x[M x K] * w[K x N]
void matmul(const double* x, const double* w, double* y, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        double* yi = y + static_cast<size_t>(i) * N;
        std::memset(yi, 0, sizeof(double) * static_cast<size_t>(N));
        const double* xi = x + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            double xv = xi[k];
            if (xv == 0.0) continue;
            const double* wk = w + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) yi[j] += xv * wk[j];
        }
    }
}

// dx[M x K] += dy[M x N] * w^T  (w is [K x N])
void matmul_acc_dx(const double* dy, const double* w, double* dx, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* dyi = dy + static_cast<size_t>(i) * N;
        double* dxi = dx + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const double* wk = w + static_cast<size_t>(k) * N;
            double sum = 0.0;
            for (int j = 0; j < N; ++j) sum += dyi[j] * wk[j];
            dxi[k] += sum;
        }
    }
}

// dw[K x N] += x^T * dy  (x is [M x K], dy is [M x N])
void matmul_acc_dw(const double* x, const double* dy, double* dw, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* xi = x + static_cast<size_t>(i) * K;
        const double* dyi = dy + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            double xv = xi[k];
            if (xv == 0.0) continue;
            double* dwk = dw + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) dwk[j] += xv * dyi[j];
        }
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

void layernorm_forward(const double* x, const Param& gamma, const Param& beta, double* y, double* mean, double* rstd,
                       int rows, int dim) {
    for (int i = 0; i < rows; ++i) {
        const double* xi = x + static_cast<size_t>(i) * dim;
        double m = 0.0;
        for (int j = 0; j < dim; ++j) m += xi[j];
        m /= dim;
        double var = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = xi[j] - m;
            var += d * d;
        }
        var /= dim;
        double r = 1.0 / std::sqrt(var + 1e-5);
        mean[i] = m;
        rstd[i] = r;
        double* yi = y + static_cast<size_t>(i) * dim;
        for (int j = 0; j < dim; ++j) yi[j] = gamma.value[static_cast<size_t>(j)] * (xi[j] - m) * r + beta.value[static_cast<size_t>(j)];
    }
}

void layernorm_backward(const double* x, const double* dy, const double* mean, const double* rstd, Param& gamma,
                        Param& beta, double* dx, int rows, int dim) {
    for (int i = 0; i < rows; ++i) {
        const double* xi = x + static_cast<size_t>(i) * dim;
        const double* dyi = dy + static_cast<size_t>(i) * dim;
        double* dxi = dx + static_cast<size_t>(i) * dim;
        double m = mean[i], r = rstd[i];
        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - m) * r;
            double dyg = dyi[j] * gamma.value[static_cast<size_t>(j)];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            gamma.grad[static_cast<size_t>(j)] += dyi[j] * xhat;
            beta.grad[static_cast<size_t>(j)] += dyi[j];
        }
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - m) * r;
            double dyg = dyi[j] * gamma.value[static_cast<size_t>(j)];
            dxi[j] += r * (dyg - sum_dyg / dim - xhat * sum_dyg_xhat / dim);
        }
    }
}

// Invertedime dropout mask: entries are 0 or 1/(1-rate).
std::vector<double> draw_dropout_mask(size_t n, double rate, Rng* rng) {
    if (!rng || rate <= 0.0) return {};
    std::vector<double> mask(n);
    double keep = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = rng->next_double() < rate ? 0.0 : keep;
    return mask;
}

void apply_mask(double* x, const std::vector<double>& mask) {
    for (size_t i = 0; i < mask.size(); ++i) x[i] *= mask[i];
}

struct LinearCache {
    const double* x = nullptr;       // input rows, owned by the caller
    std::vector<double> xa;          // lora: (masked x) * A, [rows x rank]
    std::vector<double> lora_mask;   // lora input dropout mask
};

void linear_forward(const Linear& lin, const double* x, double* y, int rows, LinearCache* cache, Rng* dropout_rng) {
    matmul(x, lin.w->value.data(), y, rows, lin.in, lin.out);
    for (int i = 0; i < rows; ++i) {
        double* yi = y + static_cast<size_t>(i) * lin.out;
        for (int j = 0; j < lin.out; ++j) yi[j] += lin.b->value[static_cast<size_t>(j)];
    }
    if (cache) cache->x = x;
    if (!lin.lora) return;

    const LoraAdapter& lora = *lin.lora;
    int rank = lora.a->cols;
    std::vector<double> x_dropped;
    const double* lora_in = x;
    std::vector<double> mask = draw_dropout_mask(static_cast<size_t>(rows) * lin.in, lora.dropout, dropout_rng);
    if (!mask.empty()) {
        x_dropped.assign(x, x + static_cast<size_t>(rows) * lin.in);
        apply_mask(x_dropped.data(), mask);
        lora_in = x_dropped.data();
    }
    std::vector<double> xa(static_cast<size_t>(rows) * rank);
    matmul(lora_in, lora.a->value.data(), xa.data(), rows, lin.in, rank);
    std::vector<double> delta(static_cast<size_t>(rows) * lin.out);
    matmul(xa.data(), lora.b->value.data(), delta.data(), rows, rank, lin.out);
    for (size_t i = 0; i < delta.size(); ++i) y[i] += lora.scale * delta[i];
    if (cache) {
        cache->xa = std::move(xa);
        cache->lora_mask = std::move(mask);
    }
}

void linear_backward(const Linear& lin, const double* dy, double* dx, int rows, const LinearCache& cache) {
    if (lin.w->trainable) {
        matmul_acc_dw(cache.x, dy, lin.w->grad.data(), rows, lin.in, lin.out);
        for (int i = 0; i < rows; ++i) {
            const double* dyi = dy + static_cast<size_t>(i) * lin.out;
            for (int j = 0; j < lin.out; ++j) lin.b->grad[static_cast<size_t>(j)] += dyi[j];
        }
    }
    if (dx) matmul_acc_dx(dy, lin.w->value.data(), dx, rows, lin.in, lin.out);

    if (!lin.lora) return;
    const LoraAdapter& lora = *lin.lora;
    int rank = lora.a->cols;
    // d_delta = scale * dy
    std::vector<double> dxa(static_cast<size_t>(rows) * rank, 0.0);
    matmul_acc_dx(dy, lora.b->value.data(), dxa.data(), rows, rank, lin.out);
    for (auto& v : dxa) v *= lora.scale;
    // dB += (xa)^T * (scale * dy)
    {
        std::vector<double> scaled_dy(dy, dy + static_cast<size_t>(rows) * lin.out);
        for (auto& v : scaled_dy) v *= lora.scale;
        matmul_acc_dw(cache.xa.data(), scaled_dy.data(), lora.b->grad.data(), rows, rank, lin.out);
    }
    // dA += (masked x)^T * dxa
    std::vector<double> x_dropped;
    const double* lora_in = cache.x;
    if (!cache.lora_mask.empty()) {
        x_dropped.assign(cache.x, cache.x + static_cast<size_t>(rows) * lin.in);
        apply_mask(x_dropped.data(), cache.lora_mask);
        lora_in = x_dropped.data();
    }
    matmul_acc_dw(lora_in, dxa.data(), lora.a->grad.data(), rows, lin.in, rank);
    if (dx) {
        std::vector<double> dmasked(static_cast<size_t>(rows) * lin.in, 0.0);
        matmul_acc_dx(dxa.data(), lora.a->value.data(), dmasked.data(), rows, lin.in, rank);
        if (!cache.lora_mask.empty()) apply_mask(dmasked.data(), cache.lora_mask);
        for (size_t i = 0; i < dmasked.size(); ++i) dx[i] += dmasked[i];
    }
}

// Shared loss core: mean next-token cross-entropy over supervised positions.
// When dlogits is non-null it receives (softmax - onehot) * grad_scale / n.
double loss_core(const std::vector<double>& logits, const TokenBatch& batch, int vocab, double* dlogits,
                 double grad_scale) {
    int B = batch.batch, T = batch.seq;
    int64_t n_supervised = 0;
    for (int b = 0; b < B; ++b)
        for (int t = 1; t < T; ++t)
            if (batch.supervised[static_cast<size_t>(b) * T + t] && batch.attention[static_cast<size_t>(b) * T + t])
                ++n_supervised;
    if (n_supervised == 0) fail(ErrorKind::invalid_argument, "masked_loss: batch has no supervised positions");

    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        for (int t = 1; t < T; ++t) {
            size_t pos = static_cast<size_t>(b) * T + t;
            if (!batch.supervised[pos] || !batch.attention[pos]) continue;
            const double* row = logits.data() + (static_cast<size_t>(b) * T + t - 1) * vocab;
            int label = batch.ids[pos];
            double mx = row[0];
            for (int v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
            double z = 0.0;
            for (int v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
            double logz = std::log(z) + mx;
            loss += logz - row[label];
            if (dlogits) {
                double* drow = dlogits + (static_cast<size_t>(b) * T + t - 1) * vocab;
                double inv = grad_scale / static_cast<double>(n_supervised);
                for (int v = 0; v < vocab; ++v) drow[v] += std::exp(row[v] - logz) * inv;
                drow[label] -= inv;
            }
        }
    }
    return loss / static_cast<double>(n_supervised);
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < Tokenizer::kNumSpecials + 1) fail(ErrorKind::invalid_argument, "vocab_size too small");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 2)
        fail(ErrorKind::invalid_argument, "model dimensions must be positive");
    if (d_model % n_heads != 0) fail(ErrorKind::invalid_argument, "d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::invalid_argument, "dropout must be in [0,1)");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"vocab_size", vocab_size}, {"d_model", d_model},       {"n_layers", n_layers},
            {"n_heads", n_heads},       {"d_ff", d_ff},             {"max_seq_len", max_seq_len},
            {"dropout", dropout},       {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
    ModelConfig c;
    c.vocab_size = doc.at("vocab_size").get<int>();
    c.d_model = doc.at("d_model").get<int>();
    c.n_layers = doc.at("n_layers").get<int>();
    c.n_heads = doc.at("n_heads").get<int>();
    c.d_ff = doc.at("d_ff").get<int>();
    c.max_seq_len = doc.at("max_seq_len").get<int>();
    c.dropout = doc.at("dropout").get<double>();
    c.init_seed = doc.at("init_seed").get<uint64_t>();
    return c;
}

TokenBatch encode_chat(const ChatExample& example, const Tokenizer& tokenizer, int max_seq_len) {
    const auto& user = example.user();
    const auto& assistant = example.assistant();
    if (!assistant.supervised)
        fail(ErrorKind::invalid_argument, "encode_chat: assistant segment must be supervised");
    auto user_ids = tokenizer.encode(user.text);
    auto assistant_ids = tokenizer.encode(assistant.text);
    if (assistant_ids.empty())
        fail(ErrorKind::invalid_argument, "encode_chat: empty assistant text in example '" + example.meta.source_id + "'");

    TokenBatch row;
    row.batch = 1;
    row.example_ids.push_back(example.meta.source_id);
    row.ids.push_back(Tokenizer::kUser);
    row.supervised.push_back(0);
    for (int id : user_ids) {
        row.ids.push_back(id);
        row.supervised.push_back(0);
    }
    row.ids.push_back(Tokenizer::kAssistant);
    row.supervised.push_back(0);
    for (int id : assistant_ids) {
        row.ids.push_back(id);
        row.supervised.push_back(1);
    }
    row.ids.push_back(Tokenizer::kEot);
    row.supervised.push_back(1);
    row.seq = static_cast<int>(row.ids.size());
    row.attention.assign(row.ids.size(), 1);
    if (row.seq > max_seq_len)
        fail(ErrorKind::invalid_argument, "encode_chat: example '" + example.meta.source_id + "' needs " +
                                              std::to_string(row.seq) + " tokens, max_seq_len is " +
                                              std::to_string(max_seq_len) + " (user " + std::to_string(user_ids.size()) +
                                              ", assistant " + std::to_string(assistant_ids.size()) + ")");
    return row;
}

TokenBatch collate(const std::vector<TokenBatch>& rows) {
    if (rows.empty()) fail(ErrorKind::invalid_argument, "collate: no rows");
    TokenBatch out;
    out.batch = static_cast<int>(rows.size());
    out.seq = 0;
    for (const auto& row : rows) out.seq = std::max(out.seq, row.seq);
    out.ids.assign(static_cast<size_t>(out.batch) * out.seq, Tokenizer::kPad);
    out.supervised.assign(static_cast<size_t>(out.batch) * out.seq, 0);
    out.attention.assign(static_cast<size_t>(out.batch) * out.seq, 0);
    for (int b = 0; b < out.batch; ++b) {
        const auto& row = rows[static_cast<size_t>(b)];
        if (row.batch != 1) fail(ErrorKind::invalid_argument, "collate: rows must be single examples");
        for (int t = 0; t < row.seq; ++t) {
            size_t pos = static_cast<size_t>(b) * out.seq + t;
            out.ids[pos] = row.ids[static_cast<size_t>(t)];
            out.supervised[pos] = row.supervised[static_cast<size_t>(t)];
            out.attention[pos] = 1;
        }
        out.example_ids.push_back(row.example_ids.empty() ? "" : row.example_ids[0]);
    }
    return out;
}

std::string to_string(LoraTarget target) {
    switch (target) {
        case LoraTarget::attn_q: return "attn_q";
        case LoraTarget::attn_k: return "attn_k";
        case LoraTarget::attn_v: return "attn_v";
        case LoraTarget::attn_o: return "attn_o";
        case LoraTarget::ffn: return "ffn";
    }
    return "?";
}

LoraTarget lora_target_from_string(std::string_view s) {
    if (s == "attn_q") return LoraTarget::attn_q;
    if (s == "attn_k") return LoraTarget::attn_k;
    if (s == "attn_v") return LoraTarget::attn_v;
    if (s == "attn_o") return LoraTarget::attn_o;
    if (s == "ffn") return LoraTarget::ffn;
    fail(ErrorKind::invalid_argument, "unknown lora target class: '" + std::string(s) + "'");
}

void LoraConfig::validate() const {
    if (rank < 1) fail(ErrorKind::invalid_argument, "lora rank must be >= 1");
    if (alpha <= 0.0) fail(ErrorKind::invalid_argument, "lora alpha must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::invalid_argument, "lora dropout must be in [0,1)");
    if (targets.empty()) fail(ErrorKind::invalid_argument, "lora targets must be non-empty");
}

nlohmann::json LoraConfig::to_json() const {
    nlohmann::json t = nlohmann::json::array();
    for (auto target : targets) t.push_back(to_string(target));
    return {{"rank", rank}, {"alpha", alpha}, {"dropout", dropout}, {"targets", std::move(t)}};
}

LoraConfig LoraConfig::from_json(const nlohmann::json& doc) {
    LoraConfig c;
    c.rank = doc.at("rank").get<int>();
    c.alpha = doc.at("alpha").get<double>();
    c.dropout = doc.at("dropout").get<double>();
    c.targets.clear();
    for (const auto& t : doc.at("targets")) c.targets.insert(lora_target_from_string(t.get<std::string>()));
    return c;
}

double masked_loss(const std::vector<double>& logits, const TokenBatch& batch, int vocab_size) {
    return loss_core(logits, batch, vocab_size, nullptr, 1.0);
}

Param* ToyLM::add_param(const std::string& name, int rows, int cols, bool decay) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->rows = rows;
    p->cols = cols;
    p->value.assign(static_cast<size_t>(rows) * cols, 0.0);
    p->grad.assign(static_cast<size_t>(rows) * cols, 0.0);
    p->decay = decay;
    params_.push_back(std::move(p));
    return params_.back().get();
}

Linear ToyLM::make_linear(const std::string& name, int in, int out, Rng& rng) {
    Linear lin;
    lin.in = in;
    lin.out = out;
    lin.w = add_param(name + ".w", in, out, true);
    lin.b = add_param(name + ".b", out, 1, false);
    for (auto& v : lin.w->value) v = rng.normal(0.0, 0.02);
    return lin;
}

LayerNormParams ToyLM::make_layernorm(const std::string& name, int dim) {
    LayerNormParams ln;
    ln.gamma = add_param(name + ".gamma", dim, 1, false);
    ln.beta = add_param(name + ".beta", dim, 1, false);
    std::fill(ln.gamma->value.begin(), ln.gamma->value.end(), 1.0);
    return ln;
}

ToyLM::ToyLM(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng = Rng::derive(config_.init_seed, "model-init");
    tok_emb_ = add_param("tok_emb", config_.vocab_size, config_.d_model, true);
    pos_emb_ = add_param("pos_emb", config_.max_seq_len, config_.d_model, true);
    for (auto& v : tok_emb_->value) v = rng.normal(0.0, 0.02);
    for (auto& v : pos_emb_->value) v = rng.normal(0.0, 0.02);
    for (int layer = 0; layer < config_.n_layers; ++layer) {
        std::string prefix = "block" + std::to_string(layer);
        Block block;
        block.ln1 = make_layernorm(prefix + ".ln1", config_.d_model);
        block.wq = make_linear(prefix + ".wq", config_.d_model, config_.d_model, rng);
        block.wk = make_linear(prefix + ".wk", config_.d_model, config_.d_model, rng);
        block.wv = make_linear(prefix + ".wv", config_.d_model, config_.d_model, rng);
        block.wo = make_linear(prefix + ".wo", config_.d_model, config_.d_model, rng);
        block.ln2 = make_layernorm(prefix + ".ln2", config_.d_model);
        block.fc1 = make_linear(prefix + ".fc1", config_.d_model, config_.d_ff, rng);
        block.fc2 = make_linear(prefix + ".fc2", config_.d_ff, config_.d_model, rng);
        blocks_.push_back(std::move(block));
    }
    ln_f_ = make_layernorm("ln_f", config_.d_model);
}

ToyLM::~ToyLM() = default;

struct ToyLM::Activations {
    int B = 0, T = 0, N = 0;
    std::vector<double> x0;
    std::vector<double> emb_mask;
    struct BlockActs {
        std::vector<double> x_in;
        std::vector<double> ln1_out, ln1_mean, ln1_rstd;
        std::vector<double> q, k, v;
        std::vector<double> att;
        std::vector<double> att_concat;
        std::vector<double> attn_proj;
        std::vector<double> attn_mask;
        std::vector<double> x_mid;
        std::vector<double> ln2_out, ln2_mean, ln2_rstd;
        std::vector<double> z1, gelu_out;
        std::vector<double> ffn_proj;
        std::vector<double> ffn_mask;
        LinearCache cq, ck, cv, co, c1, c2;
    };
    std::vector<BlockActs> blocks;
    std::vector<double> x_final;
    std::vector<double> lnf_out, lnf_mean, lnf_rstd;
    std::vector<double> logits;
};

void ToyLM::run_forward(const TokenBatch& batch, Activations& acts, Rng* dropout_rng) const {
    int B = batch.batch, T = batch.seq, D = config_.d_model, H = config_.n_heads;
    int dh = D / H;
    if (T > config_.max_seq_len) fail(ErrorKind::invalid_argument, "forward: sequence exceeds max_seq_len");
    for (int id : batch.ids)
        if (id < 0 || id >= config_.vocab_size) fail(ErrorKind::invalid_argument, "forward: token id out of range");
    int N = B * T;
    acts.B = B;
    acts.T = T;
    acts.N = N;

    acts.x0.assign(static_cast<size_t>(N) * D, 0.0);
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < T; ++t) {
            size_t n = static_cast<size_t>(b) * T + t;
            const double* te = tok_emb_->value.data() + static_cast<size_t>(batch.ids[n]) * D;
            const double* pe = pos_emb_->value.data() + static_cast<size_t>(t) * D;
            double* x = acts.x0.data() + n * D;
            for (int j = 0; j < D; ++j) x[j] = te[j] + pe[j];
        }
    }
    acts.emb_mask = draw_dropout_mask(acts.x0.size(), config_.dropout, dropout_rng);
    if (!acts.emb_mask.empty()) apply_mask(acts.x0.data(), acts.emb_mask);

    const std::vector<double>* x_prev = &acts.x0;
    acts.blocks.resize(blocks_.size());
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t layer = 0; layer < blocks_.size(); ++layer) {
        const Block& block = blocks_[layer];
        auto& a = acts.blocks[layer];
        a.x_in = *x_prev;

        a.ln1_out.resize(static_cast<size_t>(N) * D);
        a.ln1_mean.resize(static_cast<size_t>(N));
        a.ln1_rstd.resize(static_cast<size_t>(N));
        layernorm_forward(a.x_in.data(), *block.ln1.gamma, *block.ln1.beta, a.ln1_out.data(), a.ln1_mean.data(),
                          a.ln1_rstd.data(), N, D);

        a.q.resize(static_cast<size_t>(N) * D);
        a.k.resize(static_cast<size_t>(N) * D);
        a.v.resize(static_cast<size_t>(N) * D);
        linear_forward(block.wq, a.ln1_out.data(), a.q.data(), N, &a.cq, dropout_rng);
        linear_forward(block.wk, a.ln1_out.data(), a.k.data(), N, &a.ck, dropout_rng);
        linear_forward(block.wv, a.ln1_out.data(), a.v.data(), N, &a.cv, dropout_rng);

        a.att.assign(static_cast<size_t>(B) * H * T * T, 0.0);
        a.att_concat.assign(static_cast<size_t>(N) * D, 0.0);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                for (int t = 0; t < T; ++t) {
                    if (!batch.attention[static_cast<size_t>(b) * T + t]) continue;
                    double* att_row = a.att.data() + ((static_cast<size_t>(b) * H + h) * T + t) * T;
                    const double* qrow = a.q.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    double mx = -1e300;
                    for (int s = 0; s <= t; ++s) {
                        if (!batch.attention[static_cast<size_t>(b) * T + s]) continue;
                        const double* krow = a.k.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        double score = 0.0;
                        for (int j = 0; j < dh; ++j) score += qrow[j] * krow[j];
                        score *= inv_sqrt_dh;
                        att_row[s] = score;
                        mx = std::max(mx, score);
                    }
                    double z = 0.0;
                    for (int s = 0; s <= t; ++s) {
                        if (!batch.attention[static_cast<size_t>(b) * T + s]) continue;
                        att_row[s] = std::exp(att_row[s] - mx);
                        z += att_row[s];
                    }
                    double* out = a.att_concat.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    for (int s = 0; s <= t; ++s) {
                        if (!batch.attention[static_cast<size_t>(b) * T + s]) continue;
                        att_row[s] /= z;
                        const double* vrow = a.v.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        double w = att_row[s];
                        for (int j = 0; j < dh; ++j) out[j] += w * vrow[j];
                    }
                }
            }
        }

        a.attn_proj.resize(static_cast<size_t>(N) * D);
        linear_forward(block.wo, a.att_concat.data(), a.attn_proj.data(), N, &a.co, dropout_rng);
        a.attn_mask = draw_dropout_mask(a.attn_proj.size(), config_.dropout, dropout_rng);
        if (!a.attn_mask.empty()) apply_mask(a.attn_proj.data(), a.attn_mask);

        a.x_mid.resize(static_cast<size_t>(N) * D);
        for (size_t i = 0; i < a.x_mid.size(); ++i) a.x_mid[i] = a.x_in[i] + a.attn_proj[i];

        a.ln2_out.resize(static_cast<size_t>(N) * D);
        a.ln2_mean.resize(static_cast<size_t>(N));
        a.ln2_rstd.resize(static_cast<size_t>(N));
        layernorm_forward(a.x_mid.data(), *block.ln2.gamma, *block.ln2.beta, a.ln2_out.data(), a.ln2_mean.data(),
                          a.ln2_rstd.data(), N, D);

        a.z1.resize(static_cast<size_t>(N) * config_.d_ff);
        linear_forward(block.fc1, a.ln2_out.data(), a.z1.data(), N, &a.c1, dropout_rng);
        a.gelu_out.resize(a.z1.size());
        for (size_t i = 0; i < a.z1.size(); ++i) a.gelu_out[i] = gelu(a.z1[i]);

        a.ffn_proj.resize(static_cast<size_t>(N) * D);
        linear_forward(block.fc2, a.gelu_out.data(), a.ffn_proj.data(), N, &a.c2, dropout_rng);
        a.ffn_mask = draw_dropout_mask(a.ffn_proj.size(), config_.dropout, dropout_rng);
        if (!a.ffn_mask.empty()) apply_mask(a.ffn_proj.data(), a.ffn_mask);

        if (layer + 1 == blocks_.size()) {
            acts.x_final.resize(static_cast<size_t>(N) * D);
            for (size_t i = 0; i < acts.x_final.size(); ++i) acts.x_final[i] = a.x_mid[i] + a.ffn_proj[i];
        } else {
            acts.blocks[layer + 1].x_in.resize(static_cast<size_t>(N) * D);
            auto& next = acts.blocks[layer + 1].x_in;
            for (size_t i = 0; i < next.size(); ++i) next[i] = a.x_mid[i] + a.ffn_proj[i];
            x_prev = &acts.blocks[layer + 1].x_in;
        }
    }

    acts.lnf_out.resize(static_cast<size_t>(N) * D);
    acts.lnf_mean.resize(static_cast<size_t>(N));
    acts.lnf_rstd.resize(static_cast<size_t>(N));
    layernorm_forward(acts.x_final.data(), *ln_f_.gamma, *ln_f_.beta, acts.lnf_out.data(), acts.lnf_mean.data(),
                      acts.lnf_rstd.data(), N, D);

    // Tied output head: logits = lnf_out * tok_emb^T.
    int V = config_.vocab_size;
    acts.logits.assign(static_cast<size_t>(N) * V, 0.0);
    for (int n = 0; n < N; ++n) {
        const double* x = acts.lnf_out.data() + static_cast<size_t>(n) * D;
        double* row = acts.logits.data() + static_cast<size_t>(n) * V;
        for (int v = 0; v < V; ++v) {
            const double* e = tok_emb_->value.data() + static_cast<size_t>(v) * D;
            double sum = 0.0;
            for (int j = 0; j < D; ++j) sum += x[j] * e[j];
            row[v] = sum;
        }
    }
}

std::vector<double> ToyLM::forward(const TokenBatch& batch) const {
    Activations acts;
    run_forward(batch, acts, nullptr);
    return std::move(acts.logits);
}

double ToyLM::eval_loss(const TokenBatch& batch) const {
    Activations acts;
    run_forward(batch, acts, nullptr);
    return loss_core(acts.logits, batch, config_.vocab_size, nullptr, 1.0);
}

double ToyLM::loss_and_backward(const TokenBatch& batch, double grad_scale, Rng* dropout_rng) {
    Activations acts;
    run_forward(batch, acts, dropout_rng);
    int B = acts.B, T = acts.T, N = acts.N, D = config_.d_model, V = config_.vocab_size;
    int H = config_.n_heads, dh = D / H;

    std::vector<double> dlogits(static_cast<size_t>(N) * V, 0.0);
    double loss = loss_core(acts.logits, batch, V, dlogits.data(), grad_scale);

    // Head: dlnf = dlogits * E; dE += dlogits^T * lnf_out.
    std::vector<double> dlnf(static_cast<size_t>(N) * D, 0.0);
    matmul_acc_dx(dlogits.data(), tok_emb_->value.data(), dlnf.data(), N, D, V);
    if (tok_emb_->trainable) {
        for (int n = 0; n < N; ++n) {
            const double* drow = dlogits.data() + static_cast<size_t>(n) * V;
            const double* x = acts.lnf_out.data() + static_cast<size_t>(n) * D;
            for (int v = 0; v < V; ++v) {
                double dv = drow[v];
                if (dv == 0.0) continue;
                double* de = tok_emb_->grad.data() + static_cast<size_t>(v) * D;
                for (int j = 0; j < D; ++j) de[j] += dv * x[j];
            }
        }
    }

    std::vector<double> dx(static_cast<size_t>(N) * D, 0.0);
    layernorm_backward(acts.x_final.data(), dlnf.data(), acts.lnf_mean.data(), acts.lnf_rstd.data(), *ln_f_.gamma,
                       *ln_f_.beta, dx.data(), N, D);

    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int layer = static_cast<int>(blocks_.size()) - 1; layer >= 0; --layer) {
        const Block& block = blocks_[static_cast<size_t>(layer)];
        auto& a = acts.blocks[static_cast<size_t>(layer)];

        // dx is the gradient of this block's output (x_mid + ffn_proj).
        std::vector<double> dffn = dx;  // branch copy
        if (!a.ffn_mask.empty()) apply_mask(dffn.data(), a.ffn_mask);

        std::vector<double> dgelu(static_cast<size_t>(N) * config_.d_ff, 0.0);
        linear_backward(block.fc2, dffn.data(), dgelu.data(), N, a.c2);
        std::vector<double> dz1(dgelu.size());
        for (size_t i = 0; i < dz1.size(); ++i) dz1[i] = dgelu[i] * gelu_grad(a.z1[i]);
        std::vector<double> dln2(static_cast<size_t>(N) * D, 0.0);
        linear_backward(block.fc1, dz1.data(), dln2.data(), N, a.c1);

        // dx becomes the gradient of x_mid (residual carry + LN2 path).
        layernorm_backward(a.x_mid.data(), dln2.data(), a.ln2_mean.data(), a.ln2_rstd.data(), *block.ln2.gamma,
                           *block.ln2.beta, dx.data(), N, D);

        std::vector<double> dattn = dx;
        if (!a.attn_mask.empty()) apply_mask(dattn.data(), a.attn_mask);

        std::vector<double> dconcat(static_cast<size_t>(N) * D, 0.0);
        linear_backward(block.wo, dattn.data(), dconcat.data(), N, a.co);

        std::vector<double> dq(static_cast<size_t>(N) * D, 0.0);
        std::vector<double> dk(static_cast<size_t>(N) * D, 0.0);
        std::vector<double> dv(static_cast<size_t>(N) * D, 0.0);
        std::vector<double> datt_row(static_cast<size_t>(T), 0.0);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                for (int t = 0; t < T; ++t) {
                    if (!batch.attention[static_cast<size_t>(b) * T + t]) continue;
                    const double* att_row = a.att.data() + ((static_cast<size_t>(b) * H + h) * T + t) * T;
                    const double* dout = dconcat.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    double dot_sum = 0.0;
                    for (int s = 0; s <= t; ++s) {
                        if (!batch.attention[static_cast<size_t>(b) * T + s]) continue;
                        const double* vrow = a.v.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        double* dvrow = dv.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        double da = 0.0;
                        for (int j = 0; j < dh; ++j) {
                            da += dout[j] * vrow[j];
                            dvrow[j] += att_row[s] * dout[j];
                        }
                        datt_row[static_cast<size_t>(s)] = da;
                        dot_sum += da * att_row[s];
                    }
                    const double* qrow = a.q.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    double* dqrow = dq.data() + (static_cast<size_t>(b) * T + t) * D + h * dh;
                    for (int s = 0; s <= t; ++s) {
                        if (!batch.attention[static_cast<size_t>(b) * T + s]) continue;
                        double dscore = att_row[s] * (datt_row[static_cast<size_t>(s)] - dot_sum) * inv_sqrt_dh;
                        const double* krow = a.k.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        double* dkrow = dk.data() + (static_cast<size_t>(b) * T + s) * D + h * dh;
                        for (int j = 0; j < dh; ++j) {
                            dqrow[j] += dscore * krow[j];
                            dkrow[j] += dscore * qrow[j];
                        }
                    }
                }
            }
        }

        std::vector<double> dln1(static_cast<size_t>(N) * D, 0.0);
        linear_backward(block.wq, dq.data(), dln1.data(), N, a.cq);
        linear_backward(block.wk, dk.data(), dln1.data(), N, a.ck);
        linear_backward(block.wv, dv.data(), dln1.data(), N, a.cv);

        // dx becomes the gradient of x_in (residual carry + LN1 path).
        layernorm_backward(a.x_in.data(), dln1.data(), a.ln1_mean.data(), a.ln1_rstd.data(), *block.ln1.gamma,
                           *block.ln1.beta, dx.data(), N, D);
    }

    if (!acts.emb_mask.empty()) apply_mask(dx.data(), acts.emb_mask);
    if (tok_emb_->trainable || pos_emb_->trainable) {
        for (int b = 0; b < B; ++b) {
            for (int t = 0; t < T; ++t) {
                size_t n = static_cast<size_t>(b) * T + t;
                const double* dxi = dx.data() + n * D;
                if (tok_emb_->trainable) {
                    double* de = tok_emb_->grad.data() + static_cast<size_t>(batch.ids[n]) * D;
                    for (int j = 0; j < D; ++j) de[j] += dxi[j];
                }
                if (pos_emb_->trainable) {
                    double* dp = pos_emb_->grad.data() + static_cast<size_t>(t) * D;
                    for (int j = 0; j < D; ++j) dp[j] += dxi[j];
                }
            }
        }
    }
    return loss;
}

struct ToyLM::DecodeState {
    int pos = 0;
    std::vector<std::vector<double>> k_cache, v_cache;  // per layer, [max_seq * d_model]
};

std::unique_ptr<ToyLM::DecodeState> ToyLM::begin_decode() const {
    auto state = std::make_unique<DecodeState>();
    state->k_cache.assign(blocks_.size(), std::vector<double>(static_cast<size_t>(config_.max_seq_len) * config_.d_model));
    state->v_cache.assign(blocks_.size(), std::vector<double>(static_cast<size_t>(config_.max_seq_len) * config_.d_model));
    return state;
}

int ToyLM::decode_pos(const DecodeState& state) { return state.pos; }

namespace {

// Row-vector linear with optional adapter, eval mode.
void linear_row(const Linear& lin, const double* x, double* y) {
    for (int o = 0; o < lin.out; ++o) y[o] = lin.b->value[static_cast<size_t>(o)];
    for (int i = 0; i < lin.in; ++i) {
        double xv = x[i];
        if (xv == 0.0) continue;
        const double* wr = lin.w->value.data() + static_cast<size_t>(i) * lin.out;
        for (int o = 0; o < lin.out; ++o) y[o] += xv * wr[o];
    }
    if (lin.lora) {
        const LoraAdapter& lora = *lin.lora;
        int rank = lora.a->cols;
        std::vector<double> xa(static_cast<size_t>(rank), 0.0);
        for (int i = 0; i < lin.in; ++i) {
            double xv = x[i];
            if (xv == 0.0) continue;
            const double* ar = lora.a->value.data() + static_cast<size_t>(i) * rank;
            for (int r = 0; r < rank; ++r) xa[static_cast<size_t>(r)] += xv * ar[r];
        }
        for (int r = 0; r < rank; ++r) {
            double v = lora.scale * xa[static_cast<size_t>(r)];
            if (v == 0.0) continue;
            const double* br = lora.b->value.data() + static_cast<size_t>(r) * lin.out;
            for (int o = 0; o < lin.out; ++o) y[o] += v * br[o];
        }
    }
}

void layernorm_row(const double* x, const Param& gamma, const Param& beta, double* y, int dim) {
    double m = 0.0;
    for (int j = 0; j < dim; ++j) m += x[j];
    m /= dim;
    double var = 0.0;
    for (int j = 0; j < dim; ++j) {
        double d = x[j] - m;
        var += d * d;
    }
    var /= dim;
    double r = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < dim; ++j) y[j] = gamma.value[static_cast<size_t>(j)] * (x[j] - m) * r + beta.value[static_cast<size_t>(j)];
}

}  // namespace

void ToyLM::decode_step(DecodeState& state, int token, std::vector<double>& logits_row) const {
    int D = config_.d_model, H = config_.n_heads, dh = D / H;
    if (state.pos >= config_.max_seq_len) fail(ErrorKind::runtime, "decode: context overflow");
    if (token < 0 || token >= config_.vocab_size) fail(ErrorKind::invalid_argument, "decode: token id out of range");
    int t = state.pos;

    std::vector<double> x(static_cast<size_t>(D));
    {
        const double* te = tok_emb_->value.data() + static_cast<size_t>(token) * D;
        const double* pe = pos_emb_->value.data() + static_cast<size_t>(t) * D;
        for (int j = 0; j < D; ++j) x[static_cast<size_t>(j)] = te[j] + pe[j];
    }

    std::vector<double> norm(static_cast<size_t>(D)), q(static_cast<size_t>(D)), ctx(static_cast<size_t>(D));
    std::vector<double> proj(static_cast<size_t>(D));
    std::vector<double> z1(static_cast<size_t>(config_.d_ff)), z2(static_cast<size_t>(D));
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t layer = 0; layer < blocks_.size(); ++layer) {
        const Block& block = blocks_[layer];
        layernorm_row(x.data(), *block.ln1.gamma, *block.ln1.beta, norm.data(), D);
        linear_row(block.wq, norm.data(), q.data());
        double* krow = state.k_cache[layer].data() + static_cast<size_t>(t) * D;
        double* vrow = state.v_cache[layer].data() + static_cast<size_t>(t) * D;
        linear_row(block.wk, norm.data(), krow);
        linear_row(block.wv, norm.data(), vrow);

        std::fill(ctx.begin(), ctx.end(), 0.0);
        std::vector<double> scores(static_cast<size_t>(t) + 1);
        for (int h = 0; h < H; ++h) {
            const double* qh = q.data() + h * dh;
            double mx = -1e300;
            for (int s = 0; s <= t; ++s) {
                const double* ks = state.k_cache[layer].data() + static_cast<size_t>(s) * D + h * dh;
                double score = 0.0;
                for (int j = 0; j < dh; ++j) score += qh[j] * ks[j];
                score *= inv_sqrt_dh;
                scores[static_cast<size_t>(s)] = score;
                mx = std::max(mx, score);
            }
            double z = 0.0;
            for (int s = 0; s <= t; ++s) {
                scores[static_cast<size_t>(s)] = std::exp(scores[static_cast<size_t>(s)] - mx);
                z += scores[static_cast<size_t>(s)];
            }
            double* ctxh = ctx.data() + h * dh;
            for (int s = 0; s <= t; ++s) {
                double w = scores[static_cast<size_t>(s)] / z;
                const double* vs = state.v_cache[layer].data() + static_cast<size_t>(s) * D + h * dh;
                for (int j = 0; j < dh; ++j) ctxh[j] += w * vs[j];
            }
        }
        linear_row(block.wo, ctx.data(), proj.data());
        for (int j = 0; j < D; ++j) x[static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];

        layernorm_row(x.data(), *block.ln2.gamma, *block.ln2.beta, norm.data(), D);
        linear_row(block.fc1, norm.data(), z1.data());
        for (auto& v : z1) v = gelu(v);
        linear_row(block.fc2, z1.data(), z2.data());
        for (int j = 0; j < D; ++j) x[static_cast<size_t>(j)] += z2[static_cast<size_t>(j)];
    }

    layernorm_row(x.data(), *ln_f_.gamma, *ln_f_.beta, norm.data(), D);
    int V = config_.vocab_size;
    logits_row.assign(static_cast<size_t>(V), 0.0);
    for (int v = 0; v < V; ++v) {
        const double* e = tok_emb_->value.data() + static_cast<size_t>(v) * D;
        double sum = 0.0;
        for (int j = 0; j < D; ++j) sum += norm[static_cast<size_t>(j)] * e[j];
        logits_row[static_cast<size_t>(v)] = sum;
    }
    state.pos += 1;
}

std::vector<Param*> ToyLM::parameters() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ToyLM::parameters() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

int64_t ToyLM::num_params() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
}

int64_t ToyLM::num_trainable_params() const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (p->trainable) n += p->size();
    return n;
}

void ToyLM::zero_grads() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

void ToyLM::apply_lora(const LoraConfig& config) {
    config.validate();
    if (lora_config_) fail(ErrorKind::state, "apply_lora: adapters already attached");
    for (auto& p : params_) p->trainable = false;

    Rng rng = Rng::derive(config_.init_seed, "lora-init");
    auto attach = [&](Linear& lin, const std::string& name) {
        LoraAdapter lora;
        lora.a = add_param(name + ".lora_a", lin.in, config.rank, true);
        lora.b = add_param(name + ".lora_b", config.rank, lin.out, true);
        for (auto& v : lora.a->value) v = rng.normal(0.0, 0.02);
        // lora.b stays zero: the adapted model starts exactly at the base model.
        lora.scale = config.alpha / static_cast<double>(config.rank);
        lora.dropout = config.dropout;
        lin.lora = lora;
    };
    for (size_t layer = 0; layer < blocks_.size(); ++layer) {
        std::string prefix = "block" + std::to_string(layer);
        Block& block = blocks_[layer];
        if (config.targets.count(LoraTarget::attn_q)) attach(block.wq, prefix + ".wq");
        if (config.targets.count(LoraTarget::attn_k)) attach(block.wk, prefix + ".wk");
        if (config.targets.count(LoraTarget::attn_v)) attach(block.wv, prefix + ".wv");
        if (config.targets.count(LoraTarget::attn_o)) attach(block.wo, prefix + ".wo");
        if (config.targets.count(LoraTarget::ffn)) {
            attach(block.fc1, prefix + ".fc1");
            attach(block.fc2, prefix + ".fc2");
        }
    }
    lora_config_ = config;
}

void ToyLM::merge_lora() {
    if (!lora_config_) fail(ErrorKind::state, "merge_lora: no adapters attached (already merged?)");
    for (auto& block : blocks_) {
        for (Linear* lin : {&block.wq, &block.wk, &block.wv, &block.wo, &block.fc1, &block.fc2}) {
            if (!lin->lora) continue;
            const LoraAdapter& lora = *lin->lora;
            int rank = lora.a->cols;
            for (int i = 0; i < lin->in; ++i) {
                const double* ar = lora.a->value.data() + static_cast<size_t>(i) * rank;
                double* wr = lin->w->value.data() + static_cast<size_t>(i) * lin->out;
                for (int r = 0; r < rank; ++r) {
                    double av = lora.scale * ar[r];
                    if (av == 0.0) continue;
                    const double* br = lora.b->value.data() + static_cast<size_t>(r) * lin->out;
                    for (int o = 0; o < lin->out; ++o) wr[o] += av * br[o];
                }
            }
            lin->lora.reset();
        }
    }
    params_.erase(std::remove_if(params_.begin(), params_.end(),
                                 [](const std::unique_ptr<Param>& p) {
                                     return p->name.find(".lora_") != std::string::npos;
                                 }),
                  params_.end());
    for (auto& p : params_) p->trainable = true;
    lora_config_.reset();
}

}  // namespace diglot
