#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/rng.hpp"

namespace bilex {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ff = 256;
    int context_length = 256;
    int vocab_size = 0;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    bool tied_head = true;

    void validate() const {
        if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
        if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
        if (d_model < 1 || d_model % n_heads != 0)
            throw ConfigError("d_model must be a positive multiple of n_heads");
        if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
        if (context_length < 2) throw ConfigError("context_length must be >= 2");
        if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("dropout must be in [0, 1)");
    }

    json to_json() const {
        return json{{"n_layers", n_layers},
                    {"n_heads", n_heads},
                    {"d_model", d_model},
                    {"d_ff", d_ff},
                    {"context_length", context_length},
                    {"vocab_size", vocab_size},
                    {"dropout", dropout},
                    {"seed", seed},
                    {"tied_head", tied_head}};
    }

    static ModelConfig from_json(const json& j) {
        ModelConfig c;
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.context_length = j.at("context_length").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.dropout = j.value("dropout", 0.0);
        c.seed = j.value("seed", std::uint64_t{0});
        c.tied_head = j.value("tied_head", true);
        return c;
    }
};

inline std::int64_t count_parameters(const ModelConfig& c) {
    const std::int64_t d = c.d_model, v = c.vocab_size, f = c.d_ff;
    std::int64_t per_layer = (d * 3 * d + 3 * d)  // qkv
                             + (d * d + d)        // attn proj
                             + (d * f + f)        // ffn in
                             + (f * d + d)        // ffn out
                             + 4 * d;             // two layer norms
    std::int64_t total = v * d + c.context_length * d +
                         c.n_layers * per_layer + 2 * d;
    if (!c.tied_head) total += v * d;
    return total;
}

// Parameters plus the bookkeeping needed to resume: step counter and rng.
// Tensors are doubles in memory and float32 on disk.
struct ModelCheckpoint {
    ModelConfig config;
    std::map<std::string, Matrix> tensors;
    std::int64_t step_counter = 0;
    Rng rng;

    Matrix& tensor(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("no tensor: " + name);
        return it->second;
    }
    const Matrix& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("no tensor: " + name);
        return it->second;
    }
};

namespace detail {

// Canonical tensor list; creation order doubles as rng draw order.
enum class InitKind { Normal, Zeros, Ones };

struct TensorSpec {
    std::string name;
    int rows;
    int cols;
    InitKind kind;
};

inline std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    specs.push_back({"tok_emb", c.vocab_size, c.d_model, InitKind::Normal});
    specs.push_back({"pos_emb", c.context_length, c.d_model, InitKind::Normal});
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        specs.push_back({p + "ln1.g", 1, c.d_model, InitKind::Ones});
        specs.push_back({p + "ln1.b", 1, c.d_model, InitKind::Zeros});
        specs.push_back({p + "attn.w_qkv", c.d_model, 3 * c.d_model,
                         InitKind::Normal});
        specs.push_back({p + "attn.b_qkv", 1, 3 * c.d_model, InitKind::Zeros});
        specs.push_back({p + "attn.w_proj", c.d_model, c.d_model,
                         InitKind::Normal});
        specs.push_back({p + "attn.b_proj", 1, c.d_model, InitKind::Zeros});
        specs.push_back({p + "ln2.g", 1, c.d_model, InitKind::Ones});
        specs.push_back({p + "ln2.b", 1, c.d_model, InitKind::Zeros});
        specs.push_back({p + "ffn.w_in", c.d_model, c.d_ff, InitKind::Normal});
        specs.push_back({p + "ffn.b_in", 1, c.d_ff, InitKind::Zeros});
        specs.push_back({p + "ffn.w_out", c.d_ff, c.d_model, InitKind::Normal});
        specs.push_back({p + "ffn.b_out", 1, c.d_model, InitKind::Zeros});
    }
    specs.push_back({"ln_f.g", 1, c.d_model, InitKind::Ones});
    specs.push_back({"ln_f.b", 1, c.d_model, InitKind::Zeros});
    if (!c.tied_head)
        specs.push_back({"head.w", c.vocab_size, c.d_model, InitKind::Normal});
    return specs;
}

constexpr double kLnEps = 1e-5;

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

}  // namespace detail

inline ModelCheckpoint init_model(const ModelConfig& config) {
    config.validate();
    ModelCheckpoint ckpt;
    ckpt.config = config;
    ckpt.rng = Rng(config.seed);
    for (const auto& spec : detail::tensor_specs(config)) {
        Matrix m(spec.rows, spec.cols);
        switch (spec.kind) {
            case detail::InitKind::Zeros:
                m.setZero();
                break;
            case detail::InitKind::Ones:
                m.setOnes();
                break;
            case detail::InitKind::Normal:
                for (int r = 0; r < spec.rows; ++r)
                    for (int c = 0; c < spec.cols; ++c)
                        m(r, c) = 0.02 * ckpt.rng.next_normal();
                break;
        }
        ckpt.tensors.emplace(spec.name, std::move(m));
    }
    return ckpt;
}

namespace detail {

struct LayerTape {
    Matrix x_in;        // residual stream entering the block
    Matrix ln1_xhat;    // normalized input
    Vector ln1_inv_std;
    Matrix qkv;         // T x 3d (post bias)
    std::vector<Matrix> att;  // per head T x T attention weights
    Matrix heads_out;   // T x d before projection
    Matrix x_mid;       // residual stream after attention
    Matrix ln2_xhat;
    Vector ln2_inv_std;
    Matrix ffn_pre;     // T x d_ff pre-activation
    Matrix attn_mask;   // dropout masks (empty when dropout off)
    Matrix ffn_mask;
};

struct Tape {
    std::vector<int> ids;
    Matrix x0;  // embedding output
    Matrix emb_mask;
    std::vector<LayerTape> layers;
    Matrix lnf_xhat;
    Vector lnf_inv_std;
    Matrix hidden_final;  // after final norm
};

inline void layer_norm_forward(const Matrix& x, const Matrix& g,
                               const Matrix& b, Matrix& xhat, Vector& inv_std,
                               Matrix& out) {
    const auto T = x.rows();
    const auto d = x.cols();
    xhat.resize(T, d);
    inv_std.resize(T);
    out.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double mu = x.row(t).mean();
        const double var =
            (x.row(t).array() - mu).square().sum() / static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLnEps);
        inv_std(t) = is;
        xhat.row(t) = ((x.row(t).array() - mu) * is).matrix();
        out.row(t) =
            ((xhat.row(t).array() * g.row(0).array()) + b.row(0).array())
                .matrix();
    }
}

// dx from dy for layer norm; accumulates parameter grads.
inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat,
                                  const Vector& inv_std, const Matrix& g,
                                  Matrix& dg, Matrix& db) {
    const auto T = dy.rows();
    const auto d = dy.cols();
    Matrix dx(T, d);
    using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
    for (Eigen::Index t = 0; t < T; ++t) {
        RowArray dxhat = dy.row(t).array() * g.row(0).array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat.row(t).array()).mean();
        dx.row(t) =
            ((dxhat - m1 - xhat.row(t).array() * m2) * inv_std(t)).matrix();
        dg.row(0).array() += dy.row(t).array() * xhat.row(t).array();
        db.row(0) += dy.row(t);
    }
    return dx;
}

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                           Rng* rng) {
    Matrix m = Matrix::Constant(rows, cols, 1.0);
    if (rate > 0.0 && rng) {
        const double keep = 1.0 - rate;
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                m(r, c) = rng->next_double() < keep ? 1.0 / keep : 0.0;
    }
    return m;
}

// Full forward pass; fills the tape when given one. Returns the final-norm
// hidden states. `residuals` (optional) receives the residual stream after
// every block, with index 0 holding the embedding output.
inline Matrix transformer_forward(const ModelCheckpoint& ckpt,
                                  const std::vector<int>& ids, Tape* tape,
                                  std::vector<Matrix>* residuals = nullptr,
                                  Rng* dropout_rng = nullptr) {
    const auto& cfg = ckpt.config;
    const auto T = static_cast<Eigen::Index>(ids.size());
    if (T == 0) throw DataError("empty token sequence");
    if (T > cfg.context_length)
        throw DataError("sequence length " + std::to_string(T) +
                        " exceeds context_length " +
                        std::to_string(cfg.context_length));
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Matrix& tok_emb = ckpt.tensor("tok_emb");
    const Matrix& pos_emb = ckpt.tensor("pos_emb");
    Matrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        const int id = ids[static_cast<size_t>(t)];
        if (id < 0 || id >= cfg.vocab_size)
            throw DataError("token id out of range: " + std::to_string(id));
        x.row(t) = tok_emb.row(id) + pos_emb.row(t);
    }
    if (cfg.dropout > 0.0 && dropout_rng) {
        Matrix mask = dropout_mask(T, d, cfg.dropout, dropout_rng);
        x.array() *= mask.array();
        if (tape) tape->emb_mask = std::move(mask);
    }
    if (tape) {
        tape->ids = ids;
        tape->x0 = x;
        tape->layers.resize(static_cast<size_t>(cfg.n_layers));
    }
    if (residuals) residuals->push_back(x);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        LayerTape local;
        LayerTape& lt = tape ? tape->layers[static_cast<size_t>(l)] : local;
        lt.x_in = x;

        Matrix ln1_out;
        layer_norm_forward(x, ckpt.tensor(p + "ln1.g"), ckpt.tensor(p + "ln1.b"),
                           lt.ln1_xhat, lt.ln1_inv_std, ln1_out);

        Matrix qkv = ln1_out * ckpt.tensor(p + "attn.w_qkv");
        qkv.rowwise() += ckpt.tensor(p + "attn.b_qkv").row(0);
        lt.qkv = qkv;

        Matrix heads_out(T, d);
        lt.att.assign(static_cast<size_t>(H), Matrix());
        for (int h = 0; h < H; ++h) {
            auto Q = qkv.middleCols(h * dh, dh);
            auto K = qkv.middleCols(d + h * dh, dh);
            auto V = qkv.middleCols(2 * d + h * dh, dh);
            Matrix scores = (Q * K.transpose()) * scale;
            Matrix att = Matrix::Zero(T, T);
            using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
            for (Eigen::Index t = 0; t < T; ++t) {
                const double mx = scores.row(t).head(t + 1).maxCoeff();
                RowArray e = (scores.row(t).head(t + 1).array() - mx).exp();
                att.row(t).head(t + 1) = (e / e.sum()).matrix();
            }
            lt.att[static_cast<size_t>(h)] = att;
            heads_out.middleCols(h * dh, dh) = att * V;
        }
        lt.heads_out = heads_out;

        Matrix attn_out = heads_out * ckpt.tensor(p + "attn.w_proj");
        attn_out.rowwise() += ckpt.tensor(p + "attn.b_proj").row(0);
        if (cfg.dropout > 0.0 && dropout_rng) {
            lt.attn_mask = dropout_mask(T, d, cfg.dropout, dropout_rng);
            attn_out.array() *= lt.attn_mask.array();
        }
        x += attn_out;
        lt.x_mid = x;

        Matrix ln2_out;
        layer_norm_forward(x, ckpt.tensor(p + "ln2.g"), ckpt.tensor(p + "ln2.b"),
                           lt.ln2_xhat, lt.ln2_inv_std, ln2_out);
        Matrix pre = ln2_out * ckpt.tensor(p + "ffn.w_in");
        pre.rowwise() += ckpt.tensor(p + "ffn.b_in").row(0);
        lt.ffn_pre = pre;
        Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
        Matrix ffn_out = act * ckpt.tensor(p + "ffn.w_out");
        ffn_out.rowwise() += ckpt.tensor(p + "ffn.b_out").row(0);
        if (cfg.dropout > 0.0 && dropout_rng) {
            lt.ffn_mask = dropout_mask(T, d, cfg.dropout, dropout_rng);
            ffn_out.array() *= lt.ffn_mask.array();
        }
        x += ffn_out;
        if (residuals) residuals->push_back(x);
    }

    Matrix out;
    if (tape) {
        layer_norm_forward(x, ckpt.tensor("ln_f.g"), ckpt.tensor("ln_f.b"),
                           tape->lnf_xhat, tape->lnf_inv_std, out);
        tape->hidden_final = out;
    } else {
        Matrix xhat;
        Vector inv_std;
        layer_norm_forward(x, ckpt.tensor("ln_f.g"), ckpt.tensor("ln_f.b"),
                           xhat, inv_std, out);
    }
    return out;
}

inline const Matrix& head_weight(const ModelCheckpoint& ckpt) {
    return ckpt.config.tied_head ? ckpt.tensor("tok_emb")
                                 : ckpt.tensor("head.w");
}

}  // namespace detail

// Per-position natural-log next-token distributions (T x vocab).
inline Matrix log_probs(const ModelCheckpoint& ckpt,
                        const std::vector<int>& ids) {
    Matrix h = detail::transformer_forward(ckpt, ids, nullptr);
    Matrix logits = h * detail::head_weight(ckpt).transpose();
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const double mx = logits.row(t).maxCoeff();
        const double lse =
            std::log((logits.row(t).array() - mx).exp().sum()) + mx;
        logits.row(t).array() -= lse;
    }
    return logits;
}

inline Matrix probabilities(const ModelCheckpoint& ckpt,
                            const std::vector<int>& ids) {
    return log_probs(ckpt, ids).array().exp().matrix();
}

// Residual-stream states: layer 0 is the embedding output, layer n_layers
// applies the final norm.
inline Matrix hidden_states(const ModelCheckpoint& ckpt,
                            const std::vector<int>& ids, int layer) {
    if (layer < 0 || layer > ckpt.config.n_layers)
        throw ConfigError("layer out of range: " + std::to_string(layer) +
                          " (model has " +
                          std::to_string(ckpt.config.n_layers) + " layers)");
    std::vector<Matrix> residuals;
    Matrix final_h = detail::transformer_forward(ckpt, ids, nullptr, &residuals);
    if (layer == ckpt.config.n_layers) return final_h;
    return residuals[static_cast<size_t>(layer)];
}

struct LossGrads {
    double loss = 0.0;      // mean cross-entropy in nats
    double sum_loss = 0.0;  // summed over predicted positions
    std::int64_t n_positions = 0;
    std::map<std::string, Matrix> grads;
};

namespace detail {

inline void add_grad(std::map<std::string, Matrix>& grads,
                     const std::string& name, const Matrix& g) {
    auto it = grads.find(name);
    if (it == grads.end())
        grads.emplace(name, g);
    else
        it->second += g;
}

// Backward for one sequence given d(sum_loss)/d(logits); accumulates into
// `grads` (gradients of the summed loss).
inline void transformer_backward(const ModelCheckpoint& ckpt, const Tape& tape,
                                 const Matrix& dlogits,
                                 std::map<std::string, Matrix>& grads) {
    const auto& cfg = ckpt.config;
    const auto T = static_cast<Eigen::Index>(tape.ids.size());
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Matrix& W_head = head_weight(ckpt);
    add_grad(grads, cfg.tied_head ? "tok_emb" : "head.w",
             dlogits.transpose() * tape.hidden_final);
    Matrix dh_final = dlogits * W_head;

    Matrix dg_f = Matrix::Zero(1, d), db_f = Matrix::Zero(1, d);
    Matrix dx = layer_norm_backward(dh_final, tape.lnf_xhat, tape.lnf_inv_std,
                                    ckpt.tensor("ln_f.g"), dg_f, db_f);
    add_grad(grads, "ln_f.g", dg_f);
    add_grad(grads, "ln_f.b", db_f);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const std::string p = "h" + std::to_string(l) + ".";
        const LayerTape& lt = tape.layers[static_cast<size_t>(l)];

        // ffn branch
        Matrix dffn_out = dx;
        if (lt.ffn_mask.size() > 0) dffn_out.array() *= lt.ffn_mask.array();
        Matrix act = lt.ffn_pre.unaryExpr([](double v) { return gelu(v); });
        add_grad(grads, p + "ffn.b_out", dffn_out.colwise().sum());
        add_grad(grads, p + "ffn.w_out", act.transpose() * dffn_out);
        Matrix dact = dffn_out * ckpt.tensor(p + "ffn.w_out").transpose();
        Matrix dpre =
            (dact.array() * lt.ffn_pre
                                .unaryExpr([](double v) { return gelu_grad(v); })
                                .array())
                .matrix();
        add_grad(grads, p + "ffn.b_in", dpre.colwise().sum());
        // ln2 output is recomputed from the tape
        Matrix ln2_out =
            lt.ln2_xhat * ckpt.tensor(p + "ln2.g").row(0).asDiagonal();
        ln2_out.rowwise() += ckpt.tensor(p + "ln2.b").row(0);
        add_grad(grads, p + "ffn.w_in", ln2_out.transpose() * dpre);
        Matrix dln2_out = dpre * ckpt.tensor(p + "ffn.w_in").transpose();
        Matrix dg2 = Matrix::Zero(1, d), db2 = Matrix::Zero(1, d);
        Matrix dx_mid = layer_norm_backward(dln2_out, lt.ln2_xhat,
                                            lt.ln2_inv_std,
                                            ckpt.tensor(p + "ln2.g"), dg2, db2);
        add_grad(grads, p + "ln2.g", dg2);
        add_grad(grads, p + "ln2.b", db2);
        dx += dx_mid;  // residual join at x_mid

        // attention branch
        Matrix dattn_out = dx;
        if (lt.attn_mask.size() > 0) dattn_out.array() *= lt.attn_mask.array();
        add_grad(grads, p + "attn.b_proj", dattn_out.colwise().sum());
        add_grad(grads, p + "attn.w_proj",
                 lt.heads_out.transpose() * dattn_out);
        Matrix dheads = dattn_out * ckpt.tensor(p + "attn.w_proj").transpose();

        Matrix dqkv = Matrix::Zero(T, 3 * d);
        for (int h = 0; h < H; ++h) {
            const Matrix& att = lt.att[static_cast<size_t>(h)];
            auto Q = lt.qkv.middleCols(h * dh, dh);
            auto K = lt.qkv.middleCols(d + h * dh, dh);
            auto V = lt.qkv.middleCols(2 * d + h * dh, dh);
            auto dO = dheads.middleCols(h * dh, dh);
            Matrix dA = dO * V.transpose();
            Matrix dV = att.transpose() * dO;
            // softmax backward, row-wise; masked cells stay zero because att
            // is zero there
            Matrix dS(T, T);
            for (Eigen::Index t = 0; t < T; ++t) {
                const double dot = (dA.row(t).array() * att.row(t).array()).sum();
                dS.row(t) =
                    (att.row(t).array() * (dA.row(t).array() - dot)).matrix();
            }
            Matrix dQ = (dS * K) * scale;
            Matrix dK = (dS.transpose() * Q) * scale;
            dqkv.middleCols(h * dh, dh) = dQ;
            dqkv.middleCols(d + h * dh, dh) = dK;
            dqkv.middleCols(2 * d + h * dh, dh) = dV;
        }
        add_grad(grads, p + "attn.b_qkv", dqkv.colwise().sum());
        Matrix ln1_out =
            lt.ln1_xhat * ckpt.tensor(p + "ln1.g").row(0).asDiagonal();
        ln1_out.rowwise() += ckpt.tensor(p + "ln1.b").row(0);
        add_grad(grads, p + "attn.w_qkv", ln1_out.transpose() * dqkv);
        Matrix dln1_out = dqkv * ckpt.tensor(p + "attn.w_qkv").transpose();
        Matrix dg1 = Matrix::Zero(1, d), db1 = Matrix::Zero(1, d);
        Matrix dx_in = layer_norm_backward(dln1_out, lt.ln1_xhat,
                                           lt.ln1_inv_std,
                                           ckpt.tensor(p + "ln1.g"), dg1, db1);
        add_grad(grads, p + "ln1.g", dg1);
        add_grad(grads, p + "ln1.b", db1);
        dx += dx_in;  // residual join at x_in
    }

    if (tape.emb_mask.size() > 0) dx.array() *= tape.emb_mask.array();
    Matrix dtok = Matrix::Zero(ckpt.config.vocab_size, d);
    Matrix dpos = Matrix::Zero(ckpt.config.context_length, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        dtok.row(tape.ids[static_cast<size_t>(t)]) += dx.row(t);
        dpos.row(t) += dx.row(t);
    }
    add_grad(grads, "tok_emb", dtok);
    add_grad(grads, "pos_emb", dpos);
}

}  // namespace detail

// Summed next-token cross-entropy (nats) of one sequence; positions
// 0..T-2 predict tokens 1..T-1.
inline std::pair<double, std::int64_t> sequence_loss(
    const ModelCheckpoint& ckpt, const std::vector<int>& ids) {
    if (ids.size() < 2) throw DataError("sequence too short for loss");
    Matrix h = detail::transformer_forward(ckpt, ids, nullptr);
    Matrix logits = h * detail::head_weight(ckpt).transpose();
    double sum = 0.0;
    const auto T = static_cast<Eigen::Index>(ids.size());
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        const int target = ids[static_cast<size_t>(t) + 1];
        const double mx = logits.row(t).maxCoeff();
        const double lse =
            std::log((logits.row(t).array() - mx).exp().sum()) + mx;
        sum -= logits(t, target) - lse;
    }
    return {sum, T - 1};
}

// Mean next-token cross-entropy over every predicted position in the batch,
// with exact gradients for all parameter tensors. `dropout_rng` enables
// dropout (training mode); without it the pass is deterministic inference.
inline LossGrads loss_and_gradients(const ModelCheckpoint& ckpt,
                                    const std::vector<std::vector<int>>& batch,
                                    Rng* dropout_rng = nullptr) {
    if (batch.empty()) throw DataError("empty batch");
    LossGrads out;
    for (const auto& ids : batch)
        out.n_positions += static_cast<std::int64_t>(ids.size()) - 1;
    if (out.n_positions <= 0) throw DataError("batch has no predicted positions");

    for (const auto& ids : batch) {
        detail::Tape tape;
        Matrix h =
            detail::transformer_forward(ckpt, ids, &tape, nullptr, dropout_rng);
        Matrix logits = h * detail::head_weight(ckpt).transpose();
        const auto T = static_cast<Eigen::Index>(ids.size());
        Matrix dlogits = Matrix::Zero(T, ckpt.config.vocab_size);
        using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
        for (Eigen::Index t = 0; t + 1 < T; ++t) {
            const int target = ids[static_cast<size_t>(t) + 1];
            const double mx = logits.row(t).maxCoeff();
            RowArray e = (logits.row(t).array() - mx).exp();
            const double Z = e.sum();
            out.sum_loss -= logits(t, target) - (std::log(Z) + mx);
            dlogits.row(t) = (e / Z).matrix();
            dlogits(t, target) -= 1.0;
        }
        detail::transformer_backward(ckpt, tape, dlogits, out.grads);
    }
    out.loss = out.sum_loss / static_cast<double>(out.n_positions);
    if (!std::isfinite(out.loss))
        throw NumericError("non-finite loss at step " +
                           std::to_string(ckpt.step_counter));
    const double inv = 1.0 / static_cast<double>(out.n_positions);
    for (auto& [name, g] : out.grads) g *= inv;
    return out;
}

// ---- checkpoint serialization ----
// magic "BLXC", u32 version, u64 JSON length, JSON blob, then tensors as
// (u32 name length, name, u32 rank, u64 dims..., row-major LE float32 data).

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_raw(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, size_t* pos) {
    if (*pos + sizeof(T) > in.size())
        throw DataError("truncated checkpoint file");
    T v;
    std::memcpy(&v, in.data() + *pos, sizeof(T));
    *pos += sizeof(T);
    return v;
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const ModelCheckpoint& ckpt,
                                       const json& extra_meta = {}) {
    std::string out = "BLXC";
    detail::put_raw<std::uint32_t>(out, kCheckpointVersion);
    json meta;
    meta["config"] = ckpt.config.to_json();
    meta["step_counter"] = ckpt.step_counter;
    meta["rng_state"] = ckpt.rng.serialize();
    if (extra_meta.is_object())
        for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
    const std::string cfg = meta.dump();
    detail::put_raw<std::uint64_t>(out, cfg.size());
    out += cfg;
    for (const auto& [name, m] : ckpt.tensors) {
        detail::put_raw<std::uint32_t>(out,
                                       static_cast<std::uint32_t>(name.size()));
        out += name;
        const bool vec = m.rows() == 1;
        detail::put_raw<std::uint32_t>(out, vec ? 1u : 2u);
        if (vec) {
            detail::put_raw<std::uint64_t>(out,
                                           static_cast<std::uint64_t>(m.cols()));
        } else {
            detail::put_raw<std::uint64_t>(out,
                                           static_cast<std::uint64_t>(m.rows()));
            detail::put_raw<std::uint64_t>(out,
                                           static_cast<std::uint64_t>(m.cols()));
        }
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                detail::put_raw<float>(out, static_cast<float>(m(r, c)));
    }
    return out;
}

inline ModelCheckpoint checkpoint_from_bytes(const std::string& in,
                                             json* extra_meta = nullptr) {
    if (in.size() < 4 || in.compare(0, 4, "BLXC") != 0)
        throw DataError("bad magic: not a checkpoint file");
    size_t pos = 4;
    const auto version = detail::get_raw<std::uint32_t>(in, &pos);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint version " + std::to_string(version) +
                        " unsupported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const auto cfg_len = detail::get_raw<std::uint64_t>(in, &pos);
    if (pos + cfg_len > in.size()) throw DataError("truncated checkpoint file");
    json meta = json::parse(in.substr(pos, cfg_len));
    pos += cfg_len;
    ModelCheckpoint ckpt;
    ckpt.config = ModelConfig::from_json(meta.at("config"));
    ckpt.step_counter = meta.value("step_counter", std::int64_t{0});
    if (meta.contains("rng_state"))
        ckpt.rng = Rng::deserialize(meta["rng_state"].get<std::string>());
    if (extra_meta) *extra_meta = meta;
    while (pos < in.size()) {
        const auto name_len = detail::get_raw<std::uint32_t>(in, &pos);
        if (pos + name_len > in.size())
            throw DataError("truncated checkpoint file");
        std::string name = in.substr(pos, name_len);
        pos += name_len;
        const auto rank = detail::get_raw<std::uint32_t>(in, &pos);
        if (rank != 1 && rank != 2)
            throw DataError("unsupported tensor rank in checkpoint");
        std::uint64_t rows = 1, cols = 0;
        if (rank == 1) {
            cols = detail::get_raw<std::uint64_t>(in, &pos);
        } else {
            rows = detail::get_raw<std::uint64_t>(in, &pos);
            cols = detail::get_raw<std::uint64_t>(in, &pos);
        }
        Matrix m(static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = static_cast<double>(detail::get_raw<float>(in, &pos));
        if (!m.allFinite())
            throw DataError("non-finite values in tensor " + name);
        ckpt.tensors.emplace(std::move(name), std::move(m));
    }
    return ckpt;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt,
                            const std::string& path,
                            const json& extra_meta = {}) {
    write_file(path, checkpoint_to_bytes(ckpt, extra_meta));
}

inline ModelCheckpoint load_checkpoint(const std::string& path,
                                       json* extra_meta = nullptr) {
    return checkpoint_from_bytes(read_file(path), extra_meta);
}

}  // namespace bilex
