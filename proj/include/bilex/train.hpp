#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bilex/common.hpp"
#include "bilex/model.hpp"
#include "bilex/vocabulary.hpp"

namespace bilex {

struct TrainConfig {
    double lr = 5e-4;
    int warmup_steps = 1000;
    double weight_decay = 0.1;
    int effective_batch_tokens = 512 * 256;
    int grad_accum_steps = 1;
    int epochs = 2;
    double l1_fraction = 0.75;
    std::uint64_t seed = 0;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("lr must be positive");
        if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (effective_batch_tokens < 1)
            throw ConfigError("effective_batch_tokens must be >= 1");
        if (grad_accum_steps < 1)
            throw ConfigError("grad_accum_steps must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (l1_fraction <= 0.0 || l1_fraction >= 1.0)
            throw ConfigError("l1_fraction must lie in (0, 1)");
    }

    json to_json() const {
        return json{{"lr", lr},
                    {"warmup_steps", warmup_steps},
                    {"weight_decay", weight_decay},
                    {"effective_batch_tokens", effective_batch_tokens},
                    {"grad_accum_steps", grad_accum_steps},
                    {"epochs", epochs},
                    {"l1_fraction", l1_fraction},
                    {"seed", seed}};
    }

    static TrainConfig from_json(const json& j) {
        TrainConfig c;
        c.lr = j.value("lr", 5e-4);
        c.warmup_steps = j.value("warmup_steps", 1000);
        c.weight_decay = j.value("weight_decay", 0.1);
        c.effective_batch_tokens = j.value("effective_batch_tokens", 512 * 256);
        c.grad_accum_steps = j.value("grad_accum_steps", 1);
        c.epochs = j.value("epochs", 2);
        c.l1_fraction = j.value("l1_fraction", 0.75);
        c.seed = j.value("seed", std::uint64_t{0});
        return c;
    }
};

// Linear warmup to the base rate, then cosine decay to 10% of it at the
// final step. Steps are 1-based.
inline double learning_rate_at(const TrainConfig& cfg, std::int64_t step,
                               std::int64_t total_steps) {
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    if (total_steps <= cfg.warmup_steps) return cfg.lr;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) /
        static_cast<double>(total_steps - cfg.warmup_steps);
    constexpr double kMinFrac = 0.1;
    return cfg.lr *
           (kMinFrac + (1.0 - kMinFrac) * 0.5 *
                           (1.0 + std::cos(M_PI * std::min(1.0, progress))));
}

struct LossLog {
    struct Step {
        std::int64_t step;
        int epoch;
        std::string phase;  // "l1" or "l2"
        double loss;
    };
    struct Eval {
        std::int64_t step;
        int epoch;
        std::string lang;  // "l1" or "l2"
        double loss;
    };
    std::vector<Step> steps;
    std::vector<Eval> evals;

    std::string to_csv(const std::string& header = {}) const {
        std::string out = header;
        out += "step,epoch,phase,loss\n";
        char buf[64];
        size_t ei = 0;
        auto eval_row = [&](const Eval& e) {
            std::snprintf(buf, sizeof(buf), "%.9g", e.loss);
            out += std::to_string(e.step) + "," + std::to_string(e.epoch) +
                   ",eval_" + e.lang + "," + buf + "\n";
        };
        for (const auto& s : steps) {
            while (ei < evals.size() && evals[ei].step < s.step)
                eval_row(evals[ei++]);
            std::snprintf(buf, sizeof(buf), "%.9g", s.loss);
            out += std::to_string(s.step) + "," + std::to_string(s.epoch) +
                   "," + s.phase + "," + buf + "\n";
        }
        while (ei < evals.size()) eval_row(evals[ei++]);
        return out;
    }
};

// Token streams per language; test streams may be empty (then no eval rows
// are produced for that language).
struct TokenStreams {
    std::vector<int> l1_train;
    std::vector<int> l2_train;
    std::vector<int> l1_test;
    std::vector<int> l2_test;
};

// Documents concatenated with the end-of-text token after each one.
inline std::vector<int> pack_stream(const DocumentStore& store,
                                    const ConditionVocabulary& vocab) {
    std::vector<int> out;
    for (const auto& doc : store.docs) {
        auto seq = vocab.encode(doc);
        out.insert(out.end(), seq.ids.begin(), seq.ids.end());
        out.push_back(vocab.eot_id());
    }
    return out;
}

// Trims the longer stream so that l1 holds `l1_fraction` of the combined
// token budget (the paper's 75/25 presentation split).
inline void apply_l1_fraction(std::vector<int>& l1, std::vector<int>& l2,
                              double l1_fraction) {
    const double f = l1_fraction;
    const auto n1 = static_cast<double>(l1.size());
    const auto n2 = static_cast<double>(l2.size());
    if (n1 == 0.0 || n2 == 0.0) return;
    if (n1 / (n1 + n2) > f) {
        const auto keep = static_cast<size_t>(f / (1.0 - f) * n2);
        if (keep < l1.size()) l1.resize(keep);
    } else {
        const auto keep = static_cast<size_t>((1.0 - f) / f * n1);
        if (keep < l2.size()) l2.resize(keep);
    }
}

namespace detail {

struct AdamState {
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
    std::int64_t t = 0;
};

inline void adamw_step(ModelCheckpoint& ckpt, AdamState& state,
                       const std::map<std::string, Matrix>& grads, double lr,
                       double weight_decay) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Matrix& p = ckpt.tensor(name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            state.m.emplace(name, Matrix::Zero(p.rows(), p.cols()));
            state.v.emplace(name, Matrix::Zero(p.rows(), p.cols()));
            mit = state.m.find(name);
        }
        Matrix& m = mit->second;
        Matrix& v = state.v.find(name)->second;
        if (!g.allFinite())
            throw NumericError("non-finite gradient in " + name + " at step " +
                               std::to_string(state.t));
        m = b1 * m + (1.0 - b1) * g;
        v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
        // decoupled weight decay on matrices; bias and norm vectors skip it
        if (weight_decay > 0.0 && p.rows() > 1) p -= (lr * weight_decay) * p;
        p.array() -=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
}

inline std::vector<std::vector<int>> cut_blocks(const std::vector<int>& stream,
                                                int block_len) {
    std::vector<std::vector<int>> blocks;
    const size_t n = stream.size() / static_cast<size_t>(block_len);
    blocks.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        blocks.emplace_back(
            stream.begin() + static_cast<std::ptrdiff_t>(i) * block_len,
            stream.begin() + static_cast<std::ptrdiff_t>(i + 1) * block_len);
    }
    return blocks;
}

inline double eval_stream_loss(const ModelCheckpoint& ckpt,
                               const std::vector<std::vector<int>>& blocks) {
    double sum = 0.0;
    std::int64_t n = 0;
    for (const auto& b : blocks) {
        auto [s, np] = sequence_loss(ckpt, b);
        sum += s;
        n += np;
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace detail

// Sequential two-language regime: per epoch the full L1 stream is consumed
// first, then the full L2 stream, in fixed blocks of context_length tokens.
// One optimizer step covers ~effective_batch_tokens tokens (micro-batched by
// grad_accum_steps); steps never span a phase boundary. Held-out losses are
// computed per language at the end of every epoch.
inline LossLog train(ModelCheckpoint& ckpt, const TokenStreams& streams,
                     const TrainConfig& cfg) {
    cfg.validate();
    const int ctx = ckpt.config.context_length;
    auto l1_blocks = detail::cut_blocks(streams.l1_train, ctx);
    auto l2_blocks = detail::cut_blocks(streams.l2_train, ctx);
    if (l1_blocks.empty())
        throw DataError("l1 train stream shorter than one block");
    if (l2_blocks.empty())
        throw DataError("l2 train stream shorter than one block");
    auto l1_eval = detail::cut_blocks(streams.l1_test, ctx);
    auto l2_eval = detail::cut_blocks(streams.l2_test, ctx);

    const int blocks_per_step =
        std::max(1, (cfg.effective_batch_tokens + ctx - 1) / ctx);
    auto steps_in = [&](size_t nblocks) {
        return static_cast<std::int64_t>(
            (nblocks + static_cast<size_t>(blocks_per_step) - 1) /
            static_cast<size_t>(blocks_per_step));
    };
    const std::int64_t total_steps =
        cfg.epochs * (steps_in(l1_blocks.size()) + steps_in(l2_blocks.size()));

    detail::AdamState adam;
    adam.t = ckpt.step_counter;
    Rng dropout_rng(cfg.seed);
    LossLog log;
    std::int64_t step = ckpt.step_counter;

    const int micro_blocks =
        std::max(1, (blocks_per_step + cfg.grad_accum_steps - 1) /
                        cfg.grad_accum_steps);

    auto run_phase = [&](const std::vector<std::vector<int>>& blocks,
                         const char* phase, int epoch) {
        size_t i = 0;
        while (i < blocks.size()) {
            const size_t step_end =
                std::min(blocks.size(), i + static_cast<size_t>(blocks_per_step));
            std::map<std::string, Matrix> grad_sum;
            double loss_sum = 0.0;
            std::int64_t pos_sum = 0;
            while (i < step_end) {
                const size_t micro_end =
                    std::min(step_end, i + static_cast<size_t>(micro_blocks));
                std::vector<std::vector<int>> micro(
                    blocks.begin() + static_cast<std::ptrdiff_t>(i),
                    blocks.begin() + static_cast<std::ptrdiff_t>(micro_end));
                auto lg = loss_and_gradients(
                    ckpt, micro,
                    ckpt.config.dropout > 0.0 ? &dropout_rng : nullptr);
                // re-weight micro-batch means into a step-level mean
                for (auto& [name, g] : lg.grads)
                    detail::add_grad(
                        grad_sum, name,
                        (g * static_cast<double>(lg.n_positions)).eval());
                loss_sum += lg.sum_loss;
                pos_sum += lg.n_positions;
                i = micro_end;
            }
            for (auto& [name, g] : grad_sum)
                g /= static_cast<double>(pos_sum);
            ++step;
            const double lr = learning_rate_at(cfg, step, total_steps);
            detail::adamw_step(ckpt, adam, grad_sum, lr, cfg.weight_decay);
            ckpt.step_counter = step;
            log.steps.push_back(
                {step, epoch, phase, loss_sum / static_cast<double>(pos_sum)});
        }
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        run_phase(l1_blocks, "l1", epoch);
        run_phase(l2_blocks, "l2", epoch);
        if (!l1_eval.empty())
            log.evals.push_back(
                {step, epoch, "l1", detail::eval_stream_loss(ckpt, l1_eval)});
        if (!l2_eval.empty())
            log.evals.push_back(
                {step, epoch, "l2", detail::eval_stream_loss(ckpt, l2_eval)});
    }
    ckpt.rng = dropout_rng;
    return log;
}

}  // namespace bilex
