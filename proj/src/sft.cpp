#include "pairrl/sft.hpp"

#include <cmath>

#include "pairrl/rng.hpp"

namespace pairrl {

void SftConfig::validate() const {
    if (epochs < 1) throw ValidationError("sft epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("sft batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("sft lr must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("sft momentum outside [0, 1)");
    if (max_grad_norm < 0.0) throw ValidationError("sft max_grad_norm must be >= 0");
}

namespace {

// Accumulates the exemplar's masked-logp gradient (scaled by `scale`) into
// grad and returns its summed target log-likelihood. The tape consumes the
// prompt plus all but the last target token; position n_prompt + i predicts
// target[i].
double exemplar_logp_grad(const PolicyParams& p, const ScaffoldExemplar& e, double scale,
                          PolicyParams& grad) {
    if (e.target_tokens.empty()) throw ValidationError("sft: exemplar with empty target");
    TokenSeq consumed = e.prompt_tokens;
    consumed.insert(consumed.end(), e.target_tokens.begin(), e.target_tokens.end() - 1);
    Tape tape = run_tape(p, consumed);

    const size_t n_prompt = e.prompt_tokens.size();
    std::vector<PredSpec> preds(tape.steps.size() + 1);
    double total = 0.0;
    for (size_t i = 0; i < e.target_tokens.size(); ++i) {
        size_t pos = n_prompt + i;
        preds[pos].pred_tok = e.target_tokens[i];
        preds[pos].logp_coeff = scale;
        total += log_softmax(logits_at(p, tape.state(pos)))[e.target_tokens[i]];
    }
    backward(p, tape, preds, 1.0, grad);
    return total;
}

}  // namespace

std::pair<PolicyParams, double> sft_step(const PolicyParams& p,
                                         const std::vector<const ScaffoldExemplar*>& batch,
                                         double lr, OptState& opt) {
    if (batch.empty()) throw ValidationError("sft_step: empty batch");
    PolicyParams grad = PolicyParams::zeros_like(p);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const ScaffoldExemplar* e : batch) {
        double inv_t = 1.0 / static_cast<double>(e->target_tokens.size());
        double total = exemplar_logp_grad(p, *e, inv_b * inv_t, grad);
        loss -= inv_b * inv_t * total;
    }
    if (!std::isfinite(loss)) throw NumericError("sft_step: non-finite loss, step rejected");
    return {optimizer_step(p, grad, lr, opt), loss};
}

double sft_dataset_loss(const PolicyParams& p, const std::vector<ScaffoldExemplar>& dataset) {
    if (dataset.empty()) throw ValidationError("sft_dataset_loss: empty dataset");
    double loss = 0.0;
    for (const ScaffoldExemplar& e : dataset) {
        LogProbTrace tr = forward_logprobs(p, e.prompt_tokens, e.target_tokens);
        loss -= tr.total / static_cast<double>(e.target_tokens.size());
    }
    return loss / static_cast<double>(dataset.size());
}

SftResult train_sft(const PolicyParams& init, const std::vector<ScaffoldExemplar>& dataset,
                    const SftConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ValidationError("train_sft: empty dataset");

    SftResult res{clone_frozen(init), {}};
    OptState opt;
    opt.momentum = cfg.momentum;
    opt.max_grad_norm = cfg.max_grad_norm;

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(dataset.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng rng(derive_seed(cfg.seed, "sft-epoch", epoch));
        rng.shuffle(order);

        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            std::vector<const ScaffoldExemplar*> batch;
            for (size_t b = at; b < order.size() && b < at + cfg.batch_size; ++b) {
                batch.push_back(&dataset[order[b]]);
            }
            auto [next, loss] = sft_step(res.params, batch, cfg.lr, opt);
            res.params = std::move(next);
            ++step;
            res.curve.push_back({step, loss});
        }
    }

    if (!cfg.checkpoint_path.empty()) {
        save_policy(cfg.checkpoint_path, res.params,
                    "{\"stage\":\"sft\",\"seed\":" + std::to_string(cfg.seed) + "}");
    }
    return res;
}

}  // namespace pairrl
