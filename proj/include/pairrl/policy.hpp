#pragma once
// Autoregressive token policy: embedding plus learned position table feeds a
// single gated recurrent layer, whose state queries one fixed-window causal
// attention readout over the input vectors; a residual tanh mix and an output
// projection produce next-token logits. All double precision; likelihoods are
// computed in log space with max-subtracted softmax. The tape API exposes
// exact reverse-mode gradients; finite-difference tests pin them down.
//
// The recurrent path carries recent context; the attention path does content
// matching against earlier positions (keys and values are token+position
// vectors, so retrieval can key on either). The window is the positional
// capacity max_seq, i.e. attention is causal over the whole sequence for any
// sequence the policy accepts.
//
// Output projection starts at zero, so a freshly initialized policy is
// exactly uniform over the vocabulary.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pairrl/common.hpp"
#include "pairrl/vocab.hpp"

namespace pairrl {

// ---------- parameters ----------

struct PolicyParams {
    int vocab_size = 0;
    int d_model = 0;
    int max_seq = 0;  // positional capacity; also the attention window

    Mat embed;              // V x d
    Mat pos;                // max_seq x d, learned position table
    Mat wz, wr, wg;         // d x d, input weights per gate
    Mat uz, ur, ug;         // d x d, recurrent weights per gate
    Mat bz, br, bg;         // 1 x d
    Mat wq, wk, wv, wc;     // d x d, attention query/key/value/output mix
    Mat bh;                 // 1 x d, pre-tanh mix bias
    Mat wo;                 // V x d, output projection
    Mat bo;                 // 1 x V

    // Random init: embeddings, positions, recurrent and attention weights
    // gaussian, biases and the output projection zero (uniform initial
    // distribution).
    static PolicyParams init(int vocab_size, int d_model, uint64_t seed, int max_seq = 384);
    static PolicyParams zeros_like(const PolicyParams& p);

    struct BlockRef {
        const char* name;
        Mat* m;
    };
    struct ConstBlockRef {
        const char* name;
        const Mat* m;
    };
    std::vector<BlockRef> blocks();
    std::vector<ConstBlockRef> blocks() const;

    size_t num_params() const;
    bool same_shape(const PolicyParams& o) const;
    // Name of the first block holding a non-finite value, or empty string.
    std::string first_nonfinite_block() const;
};

// Deep copy used to freeze a reference policy; the result shares no storage
// with the source.
PolicyParams clone_frozen(const PolicyParams& p);

// ---------- sampling and likelihood ----------

struct SamplerConfig {
    double temperature = 1.0;  // > 0
    int max_len = 1;           // >= 1
    uint64_t seed = 0;

    void validate() const;
};

struct LogProbTrace {
    TokenSeq tokens;              // completion tokens, terminal <eos> included when emitted
    std::vector<double> logp;     // per-token log prob at the temperature used
    double total = 0.0;           // sum of logp

    void validate() const;  // total matches sum within 1e-9, all entries <= 0
};

// Log-probabilities of a fixed completion after the context, at the given
// softmax temperature.
LogProbTrace forward_logprobs(const PolicyParams& p, const TokenSeq& context,
                              const TokenSeq& completion, double temperature = 1.0);

// Draws a completion token by token until <eos> or cfg.max_len. Pure
// function of (params, context, cfg). The trace records the sampling-
// temperature log probs of exactly the tokens kept in `tokens`.
LogProbTrace sample(const PolicyParams& p, const Vocab& v, const TokenSeq& context,
                    const SamplerConfig& cfg);

// Deterministic argmax decode (ties resolve to the lowest id).
TokenSeq greedy_decode(const PolicyParams& p, const Vocab& v, const TokenSeq& context,
                       int max_len);

// Next-token logits from a prediction state.
std::vector<double> logits_at(const PolicyParams& p, const std::vector<double>& h);
// log softmax(x / temperature), max-subtracted.
std::vector<double> log_softmax(const std::vector<double>& logits, double temperature = 1.0);

// ---------- tape (exact gradients) ----------

struct TapeStep {
    int tok;                      // token consumed at this position
    std::vector<double> x;        // embed[tok] + pos[t]
    std::vector<double> z, r, g;  // gate activations
    std::vector<double> s;        // recurrent state after this step
    std::vector<double> q, k, v;  // attention projections at this position
    std::vector<double> attn;     // softmax weights over positions [0, t]
    std::vector<double> c;        // attended context
    std::vector<double> h;        // prediction state s + tanh(Wc c + bh)
};

struct Tape {
    std::vector<TapeStep> steps;
    std::vector<double> h_start;  // prediction state before any token: tanh(bh)

    // Prediction state after j consumed tokens, j in [0, steps.size()]:
    // the vector logits_at() expects for predicting token j.
    const std::vector<double>& state(size_t j) const {
        return j == 0 ? h_start : steps[j - 1].h;
    }
};

// Runs the encoder over `tokens` from position 0, recording everything
// backward() needs. tokens.size() must not exceed params.max_seq.
Tape run_tape(const PolicyParams& p, const TokenSeq& tokens);

// Per-position gradient request for backward(). Position j predicts a token
// from state(j); both terms may be active at once.
struct PredSpec {
    int pred_tok = -1;                  // required when logp_coeff != 0
    double logp_coeff = 0.0;            // d/dlogits of logp_tau(pred_tok), scaled
    double kl_coeff = 0.0;              // d/dlogits of KL(p1 || ref_p1), scaled
    const double* ref_logp1 = nullptr;  // [V] reference log probs at temperature 1

    bool active() const { return logp_coeff != 0.0 || kl_coeff != 0.0; }
};

// Reverse pass over a tape. preds.size() must equal tape.steps.size() + 1
// (one slot per prediction state). Accumulates into grad.
void backward(const PolicyParams& p, const Tape& tape, const std::vector<PredSpec>& preds,
              double temperature, PolicyParams& grad);

// Gradient of the total log-likelihood of `completion` given `context` at
// temperature 1. Throws NumericError naming the offending block if the
// result is non-finite.
struct LogpGrad {
    PolicyParams grad;
    double total = 0.0;
};
LogpGrad grad_total_logp(const PolicyParams& p, const TokenSeq& context,
                         const TokenSeq& completion);

// ---------- optimizer ----------

struct OptState {
    double momentum = 0.0;       // 0 disables
    double max_grad_norm = 0.0;  // 0 disables clipping
    std::unique_ptr<PolicyParams> velocity;  // lazily created when momentum > 0
};

// Gradient ascent: returns updated params, inputs untouched. Rejects
// non-finite gradients (NumericError) and shape mismatches (ValidationError)
// before any state changes.
PolicyParams optimizer_step(const PolicyParams& p, const PolicyParams& grad, double lr,
                            OptState& state);

double grad_l2_norm(const PolicyParams& g);
// a += s * b, blockwise.
void axpy_params(PolicyParams& a, double s, const PolicyParams& b);

// ---------- checkpoints ----------
// Flat binary container: magic line, one-line JSON header with block shapes
// and caller metadata, then raw little-endian f64 payload per block in
// header order. Writes are atomic (temp file + rename).

struct Checkpoint {
    PolicyParams params;
    std::string meta_json;  // caller-owned JSON object, "{}" if none
};

void save_policy(const std::string& path, const PolicyParams& p, const std::string& meta_json);
Checkpoint load_policy(const std::string& path);

}  // namespace pairrl
