#include "pairrl/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pairrl/kernels.hpp"
#include "pairrl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian f64");

namespace pairrl {

using nlohmann::json;

// ---------- parameters ----------

PolicyParams PolicyParams::init(int vocab_size, int d_model, uint64_t seed, int max_seq) {
    if (vocab_size < 16 || vocab_size > 4096) {
        throw ValidationError("policy vocab_size outside [16, 4096]");
    }
    if (d_model < 1 || d_model > 64) {
        throw ValidationError("policy d_model outside [1, 64]");
    }
    if (max_seq < 2 || max_seq > 4096) {
        throw ValidationError("policy max_seq outside [2, 4096]");
    }
    PolicyParams p;
    p.vocab_size = vocab_size;
    p.d_model = d_model;
    p.max_seq = max_seq;
    p.embed = Mat(vocab_size, d_model);
    p.pos = Mat(max_seq, d_model);
    for (Mat* m : {&p.wz, &p.wr, &p.wg, &p.uz, &p.ur, &p.ug}) *m = Mat(d_model, d_model);
    for (Mat* m : {&p.bz, &p.br, &p.bg}) *m = Mat(1, d_model);
    for (Mat* m : {&p.wq, &p.wk, &p.wv, &p.wc}) *m = Mat(d_model, d_model);
    p.bh = Mat(1, d_model);
    p.wo = Mat(vocab_size, d_model);
    p.bo = Mat(1, vocab_size);

    Rng rng(derive_seed(seed, "policy-init"));
    const double emb_scale = 0.5;
    const double pos_scale = 0.25;
    const double rec_scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (double& v : p.embed.a) v = emb_scale * rng.normal();
    for (double& v : p.pos.a) v = pos_scale * rng.normal();
    for (Mat* m : {&p.wz, &p.wr, &p.wg, &p.uz, &p.ur, &p.ug}) {
        for (double& v : m->a) v = rec_scale * rng.normal();
    }
    for (Mat* m : {&p.wq, &p.wk, &p.wv}) {
        for (double& v : m->a) v = rec_scale * rng.normal();
    }
    // Attention enters the prediction state through tanh(wc c + bh); a small
    // wc keeps the mix near linear at the start without silencing its grads.
    for (double& v : p.wc.a) v = 0.5 * rec_scale * rng.normal();
    // Update-gate bias starts at a log-spaced timescale spectrum so a fresh
    // policy retains early context across prompt-length sequences instead of
    // halving its state every step.
    for (double& v : p.bz.a) v = -std::log(rng.uniform(1.0, 64.0));
    // bh, wo and bo stay zero: the initial next-token distribution is uniform.
    return p;
}

PolicyParams PolicyParams::zeros_like(const PolicyParams& p) {
    PolicyParams z;
    z.vocab_size = p.vocab_size;
    z.d_model = p.d_model;
    z.max_seq = p.max_seq;
    auto src = p.blocks();
    auto dst = z.blocks();
    for (size_t i = 0; i < src.size(); ++i) {
        *dst[i].m = Mat(src[i].m->rows, src[i].m->cols);
    }
    return z;
}

std::vector<PolicyParams::BlockRef> PolicyParams::blocks() {
    return {{"embed", &embed}, {"pos", &pos}, {"wz", &wz}, {"wr", &wr}, {"wg", &wg},
            {"uz", &uz},       {"ur", &ur},   {"ug", &ug}, {"bz", &bz}, {"br", &br},
            {"bg", &bg},       {"wq", &wq},   {"wk", &wk}, {"wv", &wv}, {"wc", &wc},
            {"bh", &bh},       {"wo", &wo},   {"bo", &bo}};
}

std::vector<PolicyParams::ConstBlockRef> PolicyParams::blocks() const {
    return {{"embed", &embed}, {"pos", &pos}, {"wz", &wz}, {"wr", &wr}, {"wg", &wg},
            {"uz", &uz},       {"ur", &ur},   {"ug", &ug}, {"bz", &bz}, {"br", &br},
            {"bg", &bg},       {"wq", &wq},   {"wk", &wk}, {"wv", &wv}, {"wc", &wc},
            {"bh", &bh},       {"wo", &wo},   {"bo", &bo}};
}

size_t PolicyParams::num_params() const {
    size_t n = 0;
    for (const auto& b : blocks()) n += b.m->size();
    return n;
}

bool PolicyParams::same_shape(const PolicyParams& o) const {
    if (vocab_size != o.vocab_size || d_model != o.d_model || max_seq != o.max_seq) return false;
    auto a = blocks();
    auto b = o.blocks();
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].m->rows != b[i].m->rows || a[i].m->cols != b[i].m->cols) return false;
    }
    return true;
}

std::string PolicyParams::first_nonfinite_block() const {
    for (const auto& b : blocks()) {
        if (!b.m->all_finite()) return b.name;
    }
    return "";
}

PolicyParams clone_frozen(const PolicyParams& p) { return p; }

// ---------- forward pieces ----------

namespace {

void check_tokens(const PolicyParams& p, const TokenSeq& seq, const char* what) {
    for (int t : seq) {
        if (t < 0 || t >= p.vocab_size) {
            throw ValidationError(std::string(what) + " token id " + std::to_string(t) +
                                  " out of vocab range");
        }
    }
}

// One recurrence step over input vector x; z/r/g receive the gate activations.
void gru_step(const PolicyParams& p, const double* x, const std::vector<double>& h,
              std::vector<double>& z, std::vector<double>& r, std::vector<double>& g,
              std::vector<double>& q, std::vector<double>& h_new) {
    const auto& k = kern::active_ops();
    const size_t d = static_cast<size_t>(p.d_model);

    z.assign(p.bz.a.begin(), p.bz.a.end());
    k.matvec_acc(p.wz.a.data(), d, d, x, z.data());
    k.matvec_acc(p.uz.a.data(), d, d, h.data(), z.data());
    kern::sigmoid_inplace(z.data(), d);

    r.assign(p.br.a.begin(), p.br.a.end());
    k.matvec_acc(p.wr.a.data(), d, d, x, r.data());
    k.matvec_acc(p.ur.a.data(), d, d, h.data(), r.data());
    kern::sigmoid_inplace(r.data(), d);

    q.resize(d);
    for (size_t i = 0; i < d; ++i) q[i] = r[i] * h[i];

    g.assign(p.bg.a.begin(), p.bg.a.end());
    k.matvec_acc(p.wg.a.data(), d, d, x, g.data());
    k.matvec_acc(p.ug.a.data(), d, d, q.data(), g.data());
    kern::tanh_inplace(g.data(), d);

    h_new.resize(d);
    for (size_t i = 0; i < d; ++i) h_new[i] = (1.0 - z[i]) * h[i] + z[i] * g[i];
}

// y = M x for a d x d block.
void matvec(const Mat& m, const double* x, std::vector<double>& y) {
    y.assign(static_cast<size_t>(m.rows), 0.0);
    kern::active_ops().matvec_acc(m.a.data(), static_cast<size_t>(m.rows),
                                  static_cast<size_t>(m.cols), x, y.data());
}

// Softmax in place over n entries, max-subtracted.
void softmax_inplace(double* x, size_t n) {
    double mx = x[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        s += x[i];
    }
    for (size_t i = 0; i < n; ++i) x[i] /= s;
}

// The prediction state before any token is consumed: s = 0, empty attention
// window, so h = tanh(bh).
std::vector<double> start_state(const PolicyParams& p) {
    std::vector<double> h(p.bh.a);
    kern::tanh_inplace(h.data(), h.size());
    return h;
}

// Incremental encoder for decoding paths: consumes one token at a time,
// maintaining the recurrent state and the attention key/value cache. After
// each consume(), h holds the prediction state for the next token.
struct Encoder {
    const PolicyParams& p;
    const size_t d;
    int t = 0;
    std::vector<double> s;               // recurrent state
    std::vector<double> kcache, vcache;  // t x d, flat
    std::vector<double> h;               // prediction state
    std::vector<double> z, r, g, q, buf, x, c, scores;

    explicit Encoder(const PolicyParams& pp)
        : p(pp), d(static_cast<size_t>(pp.d_model)), s(d, 0.0), h(start_state(pp)) {}

    void consume(int tok) {
        if (t >= p.max_seq) {
            throw ValidationError("policy: sequence exceeds positional capacity " +
                                  std::to_string(p.max_seq));
        }
        x.assign(p.embed.row(tok), p.embed.row(tok) + d);
        const double* pr = p.pos.row(t);
        for (size_t i = 0; i < d; ++i) x[i] += pr[i];

        gru_step(p, x.data(), s, z, r, g, q, buf);
        s.swap(buf);

        matvec(p.wq, s.data(), q);
        kcache.resize((static_cast<size_t>(t) + 1) * d);
        vcache.resize((static_cast<size_t>(t) + 1) * d);
        matvec(p.wk, x.data(), buf);
        std::copy(buf.begin(), buf.end(), kcache.begin() + static_cast<size_t>(t) * d);
        matvec(p.wv, x.data(), buf);
        std::copy(buf.begin(), buf.end(), vcache.begin() + static_cast<size_t>(t) * d);

        const auto& kn = kern::active_ops();
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        const size_t n = static_cast<size_t>(t) + 1;
        scores.resize(n);
        for (size_t j = 0; j < n; ++j) {
            scores[j] = inv_sqrt_d * kn.dot(q.data(), kcache.data() + j * d, d);
        }
        softmax_inplace(scores.data(), n);
        c.assign(d, 0.0);
        for (size_t j = 0; j < n; ++j) {
            kn.axpy(scores[j], vcache.data() + j * d, c.data(), d);
        }

        matvec(p.wc, c.data(), buf);
        for (size_t i = 0; i < d; ++i) buf[i] = std::tanh(buf[i] + p.bh.a[i]);
        h.resize(d);
        for (size_t i = 0; i < d; ++i) h[i] = s[i] + buf[i];
        ++t;
    }
};

}  // namespace

std::vector<double> logits_at(const PolicyParams& p, const std::vector<double>& h) {
    if (h.size() != static_cast<size_t>(p.d_model)) {
        throw ValidationError("logits_at: state size mismatch");
    }
    std::vector<double> out(p.bo.a);
    kern::active_ops().matvec_acc(p.wo.a.data(), static_cast<size_t>(p.vocab_size),
                                  static_cast<size_t>(p.d_model), h.data(), out.data());
    return out;
}

std::vector<double> log_softmax(const std::vector<double>& logits, double temperature) {
    if (!(temperature > 0.0)) throw ValidationError("log_softmax: temperature must be > 0");
    std::vector<double> y(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) y[i] = logits[i] / temperature;
    double lse = kern::logsumexp(y.data(), y.size());
    for (double& v : y) v -= lse;
    return y;
}

Tape run_tape(const PolicyParams& p, const TokenSeq& tokens) {
    check_tokens(p, tokens, "tape");
    if (static_cast<int>(tokens.size()) > p.max_seq) {
        throw ValidationError("run_tape: sequence exceeds positional capacity " +
                              std::to_string(p.max_seq));
    }
    const size_t d = static_cast<size_t>(p.d_model);
    const auto& kn = kern::active_ops();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Tape tape;
    tape.h_start = start_state(p);
    tape.steps.reserve(tokens.size());

    std::vector<double> s(d, 0.0), gq, buf;
    for (size_t t = 0; t < tokens.size(); ++t) {
        TapeStep st;
        st.tok = tokens[t];
        st.x.assign(p.embed.row(st.tok), p.embed.row(st.tok) + d);
        const double* pr = p.pos.row(static_cast<int>(t));
        for (size_t i = 0; i < d; ++i) st.x[i] += pr[i];

        gru_step(p, st.x.data(), s, st.z, st.r, st.g, gq, buf);
        st.s = buf;
        s = buf;

        matvec(p.wq, st.s.data(), st.q);
        matvec(p.wk, st.x.data(), st.k);
        matvec(p.wv, st.x.data(), st.v);

        st.attn.resize(t + 1);
        for (size_t j = 0; j < t; ++j) {
            st.attn[j] = inv_sqrt_d * kn.dot(st.q.data(), tape.steps[j].k.data(), d);
        }
        st.attn[t] = inv_sqrt_d * kn.dot(st.q.data(), st.k.data(), d);
        softmax_inplace(st.attn.data(), t + 1);

        st.c.assign(d, 0.0);
        for (size_t j = 0; j < t; ++j) {
            kn.axpy(st.attn[j], tape.steps[j].v.data(), st.c.data(), d);
        }
        kn.axpy(st.attn[t], st.v.data(), st.c.data(), d);

        matvec(p.wc, st.c.data(), buf);
        for (size_t i = 0; i < d; ++i) buf[i] = std::tanh(buf[i] + p.bh.a[i]);
        st.h.resize(d);
        for (size_t i = 0; i < d; ++i) st.h[i] = st.s[i] + buf[i];

        tape.steps.push_back(std::move(st));
    }
    return tape;
}

// ---------- likelihood / sampling ----------

void SamplerConfig::validate() const {
    if (!(temperature > 0.0)) throw ValidationError("sampler temperature must be > 0");
    if (max_len < 1) throw ValidationError("sampler max_len must be >= 1");
}

void LogProbTrace::validate() const {
    if (tokens.size() != logp.size()) throw ValidationError("trace token/logp length mismatch");
    double s = 0.0;
    for (double v : logp) {
        if (!(v <= 0.0)) throw ValidationError("trace log prob above zero");
        s += v;
    }
    if (std::abs(s - total) > 1e-9) throw ValidationError("trace total drifted from sum");
}

LogProbTrace forward_logprobs(const PolicyParams& p, const TokenSeq& context,
                              const TokenSeq& completion, double temperature) {
    if (!(temperature > 0.0)) throw ValidationError("forward_logprobs: temperature must be > 0");
    check_tokens(p, context, "context");
    check_tokens(p, completion, "completion");
    if (static_cast<int>(context.size() + completion.size()) > p.max_seq) {
        throw ValidationError("forward_logprobs: sequence exceeds positional capacity " +
                              std::to_string(p.max_seq));
    }

    Encoder enc(p);
    for (int tok : context) enc.consume(tok);

    LogProbTrace tr;
    tr.tokens = completion;
    tr.logp.reserve(completion.size());
    for (size_t j = 0; j < completion.size(); ++j) {
        std::vector<double> lp = log_softmax(logits_at(p, enc.h), temperature);
        tr.logp.push_back(lp[completion[j]]);
        tr.total += lp[completion[j]];
        if (j + 1 < completion.size()) {  // last completion token is never consumed
            enc.consume(completion[j]);
        }
    }
    return tr;
}

LogProbTrace sample(const PolicyParams& p, const Vocab& v, const TokenSeq& context,
                    const SamplerConfig& cfg) {
    cfg.validate();
    if (v.size() != p.vocab_size) throw ValidationError("sample: vocab/params size mismatch");
    check_tokens(p, context, "context");
    if (static_cast<int>(context.size()) + cfg.max_len > p.max_seq) {
        throw ValidationError("sample: context plus max_len exceeds positional capacity " +
                              std::to_string(p.max_seq));
    }

    Encoder enc(p);
    for (int tok : context) enc.consume(tok);

    Rng rng(cfg.seed);
    LogProbTrace tr;
    const int eos = v.eos();
    for (int step = 0; step < cfg.max_len; ++step) {
        std::vector<double> lp = log_softmax(logits_at(p, enc.h), cfg.temperature);
        double u = rng.uniform();
        double acc = 0.0;
        int pick = p.vocab_size - 1;
        for (int i = 0; i < p.vocab_size; ++i) {
            acc += std::exp(lp[i]);
            if (u < acc) {
                pick = i;
                break;
            }
        }
        tr.tokens.push_back(pick);
        tr.logp.push_back(lp[pick]);
        tr.total += lp[pick];
        if (pick == eos || step + 1 == cfg.max_len) break;
        enc.consume(pick);
    }
    return tr;
}

TokenSeq greedy_decode(const PolicyParams& p, const Vocab& v, const TokenSeq& context,
                       int max_len) {
    if (max_len < 1) throw ValidationError("greedy_decode: max_len must be >= 1");
    if (v.size() != p.vocab_size) throw ValidationError("greedy_decode: vocab/params size mismatch");
    check_tokens(p, context, "context");
    if (static_cast<int>(context.size()) + max_len > p.max_seq) {
        throw ValidationError("greedy_decode: context plus max_len exceeds positional capacity " +
                              std::to_string(p.max_seq));
    }

    Encoder enc(p);
    for (int tok : context) enc.consume(tok);

    TokenSeq out;
    const int eos = v.eos();
    for (int step = 0; step < max_len; ++step) {
        std::vector<double> logits = logits_at(p, enc.h);
        int best = 0;
        for (int i = 1; i < p.vocab_size; ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        out.push_back(best);
        if (best == eos || step + 1 == max_len) break;
        enc.consume(best);
    }
    return out;
}

// ---------- backward ----------

void backward(const PolicyParams& p, const Tape& tape, const std::vector<PredSpec>& preds,
              double temperature, PolicyParams& grad) {
    if (!(temperature > 0.0)) throw ValidationError("backward: temperature must be > 0");
    if (preds.size() != tape.steps.size() + 1) {
        throw ValidationError("backward: preds size must be tape steps + 1");
    }
    if (!p.same_shape(grad)) throw ValidationError("backward: grad shape mismatch");

    const auto& k = kern::active_ops();
    const size_t d = static_cast<size_t>(p.d_model);
    const size_t V = static_cast<size_t>(p.vocab_size);
    const size_t T = tape.steps.size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // Adjoints of the prediction states h_t (t = position index), and the
    // per-position accumulators the attention pass fills in.
    std::vector<double> dh(T * d, 0.0);
    std::vector<char> dh_live(T, 0);
    std::vector<double> dlogits(V), work(V);

    // Output-head pass: every requested prediction contributes to wo, bo and
    // the corresponding prediction-state adjoint.
    for (size_t j = 0; j <= T; ++j) {
        const PredSpec& ps = preds[j];
        if (!ps.active()) continue;
        const std::vector<double>& h = tape.state(j);
        std::vector<double> logits = logits_at(p, h);
        std::fill(dlogits.begin(), dlogits.end(), 0.0);

        if (ps.logp_coeff != 0.0) {
            if (ps.pred_tok < 0 || ps.pred_tok >= p.vocab_size) {
                throw ValidationError("backward: pred_tok out of range");
            }
            // d logp_tau(y) / dlogits = (e_y - softmax(logits/tau)) / tau
            std::vector<double> lp = log_softmax(logits, temperature);
            double c = ps.logp_coeff / temperature;
            for (size_t u = 0; u < V; ++u) dlogits[u] -= c * std::exp(lp[u]);
            dlogits[ps.pred_tok] += c;
        }
        if (ps.kl_coeff != 0.0) {
            if (ps.ref_logp1 == nullptr) {
                throw ValidationError("backward: kl term needs reference log probs");
            }
            // d KL(p || ref) / dlogits = p * (delta - KL), delta = logp - ref_logp
            std::vector<double> lp1 = log_softmax(logits, 1.0);
            double klv = 0.0;
            for (size_t u = 0; u < V; ++u) {
                double pu = std::exp(lp1[u]);
                double delta = lp1[u] - ps.ref_logp1[u];
                work[u] = pu;
                dlogits[u] += ps.kl_coeff * pu * delta;  // finish after klv known
                klv += pu * delta;
            }
            for (size_t u = 0; u < V; ++u) dlogits[u] -= ps.kl_coeff * work[u] * klv;
        }

        k.ger_acc(grad.wo.a.data(), V, d, 1.0, dlogits.data(), h.data());
        k.axpy(1.0, dlogits.data(), grad.bo.a.data(), V);

        if (j == 0) {
            // h_start = tanh(bh): s is zero and the attention window is empty.
            std::vector<double> dh0(d, 0.0);
            k.matvec_t_acc(p.wo.a.data(), V, d, dlogits.data(), dh0.data());
            for (size_t i = 0; i < d; ++i) {
                grad.bh.a[i] += dh0[i] * (1.0 - tape.h_start[i] * tape.h_start[i]);
            }
        } else {
            k.matvec_t_acc(p.wo.a.data(), V, d, dlogits.data(), dh.data() + (j - 1) * d);
            dh_live[j - 1] = 1;
        }
    }

    // Attention pass: h_t = s_t + tanh(wc c_t + bh). Produces per-position
    // recurrent-state adjoints (ds_acc) plus key/value adjoints that resolve
    // to x adjoints afterwards.
    std::vector<double> ds_acc(T * d, 0.0);
    std::vector<double> dk_acc(T * d, 0.0), dv_acc(T * d, 0.0), dx_acc(T * d, 0.0);
    std::vector<char> kv_live(T, 0);
    std::vector<double> du(d), dc(d), dq(d), da, de, th(d);

    for (size_t t = 0; t < T; ++t) {
        if (!dh_live[t]) continue;
        const TapeStep& st = tape.steps[t];
        const double* dht = dh.data() + t * d;

        // residual branch
        k.axpy(1.0, dht, ds_acc.data() + t * d, d);

        // tanh(u) = h - s, so the tanh derivative needs no stored u
        for (size_t i = 0; i < d; ++i) {
            th[i] = st.h[i] - st.s[i];
            du[i] = dht[i] * (1.0 - th[i] * th[i]);
        }
        k.ger_acc(grad.wc.a.data(), d, d, 1.0, du.data(), st.c.data());
        k.axpy(1.0, du.data(), grad.bh.a.data(), d);
        std::fill(dc.begin(), dc.end(), 0.0);
        k.matvec_t_acc(p.wc.a.data(), d, d, du.data(), dc.data());

        const size_t n = t + 1;
        da.resize(n);
        de.resize(n);
        double s_dot = 0.0;
        for (size_t j = 0; j < n; ++j) {
            da[j] = k.dot(dc.data(), tape.steps[j].v.data(), d);
            s_dot += st.attn[j] * da[j];
        }
        for (size_t j = 0; j < n; ++j) de[j] = st.attn[j] * (da[j] - s_dot);

        std::fill(dq.begin(), dq.end(), 0.0);
        for (size_t j = 0; j < n; ++j) {
            double ej = de[j] * inv_sqrt_d;
            if (ej != 0.0) {
                k.axpy(ej, tape.steps[j].k.data(), dq.data(), d);
                k.axpy(ej, st.q.data(), dk_acc.data() + j * d, d);
            }
            if (st.attn[j] != 0.0) {
                k.axpy(st.attn[j], dc.data(), dv_acc.data() + j * d, d);
            }
            kv_live[j] = 1;
        }
        k.ger_acc(grad.wq.a.data(), d, d, 1.0, dq.data(), st.s.data());
        k.matvec_t_acc(p.wq.a.data(), d, d, dq.data(), ds_acc.data() + t * d);
    }

    // Resolve key/value adjoints into parameter and input adjoints.
    for (size_t j = 0; j < T; ++j) {
        if (!kv_live[j]) continue;
        const TapeStep& st = tape.steps[j];
        k.ger_acc(grad.wk.a.data(), d, d, 1.0, dk_acc.data() + j * d, st.x.data());
        k.ger_acc(grad.wv.a.data(), d, d, 1.0, dv_acc.data() + j * d, st.x.data());
        k.matvec_t_acc(p.wk.a.data(), d, d, dk_acc.data() + j * d, dx_acc.data() + j * d);
        k.matvec_t_acc(p.wv.a.data(), d, d, dv_acc.data() + j * d, dx_acc.data() + j * d);
    }

    // Recurrent chain, walking positions backward. dqg is the adjoint of the
    // reset-gated state r o h_prev feeding the candidate; qbuf re-materializes
    // that product for the ug gradient.
    std::vector<double> ds(d, 0.0);
    std::vector<double> dz(d), dr(d), dg(d), dag(d), daz(d), dar(d), dqg(d), qbuf(d), dh_prev(d);
    for (size_t t = T; t-- > 0;) {
        const TapeStep& st = tape.steps[t];
        k.axpy(1.0, ds_acc.data() + t * d, ds.data(), d);

        const double* hpd = t > 0 ? tape.steps[t - 1].s.data() : nullptr;

        for (size_t i = 0; i < d; ++i) {
            double hpi = hpd ? hpd[i] : 0.0;
            dz[i] = ds[i] * (st.g[i] - hpi);
            dg[i] = ds[i] * st.z[i];
            dh_prev[i] = ds[i] * (1.0 - st.z[i]);
            dag[i] = dg[i] * (1.0 - st.g[i] * st.g[i]);
        }
        std::fill(dqg.begin(), dqg.end(), 0.0);
        k.matvec_t_acc(p.ug.a.data(), d, d, dag.data(), dqg.data());
        for (size_t i = 0; i < d; ++i) {
            double hpi = hpd ? hpd[i] : 0.0;
            dr[i] = dqg[i] * hpi;
            dh_prev[i] += dqg[i] * st.r[i];
            daz[i] = dz[i] * st.z[i] * (1.0 - st.z[i]);
            dar[i] = dr[i] * st.r[i] * (1.0 - st.r[i]);
            qbuf[i] = st.r[i] * hpi;
        }

        k.ger_acc(grad.wg.a.data(), d, d, 1.0, dag.data(), st.x.data());
        k.ger_acc(grad.ug.a.data(), d, d, 1.0, dag.data(), qbuf.data());
        k.axpy(1.0, dag.data(), grad.bg.a.data(), d);
        k.ger_acc(grad.wz.a.data(), d, d, 1.0, daz.data(), st.x.data());
        k.axpy(1.0, daz.data(), grad.bz.a.data(), d);
        k.ger_acc(grad.wr.a.data(), d, d, 1.0, dar.data(), st.x.data());
        k.axpy(1.0, dar.data(), grad.br.a.data(), d);
        if (hpd) {
            k.ger_acc(grad.uz.a.data(), d, d, 1.0, daz.data(), hpd);
            k.ger_acc(grad.ur.a.data(), d, d, 1.0, dar.data(), hpd);
        }

        k.matvec_t_acc(p.uz.a.data(), d, d, daz.data(), dh_prev.data());
        k.matvec_t_acc(p.ur.a.data(), d, d, dar.data(), dh_prev.data());

        std::fill(du.begin(), du.end(), 0.0);
        k.matvec_t_acc(p.wz.a.data(), d, d, daz.data(), du.data());
        k.matvec_t_acc(p.wr.a.data(), d, d, dar.data(), du.data());
        k.matvec_t_acc(p.wg.a.data(), d, d, dag.data(), du.data());
        k.axpy(1.0, du.data(), dx_acc.data() + t * d, d);

        ds = dh_prev;
    }

    // Inputs: x_t = embed[tok_t] + pos[t].
    for (size_t t = 0; t < T; ++t) {
        const double* dx = dx_acc.data() + t * d;
        bool any = false;
        for (size_t i = 0; i < d; ++i) {
            if (dx[i] != 0.0) {
                any = true;
                break;
            }
        }
        if (!any) continue;
        k.axpy(1.0, dx, grad.embed.row(tape.steps[t].tok), d);
        k.axpy(1.0, dx, grad.pos.row(static_cast<int>(t)), d);
    }
}

LogpGrad grad_total_logp(const PolicyParams& p, const TokenSeq& context,
                         const TokenSeq& completion) {
    LogpGrad out;
    out.grad = PolicyParams::zeros_like(p);
    if (completion.empty()) return out;

    TokenSeq all = context;
    all.insert(all.end(), completion.begin(), completion.end() - 1);
    Tape tape = run_tape(p, all);

    std::vector<PredSpec> preds(tape.steps.size() + 1);
    for (size_t j = 0; j < completion.size(); ++j) {
        PredSpec& ps = preds[context.size() + j];
        ps.pred_tok = completion[j];
        ps.logp_coeff = 1.0;
    }
    backward(p, tape, preds, 1.0, out.grad);

    std::string bad = out.grad.first_nonfinite_block();
    if (!bad.empty()) {
        throw NumericError("grad_total_logp: non-finite gradient in block " + bad);
    }
    LogProbTrace tr = forward_logprobs(p, context, completion, 1.0);
    out.total = tr.total;
    return out;
}

// ---------- optimizer ----------

double grad_l2_norm(const PolicyParams& g) {
    const auto& k = kern::active_ops();
    double s = 0.0;
    for (const auto& b : g.blocks()) {
        s += k.dot(b.m->a.data(), b.m->a.data(), b.m->size());
    }
    return std::sqrt(s);
}

void axpy_params(PolicyParams& a, double s, const PolicyParams& b) {
    if (!a.same_shape(b)) throw ValidationError("axpy_params: shape mismatch");
    const auto& k = kern::active_ops();
    auto dst = a.blocks();
    auto src = b.blocks();
    for (size_t i = 0; i < dst.size(); ++i) {
        k.axpy(s, src[i].m->a.data(), dst[i].m->a.data(), dst[i].m->size());
    }
}

PolicyParams optimizer_step(const PolicyParams& p, const PolicyParams& grad, double lr,
                            OptState& state) {
    if (!p.same_shape(grad)) throw ValidationError("optimizer_step: shape mismatch");
    if (!std::isfinite(lr) || lr < 0.0) throw ValidationError("optimizer_step: bad learning rate");
    std::string bad = grad.first_nonfinite_block();
    if (!bad.empty()) {
        throw NumericError("optimizer_step: non-finite gradient in block " + bad);
    }

    const PolicyParams* dir = &grad;
    PolicyParams clipped;
    if (state.max_grad_norm > 0.0) {
        double norm = grad_l2_norm(grad);
        if (norm > state.max_grad_norm) {
            clipped = grad;
            double scale = state.max_grad_norm / norm;
            for (auto& b : clipped.blocks()) {
                for (double& v : b.m->a) v *= scale;
            }
            dir = &clipped;
        }
    }

    if (state.momentum > 0.0) {
        if (!state.velocity) {
            state.velocity = std::make_unique<PolicyParams>(PolicyParams::zeros_like(p));
        }
        if (!state.velocity->same_shape(p)) {
            throw ValidationError("optimizer_step: velocity shape mismatch");
        }
        auto vb = state.velocity->blocks();
        auto gb = dir->blocks();
        for (size_t i = 0; i < vb.size(); ++i) {
            for (size_t n = 0; n < vb[i].m->size(); ++n) {
                vb[i].m->a[n] = state.momentum * vb[i].m->a[n] + gb[i].m->a[n];
            }
        }
        dir = state.velocity.get();
    }

    PolicyParams out = p;
    axpy_params(out, lr, *dir);
    return out;
}

// ---------- checkpoints ----------

namespace {
constexpr const char* kMagic = "PAIRRLCKPT 1";
}

void save_policy(const std::string& path, const PolicyParams& p, const std::string& meta_json) {
    json meta = meta_json.empty() ? json::object() : json::parse(meta_json, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) {
        throw ValidationError("save_policy: meta must be a JSON object");
    }
    json header;
    header["format"] = "pairrl-policy";
    header["version"] = 2;
    header["vocab_size"] = p.vocab_size;
    header["d_model"] = p.d_model;
    header["max_seq"] = p.max_seq;
    json blocks = json::array();
    for (const auto& b : p.blocks()) {
        blocks.push_back({{"name", b.name}, {"rows", b.m->rows}, {"cols", b.m->cols}});
    }
    header["blocks"] = blocks;
    header["meta"] = meta;

    std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ValidationError("save_policy: cannot open " + tmp.string());
        f << kMagic << "\n" << header.dump() << "\n";
        for (const auto& b : p.blocks()) {
            f.write(reinterpret_cast<const char*>(b.m->a.data()),
                    static_cast<std::streamsize>(b.m->size() * sizeof(double)));
        }
        f.flush();
        if (!f) throw ValidationError("save_policy: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
}

Checkpoint load_policy(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("load_policy: cannot open " + path);
    std::string magic, header_line;
    if (!std::getline(f, magic) || magic != kMagic) {
        throw ValidationError("load_policy: bad magic in " + path);
    }
    if (!std::getline(f, header_line)) {
        throw ValidationError("load_policy: missing header in " + path);
    }
    json header = json::parse(header_line, nullptr, false);
    if (header.is_discarded()) throw ValidationError("load_policy: unparsable header in " + path);

    Checkpoint ck;
    int V = header.at("vocab_size").get<int>();
    int d = header.at("d_model").get<int>();
    int ms = header.at("max_seq").get<int>();
    if (V < 1 || d < 1 || ms < 1) throw ValidationError("load_policy: bad dimensions in " + path);
    ck.params.vocab_size = V;
    ck.params.d_model = d;
    ck.params.max_seq = ms;
    ck.params.embed = Mat(V, d);
    ck.params.pos = Mat(ms, d);
    for (Mat* m : {&ck.params.wz, &ck.params.wr, &ck.params.wg, &ck.params.uz, &ck.params.ur,
                   &ck.params.ug, &ck.params.wq, &ck.params.wk, &ck.params.wv, &ck.params.wc}) {
        *m = Mat(d, d);
    }
    for (Mat* m : {&ck.params.bz, &ck.params.br, &ck.params.bg, &ck.params.bh}) *m = Mat(1, d);
    ck.params.wo = Mat(V, d);
    ck.params.bo = Mat(1, V);

    auto blocks = ck.params.blocks();
    const json& hblocks = header.at("blocks");
    if (!hblocks.is_array() || hblocks.size() != blocks.size()) {
        throw ValidationError("load_policy: block list mismatch in " + path);
    }
    for (size_t i = 0; i < blocks.size(); ++i) {
        const json& hb = hblocks[i];
        if (hb.at("name").get<std::string>() != blocks[i].name ||
            hb.at("rows").get<int>() != blocks[i].m->rows ||
            hb.at("cols").get<int>() != blocks[i].m->cols) {
            throw ValidationError("load_policy: block '" + std::string(blocks[i].name) +
                                  "' shape mismatch in " + path);
        }
        f.read(reinterpret_cast<char*>(blocks[i].m->a.data()),
               static_cast<std::streamsize>(blocks[i].m->size() * sizeof(double)));
        if (!f) throw ValidationError("load_policy: truncated payload in " + path);
    }
    char extra = 0;
    if (f.read(&extra, 1)) throw ValidationError("load_policy: trailing bytes in " + path);

    std::string bad = ck.params.first_nonfinite_block();
    if (!bad.empty()) throw NumericError("load_policy: non-finite values in block " + bad);
    ck.meta_json = header.value("meta", json::object()).dump();
    return ck;
}

}  // namespace pairrl
