#include "pairrl/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "pairrl/rng.hpp"

namespace pairrl {

namespace {

// KL(p || q) from two log-prob vectors, floored at zero: the exact value is
// non-negative, the floor only absorbs last-bit float noise.
double kl_div(const std::vector<double>& lp, const std::vector<double>& lq) {
    double s = 0.0;
    for (size_t u = 0; u < lp.size(); ++u) {
        s += std::exp(lp[u]) * (lp[u] - lq[u]);
    }
    return std::max(0.0, s);
}

void check_schedule(const std::vector<std::pair<int, double>>& schedule) {
    if (schedule.empty()) {
        throw ValidationError("temperature schedule: at least one knot required");
    }
    for (size_t i = 0; i < schedule.size(); ++i) {
        if (!(schedule[i].second > 0.0) || !std::isfinite(schedule[i].second)) {
            throw ValidationError("temperature schedule: temperatures must be positive");
        }
        if (i > 0 && schedule[i].first <= schedule[i - 1].first) {
            throw ValidationError("temperature schedule: steps must be strictly ascending");
        }
    }
}

}  // namespace

// ---------------- advantages ----------------

std::vector<double> mean_centered_advantages(const std::vector<double>& rewards,
                                             bool std_normalize) {
    if (rewards.empty()) {
        throw ValidationError("advantages: empty reward group");
    }
    bool all_equal = true;
    for (double r : rewards) {
        if (r != rewards[0]) all_equal = false;
    }
    // Degenerate group: exactly zero, independent of float summation order.
    if (all_equal) return std::vector<double>(rewards.size(), 0.0);

    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());

    std::vector<double> adv(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;

    if (std_normalize) {
        double var = 0.0;
        for (double a : adv) var += a * a;
        double sd = std::sqrt(var / static_cast<double>(adv.size()));
        for (double& a : adv) a /= sd + 1e-8;
    }
    return adv;
}

// ---------------- temperature schedule ----------------

double anneal_temperature(const std::vector<std::pair<int, double>>& schedule, int step) {
    check_schedule(schedule);
    if (step <= schedule.front().first) return schedule.front().second;
    if (step >= schedule.back().first) return schedule.back().second;
    for (size_t i = 1; i < schedule.size(); ++i) {
        if (step <= schedule[i].first) {
            const auto& [s0, t0] = schedule[i - 1];
            const auto& [s1, t1] = schedule[i];
            double f = static_cast<double>(step - s0) / static_cast<double>(s1 - s0);
            return t0 + (t1 - t0) * f;
        }
    }
    return schedule.back().second;  // unreachable
}

// ---------------- config ----------------

void GrpoConfig::validate() const {
    if (M < 2) throw ValidationError("grpo: M must be >= 2");
    if (!(epsilon > 0.0) || !(epsilon < 1.0)) {
        throw ValidationError("grpo: epsilon must lie in (0, 1)");
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ValidationError("grpo: beta must be finite and >= 0");
    }
    weights.validate();
    cosine.validate();
    if (ngram < 1) throw ValidationError("grpo: ngram must be >= 1");
    if (max_completion_len < 1) {
        throw ValidationError("grpo: max_completion_len must be >= 1");
    }
    check_schedule(temperature_schedule);
    if (prompts_per_update < 1) {
        throw ValidationError("grpo: prompts_per_update must be >= 1");
    }
    if (total_updates < 0) throw ValidationError("grpo: total_updates must be >= 0");
    if (k < 2 || k > kNumChoices) {
        throw ValidationError("grpo: k must lie in [2, 5]");
    }
    if (!(rho_shared >= 0.0) || !(rho_shared <= 1.0)) {
        throw ValidationError("grpo: rho_shared must lie in [0, 1]");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("grpo: lr must be > 0");
    if (!(momentum >= 0.0) || momentum >= 1.0) {
        throw ValidationError("grpo: momentum must lie in [0, 1)");
    }
    if (max_grad_norm < 0.0) {
        throw ValidationError("grpo: max_grad_norm must be >= 0");
    }
    if (!(kl_guard >= 0.0)) throw ValidationError("grpo: kl_guard must be >= 0");
    if (checkpoint_every < 0) throw ValidationError("grpo: checkpoint_every must be >= 0");
}

// ---------------- rollout collection ----------------

RolloutGroup collect_group(const PolicyParams& policy, const PolicyParams& ref,
                           const World& w, const Vocab& v, const PairingTask& task,
                           const GrpoConfig& cfg, int step, uint64_t group_seed) {
    cfg.validate();
    double tau = anneal_temperature(cfg.temperature_schedule, step);

    RolloutGroup g;
    g.prompt_tokens = render_prompt(w, v, task);
    g.group_seed = group_seed;
    g.rollouts.reserve(cfg.M);

    std::vector<double> totals;
    totals.reserve(cfg.M);
    for (int m = 0; m < cfg.M; ++m) {
        SamplerConfig sc;
        sc.temperature = tau;
        sc.max_len = cfg.max_completion_len;
        sc.seed = derive_seed(group_seed, "rollout", static_cast<uint64_t>(m));

        Rollout r;
        r.theta_sampling = sample(policy, v, g.prompt_tokens, sc);
        r.completion = r.theta_sampling.tokens;
        r.ref_logp = forward_logprobs(ref, g.prompt_tokens, r.completion, 1.0);
        r.reward = score_completion(r.completion, v, task.gold, cfg.cosine, cfg.ngram,
                                    cfg.weights);
        r.parse_ok = parse_response(r.completion, v).well_formed;
        totals.push_back(r.reward.total);
        g.rollouts.push_back(std::move(r));
    }
    g.advantages = mean_centered_advantages(totals, cfg.std_normalize_advantages);
    return g;
}

// ---------------- surrogate ----------------

SurrogateResult surrogate_loss(const std::vector<RolloutGroup>& groups,
                               const PolicyParams& policy, const PolicyParams& ref,
                               const GrpoConfig& cfg) {
    if (groups.empty()) throw ValidationError("surrogate: no groups");
    if (!policy.same_shape(ref)) throw ValidationError("surrogate: policy/ref shape mismatch");

    // The KL average runs over every completion position of every rollout, so
    // the per-position coefficient is known before any forward pass.
    size_t kl_positions = 0;
    for (const RolloutGroup& g : groups) {
        if (g.advantages.size() != g.rollouts.size()) {
            throw ValidationError("surrogate: advantages/rollouts size mismatch");
        }
        for (const Rollout& r : g.rollouts) {
            if (r.completion.empty()) {
                throw ValidationError("surrogate: empty completion in group");
            }
            kl_positions += r.completion.size();
        }
    }

    SurrogateResult res;
    res.grad = PolicyParams::zeros_like(policy);
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    const double kl_coeff =
        cfg.beta > 0.0 ? -cfg.beta / static_cast<double>(kl_positions) : 0.0;

    double kl_sum = 0.0;
    double surrogate_sum = 0.0;
    std::vector<std::vector<double>> ref_lp;  // per-position reference log probs

    for (const RolloutGroup& g : groups) {
        const double scale = inv_groups / static_cast<double>(g.rollouts.size());
        const size_t n_prompt = g.prompt_tokens.size();

        for (size_t m = 0; m < g.rollouts.size(); ++m) {
            const TokenSeq& c = g.rollouts[m].completion;
            const size_t n = c.size();
            // Full-sequence tape: attention lets completion positions read the
            // prompt directly, so prompt and completion cannot be run apart.
            TokenSeq full = g.prompt_tokens;
            full.insert(full.end(), c.begin(), c.end() - 1);
            Tape tape = run_tape(policy, full);
            Tape ref_tape = run_tape(ref, full);

            ref_lp.assign(n, {});
            double logp_theta = 0.0;
            double logp_ref = 0.0;
            for (size_t j = 0; j < n; ++j) {
                std::vector<double> lp = log_softmax(logits_at(policy, tape.state(n_prompt + j)));
                ref_lp[j] = log_softmax(logits_at(ref, ref_tape.state(n_prompt + j)));
                logp_theta += lp[c[j]];
                logp_ref += ref_lp[j][c[j]];
                kl_sum += kl_div(lp, ref_lp[j]);
            }

            double log_ratio = cfg.ratio_vs_snapshot ? 0.0 : logp_theta - logp_ref;
            double rho = std::exp(log_ratio);
            double adv = g.advantages[m];
            double clipped = std::clamp(rho, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
            double term = std::min(rho * adv, clipped * adv);

            bool fmt_excluded = cfg.filter_unparseable && !g.rollouts[m].parse_ok;
            bool ratio_excluded = !std::isfinite(rho) || !std::isfinite(term);
            if (ratio_excluded && !fmt_excluded) ++res.n_ratio_excluded;

            double coeff = 0.0;
            if (fmt_excluded || ratio_excluded) {
                res.rollout_terms.push_back(0.0);
            } else {
                res.rollout_terms.push_back(term);
                surrogate_sum += scale * term;
                ++res.n_gradient_rollouts;
                // The min() gradient is live on the unclipped branch only.
                bool active = (adv > 0.0 && rho <= 1.0 + cfg.epsilon) ||
                              (adv < 0.0 && rho >= 1.0 - cfg.epsilon);
                if (active) coeff = scale * adv * rho;
            }

            if (coeff != 0.0 || kl_coeff != 0.0) {
                std::vector<PredSpec> preds(full.size() + 1);
                for (size_t j = 0; j < n; ++j) {
                    preds[n_prompt + j].pred_tok = c[j];
                    preds[n_prompt + j].logp_coeff = coeff;
                    preds[n_prompt + j].kl_coeff = kl_coeff;
                    preds[n_prompt + j].ref_logp1 = ref_lp[j].data();
                }
                backward(policy, tape, preds, 1.0, res.grad);
            }
        }
    }

    res.kl = kl_sum / static_cast<double>(kl_positions);
    res.surrogate = surrogate_sum;
    res.objective = surrogate_sum - cfg.beta * res.kl;
    return res;
}

// ---------------- exact KL ----------------

double kl_exact(const PolicyParams& policy, const PolicyParams& ref,
                const std::vector<TokenSeq>& contexts) {
    if (contexts.empty()) throw ValidationError("kl_exact: no contexts");
    if (!policy.same_shape(ref)) throw ValidationError("kl_exact: shape mismatch");

    double sum = 0.0;
    size_t count = 0;
    for (const TokenSeq& ctx : contexts) {
        for (int tok : ctx) {
            if (tok < 0 || tok >= policy.vocab_size) {
                throw ValidationError("kl_exact: token id out of range");
            }
        }
        Tape tp = run_tape(policy, ctx);
        Tape tr = run_tape(ref, ctx);
        for (size_t j = 0; j < ctx.size(); ++j) {
            std::vector<double> lp = log_softmax(logits_at(policy, tp.state(j)));
            std::vector<double> lq = log_softmax(logits_at(ref, tr.state(j)));
            sum += kl_div(lp, lq);
            ++count;
        }
    }
    if (count == 0) throw ValidationError("kl_exact: contexts hold no positions");
    return sum / static_cast<double>(count);
}

// ---------------- training loop ----------------

namespace {

// Checkpoint plus sidecar momentum file, so an interrupted run can continue.
void save_rl_state(const GrpoConfig& cfg, const PolicyParams& params, const OptState& opt,
                   int step) {
    std::string meta = "{\"stage\":\"rl\",\"seed\":" + std::to_string(cfg.seed) +
                       ",\"step\":" + std::to_string(step) + "}";
    save_policy(cfg.checkpoint_path, params, meta);
    if (opt.velocity) {
        save_policy(cfg.checkpoint_path + ".opt", *opt.velocity,
                    "{\"stage\":\"rl-velocity\",\"step\":" + std::to_string(step) + "}");
    }
}

}  // namespace

RlResult train_rl(const PolicyParams& init, const World& w, const GrpoConfig& cfg,
                  const StatsSink& on_stats, const RlResumeState* resume) {
    cfg.validate();
    Vocab v = make_world_vocab(w.cfg);
    if (init.vocab_size != v.size()) {
        throw ValidationError("train_rl: policy vocabulary does not match the world");
    }

    PolicyParams theta = init;
    PolicyParams ref = clone_frozen(init);
    OptState opt;
    opt.momentum = cfg.momentum;
    opt.max_grad_norm = cfg.max_grad_norm;

    int first_step = 0;
    if (resume) {
        if (!resume->params.same_shape(init)) {
            throw ValidationError("train_rl: resume checkpoint shape does not match init");
        }
        if (resume->step < 0 || resume->step >= cfg.total_updates) {
            throw ValidationError("train_rl: resume step outside the update budget");
        }
        theta = resume->params;
        if (resume->velocity) {
            if (!resume->velocity->same_shape(init)) {
                throw ValidationError("train_rl: resume velocity shape mismatch");
            }
            opt.velocity = std::make_unique<PolicyParams>(*resume->velocity);
        }
        first_step = resume->step + 1;
    }

    RlResult res;
    res.stats.reserve(static_cast<size_t>(cfg.total_updates - first_step));

    for (int step = first_step; step < cfg.total_updates; ++step) {
        std::vector<RolloutGroup> groups;
        groups.reserve(static_cast<size_t>(cfg.prompts_per_update));
        for (int i = 0; i < cfg.prompts_per_update; ++i) {
            uint64_t idx = static_cast<uint64_t>(step) * cfg.prompts_per_update + i;
            PairingTask task =
                make_task(w, cfg.k, cfg.rho_shared, derive_seed(cfg.seed, "rl-task", idx));
            groups.push_back(collect_group(theta, ref, w, v, task, cfg, step,
                                           derive_seed(cfg.seed, "rl-group", idx)));
        }

        SurrogateResult sur = surrogate_loss(groups, theta, ref, cfg);

        TrainingStats st;
        st.step = step;
        int n = 0;
        double sum = 0.0, sq = 0.0;
        for (const RolloutGroup& g : groups) {
            for (const Rollout& r : g.rollouts) {
                ++n;
                sum += r.reward.total;
                sq += r.reward.total * r.reward.total;
                st.acc_mean += r.reward.acc;
                st.fmt_mean += r.reward.fmt;
                st.len_mean += r.reward.len;
                st.rep_mean += r.reward.rep;
                st.completion_len_mean += static_cast<double>(r.completion.size());
                st.completion_len_max =
                    std::max(st.completion_len_max, static_cast<int>(r.completion.size()));
            }
        }
        st.reward_mean = sum / n;
        st.reward_std = std::sqrt(std::max(0.0, sq / n - st.reward_mean * st.reward_mean));
        st.acc_mean /= n;
        st.fmt_mean /= n;
        st.len_mean /= n;
        st.rep_mean /= n;
        st.completion_len_mean /= n;
        st.loss = -sur.objective;
        st.kl = sur.kl;
        st.grad_norm = grad_l2_norm(sur.grad);
        st.filtered_fraction =
            1.0 - static_cast<double>(sur.n_gradient_rollouts) / static_cast<double>(n);

        res.stats.push_back(st);
        if (on_stats) on_stats(st);

        if (cfg.kl_guard > 0.0 && st.kl > cfg.kl_guard) {
            throw NumericError("rl step " + std::to_string(step) +
                               ": kl " + std::to_string(st.kl) + " exceeded guard " +
                               std::to_string(cfg.kl_guard) +
                               "; policy diverging from the reference");
        }

        theta = optimizer_step(theta, sur.grad, cfg.lr, opt);

        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_updates) {
            save_rl_state(cfg, theta, opt, step);
        }
    }

    res.params = std::move(theta);
    if (!cfg.checkpoint_path.empty()) {
        save_rl_state(cfg, res.params, opt, cfg.total_updates - 1);
    }
    return res;
}

}  // namespace pairrl
