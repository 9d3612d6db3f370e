#pragma once
// Group-relative policy optimization on pairing tasks. One update: sample M
// completions per prompt, score them with the verifiable reward, center
// rewards within each group into advantages, then ascend the clipped ratio
// surrogate with an exact-KL pull toward the frozen reference policy.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pairrl/common.hpp"
#include "pairrl/pairing.hpp"
#include "pairrl/policy.hpp"
#include "pairrl/rewards.hpp"

namespace pairrl {

// Rewards minus their group mean. The optional variance normalization divides
// by the population std (guarded by 1e-8); it is off everywhere by default
// because plain mean-centering is the defining choice here.
std::vector<double> mean_centered_advantages(const std::vector<double>& rewards,
                                             bool std_normalize = false);

// Piecewise-linear interpolation over (step, temperature) knots, clamped to
// the first and last knot outside their range. Knots must be strictly
// ascending in step with positive temperatures.
double anneal_temperature(const std::vector<std::pair<int, double>>& schedule, int step);

struct GrpoConfig {
    int M = 8;                  // rollouts per prompt
    double epsilon = 0.2;       // clip radius, in (0, 1)
    double beta = 0.04;         // KL coefficient
    RewardWeights weights;
    CosineParams cosine;
    int ngram = 3;
    int max_completion_len = 256;
    std::vector<std::pair<int, double>> temperature_schedule = {{0, 1.0}};
    int prompts_per_update = 64;
    int total_updates = 600;
    int k = 5;                  // candidates per task
    double rho_shared = 0.6;
    double lr = 0.1;
    double momentum = 0.9;
    double max_grad_norm = 1.0;
    // Unparseable rollouts keep their rewards for advantage centering but are
    // dropped from the policy gradient when this is on.
    bool filter_unparseable = true;
    bool std_normalize_advantages = false;
    // Likelihood ratio against the frozen reference by default; the snapshot
    // variant pins the denominator to the policy at collection time (ratio 1,
    // one inner step), turning the surrogate into plain advantage-weighted
    // likelihood ascent.
    bool ratio_vs_snapshot = false;
    // Abort when mean per-position KL exceeds this; 0 disables the guard.
    double kl_guard = 25.0;
    uint64_t seed = 0;
    std::string checkpoint_path;  // optional, written after the final update
    // Also write the checkpoint (plus a .opt momentum file) every this many
    // updates; 0 saves only at the end. Periodic saves make a run resumable.
    int checkpoint_every = 0;

    void validate() const;
};

struct Rollout {
    TokenSeq completion;          // sampled tokens, terminal <eos> when emitted
    LogProbTrace theta_sampling;  // log probs at the sampling temperature
    LogProbTrace ref_logp;        // log probs under the frozen reference, temperature 1
    RewardBreakdown reward;
    bool parse_ok = false;
};

struct RolloutGroup {
    TokenSeq prompt_tokens;
    std::vector<Rollout> rollouts;    // size M
    std::vector<double> advantages;   // mean-centered rewards, sums to ~0
    uint64_t group_seed = 0;
};

// Samples and scores one group at the temperature scheduled for `step`.
// Deterministic in (params, task, cfg, step, group_seed).
RolloutGroup collect_group(const PolicyParams& policy, const PolicyParams& ref,
                           const World& w, const Vocab& v, const PairingTask& task,
                           const GrpoConfig& cfg, int step, uint64_t group_seed);

struct SurrogateResult {
    double objective = 0.0;   // clipped surrogate mean minus beta * kl
    double surrogate = 0.0;   // policy term alone
    double kl = 0.0;          // mean exact KL per completion position
    // Per rollout min(rho*A, clip(rho)*A), in group order; zero for rollouts
    // excluded from the policy term (filtered or non-finite ratio).
    std::vector<double> rollout_terms;
    int n_gradient_rollouts = 0;
    int n_ratio_excluded = 0;
    PolicyParams grad;        // ascent direction for the objective
};

// Objective value and exact gradient over the groups. Likelihoods are
// recomputed under the current policy at temperature 1; the sequence-level
// ratio uses the frozen reference (or 1 in snapshot mode). The KL term is the
// exact full-vocabulary categorical KL averaged over every completion
// position of every rollout.
SurrogateResult surrogate_loss(const std::vector<RolloutGroup>& groups,
                               const PolicyParams& policy, const PolicyParams& ref,
                               const GrpoConfig& cfg);

// Mean exact categorical KL(policy || ref) over every next-token distribution
// along the given contexts (one term per consumed-prefix position).
double kl_exact(const PolicyParams& policy, const PolicyParams& ref,
                const std::vector<TokenSeq>& contexts);

struct TrainingStats {
    int step = 0;
    double reward_mean = 0.0;
    double reward_std = 0.0;
    double acc_mean = 0.0;
    double fmt_mean = 0.0;
    double len_mean = 0.0;
    double rep_mean = 0.0;
    double loss = 0.0;  // negative surrogate objective
    double kl = 0.0;
    double grad_norm = 0.0;  // pre-clip gradient norm
    double completion_len_mean = 0.0;
    int completion_len_max = 0;
    double filtered_fraction = 0.0;  // rollouts excluded from the gradient
};

struct RlResult {
    PolicyParams params;
    std::vector<TrainingStats> stats;
};

using StatsSink = std::function<void(const TrainingStats&)>;

// State needed to continue an interrupted run: the policy saved at `step`,
// and the momentum buffer when one was saved alongside. Task seeds, the
// temperature schedule, and step numbering are pure functions of the update
// index, so a resumed run continues exactly where the interrupted one left
// off provided `init` (the reference anchor) is rebuilt identically.
struct RlResumeState {
    PolicyParams params;
    std::optional<PolicyParams> velocity;
    int step = 0;  // last completed update; training continues at step + 1
};

// Full training loop: fresh tasks each update, collect, loss, ascent step.
// The reference is a frozen copy of `init`, which may be an SFT checkpoint
// (warm path) or a format-warmed base (from-scratch path). Emits one stats
// record per update through the sink and the returned vector. Saves a
// checkpoint to cfg.checkpoint_path when set. Aborts with NumericError when
// the KL guard trips.
RlResult train_rl(const PolicyParams& init, const World& w, const GrpoConfig& cfg,
                  const StatsSink& on_stats = {}, const RlResumeState* resume = nullptr);

}  // namespace pairrl
