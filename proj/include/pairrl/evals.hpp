#pragma once
// Shared policy evaluation over fresh pairing tasks: completions are decoded
// (greedy) or sampled, parsed by the reward grammar, and summarized. Both
// training stages and the CLI eval paths report through this.

#include <cstdint>

#include "pairrl/pairing.hpp"
#include "pairrl/policy.hpp"
#include "pairrl/rewards.hpp"

namespace pairrl {

struct PolicyEval {
    int n = 0;
    double accuracy = 0.0;     // parsed answer equals gold (malformed counts wrong)
    double format_rate = 0.0;  // well_formed fraction
    double mean_len = 0.0;     // completion tokens, eos included
};

struct EvalConfig {
    int n_tasks = 500;
    int k = 5;
    double rho_shared = 0.6;
    double temperature = 1.0;  // used when greedy = false
    int max_len = 64;
    bool greedy = true;
    uint64_t seed = 0;

    void validate() const;
};

PolicyEval evaluate_policy(const PolicyParams& p, const World& w, const Vocab& v,
                           const EvalConfig& cfg);

}  // namespace pairrl
