#pragma once
// Stage-1 scaffolding data: deterministic chain-of-thought exemplars for the
// pairing task. Each exemplar walks the four-step template (cue
// identification, knowledge association, evidence corroboration, conclusion)
// and can be fact-checked against world ground truth, which repairs any span
// whose claims the world does not back.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pairrl/pairing.hpp"
#include "pairrl/vocab.hpp"

namespace pairrl {

enum class ParadigmStep {
    CueIdentification = 0,
    KnowledgeAssociation = 1,
    EvidenceCorroboration = 2,
    Conclusion = 3,
};
inline constexpr int kNumParadigmSteps = 4;

// Stable labels used in exported records.
const char* paradigm_step_name(ParadigmStep s);

// Half-open token index range into target_tokens.
struct TokenSpan {
    int begin = 0;
    int end = 0;
};

struct ScaffoldExemplar {
    PairingTask task;
    TokenSeq prompt_tokens;
    TokenSeq target_tokens;  // think block + answer block + eos
    std::array<TokenSpan, kNumParadigmSteps> paradigm_steps;
};

// Template rendering. The think block lists the cross-view cues (the shared
// slots, which are exactly the tokens the panorama and the gold candidate
// have in common), names the city, and rules out each confuser letter citing
// one candidate token that contradicts the panorama where such a slot exists.
// The answer block carries the gold letter, then eos.
ScaffoldExemplar make_scaffold_exemplar(const World& w, const Vocab& v, const PairingTask& t);

// n exemplars over fresh tasks; deterministic in (world, seed).
std::vector<ScaffoldExemplar> build_scaffold_dataset(const World& w, const Vocab& v, int n, int k,
                                                     double rho_shared, uint64_t seed);

// Content-free variant used to warm up the from-scratch RL path: the think
// block just re-states the panorama tokens and the answer letter is uniform
// random, independent of the gold candidate. Training on it teaches the tag
// grammar and prompt copying while leaving accuracy at chance, playing the
// role a pretrained base model's syntax and induction abilities play at full
// scale. Deterministic in (world, seed).
std::vector<ScaffoldExemplar> build_warmup_dataset(const World& w, const Vocab& v, int n, int k,
                                                   double rho_shared, uint64_t seed);

// Verifies every claim in the exemplar: cues appear in both views, rule_out
// citations sit in the named confuser's rendering and genuinely contradict
// the panorama, the concluded letter is gold, and the prompt matches the
// task. Valid exemplars come back unchanged; anything else is rebuilt from
// ground truth, so the result always re-checks clean and the operation is
// idempotent. A task inconsistent with the world cannot be repaired.
ScaffoldExemplar fact_check_exemplar(const ScaffoldExemplar& e, const World& w, const Vocab& v);

}  // namespace pairrl
