#pragma once
// Completion parsing and the four-component verifiable reward: accuracy on
// the parsed choice, format compliance, cosine-shaped length reward, and a
// repeated-n-gram penalty, combined as a weighted sum.

#include <optional>
#include <vector>

#include "pairrl/common.hpp"
#include "pairrl/vocab.hpp"

namespace pairrl {

struct ParsedResponse {
    std::vector<TokenSeq> think_segments;  // token spans between think tags
    std::optional<int> answer;             // choice index 0..4, set iff well_formed
    bool well_formed = false;
    int n_tokens = 0;  // completion length, counted whether or not parsing succeeds
};

// Grammar accepted as well-formed, in order:
//   (junk* <think> non-tag* </think>)*  junk*  <answer> CHOICE </answer>  non-tag*
// where junk is any non-tag token. Exactly one answer block, exactly one
// token inside it (a candidate letter), all think blocks before the answer,
// no tag tokens inside blocks or after the answer block closes.
ParsedResponse parse_response(const TokenSeq& completion, const Vocab& v);

// +1 correct, -0.8 wrong, -1 malformed. gold is a choice index.
double accuracy_reward(const ParsedResponse& parsed, int gold);

// 1.0 iff well_formed.
double format_reward(const ParsedResponse& parsed);

struct CosineParams {
    int n_min = 0;
    int n_L = 2048;
    double r0_c = 0.0;   // reward at n = n_min, correct
    double r0_w = -1.0;  // reward at n = n_min, wrong
    double rL_c = 0.5;   // reward at n >= n_L, correct
    double rL_w = 0.0;   // reward at n >= n_L, wrong

    void validate() const;
};

// r(n, y) = r0_y + (rL_y - r0_y) * phi(s), s = clip((n - n_min)/(n_L - n_min), 0, 1),
// phi(s) = (1 - cos(pi s)) / 2. Flat for n >= n_L.
double cosine_length_reward(int n, bool correct, const CosineParams& p);

// -(fraction of n-gram positions whose n-gram already occurred earlier).
// Zero when the sequence is shorter than ngram + 1 positions or loop-free.
double repetition_penalty(const TokenSeq& completion, int ngram = 3);

struct RewardWeights {
    double lambda_acc = 1.0;
    double lambda_fmt = 1.0;
    double lambda_len = 1.0;
    double lambda_rep = 1.0;

    void validate() const;  // finite, non-negative, at least one positive
};

struct RewardBreakdown {
    double acc = 0.0;
    double fmt = 0.0;
    double len = 0.0;
    double rep = 0.0;
    double total = 0.0;
};

RewardBreakdown combine(double acc, double fmt, double len, double rep,
                        const RewardWeights& w);

// parse + all four components + combine in one call. The length curve uses
// the correct/wrong branch according to the parsed accuracy outcome.
RewardBreakdown score_completion(const TokenSeq& completion, const Vocab& v, int gold,
                                 const CosineParams& cp, int ngram, const RewardWeights& w);

}  // namespace pairrl
