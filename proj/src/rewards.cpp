#include "pairrl/rewards.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace pairrl {

ParsedResponse parse_response(const TokenSeq& completion, const Vocab& v) {
    ParsedResponse out;
    out.n_tokens = static_cast<int>(completion.size());

    const int t_open = v.think_open(), t_close = v.think_close();
    const int a_open = v.answer_open(), a_close = v.answer_close();
    auto is_tag = [&](int t) {
        return t == t_open || t == t_close || t == a_open || t == a_close;
    };

    enum class S { Outside, InThink, InAnswer, AfterAnswer };
    S s = S::Outside;
    TokenSeq span;
    std::vector<TokenSeq> segments;
    int answer_tok = -1, answer_count = 0;
    bool bad = false;

    for (int tok : completion) {
        switch (s) {
            case S::Outside:
                if (tok == t_open) {
                    span.clear();
                    s = S::InThink;
                } else if (tok == a_open) {
                    answer_count = 0;
                    answer_tok = -1;
                    s = S::InAnswer;
                } else if (is_tag(tok)) {
                    bad = true;  // stray close tag
                }
                break;
            case S::InThink:
                if (tok == t_close) {
                    segments.push_back(span);
                    s = S::Outside;
                } else if (is_tag(tok)) {
                    bad = true;  // tags may not nest
                } else {
                    span.push_back(tok);
                }
                break;
            case S::InAnswer:
                if (tok == a_close) {
                    s = S::AfterAnswer;
                } else if (is_tag(tok)) {
                    bad = true;
                } else {
                    answer_tok = tok;
                    ++answer_count;
                }
                break;
            case S::AfterAnswer:
                if (is_tag(tok)) bad = true;  // no blocks after the answer
                break;
        }
        if (bad) break;
    }

    bool closed = (s == S::AfterAnswer);
    int choice = answer_tok >= 0 ? v.choice_index(answer_tok) : -1;
    if (!bad && closed && answer_count == 1 && choice >= 0) {
        out.well_formed = true;
        out.answer = choice;
        out.think_segments = std::move(segments);
    }
    return out;
}

double accuracy_reward(const ParsedResponse& parsed, int gold) {
    if (gold < 0 || gold >= kNumChoices) throw ValidationError("accuracy_reward: bad gold choice");
    if (!parsed.well_formed || !parsed.answer.has_value()) return -1.0;
    return *parsed.answer == gold ? 1.0 : -0.8;
}

double format_reward(const ParsedResponse& parsed) { return parsed.well_formed ? 1.0 : 0.0; }

void CosineParams::validate() const {
    if (n_min < 0) throw ValidationError("cosine n_min must be >= 0");
    if (n_L <= n_min) throw ValidationError("cosine n_L must exceed n_min");
    for (double x : {r0_c, r0_w, rL_c, rL_w}) {
        if (!std::isfinite(x)) throw ValidationError("cosine boundary rewards must be finite");
    }
}

double cosine_length_reward(int n, bool correct, const CosineParams& p) {
    p.validate();
    if (n < 0) throw ValidationError("cosine_length_reward: n must be >= 0");
    double s = (static_cast<double>(n) - p.n_min) / (static_cast<double>(p.n_L) - p.n_min);
    s = std::clamp(s, 0.0, 1.0);
    double phi = 0.5 * (1.0 - std::cos(std::numbers::pi * s));
    double r0 = correct ? p.r0_c : p.r0_w;
    double rL = correct ? p.rL_c : p.rL_w;
    return r0 + (rL - r0) * phi;
}

double repetition_penalty(const TokenSeq& completion, int ngram) {
    if (ngram < 2) throw ValidationError("repetition_penalty: ngram must be >= 2");
    int T = static_cast<int>(completion.size());
    int N = T - ngram + 1;
    if (N <= 1) return 0.0;

    std::set<TokenSeq> seen;
    int repeated = 0;
    for (int i = 0; i < N; ++i) {
        TokenSeq gram(completion.begin() + i, completion.begin() + i + ngram);
        if (!seen.insert(std::move(gram)).second) ++repeated;
    }
    return -static_cast<double>(repeated) / static_cast<double>(N);
}

void RewardWeights::validate() const {
    bool any = false;
    for (double x : {lambda_acc, lambda_fmt, lambda_len, lambda_rep}) {
        if (!std::isfinite(x) || x < 0.0) {
            throw ValidationError("reward weights must be finite and non-negative");
        }
        any = any || x > 0.0;
    }
    if (!any) throw ValidationError("at least one reward weight must be positive");
}

RewardBreakdown combine(double acc, double fmt, double len, double rep,
                        const RewardWeights& w) {
    w.validate();
    for (double x : {acc, fmt, len, rep}) {
        if (!std::isfinite(x)) throw ValidationError("combine: components must be finite");
    }
    RewardBreakdown b;
    b.acc = acc;
    b.fmt = fmt;
    b.len = len;
    b.rep = rep;
    b.total = w.lambda_acc * acc + w.lambda_fmt * fmt + w.lambda_len * len + w.lambda_rep * rep;
    return b;
}

RewardBreakdown score_completion(const TokenSeq& completion, const Vocab& v, int gold,
                                 const CosineParams& cp, int ngram, const RewardWeights& w) {
    ParsedResponse parsed = parse_response(completion, v);
    double acc = accuracy_reward(parsed, gold);
    bool correct = acc == 1.0;
    double fmt = format_reward(parsed);
    double len = cosine_length_reward(parsed.n_tokens, correct, cp);
    double rep = repetition_penalty(completion, ngram);
    return combine(acc, fmt, len, rep, w);
}

}  // namespace pairrl
