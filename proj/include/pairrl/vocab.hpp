#pragma once
// Token table. Ids are dense [0, size); construction validates the
// structural tokens the trainer and parser rely on.

#include <string>
#include <unordered_map>
#include <vector>

#include "pairrl/common.hpp"

namespace pairrl {

inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kThinkOpen = "<think>";
inline constexpr const char* kThinkClose = "</think>";
inline constexpr const char* kAnswerOpen = "<answer>";
inline constexpr const char* kAnswerClose = "</answer>";
inline constexpr int kNumChoices = 5;  // candidate letters A..E

class Vocab {
public:
    // Validates: size in [16, 4096], no duplicate tokens, and the structural
    // set (<eos>, think/answer tags, letters A..E) present exactly once.
    static Vocab make(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    int id(const std::string& tok) const;  // throws ValidationError if absent
    bool has(const std::string& tok) const { return index_.count(tok) != 0; }

    int eos() const { return eos_; }
    int think_open() const { return think_open_; }
    int think_close() const { return think_close_; }
    int answer_open() const { return answer_open_; }
    int answer_close() const { return answer_close_; }
    // Id of candidate letter i (0 -> "A" .. 4 -> "E").
    int choice(int i) const;
    // Reverse lookup: -1 when the id is not a candidate letter.
    int choice_index(int id) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    // Renders a token id sequence as space-separated text.
    std::string detokenize(const TokenSeq& seq) const;
    // Splits on whitespace and maps each piece; unknown token is an error.
    TokenSeq tokenize(const std::string& text) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int eos_ = -1, think_open_ = -1, think_close_ = -1;
    int answer_open_ = -1, answer_close_ = -1;
    int choice_[kNumChoices] = {-1, -1, -1, -1, -1};
};

}  // namespace pairrl
