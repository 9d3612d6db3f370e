#include "pairrl/vocab.hpp"

#include <sstream>

namespace pairrl {

Vocab Vocab::make(std::vector<std::string> tokens) {
    Vocab v;
    int n = static_cast<int>(tokens.size());
    if (n < 16 || n > 4096) {
        throw ValidationError("vocab size " + std::to_string(n) + " outside [16, 4096]");
    }
    v.tokens_ = std::move(tokens);
    v.index_.reserve(v.tokens_.size());
    for (int i = 0; i < n; ++i) {
        const std::string& t = v.tokens_[i];
        if (t.empty()) throw ValidationError("vocab token " + std::to_string(i) + " is empty");
        if (!v.index_.emplace(t, i).second) {
            throw ValidationError("duplicate vocab token '" + t + "'");
        }
    }
    auto need = [&](const char* t) {
        auto it = v.index_.find(t);
        if (it == v.index_.end()) {
            throw ValidationError(std::string("vocab missing required token '") + t + "'");
        }
        return it->second;
    };
    v.eos_ = need(kEos);
    v.think_open_ = need(kThinkOpen);
    v.think_close_ = need(kThinkClose);
    v.answer_open_ = need(kAnswerOpen);
    v.answer_close_ = need(kAnswerClose);
    for (int i = 0; i < kNumChoices; ++i) {
        std::string letter(1, static_cast<char>('A' + i));
        v.choice_[i] = need(letter.c_str());
    }
    return v;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) {
        throw ValidationError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[id];
}

int Vocab::id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ValidationError("unknown token '" + tok + "'");
    return it->second;
}

int Vocab::choice(int i) const {
    if (i < 0 || i >= kNumChoices) {
        throw ValidationError("choice index " + std::to_string(i) + " out of range");
    }
    return choice_[i];
}

int Vocab::choice_index(int id) const {
    for (int i = 0; i < kNumChoices; ++i) {
        if (choice_[i] == id) return i;
    }
    return -1;
}

std::string Vocab::detokenize(const TokenSeq& seq) const {
    std::string out;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ' ';
        out += token(seq[i]);
    }
    return out;
}

TokenSeq Vocab::tokenize(const std::string& text) const {
    TokenSeq out;
    std::istringstream is(text);
    std::string piece;
    while (is >> piece) out.push_back(id(piece));
    return out;
}

}  // namespace pairrl
