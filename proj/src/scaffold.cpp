#include "pairrl/scaffold.hpp"

#include <algorithm>
#include <set>

namespace pairrl {

const char* paradigm_step_name(ParadigmStep s) {
    switch (s) {
        case ParadigmStep::CueIdentification: return "cue_identification";
        case ParadigmStep::KnowledgeAssociation: return "knowledge_association";
        case ParadigmStep::EvidenceCorroboration: return "evidence_corroboration";
        case ParadigmStep::Conclusion: return "conclusion";
    }
    throw ValidationError("paradigm_step_name: bad enum value");
}

namespace {

TokenSpan& span_of(ScaffoldExemplar& e, ParadigmStep s) {
    return e.paradigm_steps[static_cast<size_t>(s)];
}

void check_task_against_world(const World& w, const PairingTask& t) {
    int n_locs = static_cast<int>(w.locs.size());
    int k = static_cast<int>(t.candidate_locs.size());
    if (k < 2 || k > kNumChoices) throw ValidationError("fact_check: task candidate count invalid");
    if (t.query_loc < 0 || t.query_loc >= n_locs) {
        throw ValidationError("fact_check: task query location outside world");
    }
    for (int loc : t.candidate_locs) {
        if (loc < 0 || loc >= n_locs) {
            throw ValidationError("fact_check: task candidate location outside world");
        }
    }
    if (t.gold < 0 || t.gold >= k || t.candidate_locs[t.gold] != t.query_loc) {
        throw ValidationError("fact_check: task gold label inconsistent with world");
    }
    for (int f : t.shared_slots) {
        if (f < 0 || f >= w.cfg.n_features) {
            throw ValidationError("fact_check: task shared slot outside feature range");
        }
    }
}

// Lowest shared slot where confuser j contradicts the panorama, or -1. Both
// values are visible there by construction, so a differing value is a real
// cross-view mismatch.
int first_mismatch_slot(const World& w, const PairingTask& t, int j) {
    const std::vector<int>& q = w.locs[t.query_loc].features;
    const std::vector<int>& c = w.locs[t.candidate_locs[j]].features;
    for (int f : t.shared_slots) {
        if (q[f] != c[f]) return f;
    }
    return -1;
}

std::string value_token(int f, int value) {
    return "f" + std::to_string(f) + "=" + std::to_string(value);
}

std::string occluded_token(int f) { return "f" + std::to_string(f) + "~"; }

}  // namespace

ScaffoldExemplar make_scaffold_exemplar(const World& w, const Vocab& v, const PairingTask& t) {
    check_task_against_world(w, t);
    ScaffoldExemplar e;
    e.task = t;
    e.prompt_tokens = render_prompt(w, v, t);

    TokenSeq& out = e.target_tokens;
    out.push_back(v.think_open());

    // cue identification: the cues both views agree on are the shared slots
    TokenSpan& cue = span_of(e, ParadigmStep::CueIdentification);
    cue.begin = static_cast<int>(out.size());
    out.push_back(v.id("cues"));
    const std::vector<int>& qf = w.locs[t.query_loc].features;
    for (int f : t.shared_slots) out.push_back(v.id(value_token(f, qf[f])));
    cue.end = static_cast<int>(out.size());

    // knowledge association: cues belong to this city
    TokenSpan& assoc = span_of(e, ParadigmStep::KnowledgeAssociation);
    assoc.begin = static_cast<int>(out.size());
    out.push_back(v.id("city"));
    out.push_back(v.id(w.city_name(w.locs[t.query_loc].city)));
    assoc.end = static_cast<int>(out.size());

    // evidence corroboration: dismiss each confuser, citing a contradicting
    // candidate token when one exists
    TokenSpan& corrob = span_of(e, ParadigmStep::EvidenceCorroboration);
    corrob.begin = static_cast<int>(out.size());
    for (int j = 0; j < static_cast<int>(t.candidate_locs.size()); ++j) {
        if (j == t.gold) continue;
        out.push_back(v.id("rule_out"));
        out.push_back(v.choice(j));
        int f = first_mismatch_slot(w, t, j);
        if (f >= 0) {
            int cv = w.locs[t.candidate_locs[j]].features[f];
            out.push_back(v.id(value_token(f, cv)));
        }
    }
    corrob.end = static_cast<int>(out.size());

    out.push_back(v.think_close());

    TokenSpan& concl = span_of(e, ParadigmStep::Conclusion);
    concl.begin = static_cast<int>(out.size());
    out.push_back(v.answer_open());
    out.push_back(v.choice(t.gold));
    out.push_back(v.answer_close());
    concl.end = static_cast<int>(out.size());

    out.push_back(v.eos());
    return e;
}

std::vector<ScaffoldExemplar> build_scaffold_dataset(const World& w, const Vocab& v, int n, int k,
                                                     double rho_shared, uint64_t seed) {
    if (n < 1) throw ValidationError("build_scaffold_dataset: n must be >= 1");
    std::vector<ScaffoldExemplar> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        PairingTask t = make_task(w, k, rho_shared, derive_seed(seed, "scaffold", i));
        out.push_back(make_scaffold_exemplar(w, v, t));
    }
    return out;
}

std::vector<ScaffoldExemplar> build_warmup_dataset(const World& w, const Vocab& v, int n, int k,
                                                   double rho_shared, uint64_t seed) {
    if (n < 1) throw ValidationError("build_warmup_dataset: n must be >= 1");
    std::vector<ScaffoldExemplar> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        PairingTask t = make_task(w, k, rho_shared, derive_seed(seed, "warmup", i));
        ScaffoldExemplar e;
        e.task = t;
        e.prompt_tokens = render_prompt(w, v, t);

        TokenSeq& tt = e.target_tokens;
        tt.push_back(v.think_open());

        // the whole think block is a restatement of the panorama rendering
        TokenSpan& cue = span_of(e, ParadigmStep::CueIdentification);
        cue.begin = static_cast<int>(tt.size());
        tt.push_back(v.id("cues"));
        std::vector<int> q = render_view(w, t, t.query_loc, View::Query);
        for (int f = 0; f < w.cfg.n_features; ++f) {
            tt.push_back(v.id(q[f] == kOccluded ? occluded_token(f) : value_token(f, q[f])));
        }
        cue.end = static_cast<int>(tt.size());
        span_of(e, ParadigmStep::KnowledgeAssociation) = {cue.end, cue.end};
        span_of(e, ParadigmStep::EvidenceCorroboration) = {cue.end, cue.end};

        tt.push_back(v.think_close());

        TokenSpan& concl = span_of(e, ParadigmStep::Conclusion);
        concl.begin = static_cast<int>(tt.size());
        tt.push_back(v.answer_open());
        int letter = static_cast<int>(derive_seed(t.seed, "warmup-letter") % k);
        tt.push_back(v.choice(letter));
        tt.push_back(v.answer_close());
        concl.end = static_cast<int>(tt.size());

        tt.push_back(v.eos());
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

// True when every claim in the exemplar holds against the world. Structure
// must match the template shape exactly; spans must tile their claims.
bool exemplar_checks_out(const ScaffoldExemplar& e, const World& w, const Vocab& v) {
    const PairingTask& t = e.task;
    if (e.prompt_tokens != render_prompt(w, v, t)) return false;

    const TokenSeq& out = e.target_tokens;
    auto tok_at = [&](int i) { return i >= 0 && i < static_cast<int>(out.size()) ? out[i] : -1; };
    const TokenSpan cue = e.paradigm_steps[0], assoc = e.paradigm_steps[1],
                    corrob = e.paradigm_steps[2], concl = e.paradigm_steps[3];

    // shape: <think> [cue][assoc][corrob] </think> [concl] <eos>
    if (cue.begin != 1 || cue.end < cue.begin || assoc.begin != cue.end ||
        assoc.end != assoc.begin + 2 || corrob.begin != assoc.end || corrob.end < corrob.begin ||
        concl.begin != corrob.end + 1 || concl.end != concl.begin + 3 ||
        static_cast<int>(out.size()) != concl.end + 1) {
        return false;
    }
    if (tok_at(0) != v.think_open() || tok_at(corrob.end) != v.think_close() ||
        tok_at(concl.end) != v.eos()) {
        return false;
    }

    // cue claims: each cited value visible in both views (i.e., a shared slot
    // carrying the panorama's value)
    if (tok_at(cue.begin) != v.id("cues")) return false;
    const std::vector<int>& qf = w.locs[t.query_loc].features;
    std::set<int> shared(t.shared_slots.begin(), t.shared_slots.end());
    for (int i = cue.begin + 1; i < cue.end; ++i) {
        bool backed = false;
        for (int f : t.shared_slots) {
            if (tok_at(i) == v.id(value_token(f, qf[f]))) backed = true;
        }
        if (!backed) return false;
    }

    // association claim: the query location's city
    if (tok_at(assoc.begin) != v.id("city") ||
        tok_at(assoc.begin + 1) != v.id(w.city_name(w.locs[t.query_loc].city))) {
        return false;
    }

    // corroboration claims: rule_out LETTER [cited token]; letters are exactly
    // the confusers in ascending order; citations must belong to that
    // confuser's rendering and contradict a visible panorama value
    int i = corrob.begin;
    for (int j = 0; j < static_cast<int>(t.candidate_locs.size()); ++j) {
        if (j == t.gold) continue;
        if (tok_at(i) != v.id("rule_out") || tok_at(i + 1) != v.choice(j)) return false;
        i += 2;
        if (i < corrob.end && tok_at(i) != v.id("rule_out")) {
            int cited = tok_at(i);
            bool backed = false;
            const std::vector<int>& cf = w.locs[t.candidate_locs[j]].features;
            for (int f : shared) {
                if (cf[f] != qf[f] && cited == v.id(value_token(f, cf[f]))) {
                    backed = true;
                }
            }
            if (!backed) return false;
            ++i;
        }
    }
    if (i != corrob.end) return false;

    // conclusion claim: the gold letter
    return tok_at(concl.begin) == v.answer_open() && tok_at(concl.begin + 1) == v.choice(t.gold) &&
           tok_at(concl.begin + 2) == v.answer_close();
}

}  // namespace

ScaffoldExemplar fact_check_exemplar(const ScaffoldExemplar& e, const World& w, const Vocab& v) {
    check_task_against_world(w, e.task);
    if (exemplar_checks_out(e, w, v)) return e;
    return make_scaffold_exemplar(w, v, e.task);
}

}  // namespace pairrl
