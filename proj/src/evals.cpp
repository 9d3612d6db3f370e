#include "pairrl/evals.hpp"

namespace pairrl {

void EvalConfig::validate() const {
    if (n_tasks < 1) throw ValidationError("eval n_tasks must be >= 1");
    if (k < 2 || k > kNumChoices) throw ValidationError("eval k outside [2, 5]");
    if (rho_shared < 0.0 || rho_shared > 1.0) throw ValidationError("eval rho_shared outside [0, 1]");
    if (!(temperature > 0.0)) throw ValidationError("eval temperature must be > 0");
    if (max_len < 1) throw ValidationError("eval max_len must be >= 1");
}

PolicyEval evaluate_policy(const PolicyParams& p, const World& w, const Vocab& v,
                           const EvalConfig& cfg) {
    cfg.validate();
    PolicyEval out;
    out.n = cfg.n_tasks;
    long total_len = 0;
    for (int i = 0; i < cfg.n_tasks; ++i) {
        PairingTask t = make_task(w, cfg.k, cfg.rho_shared, derive_seed(cfg.seed, "eval-task", i));
        TokenSeq prompt = render_prompt(w, v, t);
        TokenSeq completion;
        if (cfg.greedy) {
            completion = greedy_decode(p, v, prompt, cfg.max_len);
        } else {
            SamplerConfig sc{cfg.temperature, cfg.max_len, derive_seed(cfg.seed, "eval-sample", i)};
            completion = sample(p, v, prompt, sc).tokens;
        }
        ParsedResponse parsed = parse_response(completion, v);
        if (parsed.well_formed) out.format_rate += 1.0;
        if (parsed.answer.has_value() && *parsed.answer == t.gold) out.accuracy += 1.0;
        total_len += static_cast<long>(completion.size());
    }
    out.accuracy /= cfg.n_tasks;
    out.format_rate /= cfg.n_tasks;
    out.mean_len = static_cast<double>(total_len) / cfg.n_tasks;
    return out;
}

}  // namespace pairrl
