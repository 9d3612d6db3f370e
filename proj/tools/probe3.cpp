// Cue-conditioned letter probe: cross-entropy on the answer letter given the
// prompt plus the gold think section. Isolates the matching sub-circuit the
// RL stage must strengthen (emitted cues -> candidate letter).
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "pairrl/policy.hpp"
#include "pairrl/rng.hpp"
#include "pairrl/scaffold.hpp"
#include "pairrl/pairing.hpp"

using namespace pairrl;

int main(int argc, char** argv) {
    int d = 48, steps = 2000, batch = 32, F = 5, nv = 8, trunc_mode = 1;
    double lr = 0.1, mom = 0.9, clip = 1.0, rho = 0.6;
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string a = argv[i];
        double x = std::atof(argv[i + 1]);
        if (a == "-d") d = (int)x;
        else if (a == "-lr") lr = x;
        else if (a == "-mom") mom = x;
        else if (a == "-clip") clip = x;
        else if (a == "-steps") steps = (int)x;
        else if (a == "-batch") batch = (int)x;
        else if (a == "-F") F = (int)x;
        else if (a == "-nv") nv = (int)x;
        else if (a == "-rho") rho = x;
        else if (a == "-trunc") trunc_mode = (int)x;
    }

    WorldConfig wc;
    wc.seed = 7;
    wc.n_features = F;
    wc.n_values = nv;
    World w = generate_world(wc);
    Vocab v = make_world_vocab(w.cfg);

    auto train = build_scaffold_dataset(w, v, 4000, 5, rho, 101);
    auto evals = build_scaffold_dataset(w, v, 500, 5, rho, 202);
    std::printf("V=%d d=%d lr=%g steps=%d batch=%d F=%d nv=%d rho=%g\n", v.size(), d, lr, steps,
                batch, F, nv, rho);

    // context = prompt + think-section prefix; label = the answer letter.
    // trunc=0 keeps the whole think block (rule_outs leak the answer by
    // elimination); trunc=1 cuts before the first rule_out so only the cue
    // and city sections remain.
    auto make_pair = [&](const ScaffoldExemplar& e, TokenSeq& ctx, int& gold) {
        size_t n = e.target_tokens.size();
        size_t cut = trunc_mode == 1
                         ? (size_t)e.paradigm_steps[(int)ParadigmStep::EvidenceCorroboration].begin
                         : n - 3;
        ctx = e.prompt_tokens;
        ctx.insert(ctx.end(), e.target_tokens.begin(), e.target_tokens.begin() + cut);
        gold = e.target_tokens[n - 3];
    };

    PolicyParams p = PolicyParams::init(v.size(), d, 17);
    OptState opt;
    opt.momentum = mom;
    opt.max_grad_norm = clip;
    Rng rng(33);

    for (int step = 1; step <= steps; ++step) {
        PolicyParams g = PolicyParams::zeros_like(p);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            const ScaffoldExemplar& e = train[rng.uniform_int((int)train.size())];
            TokenSeq ctx;
            int gold;
            make_pair(e, ctx, gold);
            Tape tape = run_tape(p, ctx);
            std::vector<PredSpec> preds(tape.steps.size() + 1);
            preds.back().pred_tok = gold;
            preds.back().logp_coeff = 1.0 / batch;
            backward(p, tape, preds, 1.0, g);
            loss -= log_softmax(logits_at(p, tape.state(tape.steps.size())))[gold] / batch;
        }
        p = optimizer_step(p, g, lr, opt);

        if (step % 250 == 0 || step == steps) {
            int hit = 0;
            for (const auto& e : evals) {
                TokenSeq ctx;
                int gold;
                make_pair(e, ctx, gold);
                Tape tape = run_tape(p, ctx);
                std::vector<double> logits = logits_at(p, tape.state(tape.steps.size()));
                int best = 0;
                for (int i = 1; i < v.size(); ++i)
                    if (logits[i] > logits[best]) best = i;
                hit += best == gold;
            }
            std::printf("step %4d  loss %.4f  gnorm %.4f  eval_acc %.3f\n", step, loss,
                        grad_l2_norm(g), (double)hit / evals.size());
            std::fflush(stdout);
        }
    }
    return 0;
}
