// Scratch probe: supervised (prompt -> gold letter) cross entropy on the
// library rendering, to size the optimization budget before wiring RL.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "pairrl/pairing.hpp"
#include "pairrl/policy.hpp"
#include "pairrl/rng.hpp"

using namespace pairrl;

int main(int argc, char** argv) {
    int d_model = 48, steps = 2000, k = 5, batch = 32;
    double lr = 0.3, mom = 0.9, clip = 1.0, rho = 0.6, mu = 0.8;
    int F = 5, nv = 8, cities = 4, locs = 16;
    for (int i = 1; i < argc; ++i) {
        auto next = [&](double& x) { x = std::atof(argv[++i]); };
        auto nexti = [&](int& x) { x = std::atoi(argv[++i]); };
        if (!std::strcmp(argv[i], "-d")) nexti(d_model);
        else if (!std::strcmp(argv[i], "-lr")) next(lr);
        else if (!std::strcmp(argv[i], "-mom")) next(mom);
        else if (!std::strcmp(argv[i], "-clip")) next(clip);
        else if (!std::strcmp(argv[i], "-rho")) next(rho);
        else if (!std::strcmp(argv[i], "-steps")) nexti(steps);
        else if (!std::strcmp(argv[i], "-F")) nexti(F);
        else if (!std::strcmp(argv[i], "-nv")) nexti(nv);
        else if (!std::strcmp(argv[i], "-cities")) nexti(cities);
        else if (!std::strcmp(argv[i], "-locs")) nexti(locs);
        else if (!std::strcmp(argv[i], "-k")) nexti(k);
        else if (!std::strcmp(argv[i], "-mu")) next(mu);
        else if (!std::strcmp(argv[i], "-batch")) nexti(batch);
    }

    WorldConfig wc;
    wc.seed = 1;
    wc.n_features = F;
    wc.n_values = nv;
    wc.n_cities = cities;
    wc.locs_per_city = locs;
    wc.style_mutation = mu;

    World w = generate_world(wc);
    Vocab v = make_world_vocab(wc);
    std::printf("V=%d d=%d lr=%g mom=%g clip=%g batch=%d rho=%g k=%d F=%d nv=%d mu=%g world=%dx%d\n",
                v.size(), d_model, lr, mom, clip, batch, rho, k, F, nv, mu, cities, locs);

    PolicyParams p = PolicyParams::init(v.size(), d_model, 1);
    const int n_eval = 500;
    std::vector<TokenSeq> eprompts(n_eval);
    std::vector<int> egolds(n_eval);
    for (int i = 0; i < n_eval; ++i) {
        PairingTask t = make_task(w, k, rho, derive_seed(1, "eval", i));
        eprompts[i] = render_prompt(w, v, t);
        egolds[i] = v.choice(t.gold);
    }

    OptState opt;
    opt.momentum = mom;
    opt.max_grad_norm = clip;
    uint64_t stream = 0;
    for (int step = 1; step <= steps; ++step) {
        PolicyParams g = PolicyParams::zeros_like(p);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            PairingTask t = make_task(w, k, rho, derive_seed(1, "train-task", stream++));
            TokenSeq prompt = render_prompt(w, v, t);
            int gold = v.choice(t.gold);
            Tape tape = run_tape(p, prompt);
            std::vector<PredSpec> preds(tape.steps.size() + 1);
            preds.back().pred_tok = gold;
            preds.back().logp_coeff = 1.0 / batch;
            backward(p, tape, preds, 1.0, g);
            loss -= log_softmax(logits_at(p, tape.state(tape.steps.size())))[gold] / batch;
        }
        double gn = grad_l2_norm(g);
        p = optimizer_step(p, g, lr, opt);

        if (step % 250 == 0 || step == steps) {
            int hits = 0;
            for (int i = 0; i < n_eval; ++i) {
                Tape tape = run_tape(p, eprompts[i]);
                std::vector<double> logits = logits_at(p, tape.state(tape.steps.size()));
                int best = 0;
                for (int u = 1; u < v.size(); ++u) {
                    if (logits[u] > logits[best]) best = u;
                }
                if (best == egolds[i]) ++hits;
            }
            std::printf("step %4d  loss %.4f  gnorm %.4f  eval_acc %.3f\n", step, loss, gn,
                        double(hits) / n_eval);
            std::fflush(stdout);
        }
    }
    return 0;
}
