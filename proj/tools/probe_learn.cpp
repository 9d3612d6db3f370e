// Scratch probe: supervised cross-entropy on (prompt -> gold letter) to
// check the world/policy defaults are learnable before wiring the trainers.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "pairrl/pairing.hpp"
#include "pairrl/policy.hpp"
#include "pairrl/rng.hpp"

using namespace pairrl;

int main(int argc, char** argv) {
    int d_model = 48;
    double lr = 0.1, mom = 0.0, clip = 0.0, rho = 0.6;
    int steps = 1000, n_train = 0;  // n_train 0 = fresh task stream
    int F = 6, nv = 5, cities = 4, locs = 16, k = 5;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (!std::strcmp(argv[i], "-d")) d_model = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-lr")) lr = std::atof(argv[i + 1]);
        if (!std::strcmp(argv[i], "-mom")) mom = std::atof(argv[i + 1]);
        if (!std::strcmp(argv[i], "-clip")) clip = std::atof(argv[i + 1]);
        if (!std::strcmp(argv[i], "-rho")) rho = std::atof(argv[i + 1]);
        if (!std::strcmp(argv[i], "-steps")) steps = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-ntrain")) n_train = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-F")) F = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-nv")) nv = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-cities")) cities = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-locs")) locs = std::atoi(argv[i + 1]);
        if (!std::strcmp(argv[i], "-k")) k = std::atoi(argv[i + 1]);
    }
    std::printf("d=%d lr=%g mom=%g clip=%g rho=%g steps=%d ntrain=%d F=%d nv=%d world=%dx%d k=%d\n",
                d_model, lr, mom, clip, rho, steps, n_train, F, nv, cities, locs, k);

    WorldConfig wc;
    wc.seed = 1;
    wc.n_features = F;
    wc.n_values = nv;
    wc.n_cities = cities;
    wc.locs_per_city = locs;
    World w = generate_world(wc);
    Vocab v = make_world_vocab(wc);
    PolicyParams p = PolicyParams::init(v.size(), d_model, 1);

    std::vector<TokenSeq> prompts;
    std::vector<int> golds;
    if (n_train > 0) {
        prompts.resize(n_train);
        golds.resize(n_train);
        for (int i = 0; i < n_train; ++i) {
            PairingTask t = make_task(w, k, rho, derive_seed(1, "train-task", i));
            prompts[i] = render_prompt(w, v, t);
            golds[i] = v.choice(t.gold);
        }
    }
    const int n_eval = 500;
    std::vector<TokenSeq> eprompts(n_eval);
    std::vector<int> egolds(n_eval);
    for (int i = 0; i < n_eval; ++i) {
        PairingTask t = make_task(w, k, rho, derive_seed(1, "eval", i));
        eprompts[i] = render_prompt(w, v, t);
        egolds[i] = v.choice(t.gold);
    }

    Rng rng(derive_seed(1, "probe"));
    OptState opt;
    opt.momentum = mom;
    opt.max_grad_norm = clip;
    const int batch = 32;
    uint64_t stream = 0;
    for (int step = 1; step <= steps; ++step) {
        PolicyParams g = PolicyParams::zeros_like(p);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            TokenSeq* prompt;
            int gold;
            TokenSeq fresh;
            if (n_train > 0) {
                int i = rng.uniform_int(n_train);
                prompt = &prompts[i];
                gold = golds[i];
            } else {
                PairingTask t = make_task(w, k, rho, derive_seed(1, "train-task", stream++));
                fresh = render_prompt(w, v, t);
                prompt = &fresh;
                gold = v.choice(t.gold);
            }
            Tape tape = run_tape(p, *prompt);
            std::vector<PredSpec> preds(tape.steps.size() + 1);
            preds.back().pred_tok = gold;
            preds.back().logp_coeff = 1.0 / batch;
            backward(p, tape, preds, 1.0, g);
            loss -= log_softmax(logits_at(p, tape.state(tape.steps.size())))[gold] / batch;
        }
        p = optimizer_step(p, g, lr, opt);

        if (step % 100 == 0 || step == steps) {
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
            std::printf("step %4d  loss %.4f  eval_acc %.3f\n", step, loss,
                        static_cast<double>(hits) / n_eval);
            std::fflush(stdout);
        }
    }
    return 0;
}
