// RL calibration probe: SFT stage with pipeline defaults, then GRPO from the
// checkpoint, printing per-update training stats and a final greedy held-out
// eval. Flags tune the RL hyperparameters under test.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "pairrl/evals.hpp"
#include "pairrl/grpo.hpp"
#include "pairrl/pairing.hpp"
#include "pairrl/scaffold.hpp"
#include "pairrl/sft.hpp"

using namespace pairrl;

int main(int argc, char** argv) {
    int d = 64, updates = 120, print_every = 1, skip_sft = 0;
    double lr = 0.1, beta = 0.04, temp = 1.0;
    uint64_t seed = 5;
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string a = argv[i];
        double x = std::atof(argv[i + 1]);
        if (a == "-d") d = (int)x;
        else if (a == "-lr") lr = x;
        else if (a == "-beta") beta = x;
        else if (a == "-temp") temp = x;
        else if (a == "-updates") updates = (int)x;
        else if (a == "-every") print_every = (int)x;
        else if (a == "-seed") seed = (uint64_t)x;
        else if (a == "-zero") skip_sft = (int)x;
    }

    WorldConfig wc;
    wc.seed = 7;
    World w = generate_world(wc);
    Vocab v = make_world_vocab(w.cfg);

    PolicyParams start = PolicyParams::init(v.size(), d, 17);
    if (!skip_sft) {
        auto ds = build_scaffold_dataset(w, v, 1000, 5, 0.6, 51);
        SftConfig sc;
        sc.seed = 61;
        SftResult sr = train_sft(start, ds, sc);
        start = std::move(sr.params);
    }

    EvalConfig ec;
    ec.n_tasks = 400;
    ec.greedy = true;
    ec.max_len = 64;
    ec.seed = 900001;
    PolicyEval pe = evaluate_policy(start, w, v, ec);
    EvalConfig es = ec;
    es.greedy = false;
    PolicyEval ps = evaluate_policy(start, w, v, es);
    std::printf("start: greedy acc=%.3f fmt=%.3f len=%.1f | sampled acc=%.3f fmt=%.3f\n",
                pe.accuracy, pe.format_rate, pe.mean_len, ps.accuracy, ps.format_rate);

    GrpoConfig cfg;
    cfg.lr = lr;
    cfg.beta = beta;
    cfg.total_updates = updates;
    cfg.temperature_schedule = {{0, temp}};
    cfg.seed = seed;

    auto t0 = std::chrono::steady_clock::now();
    auto last = t0;
    RlResult rr = train_rl(start, w, cfg, [&](const TrainingStats& s) {
        auto now = std::chrono::steady_clock::now();
        double dt = std::chrono::duration<double>(now - last).count();
        last = now;
        if (s.step % print_every == 0) {
            std::printf(
                "u%3d  rew %+.3f±%.3f  acc %+.3f  fmt %.3f  kl %.4f  gn %.3f  len %.1f  "
                "filt %.2f  %.2fs\n",
                s.step, s.reward_mean, s.reward_std, s.acc_mean, s.fmt_mean, s.kl, s.grad_norm,
                s.completion_len_mean, s.filtered_fraction, dt);
            std::fflush(stdout);
        }
    });
    double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    PolicyEval fe = evaluate_policy(rr.params, w, v, ec);
    PolicyEval fs = evaluate_policy(rr.params, w, v, es);
    std::printf("final: greedy acc=%.3f fmt=%.3f len=%.1f | sampled acc=%.3f fmt=%.3f | rl %.1fs "
                "(%.2fs/u)\n",
                fe.accuracy, fe.format_rate, fe.mean_len, fs.accuracy, fs.format_rate, total,
                total / updates);
    return 0;
}
