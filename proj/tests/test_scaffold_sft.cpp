// Scaffold dataset and SFT stage. The gradient check uses central finite
// differences as the independent oracle; the uniform-policy loss fixture is
// the closed form ln(V).

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pairrl/evals.hpp"
#include "pairrl/rewards.hpp"
#include "pairrl/rng.hpp"
#include "pairrl/scaffold.hpp"
#include "pairrl/sft.hpp"

using namespace pairrl;

namespace {

World test_world(uint64_t seed = 7) {
    WorldConfig cfg;
    cfg.seed = seed;
    return generate_world(cfg);
}

bool same_exemplar(const ScaffoldExemplar& a, const ScaffoldExemplar& b) {
    if (a.prompt_tokens != b.prompt_tokens || a.target_tokens != b.target_tokens) return false;
    if (a.task.query_loc != b.task.query_loc || a.task.candidate_locs != b.task.candidate_locs ||
        a.task.gold != b.task.gold || a.task.shared_slots != b.task.shared_slots ||
        a.task.seed != b.task.seed) {
        return false;
    }
    for (int s = 0; s < kNumParadigmSteps; ++s) {
        if (a.paradigm_steps[s].begin != b.paradigm_steps[s].begin ||
            a.paradigm_steps[s].end != b.paradigm_steps[s].end) {
            return false;
        }
    }
    return true;
}

PolicyParams randomized_params(int V, int d, uint64_t seed) {
    PolicyParams p = PolicyParams::init(V, d, seed);
    Rng rng(derive_seed(seed, "randomize"));
    for (double& x : p.wo.a) x = 0.3 * rng.normal();
    for (double& x : p.bo.a) x = 0.3 * rng.normal();
    return p;
}

}  // namespace

TEST_CASE("scaffold exemplars are well formed and conclude with gold") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 500, 5, 0.6, 3);
    REQUIRE(ds.size() == 500);

    for (const ScaffoldExemplar& e : ds) {
        ParsedResponse parsed = parse_response(e.target_tokens, v);
        REQUIRE(parsed.well_formed);
        CHECK(*parsed.answer == oracle_answer(e.task));
        CHECK(e.prompt_tokens == render_prompt(w, v, e.task));

        // spans tile the reasoning: cues + city + rule_outs inside the think
        // block, conclusion is the answer block
        const TokenSpan& cue = e.paradigm_steps[0];
        const TokenSpan& concl = e.paradigm_steps[3];
        CHECK(e.target_tokens[0] == v.think_open());
        CHECK(e.target_tokens[cue.begin] == v.id("cues"));
        CHECK(e.target_tokens[concl.begin] == v.answer_open());
        CHECK(e.target_tokens[concl.begin + 1] == v.choice(e.task.gold));
        CHECK(e.target_tokens.back() == v.eos());

        // every confuser letter appears in the corroboration span
        const TokenSpan& corrob = e.paradigm_steps[2];
        for (int j = 0; j < static_cast<int>(e.task.candidate_locs.size()); ++j) {
            if (j == e.task.gold) continue;
            bool found = false;
            for (int i = corrob.begin; i < corrob.end; ++i) {
                if (e.target_tokens[i] == v.choice(j)) found = true;
            }
            CHECK(found);
        }
    }

    // deterministic regeneration
    auto ds2 = build_scaffold_dataset(w, v, 500, 5, 0.6, 3);
    for (size_t i = 0; i < ds.size(); ++i) CHECK(same_exemplar(ds[i], ds2[i]));

    // exemplars exist at the rho extremes too
    auto lo = build_scaffold_dataset(w, v, 20, 5, 0.0, 4);
    auto hi = build_scaffold_dataset(w, v, 20, 5, 1.0, 4);
    for (const auto& e : lo) CHECK(parse_response(e.target_tokens, v).well_formed);
    for (const auto& e : hi) CHECK(parse_response(e.target_tokens, v).well_formed);
}

TEST_CASE("fact check repairs corrupted spans and is idempotent") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 50, 5, 0.6, 11);

    for (const ScaffoldExemplar& e : ds) {
        // clean exemplars come back unchanged
        CHECK(same_exemplar(fact_check_exemplar(e, w, v), e));

        // corrupted conclusion: gold letter restored
        ScaffoldExemplar bad = e;
        int wrong = (e.task.gold + 1) % static_cast<int>(e.task.candidate_locs.size());
        bad.target_tokens[e.paradigm_steps[3].begin + 1] = v.choice(wrong);
        ScaffoldExemplar fixed = fact_check_exemplar(bad, w, v);
        CHECK(same_exemplar(fixed, e));
        CHECK(same_exemplar(fact_check_exemplar(fixed, w, v), fixed));
    }

    // a cue citing a value the panorama does not show gets replaced
    ScaffoldExemplar e = ds[0];
    REQUIRE(e.task.shared_slots.size() >= 1);
    int f = e.task.shared_slots[0];
    int true_u = w.locs[e.task.query_loc].features[f];
    int lie_u = (true_u + 1) % w.cfg.n_values;
    ScaffoldExemplar lying = e;
    lying.target_tokens[e.paradigm_steps[0].begin + 1] =
        v.id("f" + std::to_string(f) + "=" + std::to_string(lie_u));
    ScaffoldExemplar fixed = fact_check_exemplar(lying, w, v);
    CHECK(same_exemplar(fixed, e));

    // structural damage (think never closed) is rebuilt wholesale
    ScaffoldExemplar broken = e;
    broken.target_tokens[e.paradigm_steps[2].end] = v.id("cues");
    CHECK(same_exemplar(fact_check_exemplar(broken, w, v), e));

    // a rule_out citation that matches the panorama is not a mismatch
    for (const ScaffoldExemplar& cand : ds) {
        const TokenSpan& corrob = cand.paradigm_steps[2];
        if (corrob.end - corrob.begin < 3) continue;
        if (cand.task.shared_slots.empty()) continue;
        ScaffoldExemplar tampered = cand;
        // first citation slot (token after "rule_out LETTER"), if present
        int i = corrob.begin + 2;
        if (i >= corrob.end || tampered.target_tokens[i] == v.id("rule_out")) continue;
        int j = -1;
        for (int jj = 0; jj < static_cast<int>(cand.task.candidate_locs.size()); ++jj) {
            if (tampered.target_tokens[corrob.begin + 1] == v.choice(jj)) j = jj;
        }
        REQUIRE(j >= 0);
        int fs = cand.task.shared_slots[0];
        int qv = w.locs[cand.task.query_loc].features[fs];
        tampered.target_tokens[i] =
            v.id("f" + std::to_string(fs) + "=" + std::to_string(qv));
        ScaffoldExemplar repaired = fact_check_exemplar(tampered, w, v);
        CHECK(same_exemplar(repaired, cand));
        break;
    }

    // tasks that do not belong to the world are not repairable
    ScaffoldExemplar alien = ds[0];
    alien.task.query_loc = static_cast<int>(w.locs.size()) + 3;
    CHECK_THROWS_AS(fact_check_exemplar(alien, w, v), ValidationError);
    ScaffoldExemplar twisted = ds[0];
    twisted.task.candidate_locs[twisted.task.gold] ^= 1;  // gold no longer the query location
    CHECK_THROWS_AS(fact_check_exemplar(twisted, w, v), ValidationError);
}

TEST_CASE("sft loss of the uniform policy is ln V per token") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 8, 5, 0.6, 21);

    // zeroed output head makes every next-token distribution uniform
    PolicyParams p = PolicyParams::init(v.size(), 24, 5);
    double expect = std::log(static_cast<double>(v.size()));
    CHECK(sft_dataset_loss(p, ds) == doctest::Approx(expect).epsilon(1e-12));

    std::vector<const ScaffoldExemplar*> batch;
    for (const auto& e : ds) batch.push_back(&e);
    OptState opt;
    auto [p2, loss] = sft_step(p, batch, 0.0, opt);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

    // lr = 0 reports the loss and leaves parameters untouched
    CHECK(p2.embed.a == p.embed.a);
    CHECK(p2.wo.a == p.wo.a);
    CHECK(p2.bz.a == p.bz.a);
}

TEST_CASE("sft gradient matches finite differences") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 2, 4, 0.6, 31);
    PolicyParams p = randomized_params(v.size(), 16, 9);

    std::vector<const ScaffoldExemplar*> batch;
    for (const auto& e : ds) batch.push_back(&e);

    // objective the step ascends: mean over batch of per-token logp
    auto objective = [&](const PolicyParams& q) {
        double s = 0.0;
        for (const auto* e : batch) {
            LogProbTrace tr = forward_logprobs(q, e->prompt_tokens, e->target_tokens);
            s += tr.total / static_cast<double>(e->target_tokens.size());
        }
        return s / static_cast<double>(batch.size());
    };

    // recover the analytic gradient from one unit-lr plain step
    OptState opt;
    auto [stepped, loss0] = sft_step(p, batch, 1.0, opt);
    CHECK(loss0 == doctest::Approx(-objective(p)).epsilon(1e-9));

    Rng rng(77);
    auto blocks = p.blocks();
    int checked = 0;
    for (int rep = 0; rep < 60; ++rep) {
        size_t bi = rng.uniform_int(static_cast<int>(blocks.size()));
        const Mat* blk = blocks[bi].m;
        size_t ci = rng.uniform_int(static_cast<int>(blk->a.size()));

        PolicyParams hi = clone_frozen(p), lo = clone_frozen(p);
        const double h = 1e-5;
        hi.blocks()[bi].m->a[ci] += h;
        lo.blocks()[bi].m->a[ci] -= h;
        double fd = (objective(hi) - objective(lo)) / (2.0 * h);
        double an = stepped.blocks()[bi].m->a[ci] - blk->a[ci];  // lr 1, ascent
        if (std::fabs(fd) < 1e-7 && std::fabs(an) < 1e-7) continue;
        CHECK(std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-12}) < 1e-4);
        ++checked;
    }
    CHECK(checked >= 30);
}

TEST_CASE("repeated sft steps on one exemplar strictly decrease the loss") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 1, 5, 0.6, 41);
    PolicyParams p = PolicyParams::init(v.size(), 32, 13);

    std::vector<const ScaffoldExemplar*> batch = {&ds[0]};
    OptState opt;  // plain sgd
    double prev = 1e300;
    for (int step = 0; step < 20; ++step) {
        auto [next, loss] = sft_step(p, batch, 0.05, opt);
        CHECK(loss < prev);
        prev = loss;
        p = std::move(next);
    }
}

TEST_CASE("two epochs of sft improve loss and format compliance") {
    World w = test_world();
    Vocab v = make_world_vocab(w.cfg);
    auto ds = build_scaffold_dataset(w, v, 400, 5, 0.6, 51);
    auto held_out = build_scaffold_dataset(w, v, 64, 5, 0.6, 52);

    PolicyParams init = PolicyParams::init(v.size(), 32, 17);

    EvalConfig ec;
    ec.n_tasks = 500;
    ec.greedy = false;  // sampled compliance, temperature 1
    ec.max_len = 64;
    ec.seed = 500100;
    PolicyEval pre = evaluate_policy(init, w, v, ec);

    SftConfig cfg;
    cfg.seed = 61;
    cfg.checkpoint_path =
        (std::filesystem::temp_directory_path() / "pairrl_test_sft_ckpt.bin").string();
    SftResult res = train_sft(init, ds, cfg);

    REQUIRE(!res.curve.empty());
    CHECK(res.curve.size() == static_cast<size_t>(cfg.epochs * ((400 + 15) / 16)));
    double init_loss = sft_dataset_loss(init, held_out);
    double final_loss = sft_dataset_loss(res.params, held_out);
    CHECK(final_loss < init_loss);

    PolicyEval post = evaluate_policy(res.params, w, v, ec);
    CHECK(post.format_rate > pre.format_rate);

    // reloaded checkpoint reproduces the held-out loss bit for bit
    Checkpoint re = load_policy(cfg.checkpoint_path);
    CHECK(sft_dataset_loss(re.params, held_out) == final_loss);
    std::filesystem::remove(cfg.checkpoint_path);
}
