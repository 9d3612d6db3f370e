#include "pairrl/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pairrl {

void WorldConfig::validate() const {
    if (n_cities < 2 || n_cities > 64) throw ValidationError("world n_cities outside [2, 64]");
    if (locs_per_city < 2 || locs_per_city > 256) {
        throw ValidationError("world locs_per_city outside [2, 256]");
    }
    if (n_features < 1 || n_features > 32) throw ValidationError("world n_features outside [1, 32]");
    if (n_values < 2 || n_values > 32) throw ValidationError("world n_values outside [2, 32]");
    if (!(city_radius_deg > 0.0) || city_radius_deg > 2.0) {
        throw ValidationError("world city_radius_deg outside (0, 2]");
    }
    if (style_mutation < 0.0 || style_mutation > 1.0) {
        throw ValidationError("world style_mutation outside [0, 1]");
    }
}

World generate_world(const WorldConfig& cfg) {
    cfg.validate();
    World w;
    w.cfg = cfg;
    Rng rng(derive_seed(cfg.seed, "world"));

    // City centers on a jittered grid with 8-radius spacing: worst case keeps
    // centers 6 radii apart, comfortably past the 5-radius guarantee.
    int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_cities))));
    double spacing = 8.0 * cfg.city_radius_deg;
    double lat0 = rng.uniform(-50.0, 30.0);
    double lon0 = rng.uniform(-150.0, 100.0);
    for (int c = 0; c < cfg.n_cities; ++c) {
        int gi = c / grid, gj = c % grid;
        w.city_lat.push_back(lat0 + gi * spacing + rng.uniform(-1.0, 1.0) * cfg.city_radius_deg);
        w.city_lon.push_back(lon0 + gj * spacing + rng.uniform(-1.0, 1.0) * cfg.city_radius_deg);
    }

    for (int c = 0; c < cfg.n_cities; ++c) {
        std::vector<int> style(cfg.n_features);
        for (int& s : style) s = rng.uniform_int(cfg.n_values);
        w.city_style.push_back(style);
    }

    for (int c = 0; c < cfg.n_cities; ++c) {
        std::set<std::vector<int>> seen;
        for (int i = 0; i < cfg.locs_per_city; ++i) {
            Location loc;
            loc.city = c;
            double d = cfg.city_radius_deg * std::sqrt(rng.uniform());
            double a = rng.uniform() * 6.283185307179586;
            loc.lat = w.city_lat[c] + d * std::cos(a);
            loc.lon = w.city_lon[c] + d * std::sin(a);

            // mutate the city style per slot; resample until unique in city
            const int max_tries = 1000;
            int tries = 0;
            do {
                loc.features = w.city_style[c];
                for (int f = 0; f < cfg.n_features; ++f) {
                    if (rng.uniform() < cfg.style_mutation) {
                        int delta = 1 + rng.uniform_int(cfg.n_values - 1);
                        loc.features[f] = (loc.features[f] + delta) % cfg.n_values;
                    }
                }
                ++tries;
            } while (seen.count(loc.features) && tries < max_tries);
            if (seen.count(loc.features)) {
                throw ValidationError(
                    "generate_world: feature space too small for distinct locations "
                    "(raise n_features, n_values, or style_mutation)");
            }
            seen.insert(loc.features);
            w.locs.push_back(std::move(loc));
        }
    }
    return w;
}

namespace {

// Token spelling for one feature slot. The same spelling serves both views, so
// a shared feature shows up as a literally repeated token; the solver (and a
// learner) can match candidates to the panorama by token identity alone.
std::string slot_token(int f, int value) {
    std::string s = "f" + std::to_string(f);
    if (value == kOccluded) return s + "~";
    return s + "=" + std::to_string(value);
}

}  // namespace

Vocab make_world_vocab(const WorldConfig& cfg) {
    cfg.validate();
    std::vector<std::string> toks = {kEos, kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};
    for (int i = 0; i < kNumChoices; ++i) toks.push_back(std::string(1, static_cast<char>('A' + i)));
    toks.insert(toks.end(), {"<pano>", "<sat>", "<q>", "cues", "city", "rule_out"});
    for (int c = 0; c < cfg.n_cities; ++c) toks.push_back("city_" + std::to_string(c));
    for (int f = 0; f < cfg.n_features; ++f) {
        for (int u = 0; u < cfg.n_values; ++u) toks.push_back(slot_token(f, u));
        toks.push_back(slot_token(f, kOccluded));
    }
    return Vocab::make(std::move(toks));
}

PairingTask make_task(const World& w, int k, double rho_shared, uint64_t seed) {
    if (k < 2 || k > kNumChoices) throw ValidationError("make_task: k outside [2, 5]");
    if (k > w.cfg.locs_per_city) throw ValidationError("make_task: k exceeds locations per city");
    if (rho_shared < 0.0 || rho_shared > 1.0) {
        throw ValidationError("make_task: rho_shared outside [0, 1]");
    }

    Rng rng(derive_seed(seed, "task"));
    PairingTask t;
    t.seed = seed;

    int city = rng.uniform_int(w.cfg.n_cities);
    std::vector<int> in_city = rng.sample_without_replacement(w.cfg.locs_per_city, k);
    t.query_loc = w.loc_id(city, in_city[0]);

    t.gold = rng.uniform_int(k);
    t.candidate_locs.resize(k);
    int next = 1;
    for (int j = 0; j < k; ++j) {
        t.candidate_locs[j] = (j == t.gold) ? t.query_loc : w.loc_id(city, in_city[next++]);
    }

    int n_shared =
        static_cast<int>(std::lround(rho_shared * static_cast<double>(w.cfg.n_features)));
    t.shared_slots = rng.sample_without_replacement(w.cfg.n_features, n_shared);
    std::sort(t.shared_slots.begin(), t.shared_slots.end());
    return t;
}

std::vector<int> render_view(const World& w, const PairingTask& t, int loc, View view) {
    if (loc < 0 || loc >= static_cast<int>(w.locs.size())) {
        throw ValidationError("render_view: location id out of range");
    }
    const Location& L = w.locs[loc];
    const int F = w.cfg.n_features;
    std::vector<int> out(F);
    for (int f = 0; f < F; ++f) {
        if (std::binary_search(t.shared_slots.begin(), t.shared_slots.end(), f)) {
            out[f] = L.features[f];
            continue;
        }
        // unshared slot: one view shows it, the other sees it occluded
        bool query_side = derive_seed(t.seed, "view-split", static_cast<uint64_t>(f)) & 1;
        bool visible = (view == View::Query) == query_side;
        out[f] = visible ? L.features[f] : kOccluded;
    }
    return out;
}

TokenSeq render_prompt(const World& w, const Vocab& v, const PairingTask& t) {
    TokenSeq p;
    p.push_back(v.id("<pano>"));
    std::vector<int> q = render_view(w, t, t.query_loc, View::Query);
    for (int f = 0; f < w.cfg.n_features; ++f) p.push_back(v.id(slot_token(f, q[f])));
    p.push_back(v.id("<sat>"));
    for (size_t j = 0; j < t.candidate_locs.size(); ++j) {
        p.push_back(v.choice(static_cast<int>(j)));
        std::vector<int> c = render_view(w, t, t.candidate_locs[j], View::Candidate);
        for (int f = 0; f < w.cfg.n_features; ++f) p.push_back(v.id(slot_token(f, c[f])));
    }
    p.push_back(v.id("<q>"));
    return p;
}

int oracle_answer(const PairingTask& t) { return t.gold; }

std::string oracle_letter(const PairingTask& t) {
    return std::string(1, static_cast<char>('A' + t.gold));
}

int overlap_solve(const World& w, const PairingTask& t) {
    std::vector<int> q = render_view(w, t, t.query_loc, View::Query);
    int best = 0, best_score = -1;
    for (size_t j = 0; j < t.candidate_locs.size(); ++j) {
        std::vector<int> c = render_view(w, t, t.candidate_locs[j], View::Candidate);
        int score = 0;
        for (size_t f = 0; f < q.size(); ++f) {
            if (q[f] != kOccluded && q[f] == c[f]) ++score;
        }
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(j);
        }
    }
    return best;
}

TaskRecord make_task_record(const World& w, const Vocab& v, const PairingTask& t, int id) {
    TaskRecord r;
    r.id = id;
    r.prompt = v.detokenize(render_prompt(w, v, t));
    r.answer = oracle_letter(t);
    const Location& L = w.locs[t.query_loc];
    r.city = w.city_name(L.city);
    r.lat = L.lat;
    r.lon = L.lon;
    return r;
}

}  // namespace pairrl
