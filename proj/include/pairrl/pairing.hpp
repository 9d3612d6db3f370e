#pragma once
// Synthetic cross-view pairing worlds. A world is a set of cities, each a
// cluster of geolocated locations carrying latent feature vectors. A task
// renders one location in the query view and k candidates in the other view;
// the model must pick the candidate showing the same location. A tunable
// fraction of feature slots is rendered truthfully in both views; each
// remaining slot is view-specific (visible in exactly one of the two views,
// occluded in the other), so cross-view evidence overlap controls difficulty
// and no slot outside the shared set can corroborate across views.

#include <cstdint>
#include <string>
#include <vector>

#include "pairrl/common.hpp"
#include "pairrl/rng.hpp"
#include "pairrl/vocab.hpp"

namespace pairrl {

struct WorldConfig {
    int n_cities = 4;
    int locs_per_city = 16;
    int n_features = 5;            // feature slots per rendering
    int n_values = 8;              // distinct values per feature slot
    double city_radius_deg = 0.2;  // locations fall within this radius of the center
    double style_mutation = 0.8;   // per-slot chance a location deviates from city style
    uint64_t seed = 0;

    void validate() const;
};

struct Location {
    int city = 0;
    double lat = 0.0;
    double lon = 0.0;
    std::vector<int> features;  // latent values, one per slot
};

struct World {
    WorldConfig cfg;
    std::vector<double> city_lat, city_lon;
    std::vector<std::vector<int>> city_style;
    std::vector<Location> locs;  // id = index; grouped by city, locs_per_city each

    int loc_id(int city, int i) const { return city * cfg.locs_per_city + i; }
    std::string city_name(int city) const { return "city_" + std::to_string(city); }
};

// Guarantees: city centers more than 5 radii apart, locations within one
// radius of their center, feature vectors distinct within each city.
World generate_world(const WorldConfig& cfg);

// Token table covering structural tokens, candidate letters, view markers,
// reasoning words, city names, and the feature symbols "f<s>=<u>" plus the
// occlusion marker "f<s>~". Both views spell a slot the same way, so a shared
// feature repeats literally across the prompt and candidate matching reduces
// to token-identity matching.
Vocab make_world_vocab(const WorldConfig& cfg);

enum class View { Query, Candidate };

struct PairingTask {
    int query_loc = -1;
    std::vector<int> candidate_locs;  // size k, gold entry is query_loc
    int gold = -1;                    // position of the matching candidate
    std::vector<int> shared_slots;    // slots rendered truthfully in both views
    uint64_t seed = 0;                // drives the view split of unshared slots
};

// Draws a task: uniform city, uniform query location, k-1 distinct confusers
// from the same city, gold position uniform. k must be in [2, 5] and not
// exceed locs_per_city.
PairingTask make_task(const World& w, int k, double rho_shared, uint64_t seed);

// Slot values one view shows for one location: shared slots carry the
// location's latent truth, every other slot is visible in exactly one view
// (value = truth there, kOccluded in the opposite view). The query/candidate
// split of unshared slots is a per-task coin, identical for all candidates.
inline constexpr int kOccluded = -1;
std::vector<int> render_view(const World& w, const PairingTask& t, int loc, View view);

// Full prompt: <pano> query-tokens <sat> (letter candidate-tokens)*k <q>.
// Deterministic in (world, task). Length = (n_features + 3) + k * (n_features + 1).
TokenSeq render_prompt(const World& w, const Vocab& v, const PairingTask& t);

// Gold position / letter of the matching candidate.
int oracle_answer(const PairingTask& t);
std::string oracle_letter(const PairingTask& t);

// Reference solver used by the difficulty tests: pick the candidate whose
// visible values agree with the query view on the most slots (ties -> lowest
// position). Occluded slots never agree.
int overlap_solve(const World& w, const PairingTask& t);

// One exported data sample, schema mirroring the eval record consumers.
struct TaskRecord {
    int id = 0;
    std::string prompt;
    std::string answer;  // gold letter
    std::string city;
    double lat = 0.0;
    double lon = 0.0;
};

TaskRecord make_task_record(const World& w, const Vocab& v, const PairingTask& t, int id);

}  // namespace pairrl
