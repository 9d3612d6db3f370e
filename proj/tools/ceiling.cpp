// Scratch: empirical overlap-solver ceiling per world config. Not in CMake.
#include <cstdio>
#include <cstdlib>

#include "pairrl/pairing.hpp"

using namespace pairrl;

int main() {
    const int kTasks = 20000;
    struct Cfg { int F, nv; };
    Cfg grid[] = {{3, 5}, {3, 8}, {3, 10}, {4, 8}, {5, 6}, {5, 8}, {6, 5}};
    for (auto [F, nv] : grid) {
        WorldConfig wc;
        wc.n_features = F;
        wc.n_values = nv;
        wc.seed = 123;
        World w = generate_world(wc);
        int hit = 0;
        int shared = 0;
        for (int i = 0; i < kTasks; ++i) {
            PairingTask t = make_task(w, 5, 0.6, derive_seed(99, "ceil", i));
            shared = static_cast<int>(t.shared_slots.size());
            if (overlap_solve(w, t) == t.gold) ++hit;
        }
        std::printf("F=%d nv=%d shared=%d  oracle_acc=%.4f\n", F, nv, shared,
                    static_cast<double>(hit) / kTasks);
    }
    return 0;
}
