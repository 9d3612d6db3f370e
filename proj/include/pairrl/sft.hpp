#pragma once
// Stage-1 supervised fine-tune: next-token cross entropy on scaffold
// exemplars, loss masked to the target tokens (prompt excluded), full
// parameter updates. The point of this stage is output structure, not task
// accuracy; the elevation to high accuracy belongs to stage 2.

#include <cstdint>
#include <string>
#include <vector>

#include "pairrl/policy.hpp"
#include "pairrl/scaffold.hpp"

namespace pairrl {

struct SftConfig {
    int epochs = 2;
    int batch_size = 16;
    double lr = 0.8;
    double momentum = 0.9;       // 0 disables
    double max_grad_norm = 1.0;  // 0 disables clipping
    uint64_t seed = 0;
    std::string checkpoint_path;  // empty = do not save

    void validate() const;
};

// One full-parameter ascent step on the batch objective
// mean_b (1/T_b) * sum_t log p(target_t | prompt, target_<t).
// Returns the batch mean per-token cross entropy at the pre-step parameters
// and the updated parameters. lr = 0 reports the loss and changes nothing.
// A non-finite loss rejects the step (NumericError).
std::pair<PolicyParams, double> sft_step(const PolicyParams& p,
                                         const std::vector<const ScaffoldExemplar*>& batch,
                                         double lr, OptState& opt);

// Mean per-token cross entropy of the dataset under fixed parameters.
double sft_dataset_loss(const PolicyParams& p, const std::vector<ScaffoldExemplar>& dataset);

struct SftStats {
    int step = 0;
    double loss = 0.0;
};

struct SftResult {
    PolicyParams params;
    std::vector<SftStats> curve;  // one entry per optimizer step
};

// Epoch loop with a deterministic per-epoch shuffle. Saves a checkpoint at
// the end when the config names a path.
SftResult train_sft(const PolicyParams& init, const std::vector<ScaffoldExemplar>& dataset,
                    const SftConfig& cfg);

}  // namespace pairrl
