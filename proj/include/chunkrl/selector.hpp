#pragma once

// The decision core: per-scale discount-normalized advantage scoring,
// within-scale z-score normalization, argmax selection, and the ablation
// selectors (raw Q, discount-corrected, random, fixed-k).

#include "chunkrl/core.hpp"
#include "chunkrl/critics.hpp"

#include <string>
#include <vector>

namespace chunkrl::selector {

struct ScoreMatrix {
    std::vector<int> scales;
    Mat raw;         // |K| x N
    Mat normalized;  // |K| x N (equal to raw when z-scoring is skipped)
    Vec mean;        // per scale
    Vec stddev;      // population std per scale
    double eps_z = 1e-6;
    bool zscored = false;
};

struct SelectionResult {
    int k_star = 1;
    int chunk_index = 0;
    core::ActionChunk chunk;  // k_star-prefix of the winning candidate
    ScoreMatrix scores;
};

// scores[k][i] = (Q^k(s, prefix_k(a_i)) - V^k(s)) / gamma^k, with the
// critic ensemble reduced by min. Candidates are full h-chunks.
ScoreMatrix advantage_scores(const critics::CriticBundle& bundle,
                             const critics::FeatureCodec& codec, const core::StateRepr& state,
                             const std::vector<core::ActionChunk>& candidates, double gamma);

// Per-scale z-scoring over the candidate axis (population std), global
// argmax over (k, i); ties break toward larger k, then lower i. With a
// single candidate z-scoring degenerates and raw advantages compare
// directly.
SelectionResult zscore_and_select(const ScoreMatrix& scores,
                                  const std::vector<core::ActionChunk>& candidates,
                                  bool zscore_enabled = true, double eps_z = 1e-6);

SelectionResult raw_q_select(const critics::CriticBundle& bundle,
                             const critics::FeatureCodec& codec, const core::StateRepr& state,
                             const std::vector<core::ActionChunk>& candidates);

SelectionResult discount_corrected_select(const critics::CriticBundle& bundle,
                                          const critics::FeatureCodec& codec,
                                          const core::StateRepr& state,
                                          const std::vector<core::ActionChunk>& candidates,
                                          double gamma);

SelectionResult random_select(const core::ScaleSet& scales,
                              const std::vector<core::ActionChunk>& candidates, Rng& rng);

// Best candidate at one fixed scale by its (min-ensemble) critic value.
SelectionResult fixed_k_select(const critics::CriticBundle& bundle,
                               const critics::FeatureCodec& codec, const core::StateRepr& state,
                               const std::vector<core::ActionChunk>& candidates, int k);

}  // namespace chunkrl::selector
