#pragma once

// Core MDP/trajectory abstractions shared by every other module: states,
// action chunks, trajectories, chunked transitions, and scale sets.

#include "chunkrl/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace chunkrl::core {

enum class Tier { Discrete, Continuous };

// A state is either a discrete index (tabular tier) or a real vector
// (continuous tier). Exactly one representation is active.
struct StateRepr {
    Tier tier = Tier::Discrete;
    int index = 0;
    Vec vec;

    static StateRepr discrete(int idx) {
        StateRepr s;
        s.tier = Tier::Discrete;
        s.index = idx;
        return s;
    }
    static StateRepr continuous(Vec v) {
        StateRepr s;
        s.tier = Tier::Continuous;
        s.vec = std::move(v);
        return s;
    }
    bool finite() const {
        return tier == Tier::Discrete || vec.allFinite();
    }
};

// Ordered list of k actions. Discrete actions are indices; continuous
// actions are rows of `cont` (k x d_a).
struct ActionChunk {
    Tier tier = Tier::Discrete;
    std::vector<int> ids;  // discrete tier
    Mat cont;              // continuous tier, k x d_a

    int length() const {
        return tier == Tier::Discrete ? static_cast<int>(ids.size())
                                      : static_cast<int>(cont.rows());
    }
    // First-k prefix; the selector always scores exact prefixes of full
    // h-chunks.
    ActionChunk prefix(int k) const {
        require(k >= 1 && k <= length(), "ActionChunk::prefix: bad k");
        ActionChunk out;
        out.tier = tier;
        if (tier == Tier::Discrete) {
            out.ids.assign(ids.begin(), ids.begin() + k);
        } else {
            out.cont = cont.topRows(k);
        }
        return out;
    }
};

struct Trajectory {
    std::vector<StateRepr> states;  // s_0 .. s_T
    std::vector<int> action_ids;    // discrete tier, length T
    Mat actions_cont;               // continuous tier, T x d_a
    std::vector<double> rewards;    // length T
    bool terminal = false;          // true iff the episode ended at a goal
    Tier tier = Tier::Discrete;

    int length() const { return static_cast<int>(rewards.size()); }
    void check() const;
    ActionChunk chunk_at(int t, int k) const;  // actions a_t .. a_{t+k-1}
};

// The unit of all TD training: k actions from s_t, their discounted
// partial return, the bootstrap state s_{t+k}, and a terminal mask.
struct ChunkedTransition {
    StateRepr s;
    ActionChunk chunk;       // length k (padded when truncated at a terminal)
    double partial_return = 0.0;
    StateRepr s_next;
    double mask = 1.0;       // 0 iff the episode terminates within the chunk
    int real_len = 0;        // actions actually taken; < k only when padded
    int traj_index = 0;      // provenance, lets tests check episode bounds
    int start = 0;

    bool padded() const { return real_len < chunk.length(); }
};

// Sorted distinct candidate chunk sizes; the largest equals the critic
// horizon h. Construction rule: K = { k in K_univ : k <= h }.
struct ScaleSet {
    std::vector<int> scales;

    static ScaleSet from_universe(const std::vector<int>& k_univ, int h);
    static ScaleSet of(std::vector<int> ks);

    int horizon() const { return scales.back(); }
    int size() const { return static_cast<int>(scales.size()); }
    int k_min() const { return scales.front(); }
    bool contains(int k) const;
    auto begin() const { return scales.begin(); }
    auto end() const { return scales.end(); }
};

struct DatasetMeta {
    std::string env_name;
    std::string behavior;
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    DatasetMeta meta;

    bool empty() const { return trajectories.empty(); }
    std::size_t transition_count() const;
};

// Sum_{j} gamma^j r_j, accumulated left to right with a running gamma^j
// multiplier so the result is deterministic across platforms.
double discounted_partial_return(const std::vector<double>& rewards, double gamma);

struct ChunkExtraction {
    std::vector<ChunkedTransition> chunks;
    // Set when no episode admits a single full-length chunk (k longer than
    // every episode).
    bool short_episode_warning = false;
};

// One ChunkedTransition per valid start index (given stride). Chunks never
// cross episode boundaries. For an episode that ends in termination, tail
// windows are emitted truncated with mask 0, missing rewards treated as 0
// and the action slots padded by repeating the final action. Tail windows
// of horizon-capped (non-terminal) episodes are dropped: there is no valid
// bootstrap state for them.
ChunkExtraction extract_chunks(const Dataset& dataset, int k, double gamma, int stride = 1);

}  // namespace chunkrl::core
