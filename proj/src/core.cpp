#include "chunkrl/core.hpp"

#include <algorithm>
#include <cmath>

namespace chunkrl::core {

void Trajectory::check() const {
    const int T = length();
    require(static_cast<int>(states.size()) == T + 1,
            "Trajectory: |states| must equal |actions|+1");
    if (tier == Tier::Discrete) {
        require(static_cast<int>(action_ids.size()) == T, "Trajectory: action count mismatch");
    } else {
        require(static_cast<int>(actions_cont.rows()) == T, "Trajectory: action count mismatch");
        require(actions_cont.allFinite(), "Trajectory: non-finite action");
    }
    for (const auto& s : states) require(s.finite(), "Trajectory: non-finite state");
    for (double r : rewards) require(std::isfinite(r), "Trajectory: non-finite reward");
}

ActionChunk Trajectory::chunk_at(int t, int k) const {
    require(t >= 0 && t + k <= length(), "Trajectory::chunk_at: window out of range");
    ActionChunk c;
    c.tier = tier;
    if (tier == Tier::Discrete) {
        c.ids.assign(action_ids.begin() + t, action_ids.begin() + t + k);
    } else {
        c.cont = actions_cont.middleRows(t, k);
    }
    return c;
}

ScaleSet ScaleSet::from_universe(const std::vector<int>& k_univ, int h) {
    std::vector<int> ks;
    for (int k : k_univ)
        if (k <= h) ks.push_back(k);
    if (std::find(ks.begin(), ks.end(), h) == ks.end()) ks.push_back(h);
    return of(std::move(ks));
}

ScaleSet ScaleSet::of(std::vector<int> ks) {
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    require(!ks.empty(), "ScaleSet: empty");
    require(ks.front() >= 1, "ScaleSet: scales must be positive");
    ScaleSet s;
    s.scales = std::move(ks);
    return s;
}

bool ScaleSet::contains(int k) const {
    return std::binary_search(scales.begin(), scales.end(), k);
}

std::size_t Dataset::transition_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += static_cast<std::size_t>(t.length());
    return n;
}

double discounted_partial_return(const std::vector<double>& rewards, double gamma) {
    require(!rewards.empty(), "discounted_partial_return: empty rewards");
    double sum = 0.0;
    double g = 1.0;
    for (double r : rewards) {
        require(!std::isnan(r), "discounted_partial_return: NaN reward");
        sum += g * r;
        g *= gamma;
    }
    return sum;
}

ChunkExtraction extract_chunks(const Dataset& dataset, int k, double gamma, int stride) {
    require(k >= 1, "extract_chunks: k must be >= 1");
    require(gamma > 0.0 && gamma < 1.0, "extract_chunks: gamma must be in (0,1)");
    require(stride >= 1, "extract_chunks: stride must be >= 1");

    ChunkExtraction out;
    bool any_full = false;

    for (int ti = 0; ti < static_cast<int>(dataset.trajectories.size()); ++ti) {
        const Trajectory& traj = dataset.trajectories[ti];
        const int T = traj.length();
        if (T >= k) any_full = true;

        for (int t = 0; t < T; t += stride) {
            const bool full = (t + k <= T);
            if (!full && !traj.terminal) continue;  // no bootstrap state exists

            const int real_len = full ? k : (T - t);
            ChunkedTransition ct;
            ct.traj_index = ti;
            ct.start = t;
            ct.s = traj.states[t];
            ct.real_len = real_len;
            ct.s_next = traj.states[t + real_len];

            std::vector<double> rs(traj.rewards.begin() + t,
                                   traj.rewards.begin() + t + real_len);
            ct.partial_return = discounted_partial_return(rs, gamma);

            // Bootstrap is zeroed when the episode terminates at or before
            // the chunk end.
            ct.mask = (traj.terminal && t + k >= T) ? 0.0 : 1.0;

            ct.chunk = traj.chunk_at(t, real_len);
            if (real_len < k) {
                // Pad by repeating the final action; padded rows are only
                // ever used as critic inputs with mask 0.
                if (traj.tier == Tier::Discrete) {
                    ct.chunk.ids.resize(k, ct.chunk.ids.back());
                } else {
                    Mat padded(k, ct.chunk.cont.cols());
                    padded.topRows(real_len) = ct.chunk.cont;
                    for (int r = real_len; r < k; ++r)
                        padded.row(r) = ct.chunk.cont.row(real_len - 1);
                    ct.chunk.cont = std::move(padded);
                }
            }
            out.chunks.push_back(std::move(ct));
        }
    }

    out.short_episode_warning = !dataset.empty() && !any_full;
    return out;
}

}  // namespace chunkrl::core
