#include "chunkrl/selector.hpp"

#include <cmath>

namespace chunkrl::selector {

namespace {

// Q^k values for every candidate prefix at one state, min over ensemble.
Mat q_matrix(const critics::CriticBundle& bundle, const critics::FeatureCodec& codec,
             const core::StateRepr& state, const std::vector<core::ActionChunk>& candidates) {
    const int nk = bundle.scales.size();
    const int n = static_cast<int>(candidates.size());
    require(n >= 1, "selector: no candidates");

    Mat q(nk, n);
    std::vector<core::StateRepr> states(n, state);
    for (int ki = 0; ki < nk; ++ki) {
        const int k = bundle.scales.scales[ki];
        std::vector<core::ActionChunk> prefixes;
        prefixes.reserve(n);
        std::vector<const core::ActionChunk*> ptrs;
        ptrs.reserve(n);
        for (const auto& c : candidates) {
            require(c.length() == bundle.scales.horizon(), "selector: candidate length != h");
            prefixes.push_back(c.prefix(k));
        }
        for (const auto& p : prefixes) ptrs.push_back(&p);
        const critics::Batch in = codec.q_input(states, ptrs, k);
        q.row(ki) = bundle.q_at(k).min_value(in).transpose();
    }
    return q;
}

SelectionResult pick_argmax(const Mat& scores_for_argmax, const ScoreMatrix& scores,
                            const std::vector<core::ActionChunk>& candidates,
                            const std::vector<int>& scales) {
    // Visit scales from largest to smallest with strict improvement so that
    // exact ties resolve toward larger k, then lower i.
    int best_ki = -1, best_i = -1;
    double best = 0.0;
    for (int ki = static_cast<int>(scales.size()) - 1; ki >= 0; --ki) {
        for (int i = 0; i < scores_for_argmax.cols(); ++i) {
            const double v = scores_for_argmax(ki, i);
            if (best_ki < 0 || v > best) {
                best = v;
                best_ki = ki;
                best_i = i;
            }
        }
    }
    SelectionResult res;
    res.k_star = scales[best_ki];
    res.chunk_index = best_i;
    res.chunk = candidates[best_i].prefix(res.k_star);
    res.scores = scores;
    return res;
}

}  // namespace

ScoreMatrix advantage_scores(const critics::CriticBundle& bundle,
                             const critics::FeatureCodec& codec, const core::StateRepr& state,
                             const std::vector<core::ActionChunk>& candidates, double gamma) {
    require(gamma > 0.0 && gamma < 1.0, "advantage_scores: gamma must be in (0,1)");
    ScoreMatrix m;
    m.scales = bundle.scales.scales;
    m.raw = q_matrix(bundle, codec, state, candidates);

    const critics::Batch v_in = codec.v_input({state});
    for (int ki = 0; ki < static_cast<int>(m.scales.size()); ++ki) {
        const int k = m.scales[ki];
        const double v = bundle.v_at(k).value(v_in)(0);
        m.raw.row(ki) = (m.raw.row(ki).array() - v) / std::pow(gamma, k);
    }
    m.normalized = m.raw;
    return m;
}

SelectionResult zscore_and_select(const ScoreMatrix& scores,
                                  const std::vector<core::ActionChunk>& candidates,
                                  bool zscore_enabled, double eps_z) {
    ScoreMatrix m = scores;
    m.eps_z = eps_z;
    const int nk = static_cast<int>(m.scales.size());
    const int n = static_cast<int>(m.raw.cols());
    m.mean = Vec::Zero(nk);
    m.stddev = Vec::Zero(nk);

    if (zscore_enabled && n >= 2) {
        for (int ki = 0; ki < nk; ++ki) {
            const double mu = m.raw.row(ki).mean();
            const double var = (m.raw.row(ki).array() - mu).square().mean();
            m.mean(ki) = mu;
            m.stddev(ki) = std::sqrt(var);
            m.normalized.row(ki) = (m.raw.row(ki).array() - mu) / (m.stddev(ki) + eps_z);
        }
        m.zscored = true;
    } else {
        // Degenerate candidate count: compare raw advantages directly.
        m.normalized = m.raw;
        m.zscored = false;
    }
    return pick_argmax(m.normalized, m, candidates, m.scales);
}

SelectionResult raw_q_select(const critics::CriticBundle& bundle,
                             const critics::FeatureCodec& codec, const core::StateRepr& state,
                             const std::vector<core::ActionChunk>& candidates) {
    ScoreMatrix m;
    m.scales = bundle.scales.scales;
    m.raw = q_matrix(bundle, codec, state, candidates);
    m.normalized = m.raw;
    return pick_argmax(m.raw, m, candidates, m.scales);
}

SelectionResult discount_corrected_select(const critics::CriticBundle& bundle,
                                          const critics::FeatureCodec& codec,
                                          const core::StateRepr& state,
                                          const std::vector<core::ActionChunk>& candidates,
                                          double gamma) {
    ScoreMatrix m;
    m.scales = bundle.scales.scales;
    m.raw = q_matrix(bundle, codec, state, candidates);
    for (int ki = 0; ki < static_cast<int>(m.scales.size()); ++ki)
        m.raw.row(ki) /= std::pow(gamma, m.scales[ki]);
    m.normalized = m.raw;
    return pick_argmax(m.raw, m, candidates, m.scales);
}

SelectionResult random_select(const core::ScaleSet& scales,
                              const std::vector<core::ActionChunk>& candidates, Rng& rng) {
    require(!candidates.empty(), "random_select: no candidates");
    SelectionResult res;
    const int ki = uniform_int(rng, scales.size());
    res.k_star = scales.scales[ki];
    res.chunk_index = uniform_int(rng, static_cast<int>(candidates.size()));
    res.chunk = candidates[res.chunk_index].prefix(res.k_star);
    res.scores.scales = scales.scales;
    return res;
}

SelectionResult fixed_k_select(const critics::CriticBundle& bundle,
                               const critics::FeatureCodec& codec, const core::StateRepr& state,
                               const std::vector<core::ActionChunk>& candidates, int k) {
    require(bundle.scales.contains(k), "fixed_k_select: scale not in the scale set");
    const int n = static_cast<int>(candidates.size());
    std::vector<core::StateRepr> states(n, state);
    std::vector<core::ActionChunk> prefixes;
    prefixes.reserve(n);
    for (const auto& c : candidates) prefixes.push_back(c.prefix(k));
    std::vector<const core::ActionChunk*> ptrs;
    ptrs.reserve(n);
    for (const auto& p : prefixes) ptrs.push_back(&p);

    const Vec q = bundle.q_at(k).min_value(codec.q_input(states, ptrs, k));
    int best = 0;
    q.maxCoeff(&best);

    SelectionResult res;
    res.k_star = k;
    res.chunk_index = best;
    res.chunk = candidates[best].prefix(k);
    res.scores.scales = bundle.scales.scales;
    return res;
}

}  // namespace chunkrl::selector
