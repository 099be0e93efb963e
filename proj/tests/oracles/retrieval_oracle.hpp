#pragma once

// Brute-force nearest neighbours. Scores every entry with its own metric
// code and sorts the full list; no partial sort, no cached norms.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace tpulse::oracle {

struct OracleHit {
    std::string id;
    double score;
};

inline double oracle_score(const std::vector<double>& q, const std::vector<double>& v, const std::string& metric) {
    double dot = 0, qq = 0, vv = 0, dist = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        dot += q[i] * v[i];
        qq += q[i] * q[i];
        vv += v[i] * v[i];
        dist += (q[i] - v[i]) * (q[i] - v[i]);
    }
    if (metric == "dot") return dot;
    if (metric == "euclidean") return std::sqrt(dist);
    return (qq == 0 || vv == 0) ? 0.0 : dot / std::sqrt(qq * vv);
}

inline std::vector<OracleHit> brute_force_top_k(const std::vector<std::pair<std::string, std::vector<double>>>& entries,
                                                const std::vector<double>& q, const std::string& metric,
                                                std::size_t k) {
    std::vector<OracleHit> all;
    for (const auto& [id, v] : entries) all.push_back({id, oracle_score(q, v, metric)});
    std::stable_sort(all.begin(), all.end(), [&](const OracleHit& a, const OracleHit& b) {
        if (a.score != b.score) return metric == "euclidean" ? a.score < b.score : a.score > b.score;
        return a.id < b.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace tpulse::oracle
