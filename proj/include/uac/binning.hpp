#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/jsonl.hpp"
#include "uac/random.hpp"
#include "uac/uncertainty.hpp"

namespace uac {

/// Discrete uncertainty label in [1, K].
struct UncertaintyScore {
    int score = 1;
    int k = 10;

    bool operator==(const UncertaintyScore&) const = default;
};

/// Equal-frequency (quantile) partition of the training uncertainty
/// distribution. Interior boundary i (1-based) sits at the empirical
/// quantile of rank i/K, with linear interpolation between order statistics.
/// Mapping counts boundaries strictly below the query, so ties fall to the
/// lower score and out-of-range queries clamp to 1 or K.
struct BinMap {
    EstimatorKind estimator = EstimatorKind::LogSum;
    int k = 10;
    std::vector<double> boundaries;  // size k-1, non-decreasing
    std::size_t fit_count = 0;
    std::string fit_digest;

    void validate() const {
        if (k < 2) throw ValidationError("binmap: k must be >= 2");
        if (boundaries.size() != static_cast<std::size_t>(k - 1))
            throw ValidationError("binmap: expected " + std::to_string(k - 1) +
                                  " boundaries, got " + std::to_string(boundaries.size()));
        for (std::size_t i = 0; i < boundaries.size(); ++i) {
            if (!std::isfinite(boundaries[i]))
                throw ValidationError("binmap: non-finite boundary");
            if (i > 0 && boundaries[i] < boundaries[i - 1])
                throw ValidationError("binmap: boundaries out of order");
        }
        if (fit_count < 1) throw ValidationError("binmap: fit_count must be >= 1");
        if (fit_digest.size() != 16 ||
            fit_digest.find_first_not_of("0123456789abcdef") != std::string::npos)
            throw ValidationError("binmap: corrupt fit_digest");
    }
};

inline BinMap fit_bins(std::vector<double> values, int k,
                       EstimatorKind estimator = EstimatorKind::LogSum) {
    if (values.empty()) throw ValidationError("fit_bins: empty value list");
    if (k < 2) throw ValidationError("fit_bins: k must be >= 2");
    for (const double v : values) {
        if (!std::isfinite(v)) throw ValidationError("fit_bins: non-finite value");
    }
    BinMap bins;
    bins.estimator = estimator;
    bins.k = k;
    bins.fit_count = values.size();
    bins.fit_digest = rng::to_hex(rng::fnv1a64(values.data(), values.size()));

    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    bins.boundaries.reserve(static_cast<std::size_t>(k - 1));
    for (int i = 1; i < k; ++i) {
        const double pos = static_cast<double>(i) / k * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        double b = values[lo];
        if (lo + 1 < n) b += (pos - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
        // Interpolation rounding must not break monotonicity.
        if (!bins.boundaries.empty()) b = std::max(b, bins.boundaries.back());
        bins.boundaries.push_back(b);
    }
    return bins;
}

inline UncertaintyScore map_score(const BinMap& bins, double value) {
    if (!std::isfinite(value)) throw ValidationError("map_score: non-finite value");
    const auto below = std::lower_bound(bins.boundaries.begin(), bins.boundaries.end(), value) -
                       bins.boundaries.begin();
    const int score = std::clamp(1 + static_cast<int>(below), 1, bins.k);
    return UncertaintyScore{score, bins.k};
}

// --- single-document JSON persistence ----------------------------------------

inline json binmap_to_json(const BinMap& bins) {
    return json{{"estimator", to_string(bins.estimator)},
                {"k", bins.k},
                {"boundaries", bins.boundaries},
                {"fit_count", bins.fit_count},
                {"fit_digest", bins.fit_digest}};
}

inline BinMap binmap_from_json(const json& j) {
    BinMap bins;
    try {
        bins.estimator = estimator_from_string(j.at("estimator").get<std::string>());
        bins.k = j.at("k").get<int>();
        bins.boundaries = j.at("boundaries").get<std::vector<double>>();
        bins.fit_count = j.at("fit_count").get<std::size_t>();
        bins.fit_digest = j.at("fit_digest").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError("binmap: " + std::string(e.what()));
    }
    bins.validate();
    return bins;
}

inline void save_binmap(const BinMap& bins, const std::filesystem::path& path) {
    bins.validate();
    io::atomic_write(path, binmap_to_json(bins).dump(2) + "\n");
}

inline BinMap load_binmap(const std::filesystem::path& path) {
    return binmap_from_json(io::parse_json_file(path));
}

} // namespace uac
