#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mergelock/checkpoint.hpp"
#include "mergelock/errors.hpp"

namespace mergelock {

inline Checkpoint weight_average(const std::vector<Checkpoint>& models) {
    if (models.empty()) throw ParameterError("weight_average: need at least one model");
    for (const Checkpoint& m : models) models.front().require_same_schema(m);
    Checkpoint out = models.front();
    const double inv_n = 1.0 / static_cast<double>(models.size());
    for (auto& [name, m] : out.tensors) {
        for (std::size_t k = 0; k < m.size(); ++k) {
            double sum = 0.0;
            for (const Checkpoint& c : models) sum += c.at(name).storage()[k];
            m.storage()[k] = sum * inv_n;
        }
    }
    return out;
}

// theta_pre + lambda * sum of task vectors.
inline Checkpoint task_arithmetic(const Checkpoint& pre, const std::vector<Checkpoint>& fts,
                                  double lambda) {
    if (!std::isfinite(lambda)) throw ParameterError("task_arithmetic: lambda must be finite");
    std::vector<TaskVector> taus;
    taus.reserve(fts.size());
    for (const Checkpoint& ft : fts) taus.push_back(task_vector(ft, pre));
    return apply_task_vectors(pre, taus, lambda);
}

// Trim-elect-merge. Per task vector the top trim_fraction of entries by
// magnitude survive, counted globally over the whole vector; per coordinate
// the sign with the larger trimmed mass wins (ties go positive) and the
// surviving agreeing entries are averaged.
inline Checkpoint ties_merge(const Checkpoint& pre, const std::vector<Checkpoint>& fts,
                             double trim_fraction, double lambda) {
    if (!(trim_fraction > 0.0 && trim_fraction <= 1.0))
        throw ParameterError("ties_merge: trim fraction must be in (0, 1]");
    if (!std::isfinite(lambda)) throw ParameterError("ties_merge: lambda must be finite");
    if (fts.empty()) throw ParameterError("ties_merge: need at least one fine-tuned model");

    std::vector<TaskVector> taus;
    taus.reserve(fts.size());
    for (const Checkpoint& ft : fts) taus.push_back(task_vector(ft, pre));

    std::size_t total = 0;
    for (const auto& [name, m] : taus.front().deltas) total += m.size();
    const std::size_t keep = std::min(
        total, static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(total) -
                                                  1e-9)));

    // Zero everything below the per-task magnitude cutoff. Ties at the
    // cutoff break toward the lower flat index (map order, row-major).
    for (TaskVector& tau : taus) {
        if (keep == total) continue;
        std::vector<double> magnitudes;
        magnitudes.reserve(total);
        for (const auto& [name, m] : tau.deltas)
            for (double v : m.storage()) magnitudes.push_back(std::abs(v));
        std::vector<std::size_t> order(total);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return magnitudes[x] > magnitudes[y];
        });
        std::vector<char> keep_flag(total, 0);
        for (std::size_t r = 0; r < keep; ++r) keep_flag[order[r]] = 1;

        std::size_t flat = 0;
        for (auto& [name, m] : tau.deltas)
            for (double& v : m.storage())
                if (!keep_flag[flat++]) v = 0.0;
    }

    Checkpoint out = pre;
    for (auto& [name, m] : out.tensors) {
        for (std::size_t k = 0; k < m.size(); ++k) {
            double sum = 0.0;
            for (const TaskVector& tau : taus) sum += tau.deltas.at(name).storage()[k];
            const bool positive = sum >= 0.0;  // zero-sum tie elects positive
            double agree_sum = 0.0;
            std::size_t agree_count = 0;
            for (const TaskVector& tau : taus) {
                const double v = tau.deltas.at(name).storage()[k];
                if ((positive && v > 0.0) || (!positive && v < 0.0)) {
                    agree_sum += v;
                    ++agree_count;
                }
            }
            const double merged = agree_count ? agree_sum / static_cast<double>(agree_count) : 0.0;
            m.storage()[k] += lambda * merged;
        }
    }
    return out;
}

}  // namespace mergelock
