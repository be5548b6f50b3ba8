#include "snmm/exposure.hpp"

#include <algorithm>
#include <cmath>

namespace snmm {

const char* const kIncrementLevelCovariate = "exposure_prev_level";

const char* mapping_kind_name(MappingKind kind) {
    switch (kind) {
        case MappingKind::Direct: return "direct";
        case MappingKind::NeighborMax: return "neighbor_max";
        case MappingKind::NeighborSum: return "neighbor_sum";
        case MappingKind::WeightedSum: return "weighted_sum";
        case MappingKind::IdentityCluster: return "identity_cluster";
        case MappingKind::Custom: return "custom";
    }
    return "unknown";
}

MappingKind mapping_kind_from_name(const std::string& name) {
    if (name == "direct") return MappingKind::Direct;
    if (name == "neighbor_max") return MappingKind::NeighborMax;
    if (name == "neighbor_sum") return MappingKind::NeighborSum;
    if (name == "weighted_sum") return MappingKind::WeightedSum;
    if (name == "identity_cluster") return MappingKind::IdentityCluster;
    if (name == "custom") return MappingKind::Custom;
    throw Error(ErrorCode::ConfigError, "unknown mapping kind '" + name + "'");
}

int MappingSpec::resolved_dependence_radius() const {
    if (dependence_radius >= 0) return dependence_radius;
    switch (kind) {
        case MappingKind::Direct: return 0;
        case MappingKind::IdentityCluster: return 0;  // dependence stays inside the cluster
        case MappingKind::NeighborMax:
        case MappingKind::NeighborSum:
        case MappingKind::WeightedSum:
        case MappingKind::Custom: return 1;
    }
    return 1;
}

MappedPanel apply_mapping(const PanelDataset& panel, const MappingSpec& spec) {
    const int n = panel.unit_count();
    const int tau = panel.tau();

    const bool needs_graph = spec.kind == MappingKind::NeighborMax ||
                             spec.kind == MappingKind::NeighborSum ||
                             spec.kind == MappingKind::WeightedSum;
    if (needs_graph && !panel.graph)
        throw Error(ErrorCode::StructureMissing,
                    std::string("mapping '") + mapping_kind_name(spec.kind) +
                        "' requires a network graph");
    if (spec.kind == MappingKind::IdentityCluster && !panel.clusters)
        throw Error(ErrorCode::StructureMissing,
                    "mapping 'identity_cluster' requires a cluster map");
    if (spec.kind == MappingKind::Custom) {
        if (!spec.custom)
            throw Error(ErrorCode::ConfigError, "custom mapping kind needs a summary function");
        if (spec.custom_dimension < 0)
            throw Error(ErrorCode::ConfigError, "custom mapping dimension must be >= 0");
    }

    int p = 0;
    switch (spec.kind) {
        case MappingKind::Direct: p = 0; break;
        case MappingKind::NeighborMax:
        case MappingKind::NeighborSum:
        case MappingKind::WeightedSum: p = 1; break;
        case MappingKind::IdentityCluster: p = panel.clusters->cluster_size(); break;
        case MappingKind::Custom: p = spec.custom_dimension; break;
    }

    MappedPanel mapped;
    mapped.panel = panel;
    mapped.mapping_kind = spec.kind;
    mapped.mapping_radius = spec.resolved_dependence_radius();
    mapped.a = panel.exposure.leftCols(tau);
    mapped.h.assign(p, Eigen::MatrixXd::Zero(n, tau));

    for (int m = 0; m < tau; ++m) {
        const Eigen::VectorXd exposures = panel.exposure.col(m);
        switch (spec.kind) {
            case MappingKind::Direct:
                break;
            case MappingKind::NeighborMax:
                for (int i = 0; i < n; ++i) {
                    double best = 0.0;
                    for (int j : panel.graph->adjacency[i]) best = std::max(best, exposures[j]);
                    mapped.h[0](i, m) = best;
                }
                break;
            case MappingKind::NeighborSum:
                for (int i = 0; i < n; ++i) {
                    double total = 0.0;
                    for (int j : panel.graph->adjacency[i]) total += exposures[j];
                    mapped.h[0](i, m) = total;
                }
                break;
            case MappingKind::WeightedSum:
                for (int i = 0; i < n; ++i) {
                    double total = 0.0;
                    const auto& nbrs = panel.graph->adjacency[i];
                    const auto& wts = panel.graph->weights[i];
                    for (std::size_t k = 0; k < nbrs.size(); ++k)
                        total += wts[k] * exposures[nbrs[k]];
                    mapped.h[0](i, m) = total;
                }
                break;
            case MappingKind::IdentityCluster:
                for (int i = 0; i < n; ++i) {
                    const auto& members = panel.clusters->members[panel.clusters->cluster_of[i]];
                    for (int r = 0; r < p; ++r) mapped.h[r](i, m) = exposures[members[r]];
                }
                break;
            case MappingKind::Custom:
                for (int i = 0; i < n; ++i) {
                    const Eigen::VectorXd value = spec.custom(i, m, exposures, panel);
                    if (value.size() != p)
                        throw Error(ErrorCode::InvalidSize,
                                    "custom mapping returned " + std::to_string(value.size()) +
                                        " components, declared " + std::to_string(p));
                    for (int r = 0; r < p; ++r) mapped.h[r](i, m) = value[r];
                }
                break;
        }
    }

    mapped.member_index.assign(n, 0);
    if (panel.clusters) {
        const auto& cm = *panel.clusters;
        mapped.sampling_units = cm.members;
        for (int c = 0; c < cm.cluster_count(); ++c)
            for (std::size_t r = 0; r < cm.members[c].size(); ++r)
                mapped.member_index[cm.members[c][r]] = static_cast<int>(r);
    } else {
        mapped.sampling_units.resize(n);
        for (int i = 0; i < n; ++i) mapped.sampling_units[i] = {i};
    }
    return mapped;
}

PanelDataset recode_absorbing(const PanelDataset& panel) {
    PanelDataset out = panel;
    const int n = panel.unit_count();
    const int T = panel.tau() + 1;
    for (int i = 0; i < n; ++i) {
        int first_one = -1;
        for (int t = 0; t < T; ++t) {
            const double v = panel.exposure(i, t);
            if (v != 0.0 && v != 1.0)
                throw Error(ErrorCode::NotAbsorbing,
                            "unit '" + panel.unit_ids[i] + "' has non-binary exposure at time " +
                                panel.time_labels[t]);
            if (v == 1.0 && first_one < 0) first_one = t;
        }
        if (first_one < 0) continue;  // never treated
        bool raw_absorbing = true;    // 0..0 1..1
        bool already_recoded = true;  // 0..0 1 0..0
        for (int t = first_one; t < T; ++t) {
            if (panel.exposure(i, t) != 1.0) raw_absorbing = false;
            if (t > first_one && panel.exposure(i, t) != 0.0) already_recoded = false;
        }
        if (!raw_absorbing && !already_recoded)
            throw Error(ErrorCode::NotAbsorbing,
                        "unit '" + panel.unit_ids[i] +
                            "' exposure path is neither absorbing nor an initiation indicator");
        for (int t = 0; t < T; ++t) out.exposure(i, t) = (t == first_one) ? 1.0 : 0.0;
    }
    out.alphabet = ExposureAlphabet::Binary;
    return out;
}

PanelDataset recode_increments(const PanelDataset& panel) {
    for (const auto& name : panel.covariate_names)
        if (name == kIncrementLevelCovariate)
            throw Error(ErrorCode::ConfigError,
                        std::string("covariate name '") + kIncrementLevelCovariate +
                            "' already taken; increment recode would collide");
    PanelDataset out = panel;
    const int n = panel.unit_count();
    const int T = panel.tau() + 1;
    Eigen::MatrixXd levels(n, T);
    for (int t = 0; t < T; ++t) {
        if (t == 0)
            levels.col(t).setZero();
        else
            levels.col(t) = panel.exposure.col(t - 1);
        out.exposure.col(t) = panel.exposure.col(t) - levels.col(t);
    }
    out.covariates.push_back(std::move(levels));
    out.covariate_names.push_back(kIncrementLevelCovariate);
    out.alphabet = ExposureAlphabet::Real;
    return out;
}

History mapping_histories(const MappedPanel& mapped, int i, int m) {
    if (i < 0 || i >= mapped.unit_count())
        throw Error(ErrorCode::IndexError,
                    "unit index " + std::to_string(i) + " outside range [0, " +
                        std::to_string(mapped.unit_count()) + ")");
    if (m < 0 || m >= mapped.tau())
        throw Error(ErrorCode::IndexError,
                    "history time " + std::to_string(m) + " outside range [0, " +
                        std::to_string(mapped.tau()) + ")");
    History hist;
    hist.a = mapped.a.row(i).head(m + 1).transpose();
    hist.h.resize(mapped.p(), m + 1);
    for (int r = 0; r < mapped.p(); ++r) hist.h.row(r) = mapped.h[r].row(i).head(m + 1);
    const int n_cov = mapped.panel.covariate_count();
    hist.l.resize(n_cov, m + 1);
    for (int j = 0; j < n_cov; ++j) hist.l.row(j) = mapped.panel.covariates[j].row(i).head(m + 1);
    return hist;
}

}  // namespace snmm
