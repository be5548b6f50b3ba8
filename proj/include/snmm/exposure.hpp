#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "snmm/panel.hpp"

namespace snmm {

enum class MappingKind {
    Direct,          // no spillover summary: D = (a), p = 0
    NeighborMax,     // h = max of neighbors' exposure, p = 1
    NeighborSum,     // h = sum of neighbors' exposure, p = 1
    WeightedSum,     // h = sum of edge_weight * neighbor exposure, p = 1
    IdentityCluster, // h = full cluster exposure vector, p = cluster size
    Custom,          // user-supplied pure function, p = custom_dimension
};

const char* mapping_kind_name(MappingKind kind);
MappingKind mapping_kind_from_name(const std::string& name);

// A custom summary receives (unit, time, all units' exposures at that time,
// dataset) and must be a pure function of its arguments.
using CustomMapping = std::function<Eigen::VectorXd(
    int unit, int time, const Eigen::VectorXd& exposures, const PanelDataset& panel)>;

struct MappingSpec {
    MappingKind kind = MappingKind::Direct;
    int custom_dimension = 0;
    CustomMapping custom;
    // Graph distance beyond which the mapped exposure cannot depend on another
    // unit's treatment; drives the default HAC bandwidth. -1 = derive from kind.
    int dependence_radius = -1;

    int resolved_dependence_radius() const;
};

// Panel with per-time mapped exposures D_{i,m} = (a_{i,m}, h_{i,m}) for
// m = 0..tau-1. The zero element of D is a = 0 and h = 0 componentwise.
struct MappedPanel {
    PanelDataset panel;
    MappingKind mapping_kind = MappingKind::Direct;
    int mapping_radius = 0;
    Eigen::MatrixXd a;               // n x tau, own (possibly recoded) exposure
    std::vector<Eigen::MatrixXd> h;  // p matrices, each n x tau
    std::vector<int> member_index;   // unit's position within its cluster (0 if none)
    std::vector<std::vector<int>> sampling_units;  // cluster member lists, or {i} each

    int unit_count() const { return static_cast<int>(a.rows()); }
    int tau() const { return static_cast<int>(a.cols()); }
    int p() const { return static_cast<int>(h.size()); }
    // Rows per sampling unit: cluster size in cluster mode, else 1.
    int rows_per_sampling_unit() const {
        return sampling_units.empty() ? 1 : static_cast<int>(sampling_units.front().size());
    }
    int sampling_unit_count() const { return static_cast<int>(sampling_units.size()); }
    bool is_zero(int i, int m) const {
        if (a(i, m) != 0.0) return false;
        for (const auto& comp : h)
            if (comp(i, m) != 0.0) return false;
        return true;
    }
};

// Exposure and covariate history of one unit through time m (columns 0..m).
struct History {
    Eigen::VectorXd a;  // length m+1
    Eigen::MatrixXd h;  // p x (m+1)
    Eigen::MatrixXd l;  // n_cov x (m+1)
};

// Computes D_{i,m} for all units and m in 0..tau-1. Deterministic.
MappedPanel apply_mapping(const PanelDataset& panel, const MappingSpec& spec);

// Recodes absorbing binary exposure paths to initiation indicators: the path
// keeps a single 1 at the adoption time. Accepts already-recoded paths
// unchanged (idempotent). Anything else is NotAbsorbing.
PanelDataset recode_absorbing(const PanelDataset& panel);

// Recodes exposure levels to per-period increments A_m - A_{m-1} (A_{-1} = 0)
// and appends the pre-change level A_{m-1} as a covariate.
PanelDataset recode_increments(const PanelDataset& panel);
extern const char* const kIncrementLevelCovariate;

// Full mapped-exposure and covariate history of unit i through time m.
History mapping_histories(const MappedPanel& mapped, int i, int m);

}  // namespace snmm
