#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "snmm/errors.hpp"

namespace snmm {

// Partition of the unit set into equally sized clusters. Vector-valued blip
// models index cluster members by position, so member order is meaningful
// (file order of first appearance).
struct ClusterMap {
    std::vector<int> cluster_of;           // unit index -> cluster index
    std::vector<std::vector<int>> members; // cluster index -> ordered unit indices

    int cluster_count() const { return static_cast<int>(members.size()); }
    int cluster_size() const { return members.empty() ? 0 : static_cast<int>(members[0].size()); }
};

// Undirected simple graph over units, with optional per-edge weights and
// optional planar coordinates (km) for the spatial block bootstrap.
struct NetworkGraph {
    std::vector<std::vector<int>> adjacency;   // sorted neighbor lists, no self loops
    std::vector<std::vector<double>> weights;  // parallel to adjacency (1.0 default)
    std::optional<Eigen::MatrixX2d> coordinates;

    int unit_count() const { return static_cast<int>(adjacency.size()); }
    std::size_t edge_count() const;
};

struct ValidationIssue {
    ErrorCode code;
    std::string message;
    std::string location;  // "row 12, column exposure" or a unit/cluster id
};

struct ValidationReport {
    std::vector<ValidationIssue> errors;
    std::vector<ValidationIssue> warnings;

    bool accepted() const { return errors.empty(); }
    void add_error(ErrorCode code, std::string message, std::string location = "");
    void add_warning(ErrorCode code, std::string message, std::string location = "");
    // Throws Error with the first error's code if any error was recorded.
    void throw_if_failed() const;
    std::string to_string() const;
};

enum class ExposureAlphabet { Real, Integer, Binary };

enum class StructureKind { None, Cluster, Network };

// Balanced long-format panel: every unit observed at every time 0..tau.
// Outcomes are used at all times; exposures only at 0..tau-1.
struct PanelDataset {
    std::vector<std::string> unit_ids;      // dense index -> id, first-appearance order
    std::vector<std::string> time_labels;   // normalized index -> original label
    Eigen::MatrixXd exposure;               // n x (tau+1)
    Eigen::MatrixXd outcome;                // n x (tau+1)
    std::vector<Eigen::MatrixXd> covariates;  // per covariate: n x (tau+1)
    std::vector<std::string> covariate_names;
    ExposureAlphabet alphabet = ExposureAlphabet::Real;

    std::optional<ClusterMap> clusters;
    std::optional<NetworkGraph> graph;
    std::optional<Eigen::MatrixX2d> coordinates;  // unit-level planar coords (km)

    int unit_count() const { return static_cast<int>(unit_ids.size()); }
    int tau() const { return static_cast<int>(exposure.cols()) - 1; }
    int covariate_count() const { return static_cast<int>(covariates.size()); }
    StructureKind structure() const {
        if (clusters) return StructureKind::Cluster;
        if (graph) return StructureKind::Network;
        return StructureKind::None;
    }
    int unit_index(const std::string& id) const;
};

// Column-role declaration for load_panel. Covariate/coordinate columns are
// optional; coordinate columns, when both present, feed graph coordinates.
struct PanelSchema {
    std::string unit_column;
    std::string time_column;
    std::string exposure_column;
    std::string outcome_column;
    std::vector<std::string> covariate_columns;
    std::string cluster_column;  // empty = no clusters
    std::string x_column;        // e.g. "x_km"
    std::string y_column;        // e.g. "y_km"
    ExposureAlphabet alphabet = ExposureAlphabet::Real;
};

// Reads a delimited text panel (header row; comma or whitespace separated).
// Rows are sorted by (unit, time) internally; missing cells, unbalanced
// panels and non-numeric fields are hard errors.
PanelDataset load_panel(std::istream& in, const PanelSchema& schema);
PanelDataset load_panel_file(const std::string& path, const PanelSchema& schema);

// Canonical serialization; load_panel(serialize_panel(p)) == p on accepted input.
std::string serialize_panel(const PanelDataset& panel);

// Reads a whitespace-separated edge list "i j [weight]" over known unit ids.
// Duplicate edges collapse (last weight wins); self loops are rejected.
NetworkGraph load_graph(std::istream& in, const std::vector<std::string>& unit_ids);
NetworkGraph load_graph_file(const std::string& path, const std::vector<std::string>& unit_ids);

// Path graph 0-1-2-...-(n-1).
NetworkGraph line_graph(int n);

// Units at shortest-path distance exactly s from i; {i} for s == 0.
std::vector<int> graph_rings(const NetworkGraph& graph, int i, int s);

// All rings 0..max_s at once (one BFS); result[s] is the ring at distance s.
std::vector<std::vector<int>> graph_rings_up_to(const NetworkGraph& graph, int i, int max_s);

// Structural validation of an already-built dataset (invariant re-check).
ValidationReport validate_panel(const PanelDataset& panel);

}  // namespace snmm
