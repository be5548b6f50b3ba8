#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "snmm/exposure.hpp"

namespace snmm {

// One multiplicative atom of a blip term. Time references are either symbolic
// (m plus an offset, resolved per evaluation time) or absolute.
enum class FactorKind {
    OwnExposure,      // a[t]
    MappedComponent,  // h[t][r]
    Covariate,        // l[t][j]
    LagSumExposure,   // lagsum_a = sum of own exposure before time m
    TimeGap,          // k - m - 1
};

struct TimeRef {
    bool symbolic = true;
    int offset = 0;    // used when symbolic: resolves to m + offset
    int absolute = 0;  // used when not symbolic

    int resolve(int m) const { return symbolic ? m + offset : absolute; }
};

struct Factor {
    FactorKind kind = FactorKind::OwnExposure;
    TimeRef time;       // OwnExposure / MappedComponent / Covariate
    int component = 0;  // MappedComponent: h component; Covariate: covariate index
};

// A labeled product of factors. Terms sharing a label share one parameter;
// their feature contributions add.
struct BlipTerm {
    std::string label;
    int param = -1;
    std::vector<Factor> factors;
};

// Which (m, k, member) triples a block's terms apply to. Unset = match all.
struct BlockScope {
    std::optional<int> m, k, j;

    bool matches(int m_, int k_, int j_) const {
        return (!m || *m == m_) && (!k || *k == k_) && (!j || *j == j_);
    }
};

struct BlipBlock {
    BlockScope scope;
    std::vector<BlipTerm> terms;
};

// Linear-in-psi blip model gamma_{m,k}(histories; psi) = psi' f_{m,k}.
// By construction gamma = 0 whenever the time-m exposure is the zero element
// (every term carries a time-m exposure factor) and whenever psi = 0.
struct BlipModel {
    std::vector<BlipBlock> blocks;
    std::vector<std::string> param_labels;

    int param_count() const { return static_cast<int>(param_labels.size()); }
    int param_index(const std::string& label) const;  // -1 if absent
};

struct BlipParams {
    Eigen::VectorXd psi;
};

// Blipped-down outcomes H[m](i, k) = Y_k - sum_{j=m}^{k-1} gamma_{j,k};
// defined for k >= m (H[m](i, m) = Y_m), NaN below the diagonal.
struct BlippedOutcome {
    std::vector<Eigen::MatrixXd> H;  // tau+1 matrices, each n x (tau+1)

    double value(int i, int m, int k) const { return H[m](i, k); }
};

// Parses the blip term DSL. Shape:
//   scope { label: factor*factor; ... }  or bare statements (scope "all").
//   scope: "all" or comma-separated of m=INT, k=INT, j=INT.
//   factors: a[t], h[t][r], l[t][j], lagsum_a, timegap with t = m, m-c, m+c, or INT.
// Terms violating the zero constraint (no time-m exposure factor) or
// referencing future data are rejected.
BlipModel parse_blip_spec(const std::string& text);

// Canonical form; parse(print(model)) reproduces the model, and printing is a
// fixed point after one round trip.
std::string print_blip_spec(const BlipModel& model);

// Full validation against data dimensions: time references in range, h/l
// component indexes valid, scopes non-empty, zero constraint on every covered
// (m,k). members = rows per sampling unit (cluster size, or 1).
void validate_blip_model(const BlipModel& model, int tau, int p, int n_cov, int members);
void validate_blip_model(const BlipModel& model, const MappedPanel& mapped);

// Feature vector f_{m,k} (length = param_count) for one unit's history.
// member = the unit's position within its sampling unit.
Eigen::VectorXd blip_features(const BlipModel& model, int m, int k, const History& hist,
                              int member = 0);

// psi' f_{m,k}
double blip_value(const BlipModel& model, const Eigen::VectorXd& psi, int m, int k,
                  const History& hist, int member = 0);

// One value per cluster member; histories[j] is member j's history.
Eigen::VectorXd blip_value_cluster(const BlipModel& model, const Eigen::VectorXd& psi, int m,
                                   int k, const std::vector<History>& histories);

// Blip-down transform of every outcome: H[m][k] = Y_k - sum_{j=m}^{k-1} gamma_{j,k}.
BlippedOutcome blip_down(const BlipModel& model, const Eigen::VectorXd& psi,
                         const MappedPanel& mapped);

}  // namespace snmm
