#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "snmm/blip.hpp"

namespace snmm {

enum class NuisanceStrategy { SaturatedCells, LinearRegression };

const char* nuisance_strategy_name(NuisanceStrategy s);
NuisanceStrategy nuisance_strategy_from_name(const std::string& name);

// Estimating-function index set s_m(k, histories). The default is the blip
// feature map itself (one equation per parameter, square system). Extra
// user components make the system over-identified (solved by least squares).
struct SFunctionSet {
    int extra_dim = 0;
    std::function<Eigen::VectorXd(int m, int k, const History& hist, int member)> extra;

    int total_dim(int param_count) const { return param_count + extra_dim; }
};

SFunctionSet default_s_functions(const BlipModel& model);

struct EstimatorConfig {
    NuisanceStrategy treatment_strategy = NuisanceStrategy::SaturatedCells;
    NuisanceStrategy trend_strategy = NuisanceStrategy::SaturatedCells;
    // Deliberate nuisance corruption knobs for double-robustness checks:
    // each adds a constant to every fitted value of that nuisance.
    double corrupt_trend_offset = 0.0;
    double corrupt_treatment_offset = 0.0;
};

// Fitted E[s_m(k, .) | exposure history through m-1, covariates through m],
// broadcast to one prediction row per unit.
struct TreatmentModel {
    NuisanceStrategy strategy = NuisanceStrategy::SaturatedCells;
    std::vector<Eigen::MatrixXd> pred_s;  // per (m,k) pair: n x Q
};

// Fitted trend v_m(k, .) in exact affine-in-psi form:
// v_i(psi) = constant[pair][i] - linear[pair].row(i) . psi.
struct TrendModel {
    NuisanceStrategy strategy = NuisanceStrategy::SaturatedCells;
    std::vector<Eigen::VectorXd> constant;  // per pair: n
    std::vector<Eigen::MatrixXd> linear;    // per pair: n x P
};

struct StratumOccupancy {
    int m = 0;
    int stratum = 0;
    double weight = 0.0;          // sampling units (resample multiplicity aware)
    bool has_zero_exposure = false;
};

struct EstimationResult {
    Eigen::VectorXd psi_hat;
    std::vector<std::string> param_labels;
    Eigen::MatrixXd scores;      // sampling units x Q, g_i at psi_hat
    Eigen::MatrixXd jacobian;    // Q x P: d(mean score)/d psi'
    Eigen::MatrixXd a_matrix;    // mean score(psi) = a_matrix psi - b_vector
    Eigen::VectorXd b_vector;
    double score_residual = 0.0;
    int sampling_unit_count = 0;
    ValidationReport diagnostics;
    std::vector<StratumOccupancy> occupancy;
};

// Precomputed per-(m,k) ingredients of the estimating equations. Immutable
// after construction; refits (e.g. bootstrap resamples expressed as
// per-sampling-unit multiplicities) share it.
class FitContext {
  public:
    FitContext(const MappedPanel& mapped, const BlipModel& model,
               SFunctionSet sset = SFunctionSet{});

    const MappedPanel& mapped() const { return *mapped_; }
    const BlipModel& model() const { return *model_; }
    int param_count() const { return P_; }
    int score_dim() const { return Q_; }

    int pair_count() const { return static_cast<int>(pairs_.size()); }
    int pair_m(int pair) const { return pairs_[pair].first; }
    int pair_k(int pair) const { return pairs_[pair].second; }
    int pair_index(int m, int k) const;

    // s-features per unit row (first param_count columns = blip features)
    const Eigen::MatrixXd& features(int pair) const { return F_[pair]; }
    // coefficient of psi in H_{m,k} - H_{m,k-1} = outcome_diff - coeffs . psi
    const Eigen::MatrixXd& blip_coeffs(int pair) const { return W_[pair]; }
    const Eigen::VectorXd& outcome_diff(int pair) const { return dy_[pair]; }
    // blip feature matrix of pair (m,k): n x P
    Eigen::Ref<const Eigen::MatrixXd> blip_features_of(int pair) const {
        return F_[pair].leftCols(P_);
    }

    int stratum_count(int m) const { return stratum_count_[m]; }
    int stratum_of(int m, int sampling_unit) const { return stratum_of_[m][sampling_unit]; }

    TreatmentModel fit_treatment(NuisanceStrategy strategy,
                                 const Eigen::VectorXd* weights = nullptr) const;
    TrendModel fit_trend(NuisanceStrategy strategy,
                         const Eigen::VectorXd* weights = nullptr) const;

    // Mean-score affine system: mean g(psi) = A psi - b given fitted nuisances.
    void assemble_affine(const TreatmentModel& treatment, const TrendModel& trend,
                         const EstimatorConfig& config, const Eigen::VectorXd* weights,
                         Eigen::MatrixXd& A, Eigen::VectorXd& b) const;

    // Full pipeline: fit nuisances, assemble, solve, collect diagnostics.
    // weights = per-sampling-unit multiplicities (bootstrap); null = all ones.
    EstimationResult fit(const EstimatorConfig& config = EstimatorConfig{},
                         const Eigen::VectorXd* weights = nullptr,
                         bool want_scores = true) const;

  private:
    void build_pairs();
    void build_feature_blocks();
    void build_strata();
    void positivity_and_occupancy(const EstimatorConfig& config, const Eigen::VectorXd& weights,
                                  EstimationResult& result) const;

    const MappedPanel* mapped_;
    const BlipModel* model_;
    SFunctionSet sset_;
    int P_ = 0, Q_ = 0, tau_ = 0, R_ = 1;
    std::vector<std::pair<int, int>> pairs_;
    std::vector<std::vector<int>> pair_lookup_;  // [m][k] -> pair index or -1
    std::vector<Eigen::MatrixXd> F_;             // n x Q
    std::vector<Eigen::MatrixXd> W_;             // n x P
    std::vector<Eigen::VectorXd> dy_;            // n
    std::vector<std::vector<int>> stratum_of_;   // [m][sampling unit]
    std::vector<int> stratum_count_;             // [m]
    std::vector<std::vector<char>> unit_zero_;   // [m][sampling unit]: all rows at zero element
    std::vector<Eigen::MatrixXd> design_;        // [m]: regression design, sampling units x d_m
    std::vector<char> discrete_;                 // [m]: saturated cells available
    std::vector<std::string> nondiscrete_reason_;
};

// Convenience wrappers matching the pipeline stages.
TreatmentModel fit_treatment_model(const MappedPanel& mapped, const BlipModel& model,
                                   const SFunctionSet& sset, NuisanceStrategy strategy);
TrendModel fit_trend_model(const MappedPanel& mapped, const BlipModel& model,
                           const SFunctionSet& sset, NuisanceStrategy strategy);
std::pair<Eigen::MatrixXd, Eigen::VectorXd> assemble_score(const MappedPanel& mapped,
                                                           const BlipModel& model,
                                                           const SFunctionSet& sset,
                                                           const TreatmentModel& treatment,
                                                           const TrendModel& trend);

EstimationResult solve_psi(const MappedPanel& mapped, const BlipModel& model,
                           const EstimatorConfig& config = EstimatorConfig{});

// Same pipeline with the mapping replaced by direct exposure only (p = 0);
// the model may reference only own-exposure atoms.
EstimationResult naive_no_interference_fit(const PanelDataset& panel, const BlipModel& model,
                                           const EstimatorConfig& config = EstimatorConfig{});

}  // namespace snmm
