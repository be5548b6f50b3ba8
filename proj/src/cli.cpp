#include "snmm/cli.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "snmm/blip.hpp"
#include "snmm/estimands.hpp"
#include "snmm/estimator.hpp"
#include "snmm/exposure.hpp"
#include "snmm/panel.hpp"
#include "snmm/simlab.hpp"
#include "snmm/variance.hpp"

namespace snmm {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_double(double v, const char* fmt) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

std::string fmt6(double v) { return format_double(v, "%.6g"); }

[[noreturn]] void config_fail(const std::string& message) {
    throw Error(ErrorCode::ConfigError, message);
}

// ---- strict JSON field access --------------------------------------------

const ordered_json* find(const ordered_json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

const ordered_json& require_object(const ordered_json& j, const std::string& where) {
    if (!j.is_object())
        config_fail(where + " must be an object; got " + j.type_name());
    return j;
}

void reject_unknown_keys(const ordered_json& obj, const std::string& where,
                         std::initializer_list<const char*> known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool recognized = false;
        for (const char* k : known)
            if (it.key() == k) {
                recognized = true;
                break;
            }
        if (!recognized) {
            std::string list;
            for (const char* k : known) {
                if (!list.empty()) list += ", ";
                list += k;
            }
            config_fail("unknown field '" + it.key() + "' in " + where +
                        " (known fields: " + list + ")");
        }
    }
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
    const ordered_json* v = find(obj, key);
    if (!v) config_fail(where + "." + key + " is required");
    if (!v->is_string())
        config_fail(where + "." + key + " must be a string; got " + v->type_name());
    return v->get<std::string>();
}

std::string optional_string(const ordered_json& obj, const char* key, const std::string& where,
                            std::string fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_string())
        config_fail(where + "." + key + " must be a string; got " + v->type_name());
    return v->get<std::string>();
}

long long optional_integer(const ordered_json& obj, const char* key, const std::string& where,
                           long long fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer() && !v->is_number_unsigned())
        config_fail(where + "." + key + " must be an integer; got " + v->type_name());
    return v->get<long long>();
}

double optional_number(const ordered_json& obj, const char* key, const std::string& where,
                       double fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number())
        config_fail(where + "." + key + " must be a number; got " + v->type_name());
    return v->get<double>();
}

unsigned long long optional_seed(const ordered_json& obj, const char* key,
                                 const std::string& where, unsigned long long fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<unsigned long long>();
    if (v->is_number_integer() && v->get<long long>() >= 0)
        return static_cast<unsigned long long>(v->get<long long>());
    config_fail(where + "." + key + " must be a non-negative integer");
}

std::vector<std::string> optional_string_array(const ordered_json& obj, const char* key,
                                               const std::string& where) {
    const ordered_json* v = find(obj, key);
    std::vector<std::string> out;
    if (!v) return out;
    if (!v->is_array())
        config_fail(where + "." + key + " must be an array of strings; got " + v->type_name());
    for (const ordered_json& item : *v) {
        if (!item.is_string())
            config_fail(where + "." + key + " must contain only strings; got " +
                        item.type_name());
        out.push_back(item.get<std::string>());
    }
    return out;
}

Eigen::VectorXd optional_number_vector(const ordered_json& obj, const char* key,
                                       const std::string& where) {
    const ordered_json* v = find(obj, key);
    if (!v) return Eigen::VectorXd();
    if (!v->is_array())
        config_fail(where + "." + key + " must be an array of numbers; got " + v->type_name());
    Eigen::VectorXd out(static_cast<Eigen::Index>(v->size()));
    Eigen::Index i = 0;
    for (const ordered_json& item : *v) {
        if (!item.is_number())
            config_fail(where + "." + key + " must contain only numbers; got " +
                        item.type_name());
        out(i++) = item.get<double>();
    }
    return out;
}

// ---- parsed run description ----------------------------------------------

struct OutputSpec {
    std::string directory = ".";
    std::string basename;
};

struct EstimateSetup {
    std::string panel_text;  // path as written in the config (echoed)
    std::string graph_text;  // empty = no graph
    std::string panel_path;  // resolved against the config directory
    std::string graph_path;
    PanelSchema schema;
    std::string recode = "none";
    MappingSpec mapping;
    std::string blip_text;
    EstimatorConfig estimator;
    std::string variance_method;
    std::string kernel_text = "bartlett";
    double bandwidth = 0.0;  // 0 = derive from the mapping
    int max_lag = -1;        // -1 = derive from the graph
    int block_length = 5;
    int replicates = 500;
    double hex_width_km = 0.0;
    std::vector<EstimandSpec> estimands;
};

struct SimulateSetup {
    std::string dgp;  // "network", "cluster", or "naive_comparison"
    MonteCarloConfig mc;
    NaiveComparisonConfig naive;
};

struct RunSetup {
    std::string mode;
    unsigned long long seed = 1;
    long long threads = 0;  // 0 = all available cores
    OutputSpec output;
    ordered_json echo;  // fully resolved config, embedded in every report
    EstimateSetup est;
    SimulateSetup sim;
};

std::string resolve_path(const fs::path& base_dir, const std::string& text) {
    const fs::path p(text);
    return p.is_absolute() ? p.lexically_normal().string()
                           : (base_dir / p).lexically_normal().string();
}

ExposureAlphabet alphabet_from_name(const std::string& name) {
    if (name == "real") return ExposureAlphabet::Real;
    if (name == "integer") return ExposureAlphabet::Integer;
    if (name == "binary") return ExposureAlphabet::Binary;
    config_fail("data.schema.alphabet must be one of real, integer, binary; got '" + name +
                "'");
}

const char* alphabet_name(ExposureAlphabet alphabet) {
    switch (alphabet) {
        case ExposureAlphabet::Real: return "real";
        case ExposureAlphabet::Integer: return "integer";
        case ExposureAlphabet::Binary: return "binary";
    }
    return "real";
}

PanelSchema parse_schema(const ordered_json& s) {
    require_object(s, "data.schema");
    reject_unknown_keys(s, "data.schema",
                        {"unit", "time", "exposure", "outcome", "covariates", "cluster", "x",
                         "y", "alphabet"});
    PanelSchema schema;
    schema.unit_column = require_string(s, "unit", "data.schema");
    schema.time_column = require_string(s, "time", "data.schema");
    schema.exposure_column = require_string(s, "exposure", "data.schema");
    schema.outcome_column = require_string(s, "outcome", "data.schema");
    schema.covariate_columns = optional_string_array(s, "covariates", "data.schema");
    schema.cluster_column = optional_string(s, "cluster", "data.schema", "");
    schema.x_column = optional_string(s, "x", "data.schema", "");
    schema.y_column = optional_string(s, "y", "data.schema", "");
    schema.alphabet = alphabet_from_name(optional_string(s, "alphabet", "data.schema", "real"));
    if (schema.x_column.empty() != schema.y_column.empty())
        config_fail("data.schema.x and data.schema.y must be given together");
    return schema;
}

ordered_json schema_echo(const PanelSchema& schema) {
    ordered_json out;
    out["unit"] = schema.unit_column;
    out["time"] = schema.time_column;
    out["exposure"] = schema.exposure_column;
    out["outcome"] = schema.outcome_column;
    out["covariates"] = schema.covariate_columns;
    if (!schema.cluster_column.empty()) out["cluster"] = schema.cluster_column;
    if (!schema.x_column.empty()) {
        out["x"] = schema.x_column;
        out["y"] = schema.y_column;
    }
    out["alphabet"] = alphabet_name(schema.alphabet);
    return out;
}

void parse_estimate(const ordered_json& doc, const fs::path& base_dir, RunSetup& run) {
    reject_unknown_keys(doc, "config",
                        {"mode", "seed", "threads", "output", "data", "recode", "mapping",
                         "blip", "nuisance", "variance", "estimands"});
    EstimateSetup& est = run.est;

    const ordered_json* data = find(doc, "data");
    if (!data) config_fail("config.data is required in estimate mode");
    require_object(*data, "data");
    reject_unknown_keys(*data, "data", {"panel", "schema", "graph"});
    est.panel_text = require_string(*data, "panel", "data");
    est.panel_path = resolve_path(base_dir, est.panel_text);
    const ordered_json* schema = find(*data, "schema");
    if (!schema) config_fail("data.schema is required");
    est.schema = parse_schema(*schema);
    est.graph_text = optional_string(*data, "graph", "data", "");
    if (!est.graph_text.empty()) est.graph_path = resolve_path(base_dir, est.graph_text);

    est.recode = optional_string(doc, "recode", "config", "none");
    if (est.recode != "none" && est.recode != "absorbing" && est.recode != "increments")
        config_fail("recode must be one of none, absorbing, increments; got '" + est.recode +
                    "'");

    const ordered_json* mapping = find(doc, "mapping");
    if (!mapping) config_fail("config.mapping is required in estimate mode");
    require_object(*mapping, "mapping");
    reject_unknown_keys(*mapping, "mapping", {"kind", "dependence_radius"});
    const std::string kind_name = require_string(*mapping, "kind", "mapping");
    est.mapping.kind = mapping_kind_from_name(kind_name);
    if (est.mapping.kind == MappingKind::Custom)
        config_fail("mapping kind 'custom' is only available through the library API");
    const long long radius = optional_integer(*mapping, "dependence_radius", "mapping", -1);
    if (radius < -1) config_fail("mapping.dependence_radius must be non-negative");
    est.mapping.dependence_radius = static_cast<int>(radius);

    const ordered_json* blip = find(doc, "blip");
    if (!blip) config_fail("config.blip (the blip model text) is required in estimate mode");
    if (!blip->is_string())
        config_fail(std::string("config.blip must be a string; got ") + blip->type_name());
    est.blip_text = blip->get<std::string>();
    if (est.blip_text.empty()) config_fail("config.blip must not be empty");

    if (const ordered_json* nuisance = find(doc, "nuisance")) {
        require_object(*nuisance, "nuisance");
        reject_unknown_keys(*nuisance, "nuisance", {"treatment", "trend"});
        est.estimator.treatment_strategy = nuisance_strategy_from_name(
            optional_string(*nuisance, "treatment", "nuisance", "saturated-cells"));
        est.estimator.trend_strategy = nuisance_strategy_from_name(
            optional_string(*nuisance, "trend", "nuisance", "saturated-cells"));
    }

    const ordered_json* variance = find(doc, "variance");
    if (!variance) config_fail("config.variance is required in estimate mode");
    require_object(*variance, "variance");
    est.variance_method = require_string(*variance, "method", "variance");
    if (est.variance_method == "sandwich") {
        reject_unknown_keys(*variance, "variance", {"method"});
    } else if (est.variance_method == "network-hac") {
        reject_unknown_keys(*variance, "variance", {"method", "kernel", "bandwidth", "max_lag"});
        est.kernel_text = optional_string(*variance, "kernel", "variance", "bartlett");
        kernel_kind_from_name(est.kernel_text);
        est.bandwidth = optional_number(*variance, "bandwidth", "variance", 0.0);
        if (est.bandwidth < 0.0) config_fail("variance.bandwidth must be positive");
        const long long lag = optional_integer(*variance, "max_lag", "variance", -1);
        if (lag < -1) config_fail("variance.max_lag must be non-negative");
        est.max_lag = static_cast<int>(lag);
    } else if (est.variance_method == "moving-block-bootstrap") {
        reject_unknown_keys(*variance, "variance", {"method", "block_length", "replicates"});
        est.block_length =
            static_cast<int>(optional_integer(*variance, "block_length", "variance", 5));
        est.replicates =
            static_cast<int>(optional_integer(*variance, "replicates", "variance", 500));
    } else if (est.variance_method == "spatial-block-bootstrap") {
        reject_unknown_keys(*variance, "variance", {"method", "hex_width_km", "replicates"});
        est.hex_width_km = optional_number(*variance, "hex_width_km", "variance", 0.0);
        if (!(est.hex_width_km > 0.0))
            config_fail("variance.hex_width_km is required and must be positive");
        est.replicates =
            static_cast<int>(optional_integer(*variance, "replicates", "variance", 500));
    } else {
        config_fail(
            "variance.method must be one of sandwich, network-hac, moving-block-bootstrap, "
            "spatial-block-bootstrap; got '" +
            est.variance_method + "'");
    }

    if (const ordered_json* estimands = find(doc, "estimands")) {
        if (!estimands->is_array())
            config_fail(std::string("config.estimands must be an array; got ") +
                        estimands->type_name());
        int index = 0;
        for (const ordered_json& item : *estimands) {
            const std::string where = "estimands[" + std::to_string(index) + "]";
            require_object(item, where);
            reject_unknown_keys(item, where, {"kind", "label", "k", "m", "member", "selector"});
            EstimandSpec spec;
            spec.kind = estimand_kind_from_name(require_string(item, "kind", where));
            spec.label = optional_string(item, "label", where, "");
            spec.k = static_cast<int>(optional_integer(item, "k", where, 1));
            spec.m = static_cast<int>(optional_integer(item, "m", where, 0));
            spec.member = static_cast<int>(optional_integer(item, "member", where, 0));
            spec.selector = optional_string(item, "selector", where, "");
            est.estimands.push_back(std::move(spec));
            ++index;
        }
    }

    // Fully resolved config echo (paths exactly as written, defaults filled).
    ordered_json& echo = run.echo;
    ordered_json data_echo;
    data_echo["panel"] = est.panel_text;
    data_echo["schema"] = schema_echo(est.schema);
    if (!est.graph_text.empty()) data_echo["graph"] = est.graph_text;
    echo["data"] = std::move(data_echo);
    echo["recode"] = est.recode;
    echo["mapping"] = ordered_json{{"kind", kind_name},
                                   {"dependence_radius", est.mapping.resolved_dependence_radius()}};
    echo["blip"] = est.blip_text;
    echo["nuisance"] =
        ordered_json{{"treatment", nuisance_strategy_name(est.estimator.treatment_strategy)},
                     {"trend", nuisance_strategy_name(est.estimator.trend_strategy)}};
    ordered_json var_echo;
    var_echo["method"] = est.variance_method;
    if (est.variance_method == "network-hac") {
        var_echo["kernel"] = est.kernel_text;
        if (est.bandwidth > 0.0) var_echo["bandwidth"] = est.bandwidth;
        if (est.max_lag >= 0) var_echo["max_lag"] = est.max_lag;
    } else if (est.variance_method == "moving-block-bootstrap") {
        var_echo["block_length"] = est.block_length;
        var_echo["replicates"] = est.replicates;
    } else if (est.variance_method == "spatial-block-bootstrap") {
        var_echo["hex_width_km"] = est.hex_width_km;
        var_echo["replicates"] = est.replicates;
    }
    echo["variance"] = std::move(var_echo);
    ordered_json spec_echo = ordered_json::array();
    for (const EstimandSpec& spec : est.estimands) {
        ordered_json one;
        one["kind"] = estimand_kind_name(spec.kind);
        one["label"] = estimand_label(spec);
        one["k"] = spec.k;
        one["m"] = spec.m;
        one["member"] = spec.member;
        one["selector"] = spec.selector;
        spec_echo.push_back(std::move(one));
    }
    echo["estimands"] = std::move(spec_echo);
}

void parse_simulate(const ordered_json& doc, RunSetup& run) {
    reject_unknown_keys(doc, "config",
                        {"mode", "seed", "threads", "output", "dgp", "study", "replicates",
                         "variance"});
    SimulateSetup& sim = run.sim;
    sim.dgp = require_string(doc, "dgp", "config");
    if (sim.dgp != "network" && sim.dgp != "cluster" && sim.dgp != "naive_comparison")
        config_fail("dgp must be one of network, cluster, naive_comparison; got '" + sim.dgp +
                    "'");
    const bool cluster = sim.dgp == "cluster";

    NetworkStudyConfig network;
    ClusterStudyConfig cluster_study;
    if (const ordered_json* study = find(doc, "study")) {
        require_object(*study, "study");
        if (cluster) {
            reject_unknown_keys(*study, "study",
                                {"clusters", "psi", "base_rate", "confounder_effect",
                                 "noise_sd"});
            cluster_study.clusters = static_cast<int>(
                optional_integer(*study, "clusters", "study", cluster_study.clusters));
        } else {
            reject_unknown_keys(*study, "study",
                                {"units", "psi", "base_rate", "confounder_effect", "noise_sd"});
            network.units =
                static_cast<int>(optional_integer(*study, "units", "study", network.units));
        }
        ClusterStudyConfig defaults;
        const Eigen::VectorXd psi = optional_number_vector(*study, "psi", "study");
        const double base_rate =
            optional_number(*study, "base_rate", "study", defaults.base_rate);
        const double confounder =
            optional_number(*study, "confounder_effect", "study", defaults.confounder_effect);
        const double noise_sd = optional_number(*study, "noise_sd", "study", defaults.noise_sd);
        network.psi = psi;
        network.base_rate = base_rate;
        network.confounder_effect = confounder;
        network.noise_sd = noise_sd;
        cluster_study.psi = psi;
        cluster_study.base_rate = base_rate;
        cluster_study.confounder_effect = confounder;
        cluster_study.noise_sd = noise_sd;
    }

    const long long replicates = optional_integer(doc, "replicates", "config", 500);
    std::string method = "moving-block-bootstrap";
    int block_length = 5;
    int bootstrap_replicates = 500;
    if (const ordered_json* variance = find(doc, "variance")) {
        require_object(*variance, "variance");
        reject_unknown_keys(*variance, "variance", {"method", "block_length", "replicates"});
        method = optional_string(*variance, "method", "variance", method);
        block_length =
            static_cast<int>(optional_integer(*variance, "block_length", "variance", 5));
        bootstrap_replicates =
            static_cast<int>(optional_integer(*variance, "replicates", "variance", 500));
    }
    if (sim.dgp == "naive_comparison" && method != "moving-block-bootstrap")
        config_fail("the naive comparison always uses moving-block-bootstrap intervals; got '" +
                    method + "'");

    sim.mc.study = cluster ? StudyKind::Cluster : StudyKind::Network;
    sim.mc.network = network;
    sim.mc.cluster = cluster_study;
    sim.mc.replicates = static_cast<int>(replicates);
    sim.mc.seed = run.seed;
    sim.mc.variance_method = method;
    sim.mc.block_length = block_length;
    sim.mc.bootstrap_replicates = bootstrap_replicates;
    sim.naive.network = network;
    sim.naive.replicates = static_cast<int>(replicates);
    sim.naive.seed = run.seed;
    sim.naive.block_length = block_length;
    sim.naive.bootstrap_replicates = bootstrap_replicates;

    ordered_json& echo = run.echo;
    echo["dgp"] = sim.dgp;
    ordered_json study_echo;
    const Eigen::VectorXd psi_resolved =
        cluster ? (cluster_study.psi.size() ? cluster_study.psi : default_cluster_psi())
                : (network.psi.size() ? network.psi : default_network_psi());
    if (cluster)
        study_echo["clusters"] = cluster_study.clusters;
    else
        study_echo["units"] = network.units;
    ordered_json psi_echo = ordered_json::array();
    for (Eigen::Index i = 0; i < psi_resolved.size(); ++i) psi_echo.push_back(psi_resolved(i));
    study_echo["psi"] = std::move(psi_echo);
    study_echo["base_rate"] = cluster ? cluster_study.base_rate : network.base_rate;
    study_echo["confounder_effect"] =
        cluster ? cluster_study.confounder_effect : network.confounder_effect;
    study_echo["noise_sd"] = cluster ? cluster_study.noise_sd : network.noise_sd;
    echo["study"] = std::move(study_echo);
    echo["replicates"] = replicates;
    echo["variance"] = ordered_json{{"method", method},
                                    {"block_length", block_length},
                                    {"replicates", bootstrap_replicates}};
}

RunSetup parse_setup(const ordered_json& doc, const fs::path& base_dir,
                     const CliOverrides& overrides) {
    require_object(doc, "config");
    RunSetup run;
    run.mode = require_string(doc, "mode", "config");
    if (run.mode != "estimate" && run.mode != "simulate")
        config_fail("mode must be 'estimate' or 'simulate'; got '" + run.mode + "'");
    run.seed = optional_seed(doc, "seed", "config", 1);
    if (overrides.seed) run.seed = *overrides.seed;
    run.threads = optional_integer(doc, "threads", "config", 0);
    if (overrides.threads) run.threads = *overrides.threads;
    if (run.threads < 0) config_fail("threads must be a positive integer (or 0 for all cores)");

    run.output.basename = run.mode;
    if (const ordered_json* output = find(doc, "output")) {
        require_object(*output, "output");
        reject_unknown_keys(*output, "output", {"directory", "basename"});
        run.output.directory = optional_string(*output, "directory", "output", ".");
        run.output.basename = optional_string(*output, "basename", "output", run.mode);
    }
    if (overrides.output_directory) run.output.directory = *overrides.output_directory;
    if (run.output.basename.empty()) config_fail("output.basename must not be empty");

    run.echo["mode"] = run.mode;
    run.echo["seed"] = run.seed;
    if (run.threads == 0)
        run.echo["threads"] = "auto";
    else
        run.echo["threads"] = run.threads;
    run.echo["output"] = ordered_json{{"directory", run.output.directory},
                                      {"basename", run.output.basename}};

    if (run.mode == "estimate")
        parse_estimate(doc, base_dir, run);
    else
        parse_simulate(doc, run);
    return run;
}

// ---- estimate pipeline -----------------------------------------------------

struct LoadedData {
    MappedPanel mapped;
    BlipModel model;
};

LoadedData load_estimate_inputs(const EstimateSetup& est) {
    PanelDataset panel = load_panel_file(est.panel_path, est.schema);
    if (est.recode == "absorbing")
        panel = recode_absorbing(panel);
    else if (est.recode == "increments")
        panel = recode_increments(panel);
    if (!est.graph_path.empty())
        panel.graph = load_graph_file(est.graph_path, panel.unit_ids);
    const bool has_cluster = panel.clusters.has_value();
    const bool has_graph = panel.graph.has_value();
    if (has_cluster && has_graph)
        config_fail(
            "declare exactly one interference structure; got both a cluster column and a "
            "graph file");
    if (!has_cluster && !has_graph)
        config_fail(
            "declare exactly one interference structure: set data.schema.cluster or give "
            "data.graph");
    LoadedData out{apply_mapping(panel, est.mapping), parse_blip_spec(est.blip_text)};
    validate_blip_model(out.model, out.mapped);
    return out;
}

VarianceEstimate attach_variance(const EstimateSetup& est, const LoadedData& data,
                                 const EstimationResult& fit, unsigned long long seed) {
    if (est.variance_method == "sandwich") return sandwich_cluster(fit);
    if (est.variance_method == "network-hac") {
        const double bandwidth =
            est.bandwidth > 0.0 ? est.bandwidth : default_hac_bandwidth(data.mapped);
        const int max_lag = est.max_lag >= 0 ? est.max_lag
                                             : default_hac_max_lag(*data.mapped.panel.graph);
        KernelSpec kernel;
        kernel.kind = kernel_kind_from_name(est.kernel_text);
        return network_hac(fit, *data.mapped.panel.graph, kernel, bandwidth, max_lag);
    }
    if (est.variance_method == "moving-block-bootstrap")
        return moving_block_bootstrap(data.mapped, data.model, est.estimator, est.block_length,
                                      est.replicates, seed);
    return spatial_block_bootstrap(data.mapped, data.model, est.estimator, est.hex_width_km,
                                   est.replicates, seed);
}

ordered_json tuning_json(const VarianceEstimate& variance) {
    ordered_json out;
    out["method"] = variance.method;
    out["ci_level"] = variance.ci_level;
    out["kernel"] = variance.tuning.kernel;
    out["bandwidth"] = variance.tuning.bandwidth;
    out["max_lag"] = variance.tuning.max_lag;
    out["block_length"] = variance.tuning.block_length;
    out["hex_width_km"] = variance.tuning.hex_width_km;
    out["anchor_x_km"] = variance.tuning.anchor_x_km;
    out["anchor_y_km"] = variance.tuning.anchor_y_km;
    out["replicates"] = variance.tuning.replicates;
    out["seed"] = variance.tuning.seed;
    out["retries_used"] = variance.tuning.retries_used;
    out["clipped_magnitude"] = variance.tuning.clipped_magnitude;
    return out;
}

std::string tuning_text(const VarianceEstimate& variance) {
    std::string out;
    out += "method: " + variance.method + "\n";
    out += "ci_level: " + fmt6(variance.ci_level) + "\n";
    out += "kernel: " + (variance.tuning.kernel.empty() ? "-" : variance.tuning.kernel) + "\n";
    out += "bandwidth: " + fmt6(variance.tuning.bandwidth) + "\n";
    out += "max_lag: " + std::to_string(variance.tuning.max_lag) + "\n";
    out += "block_length: " + std::to_string(variance.tuning.block_length) + "\n";
    out += "hex_width_km: " + fmt6(variance.tuning.hex_width_km) + "\n";
    out += "anchor_x_km: " + fmt6(variance.tuning.anchor_x_km) + "\n";
    out += "anchor_y_km: " + fmt6(variance.tuning.anchor_y_km) + "\n";
    out += "replicates: " + std::to_string(variance.tuning.replicates) + "\n";
    out += "seed: " + std::to_string(variance.tuning.seed) + "\n";
    out += "retries_used: " + std::to_string(variance.tuning.retries_used) + "\n";
    out += "clipped_magnitude: " + fmt6(variance.tuning.clipped_magnitude) + "\n";
    return out;
}

std::string structure_text(const PanelDataset& panel) {
    if (panel.clusters)
        return "cluster (" + std::to_string(panel.clusters->cluster_count()) + " clusters of " +
               std::to_string(panel.clusters->cluster_size()) + ")";
    if (panel.graph)
        return "network (" + std::to_string(panel.graph->edge_count()) + " edges)";
    return "none";
}

ordered_json issues_json(const std::vector<ValidationIssue>& issues) {
    ordered_json out = ordered_json::array();
    for (const ValidationIssue& issue : issues) {
        ordered_json one;
        one["code"] = error_code_name(issue.code);
        one["message"] = issue.message;
        one["location"] = issue.location;
        out.push_back(std::move(one));
    }
    return out;
}

std::string issues_text(const std::vector<ValidationIssue>& issues) {
    if (issues.empty()) return "none\n";
    std::string out;
    for (const ValidationIssue& issue : issues) {
        out += "- [" + std::string(error_code_name(issue.code)) + "] " + issue.message;
        if (!issue.location.empty()) out += " (" + issue.location + ")";
        out += "\n";
    }
    return out;
}

struct ReportBundle {
    std::string human;
    std::string machine;
};

ReportBundle do_estimate(const RunSetup& run) {
    const EstimateSetup& est = run.est;
    const LoadedData data = load_estimate_inputs(est);
    const PanelDataset& panel = data.mapped.panel;
    const EstimationResult fit = solve_psi(data.mapped, data.model, est.estimator);
    const VarianceEstimate variance = attach_variance(est, data, fit, run.seed);
    const bool bootstrap = est.variance_method == "moving-block-bootstrap" ||
                           est.variance_method == "spatial-block-bootstrap";

    std::vector<EstimandEstimate> estimands;
    estimands.reserve(est.estimands.size());
    for (const EstimandSpec& spec : est.estimands) {
        if (bootstrap) {
            estimands.push_back(
                estimand_with_uncertainty(fit, data.mapped, data.model, spec, variance));
        } else {
            EstimandEstimate point;
            point.spec = spec;
            point.label = estimand_label(spec);
            point.value = evaluate_estimand(fit, data.mapped, data.model, spec);
            estimands.push_back(std::move(point));
        }
    }

    // Human-readable report.
    std::string human;
    human += "snmm estimate\n=============\n";
    human += "panel: " + std::to_string(panel.unit_count()) + " units, tau " +
             std::to_string(panel.tau()) + ", times";
    for (const std::string& t : panel.time_labels) human += " " + t;
    human += "\n";
    human += "structure: " + structure_text(panel) + "\n";
    human += "mapping: " + std::string(mapping_kind_name(data.mapped.mapping_kind)) +
             " (dependence radius " + std::to_string(data.mapped.mapping_radius) + ")\n";
    human += "recode: " + est.recode + "\n";
    human += "nuisances: treatment " +
             std::string(nuisance_strategy_name(est.estimator.treatment_strategy)) + ", trend " +
             std::string(nuisance_strategy_name(est.estimator.trend_strategy)) + "\n";
    human += "seed: " + std::to_string(run.seed) + "\n";
    human += "blip model: " + std::to_string(data.model.param_count()) + " parameters\n";
    human += "\nparameters (variance: " + variance.method + ", 95% CIs)\n";
    human += "parameter\testimate\tse\tci_lower\tci_upper\n";
    for (int j = 0; j < fit.psi_hat.size(); ++j) {
        human += fit.param_labels[static_cast<std::size_t>(j)] + "\t" + fmt6(fit.psi_hat(j)) +
                 "\t" + fmt6(variance.se(j)) + "\t" + fmt6(variance.ci_lower(j)) + "\t" +
                 fmt6(variance.ci_upper(j)) + "\n";
    }
    if (!estimands.empty()) {
        human += "\nestimands" + std::string(bootstrap ? " (bootstrap percentile CIs)" : "") +
                 "\n";
        human += "estimand\testimate\tse\tci_lower\tci_upper\n";
        for (const EstimandEstimate& e : estimands) {
            human += e.label + "\t" + fmt6(e.value);
            if (bootstrap)
                human += "\t" + fmt6(e.se) + "\t" + fmt6(e.ci_lower) + "\t" + fmt6(e.ci_upper);
            else
                human += "\t-\t-\t-";
            human += "\n";
        }
    }
    human += "\nstratum occupancy\nm\tstratum\tweight\tzero_exposure\n";
    for (const StratumOccupancy& occ : fit.occupancy) {
        human += std::to_string(occ.m) + "\t" + std::to_string(occ.stratum) + "\t" +
                 fmt6(occ.weight) + "\t" + (occ.has_zero_exposure ? "yes" : "no") + "\n";
    }
    human += "\nvariance tuning\n" + tuning_text(variance);
    human += "\ndiagnostics\n";
    human += "score_residual: " + format_double(fit.score_residual, "%.17g") + "\n";
    std::vector<ValidationIssue> warnings = fit.diagnostics.warnings;
    warnings.insert(warnings.end(), variance.diagnostics.warnings.begin(),
                    variance.diagnostics.warnings.end());
    human += "warnings: " + (warnings.empty() ? std::string("none\n") : "\n" +
                             issues_text(warnings));

    // Machine-readable report.
    ordered_json machine;
    machine["tool"] = "snmm";
    machine["command"] = "estimate";
    machine["config"] = run.echo;
    ordered_json panel_json;
    panel_json["units"] = panel.unit_count();
    panel_json["tau"] = panel.tau();
    panel_json["times"] = panel.time_labels;
    panel_json["covariates"] = panel.covariate_names;
    if (panel.clusters) {
        panel_json["structure"] = "cluster";
        panel_json["clusters"] = panel.clusters->cluster_count();
        panel_json["cluster_size"] = panel.clusters->cluster_size();
    } else {
        panel_json["structure"] = "network";
        panel_json["edges"] = panel.graph->edge_count();
    }
    machine["panel"] = std::move(panel_json);
    ordered_json blip_json;
    blip_json["parameters"] = data.model.param_count();
    blip_json["labels"] = data.model.param_labels;
    blip_json["canonical"] = print_blip_spec(data.model);
    machine["blip"] = std::move(blip_json);
    ordered_json params = ordered_json::array();
    for (int j = 0; j < fit.psi_hat.size(); ++j) {
        ordered_json one;
        one["label"] = fit.param_labels[static_cast<std::size_t>(j)];
        one["estimate"] = fit.psi_hat(j);
        one["se"] = variance.se(j);
        one["ci_lower"] = variance.ci_lower(j);
        one["ci_upper"] = variance.ci_upper(j);
        params.push_back(std::move(one));
    }
    machine["parameters"] = std::move(params);
    ordered_json estimand_json = ordered_json::array();
    for (const EstimandEstimate& e : estimands) {
        ordered_json one;
        one["label"] = e.label;
        one["kind"] = estimand_kind_name(e.spec.kind);
        one["estimate"] = e.value;
        if (bootstrap) {
            one["se"] = e.se;
            one["ci_lower"] = e.ci_lower;
            one["ci_upper"] = e.ci_upper;
        } else {
            one["se"] = nullptr;
            one["ci_lower"] = nullptr;
            one["ci_upper"] = nullptr;
        }
        estimand_json.push_back(std::move(one));
    }
    machine["estimands"] = std::move(estimand_json);
    machine["variance"] = tuning_json(variance);
    ordered_json fit_json;
    fit_json["score_residual"] = fit.score_residual;
    fit_json["sampling_units"] = fit.sampling_unit_count;
    machine["fit"] = std::move(fit_json);
    ordered_json occupancy = ordered_json::array();
    for (const StratumOccupancy& occ : fit.occupancy) {
        ordered_json one;
        one["m"] = occ.m;
        one["stratum"] = occ.stratum;
        one["weight"] = occ.weight;
        one["zero_exposure"] = occ.has_zero_exposure;
        occupancy.push_back(std::move(one));
    }
    machine["occupancy"] = std::move(occupancy);
    machine["diagnostics"] = ordered_json{{"warnings", issues_json(warnings)}};

    ReportBundle bundle;
    bundle.human = human + "\neffective config (json)\n" + run.echo.dump(2) + "\n";
    bundle.machine = machine.dump(2) + "\n";
    return bundle;
}

// ---- simulate pipeline -----------------------------------------------------

ReportBundle do_simulate(const RunSetup& run) {
    const SimulateSetup& sim = run.sim;
    const MonteCarloReport report =
        sim.dgp == "naive_comparison" ? naive_comparison(sim.naive) : run_monte_carlo(sim.mc);

    ReportBundle bundle;
    bundle.human = "snmm simulate\n=============\n" + report.to_table() +
                   "\neffective config (json)\n" + run.echo.dump(2) + "\n";
    ordered_json machine;
    machine["tool"] = "snmm";
    machine["command"] = "simulate";
    machine["config"] = run.echo;
    machine["report"] = ordered_json::parse(report.to_json());
    bundle.machine = machine.dump(2) + "\n";
    return bundle;
}

// ---- validate pipeline -----------------------------------------------------

std::string do_validate(const RunSetup& run) {
    std::string out = "config ok (" + run.mode + ")\n";
    if (run.mode == "simulate") {
        const SimulateSetup& sim = run.sim;
        if (sim.dgp == "naive_comparison")
            check_naive_comparison_config(sim.naive);
        else
            check_monte_carlo_config(sim.mc);
        out += "dgp: " + sim.dgp + "\n";
        out += "replicates: " +
               std::to_string(sim.dgp == "naive_comparison" ? sim.naive.replicates
                                                            : sim.mc.replicates) +
               "\n";
        return out;
    }

    const EstimateSetup& est = run.est;
    const LoadedData data = load_estimate_inputs(est);
    const ValidationReport report = validate_panel(data.mapped.panel);
    report.throw_if_failed();
    const int tau = data.mapped.tau();
    int index = 0;
    for (const EstimandSpec& spec : est.estimands) {
        const std::string where = "estimands[" + std::to_string(index) + "]";
        if (spec.k < 1 || spec.k > tau)
            config_fail(where + ".k must be between 1 and " + std::to_string(tau) + "; got " +
                        std::to_string(spec.k));
        if (spec.kind != EstimandKind::UntreatedTrajectory) {
            if (spec.m < 0 || spec.m >= spec.k)
                config_fail(where + ".m must be between 0 and k-1; got " +
                            std::to_string(spec.m));
            if (spec.member < 0 || spec.member >= data.mapped.rows_per_sampling_unit())
                config_fail(where + ".member must be between 0 and " +
                            std::to_string(data.mapped.rows_per_sampling_unit() - 1) + "; got " +
                            std::to_string(spec.member));
        }
        if (!spec.selector.empty()) parse_selector(spec.selector);
        ++index;
    }
    out += "panel: " + std::to_string(data.mapped.panel.unit_count()) + " units, tau " +
           std::to_string(tau) + "\n";
    out += "structure: " + structure_text(data.mapped.panel) + "\n";
    out += "mapping: " + std::string(mapping_kind_name(data.mapped.mapping_kind)) + "\n";
    out += "blip model: " + std::to_string(data.model.param_count()) + " parameters\n";
    out += "estimands: " + std::to_string(est.estimands.size()) + "\n";
    out += "warnings: " +
           (report.warnings.empty() ? std::string("none\n") : "\n" +
            issues_text(report.warnings));
    return out;
}

// ---- driver ----------------------------------------------------------------

const char* command_name(CliCommand command) {
    switch (command) {
        case CliCommand::Estimate: return "estimate";
        case CliCommand::Simulate: return "simulate";
        case CliCommand::Validate: return "validate";
    }
    return "unknown";
}

CliRun error_run(CliCommand command, ErrorCode code, const std::string& what) {
    CliRun out;
    out.exit_code = exit_code_for(code);
    ordered_json envelope;
    envelope["tool"] = "snmm";
    envelope["command"] = command_name(command);
    envelope["error"] = ordered_json{{"code", error_code_name(code)},
                                     {"message", what},
                                     {"exit_code", out.exit_code}};
    out.console_text = envelope.dump(2) + "\n";
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) config_fail("cannot write report file '" + path.string() + "'");
    out << text;
    if (!out) config_fail("failed writing report file '" + path.string() + "'");
}

}  // namespace

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError:
        case ErrorCode::ParseError:
        case ErrorCode::SpecParseError:
        case ErrorCode::UnbalancedPanel:
        case ErrorCode::UnknownUnit:
        case ErrorCode::InvalidSize:
        case ErrorCode::StructureMissing:
        case ErrorCode::IndexError:
            return 2;  // malformed inputs
        default:
            return 3;  // inputs loaded, estimation refused
    }
}

CliCommand cli_command_from_name(const std::string& name) {
    if (name == "estimate") return CliCommand::Estimate;
    if (name == "simulate") return CliCommand::Simulate;
    if (name == "validate") return CliCommand::Validate;
    throw Error(ErrorCode::ConfigError,
                "unknown command '" + name + "' (expected estimate, simulate, or validate)");
}

CliRun run_cli_text(CliCommand command, const std::string& config_text,
                    const std::string& base_dir, const CliOverrides& overrides) {
    try {
        ordered_json doc;
        try {
            doc = ordered_json::parse(config_text, nullptr, /*allow_exceptions=*/true,
                                      /*ignore_comments=*/true);
        } catch (const nlohmann::json::exception& e) {
            config_fail(std::string("config is not valid JSON: ") + e.what());
        }
        RunSetup run = parse_setup(doc, fs::path(base_dir), overrides);
        if (command == CliCommand::Estimate && run.mode != "estimate")
            config_fail("the estimate command needs a config with mode 'estimate'; got '" +
                        run.mode + "'");
        if (command == CliCommand::Simulate && run.mode != "simulate")
            config_fail("the simulate command needs a config with mode 'simulate'; got '" +
                        run.mode + "'");

        // Worker-parallelism cap; every algorithm is deterministic and
        // independent of it by construction.
        const unsigned hardware = std::max(1u, std::thread::hardware_concurrency());
        const int resolved_threads =
            run.threads > 0 ? static_cast<int>(std::min<long long>(run.threads, 1024))
                            : static_cast<int>(hardware);
        Eigen::setNbThreads(resolved_threads);

        CliRun out;
        if (command == CliCommand::Validate) {
            out.console_text = do_validate(run);
            return out;
        }
        const ReportBundle bundle =
            command == CliCommand::Estimate ? do_estimate(run) : do_simulate(run);
        const fs::path dir(run.output.directory);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec)
            config_fail("cannot create output directory '" + dir.string() + "': " +
                        ec.message());
        const fs::path human_path = dir / (run.output.basename + ".txt");
        const fs::path machine_path = dir / (run.output.basename + ".json");
        write_text_file(human_path, bundle.human);
        write_text_file(machine_path, bundle.machine);
        out.written_files = {human_path.string(), machine_path.string()};
        out.console_text = bundle.human + "\nreports written:\n  " + human_path.string() +
                           "\n  " + machine_path.string() + "\n";
        return out;
    } catch (const Error& e) {
        return error_run(command, e.code(), e.what());
    } catch (const std::exception& e) {
        CliRun out;
        out.exit_code = 1;
        ordered_json envelope;
        envelope["tool"] = "snmm";
        envelope["command"] = command_name(command);
        envelope["error"] = ordered_json{{"code", "Internal"},
                                         {"message", std::string(e.what())},
                                         {"exit_code", 1}};
        out.console_text = envelope.dump(2) + "\n";
        return out;
    }
}

CliRun run_cli(CliCommand command, const std::string& config_path,
               const CliOverrides& overrides) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in)
        return error_run(command, ErrorCode::ConfigError,
                         "ConfigError: cannot open config file '" + config_path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fs::path base_dir = fs::path(config_path).parent_path();
    if (base_dir.empty()) base_dir = ".";
    return run_cli_text(command, text, base_dir.string(), overrides);
}

}  // namespace snmm
