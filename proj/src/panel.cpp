#include "snmm/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace snmm {

namespace {

std::string format_number(double v) {
    char buf[64];
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        std::snprintf(buf, sizeof(buf), "%.0f", v);
        return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Trim to the shortest representation that round-trips.
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[64];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

double parse_number(const std::string& token, const std::string& where) {
    if (token.empty()) throw Error(ErrorCode::ParseError, "empty field at " + where);
    const char* begin = token.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + token.size())
        throw Error(ErrorCode::ParseError,
                    "expected a number, got '" + token + "' at " + where);
    if (!std::isfinite(v))
        throw Error(ErrorCode::ParseError, "non-finite value '" + token + "' at " + where);
    return v;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    if (delim == ',') {
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, ',')) {
            // trim surrounding spaces
            auto b = field.find_first_not_of(" \t\r");
            auto e = field.find_last_not_of(" \t\r");
            out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
        }
        if (!line.empty() && line.back() == ',') out.push_back("");
    } else {
        std::stringstream ss(line);
        std::string field;
        while (ss >> field) out.push_back(field);
    }
    return out;
}

struct RawRow {
    int unit;     // dense unit index
    double time;  // raw time value
    double exposure;
    double outcome;
    std::vector<double> covariates;
    int line_no;
};

}  // namespace

std::size_t NetworkGraph::edge_count() const {
    std::size_t twice = 0;
    for (const auto& nbrs : adjacency) twice += nbrs.size();
    return twice / 2;
}

void ValidationReport::add_error(ErrorCode code, std::string message, std::string location) {
    errors.push_back({code, std::move(message), std::move(location)});
}

void ValidationReport::add_warning(ErrorCode code, std::string message, std::string location) {
    warnings.push_back({code, std::move(message), std::move(location)});
}

void ValidationReport::throw_if_failed() const {
    if (errors.empty()) return;
    const auto& first = errors.front();
    std::string msg = first.message;
    if (!first.location.empty()) msg += " (" + first.location + ")";
    if (errors.size() > 1)
        msg += " [+" + std::to_string(errors.size() - 1) + " more issue(s)]";
    throw Error(first.code, msg);
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& e : errors) {
        os << "error: " << error_code_name(e.code) << ": " << e.message;
        if (!e.location.empty()) os << " (" << e.location << ")";
        os << "\n";
    }
    for (const auto& w : warnings) {
        os << "warning: " << error_code_name(w.code) << ": " << w.message;
        if (!w.location.empty()) os << " (" << w.location << ")";
        os << "\n";
    }
    return os.str();
}

int PanelDataset::unit_index(const std::string& id) const {
    for (int i = 0; i < unit_count(); ++i)
        if (unit_ids[i] == id) return i;
    throw Error(ErrorCode::UnknownUnit, "unit id '" + id + "' not in dataset");
}

PanelDataset load_panel(std::istream& in, const PanelSchema& schema) {
    std::string header_line;
    if (!std::getline(in, header_line))
        throw Error(ErrorCode::ParseError, "empty panel input (no header row)");
    if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();
    const char delim = header_line.find(',') != std::string::npos ? ',' : ' ';
    const std::vector<std::string> header = split_line(header_line, delim);

    auto column_of = [&](const std::string& name, bool required) -> int {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return static_cast<int>(c);
        if (required)
            throw Error(ErrorCode::ParseError, "missing required column '" + name + "' in header");
        return -1;
    };

    const int c_unit = column_of(schema.unit_column, true);
    const int c_time = column_of(schema.time_column, true);
    const int c_expo = column_of(schema.exposure_column, true);
    const int c_outc = column_of(schema.outcome_column, true);
    std::vector<int> c_cov;
    for (const auto& name : schema.covariate_columns) c_cov.push_back(column_of(name, true));
    const int c_clus = schema.cluster_column.empty() ? -1 : column_of(schema.cluster_column, true);
    const int c_x = schema.x_column.empty() ? -1 : column_of(schema.x_column, true);
    const int c_y = schema.y_column.empty() ? -1 : column_of(schema.y_column, true);
    if ((c_x >= 0) != (c_y >= 0))
        throw Error(ErrorCode::ParseError, "coordinate columns must be given as a pair");

    std::unordered_map<std::string, int> unit_index;
    std::vector<std::string> unit_ids;
    std::vector<std::string> unit_cluster_label(0);
    std::vector<RawRow> rows;
    std::vector<std::pair<double, double>> unit_xy;
    std::map<double, int> time_values;  // ordered distinct raw times

    std::string line;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const std::vector<std::string> fields = split_line(line, delim);
        if (fields.size() != header.size())
            throw Error(ErrorCode::ParseError,
                        "row " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, header has " +
                            std::to_string(header.size()));
        const std::string where = "row " + std::to_string(line_no);

        const std::string& uid = fields[c_unit];
        auto [it, inserted] = unit_index.emplace(uid, static_cast<int>(unit_ids.size()));
        if (inserted) {
            unit_ids.push_back(uid);
            unit_cluster_label.emplace_back();
            unit_xy.emplace_back(0.0, 0.0);
        }
        const int u = it->second;

        RawRow row;
        row.unit = u;
        row.line_no = line_no;
        row.time = parse_number(fields[c_time], where + ", column " + schema.time_column);
        row.exposure = parse_number(fields[c_expo], where + ", column " + schema.exposure_column);
        row.outcome = parse_number(fields[c_outc], where + ", column " + schema.outcome_column);
        for (std::size_t j = 0; j < c_cov.size(); ++j)
            row.covariates.push_back(
                parse_number(fields[c_cov[j]], where + ", column " + schema.covariate_columns[j]));
        time_values.emplace(row.time, 0);

        if (c_clus >= 0) {
            const std::string& cl = fields[c_clus];
            if (inserted) {
                unit_cluster_label[u] = cl;
            } else if (unit_cluster_label[u] != cl) {
                throw Error(ErrorCode::ParseError,
                            "unit '" + uid + "' changes cluster at " + where);
            }
        }
        if (c_x >= 0) {
            const double x = parse_number(fields[c_x], where + ", column " + schema.x_column);
            const double y = parse_number(fields[c_y], where + ", column " + schema.y_column);
            if (inserted) {
                unit_xy[u] = {x, y};
            } else if (unit_xy[u] != std::make_pair(x, y)) {
                throw Error(ErrorCode::ParseError,
                            "unit '" + uid + "' changes coordinates at " + where);
            }
        }
        rows.push_back(std::move(row));
    }

    if (rows.empty()) throw Error(ErrorCode::ParseError, "panel input has no data rows");
    if (time_values.size() < 2)
        throw Error(ErrorCode::UnbalancedPanel,
                    "panel needs at least two time points, found " +
                        std::to_string(time_values.size()));

    int next_t = 0;
    for (auto& [value, index] : time_values) index = next_t++;
    const int T = next_t;  // tau + 1
    const int n = static_cast<int>(unit_ids.size());

    PanelDataset panel;
    panel.unit_ids = std::move(unit_ids);
    panel.time_labels.reserve(T);
    for (const auto& [value, index] : time_values) panel.time_labels.push_back(format_number(value));
    panel.exposure.setConstant(n, T, std::numeric_limits<double>::quiet_NaN());
    panel.outcome.setConstant(n, T, std::numeric_limits<double>::quiet_NaN());
    panel.covariate_names = schema.covariate_columns;
    for (std::size_t j = 0; j < schema.covariate_columns.size(); ++j)
        panel.covariates.emplace_back(
            Eigen::MatrixXd::Constant(n, T, std::numeric_limits<double>::quiet_NaN()));
    panel.alphabet = schema.alphabet;

    std::vector<std::vector<int>> seen_line(n, std::vector<int>(T, 0));
    for (const auto& row : rows) {
        const int t = time_values.at(row.time);
        if (seen_line[row.unit][t] != 0)
            throw Error(ErrorCode::UnbalancedPanel,
                        "duplicate observation for unit '" + panel.unit_ids[row.unit] +
                            "' at time " + panel.time_labels[t] + " (rows " +
                            std::to_string(seen_line[row.unit][t]) + " and " +
                            std::to_string(row.line_no) + ")");
        seen_line[row.unit][t] = row.line_no;
        panel.exposure(row.unit, t) = row.exposure;
        panel.outcome(row.unit, t) = row.outcome;
        for (std::size_t j = 0; j < row.covariates.size(); ++j)
            panel.covariates[j](row.unit, t) = row.covariates[j];
    }
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < T; ++t)
            if (seen_line[i][t] == 0)
                throw Error(ErrorCode::UnbalancedPanel,
                            "unit '" + panel.unit_ids[i] + "' missing time " +
                                panel.time_labels[t]);

    if (schema.alphabet != ExposureAlphabet::Real) {
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < T; ++t) {
                const double a = panel.exposure(i, t);
                const bool ok = schema.alphabet == ExposureAlphabet::Binary
                                    ? (a == 0.0 || a == 1.0)
                                    : (a == std::floor(a));
                if (!ok)
                    throw Error(ErrorCode::ParseError,
                                "exposure value " + format_number(a) + " for unit '" +
                                    panel.unit_ids[i] + "' at time " + panel.time_labels[t] +
                                    " is outside the declared alphabet");
            }
    }

    if (c_clus >= 0) {
        std::unordered_map<std::string, int> cluster_index;
        ClusterMap cm;
        cm.cluster_of.resize(n, -1);
        for (int i = 0; i < n; ++i) {
            auto [it, inserted] =
                cluster_index.emplace(unit_cluster_label[i], static_cast<int>(cm.members.size()));
            if (inserted) cm.members.emplace_back();
            cm.cluster_of[i] = it->second;
            cm.members[it->second].push_back(i);
        }
        const std::size_t J = cm.members.front().size();
        for (std::size_t c = 0; c < cm.members.size(); ++c)
            if (cm.members[c].size() != J)
                throw Error(ErrorCode::InvalidSize,
                            "clusters must have equal size: first cluster has " +
                                std::to_string(J) + " members, cluster index " +
                                std::to_string(c) + " has " +
                                std::to_string(cm.members[c].size()));
        panel.clusters = std::move(cm);
    }

    if (c_x >= 0) {
        Eigen::MatrixX2d xy(n, 2);
        for (int i = 0; i < n; ++i) {
            xy(i, 0) = unit_xy[i].first;
            xy(i, 1) = unit_xy[i].second;
        }
        panel.coordinates = std::move(xy);
    }

    return panel;
}

PanelDataset load_panel_file(const std::string& path, const PanelSchema& schema) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open panel file '" + path + "'");
    return load_panel(in, schema);
}

std::string serialize_panel(const PanelDataset& panel) {
    std::ostringstream os;
    os << "unit,time,exposure,outcome";
    for (const auto& name : panel.covariate_names) os << "," << name;
    if (panel.clusters) os << ",cluster";
    if (panel.coordinates) os << ",x,y";
    os << "\n";
    const int n = panel.unit_count();
    const int T = panel.tau() + 1;
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < T; ++t) {
            os << panel.unit_ids[i] << "," << panel.time_labels[t] << ","
               << format_number(panel.exposure(i, t)) << ","
               << format_number(panel.outcome(i, t));
            for (const auto& cov : panel.covariates) os << "," << format_number(cov(i, t));
            if (panel.clusters) os << ",c" << panel.clusters->cluster_of[i];
            if (panel.coordinates)
                os << "," << format_number((*panel.coordinates)(i, 0)) << ","
                   << format_number((*panel.coordinates)(i, 1));
            os << "\n";
        }
    return os.str();
}

NetworkGraph load_graph(std::istream& in, const std::vector<std::string>& unit_ids) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < unit_ids.size(); ++i) index.emplace(unit_ids[i], static_cast<int>(i));

    const int n = static_cast<int>(unit_ids.size());
    // weight map keyed by (min,max) pair; last occurrence wins
    std::map<std::pair<int, int>, double> edges;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line[line.find_first_not_of(" \t")] == '#') continue;
        std::stringstream ss(line);
        std::string a, b, w;
        if (!(ss >> a >> b))
            throw Error(ErrorCode::ParseError,
                        "edge list row " + std::to_string(line_no) + " needs two unit ids");
        double weight = 1.0;
        if (ss >> w) weight = parse_number(w, "edge list row " + std::to_string(line_no));
        std::string extra;
        if (ss >> extra)
            throw Error(ErrorCode::ParseError,
                        "edge list row " + std::to_string(line_no) + " has trailing fields");
        auto ia = index.find(a);
        auto ib = index.find(b);
        if (ia == index.end())
            throw Error(ErrorCode::UnknownUnit, "edge list row " + std::to_string(line_no) +
                                                    " references unknown unit '" + a + "'");
        if (ib == index.end())
            throw Error(ErrorCode::UnknownUnit, "edge list row " + std::to_string(line_no) +
                                                    " references unknown unit '" + b + "'");
        if (ia->second == ib->second)
            throw Error(ErrorCode::ParseError, "edge list row " + std::to_string(line_no) +
                                                   " is a self loop on unit '" + a + "'");
        const int lo = std::min(ia->second, ib->second);
        const int hi = std::max(ia->second, ib->second);
        edges[{lo, hi}] = weight;
    }

    NetworkGraph g;
    g.adjacency.resize(n);
    g.weights.resize(n);
    for (const auto& [edge, weight] : edges) {
        g.adjacency[edge.first].push_back(edge.second);
        g.weights[edge.first].push_back(weight);
        g.adjacency[edge.second].push_back(edge.first);
        g.weights[edge.second].push_back(weight);
    }
    // std::map iteration already yields sorted neighbors for the lower endpoint;
    // sort both sides defensively (weights move with their neighbor).
    for (int i = 0; i < n; ++i) {
        std::vector<int> order(g.adjacency[i].size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
        std::sort(order.begin(), order.end(),
                  [&](int p, int q) { return g.adjacency[i][p] < g.adjacency[i][q]; });
        std::vector<int> adj(order.size());
        std::vector<double> wts(order.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            adj[k] = g.adjacency[i][order[k]];
            wts[k] = g.weights[i][order[k]];
        }
        g.adjacency[i] = std::move(adj);
        g.weights[i] = std::move(wts);
    }
    return g;
}

NetworkGraph load_graph_file(const std::string& path, const std::vector<std::string>& unit_ids) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open graph file '" + path + "'");
    return load_graph(in, unit_ids);
}

NetworkGraph line_graph(int n) {
    if (n <= 0) throw Error(ErrorCode::InvalidSize, "line graph needs at least one unit");
    NetworkGraph g;
    g.adjacency.resize(n);
    g.weights.resize(n);
    for (int i = 0; i + 1 < n; ++i) {
        g.adjacency[i].push_back(i + 1);
        g.weights[i].push_back(1.0);
        g.adjacency[i + 1].push_back(i);
        g.weights[i + 1].push_back(1.0);
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());
    return g;
}

std::vector<std::vector<int>> graph_rings_up_to(const NetworkGraph& graph, int i, int max_s) {
    const int n = graph.unit_count();
    if (i < 0 || i >= n)
        throw Error(ErrorCode::IndexError, "ring center " + std::to_string(i) +
                                               " outside unit range [0, " + std::to_string(n) + ")");
    if (max_s < 0)
        throw Error(ErrorCode::IndexError, "ring distance must be non-negative");
    std::vector<std::vector<int>> rings(max_s + 1);
    std::vector<int> dist(n, -1);
    std::deque<int> queue;
    dist[i] = 0;
    queue.push_back(i);
    rings[0].push_back(i);
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        if (dist[u] == max_s) continue;
        for (int v : graph.adjacency[u]) {
            if (dist[v] >= 0) continue;
            dist[v] = dist[u] + 1;
            rings[dist[v]].push_back(v);
            queue.push_back(v);
        }
    }
    return rings;
}

std::vector<int> graph_rings(const NetworkGraph& graph, int i, int s) {
    return graph_rings_up_to(graph, i, s)[s];
}

ValidationReport validate_panel(const PanelDataset& panel) {
    ValidationReport report;
    const int n = panel.unit_count();
    const int T = panel.tau() + 1;
    if (panel.exposure.rows() != n || panel.outcome.rows() != n)
        report.add_error(ErrorCode::InvalidSize, "exposure/outcome row count differs from unit count");
    if (panel.exposure.cols() != panel.outcome.cols())
        report.add_error(ErrorCode::InvalidSize, "exposure and outcome column counts differ");
    if (static_cast<int>(panel.time_labels.size()) != T)
        report.add_error(ErrorCode::InvalidSize, "time label count differs from time dimension");
    for (const auto& cov : panel.covariates)
        if (cov.rows() != n || cov.cols() != T)
            report.add_error(ErrorCode::InvalidSize, "covariate matrix shape mismatch");
    if (panel.exposure.hasNaN() || panel.outcome.hasNaN())
        report.add_error(ErrorCode::UnbalancedPanel, "missing exposure or outcome cells");
    if (panel.clusters) {
        const auto& cm = *panel.clusters;
        if (static_cast<int>(cm.cluster_of.size()) != n)
            report.add_error(ErrorCode::InvalidSize, "cluster assignment length differs from unit count");
        std::size_t total = 0;
        for (const auto& members : cm.members) total += members.size();
        if (total != static_cast<std::size_t>(n))
            report.add_error(ErrorCode::InvalidSize, "cluster membership does not partition the units");
    }
    if (panel.graph && panel.graph->unit_count() != n)
        report.add_error(ErrorCode::InvalidSize, "graph size differs from unit count");
    if (panel.coordinates && panel.coordinates->rows() != n)
        report.add_error(ErrorCode::InvalidSize, "coordinate count differs from unit count");
    if (panel.alphabet == ExposureAlphabet::Binary) {
        for (int i = 0; i < n && report.errors.empty(); ++i)
            for (int t = 0; t < T; ++t) {
                const double a = panel.exposure(i, t);
                if (a != 0.0 && a != 1.0) {
                    report.add_error(ErrorCode::ParseError, "non-binary exposure value",
                                     "unit " + panel.unit_ids[i]);
                    break;
                }
            }
    }
    return report;
}

}  // namespace snmm
