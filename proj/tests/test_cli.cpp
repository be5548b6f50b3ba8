#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "snmm/cli.hpp"

using namespace snmm;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "snmm-cli-tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

// Twelve units on a path graph, binary exposure, three waves. Both exposure
// values appear inside every decision-time history stratum: a0 splits units
// 0-3 vs 4-11, and within each a0 cell some units take a1 and some do not.
std::string tiny_panel_csv(bool all_exposed_at_zero) {
    std::string csv = "unit,time,a,y\n";
    for (int i = 0; i < 12; ++i) {
        int a0 = all_exposed_at_zero ? 1 : (i < 4 ? 1 : 0);
        int a1 = all_exposed_at_zero ? 1 : ((i < 2 || (i >= 4 && i < 7)) ? 1 : 0);
        int a2 = all_exposed_at_zero ? 1 : a1;
        const double base = 0.1 * i;
        const double y0 = base;
        const double y1 = base + 0.3 + 0.8 * a0 + 0.01 * ((i * 7) % 5);
        const double y2 = base + 0.6 + 0.9 * a0 + 0.7 * a1 + 0.01 * ((i * 3) % 4);
        char row[160];
        std::snprintf(row, sizeof(row), "u%02d,0,%d,%.4f\nu%02d,1,%d,%.4f\nu%02d,2,%d,%.4f\n",
                      i, a0, y0, i, a1, y1, i, a2, y2);
        csv += row;
    }
    return csv;
}

std::string tiny_edges_txt() {
    std::string txt;
    for (int i = 0; i + 1 < 12; ++i) {
        char row[32];
        std::snprintf(row, sizeof(row), "u%02d u%02d\n", i, i + 1);
        txt += row;
    }
    return txt;
}

std::string tiny_estimate_config(const std::string& panel_name, const std::string& graph_name,
                                 const std::string& blip, const std::string& variance,
                                 const std::string& out_dir) {
    return std::string("{\n") + "  \"mode\": \"estimate\",\n  \"seed\": 3,\n" +
           "  \"data\": {\"panel\": \"" + panel_name + "\", \"graph\": \"" + graph_name +
           "\",\n    \"schema\": {\"unit\": \"unit\", \"time\": \"time\", \"exposure\": "
           "\"a\", \"outcome\": \"y\", \"alphabet\": \"binary\"}},\n" +
           "  \"mapping\": {\"kind\": \"direct\"},\n" + "  \"blip\": \"" + blip + "\",\n" +
           "  \"variance\": " + variance + ",\n" +
           "  \"output\": {\"directory\": \"" + out_dir + "\", \"basename\": \"tiny\"}\n}\n";
}

const char kTinyBlip[] = "m=0 { b0: a[m]; } m=1 { b1: a[m]; }";

std::string shipped_config(const char* name) {
    return std::string(SNMM_SOURCE_DIR) + "/configs/" + name;
}

}  // namespace

TEST_CASE("simulate writes byte-identical reports for a fixed config") {
    const fs::path dir = fresh_dir("sim-repro");
    const std::string config = std::string("{\n") +
        "  \"mode\": \"simulate\",\n  \"seed\": 5,\n  \"dgp\": \"cluster\",\n" +
        "  \"study\": {\"clusters\": 300},\n  \"replicates\": 2,\n" +
        "  \"variance\": {\"method\": \"sandwich\"},\n" +
        "  \"output\": {\"directory\": \"" + (dir / "out").string() +
        "\", \"basename\": \"cluster_tiny\"}\n}\n";

    const CliRun first = run_cli_text(CliCommand::Simulate, config, dir.string());
    CHECK(first.exit_code == 0);
    REQUIRE(first.written_files.size() == 2);
    const std::string human = read_file(first.written_files[0]);
    const std::string machine = read_file(first.written_files[1]);
    CHECK(human.find("snmm simulate") == 0);

    const CliRun second = run_cli_text(CliCommand::Simulate, config, dir.string());
    CHECK(second.exit_code == 0);
    CHECK(read_file(second.written_files[0]) == human);
    CHECK(read_file(second.written_files[1]) == machine);

    const ordered_json doc = ordered_json::parse(machine);
    CHECK(doc["tool"] == "snmm");
    CHECK(doc["command"] == "simulate");
    CHECK(doc["config"]["seed"] == 5);
    CHECK(doc["config"]["dgp"] == "cluster");
    CHECK(doc["config"]["study"]["psi"].size() == 7);
    CHECK(doc["report"]["study"] == "cluster");
    CHECK(doc["report"]["completed"] == 2);
    CHECK(doc["report"]["rows"].size() == 7);
}

TEST_CASE("command-line overrides replace the configured seed and output") {
    const fs::path dir = fresh_dir("sim-overrides");
    const std::string config = std::string("{\n") +
        "  \"mode\": \"simulate\",\n  \"seed\": 5,\n  \"dgp\": \"cluster\",\n" +
        "  \"study\": {\"clusters\": 200},\n  \"replicates\": 2,\n" +
        "  \"variance\": {\"method\": \"sandwich\"},\n" +
        "  \"output\": {\"directory\": \"ignored\", \"basename\": \"ov\"}\n}\n";
    CliOverrides overrides;
    overrides.seed = 9;
    overrides.output_directory = (dir / "chosen").string();

    const CliRun run = run_cli_text(CliCommand::Simulate, config, dir.string(), overrides);
    REQUIRE(run.exit_code == 0);
    REQUIRE(run.written_files.size() == 2);
    CHECK(run.written_files[0].find((dir / "chosen").string()) == 0);
    const ordered_json doc = ordered_json::parse(read_file(run.written_files[1]));
    CHECK(doc["config"]["seed"] == 9);
    CHECK(doc["config"]["output"]["directory"] == (dir / "chosen").string());
}

TEST_CASE("the shipped county example estimates, validates, and reproduces") {
    const fs::path dir = fresh_dir("county");
    CliOverrides overrides;
    overrides.output_directory = (dir / "out").string();

    const CliRun run =
        run_cli(CliCommand::Estimate, shipped_config("estimate_spatial.json"), overrides);
    INFO(run.console_text);
    REQUIRE(run.exit_code == 0);
    REQUIRE(run.written_files.size() == 2);

    const ordered_json doc = ordered_json::parse(read_file(run.written_files[1]));
    CHECK(doc["panel"]["units"] == 96);
    CHECK(doc["panel"]["structure"] == "network");
    CHECK(doc["blip"]["parameters"] == 11);
    CHECK(doc["variance"]["method"] == "spatial-block-bootstrap");
    CHECK(doc["variance"]["hex_width_km"] == 75.0);
    REQUIRE(doc["parameters"].size() == 11);
    REQUIRE(doc["estimands"].size() == 6);
    const std::vector<std::string> expected_labels = {
        "gamma_{0,1}(a0=1, h0=0)", "gamma_{0,1}(a0=1, h0=1)", "gamma_{0,1}(a0=0, h0=1)",
        "gamma_{0,2}(a0=1, h0=0)", "gamma_{0,2}(a0=1, h0=1)", "gamma_{0,2}(a0=0, h0=1)"};
    for (std::size_t i = 0; i < expected_labels.size(); ++i) {
        const ordered_json& row = doc["estimands"][i];
        CHECK(row["label"] == expected_labels[i]);
        CHECK(std::isfinite(row["estimate"].get<double>()));
        CHECK(std::isfinite(row["se"].get<double>()));
        CHECK(row["se"].get<double>() > 0.0);
        CHECK(row["ci_lower"].get<double>() < row["ci_upper"].get<double>());
    }

    const std::string machine = read_file(run.written_files[1]);
    const CliRun again =
        run_cli(CliCommand::Estimate, shipped_config("estimate_spatial.json"), overrides);
    REQUIRE(again.exit_code == 0);
    CHECK(read_file(again.written_files[1]) == machine);

    const CliRun check = run_cli(CliCommand::Validate, shipped_config("estimate_spatial.json"));
    INFO(check.console_text);
    CHECK(check.exit_code == 0);
    CHECK(check.written_files.empty());
    CHECK(check.console_text.find("config ok (estimate)") == 0);
}

TEST_CASE("the shipped simulation configs validate without running") {
    const CliRun network = run_cli(CliCommand::Validate, shipped_config("network_sim.json"));
    INFO(network.console_text);
    CHECK(network.exit_code == 0);
    CHECK(network.console_text.find("config ok (simulate)") == 0);
    const CliRun cluster = run_cli(CliCommand::Validate, shipped_config("cluster_sim.json"));
    CHECK(cluster.exit_code == 0);
}

TEST_CASE("estimate covers every variance method through the config") {
    const fs::path dir = fresh_dir("methods");
    write_file(dir / "panel.csv", tiny_panel_csv(false));
    write_file(dir / "edges.txt", tiny_edges_txt());

    SUBCASE("network HAC resolves documented defaults") {
        const std::string config =
            tiny_estimate_config("panel.csv", "edges.txt", kTinyBlip,
                                 "{\"method\": \"network-hac\"}", (dir / "out").string());
        const CliRun run = run_cli_text(CliCommand::Estimate, config, dir.string());
        INFO(run.console_text);
        REQUIRE(run.exit_code == 0);
        const ordered_json doc = ordered_json::parse(read_file(run.written_files[1]));
        CHECK(doc["variance"]["method"] == "network-hac");
        CHECK(doc["variance"]["kernel"] == "bartlett");
        CHECK(doc["variance"]["bandwidth"].get<double>() > 0.0);
        CHECK(doc["variance"]["max_lag"].get<int>() > 0);
    }

    SUBCASE("non-bootstrap methods report point-only estimands") {
        const std::string config = tiny_estimate_config(
            "panel.csv", "edges.txt", kTinyBlip,
            "{\"method\": \"sandwich\"}", (dir / "out").string());
        ordered_json doc = ordered_json::parse(config, nullptr, true, true);
        doc["estimands"] = ordered_json::array(
            {ordered_json{{"kind", "untreated_trajectory"}, {"k", 2}}});
        const CliRun run = run_cli_text(CliCommand::Estimate, doc.dump(), dir.string());
        INFO(run.console_text);
        REQUIRE(run.exit_code == 0);
        const ordered_json report = ordered_json::parse(read_file(run.written_files[1]));
        REQUIRE(report["estimands"].size() == 1);
        CHECK(report["estimands"][0]["label"] == "untreated_trajectory(k=2)");
        CHECK(std::isfinite(report["estimands"][0]["estimate"].get<double>()));
        CHECK(report["estimands"][0]["se"].is_null());
        CHECK(report["estimands"][0]["ci_lower"].is_null());
    }

    SUBCASE("moving block bootstrap attaches estimand intervals") {
        const std::string config = tiny_estimate_config(
            "panel.csv", "edges.txt", kTinyBlip,
            "{\"method\": \"moving-block-bootstrap\", \"block_length\": 3, \"replicates\": 40}",
            (dir / "out").string());
        ordered_json doc = ordered_json::parse(config, nullptr, true, true);
        doc["estimands"] = ordered_json::array(
            {ordered_json{{"kind", "untreated_trajectory"}, {"k", 2}}});
        const CliRun run = run_cli_text(CliCommand::Estimate, doc.dump(), dir.string());
        INFO(run.console_text);
        REQUIRE(run.exit_code == 0);
        const ordered_json report = ordered_json::parse(read_file(run.written_files[1]));
        CHECK(report["estimands"][0]["se"].get<double>() > 0.0);
        CHECK(report["estimands"][0]["ci_lower"].get<double>() <
              report["estimands"][0]["ci_upper"].get<double>());
        CHECK(report["variance"]["replicates"] == 40);
    }
}

TEST_CASE("malformed configs and inputs exit with code 2") {
    const fs::path dir = fresh_dir("bad-configs");
    write_file(dir / "panel.csv", tiny_panel_csv(false));
    write_file(dir / "edges.txt", tiny_edges_txt());

    SUBCASE("invalid JSON") {
        const CliRun run = run_cli_text(CliCommand::Estimate, "{ \"mode\": ", dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("ConfigError") != std::string::npos);
        CHECK(run.console_text.find("not valid JSON") != std::string::npos);
    }

    SUBCASE("unknown top-level field") {
        const CliRun run = run_cli_text(
            CliCommand::Simulate,
            "{\"mode\": \"simulate\", \"dgp\": \"cluster\", \"bogus\": 1}", dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("unknown field 'bogus'") != std::string::npos);
    }

    SUBCASE("wrong mode for the command") {
        const CliRun run =
            run_cli_text(CliCommand::Estimate,
                         "{\"mode\": \"simulate\", \"dgp\": \"cluster\"}", dir.string());
        CHECK(run.exit_code == 2);
    }

    SUBCASE("zero Monte Carlo replicates") {
        const CliRun run = run_cli_text(
            CliCommand::Simulate,
            "{\"mode\": \"simulate\", \"dgp\": \"cluster\", \"study\": {\"clusters\": 50}, "
            "\"replicates\": 0, \"variance\": {\"method\": \"sandwich\"}}",
            dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("ConfigError") != std::string::npos);
    }

    SUBCASE("naive comparison refuses non-bootstrap intervals") {
        const CliRun run = run_cli_text(
            CliCommand::Simulate,
            "{\"mode\": \"simulate\", \"dgp\": \"naive_comparison\", \"replicates\": 2, "
            "\"variance\": {\"method\": \"sandwich\"}}",
            dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("moving-block-bootstrap") != std::string::npos);
    }

    SUBCASE("missing config file") {
        const CliRun run = run_cli(CliCommand::Estimate, (dir / "nope.json").string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("cannot open config file") != std::string::npos);
    }

    SUBCASE("missing graph file") {
        const std::string config =
            tiny_estimate_config("panel.csv", "missing_edges.txt", kTinyBlip,
                                 "{\"method\": \"sandwich\"}", (dir / "out").string());
        const CliRun run = run_cli_text(CliCommand::Estimate, config, dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("ParseError") != std::string::npos);
    }

    SUBCASE("custom mapping is library-only") {
        std::string config =
            tiny_estimate_config("panel.csv", "edges.txt", kTinyBlip,
                                 "{\"method\": \"sandwich\"}", (dir / "out").string());
        ordered_json doc = ordered_json::parse(config, nullptr, true, true);
        doc["mapping"]["kind"] = "custom";
        const CliRun run = run_cli_text(CliCommand::Estimate, doc.dump(), dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find("library API") != std::string::npos);
    }

    SUBCASE("validate rejects out-of-range estimand times") {
        std::string config =
            tiny_estimate_config("panel.csv", "edges.txt", kTinyBlip,
                                 "{\"method\": \"sandwich\"}", (dir / "out").string());
        ordered_json doc = ordered_json::parse(config, nullptr, true, true);
        doc["estimands"] = ordered_json::array(
            {ordered_json{{"kind", "untreated_trajectory"}, {"k", 9}}});
        const CliRun run = run_cli_text(CliCommand::Validate, doc.dump(), dir.string());
        CHECK(run.exit_code == 2);
        CHECK(run.console_text.find(".k must be between 1 and 2") != std::string::npos);
    }
}

TEST_CASE("statistical refusals exit with code 3") {
    const fs::path dir = fresh_dir("refusals");
    write_file(dir / "panel.csv", tiny_panel_csv(false));
    write_file(dir / "all_exposed.csv", tiny_panel_csv(true));
    write_file(dir / "edges.txt", tiny_edges_txt());

    SUBCASE("blip term without a decision-time exposure factor") {
        const std::string config =
            tiny_estimate_config("panel.csv", "edges.txt", "m=0 { c: timegap; }",
                                 "{\"method\": \"sandwich\"}", (dir / "out").string());
        const CliRun run = run_cli_text(CliCommand::Estimate, config, dir.string());
        CHECK(run.exit_code == 3);
        CHECK(run.console_text.find("ZeroConstraintViolation") != std::string::npos);
    }

    SUBCASE("no never-exposed units anywhere") {
        const std::string config =
            tiny_estimate_config("all_exposed.csv", "edges.txt", kTinyBlip,
                                 "{\"method\": \"sandwich\"}", (dir / "out").string());
        const CliRun run = run_cli_text(CliCommand::Estimate, config, dir.string());
        CHECK(run.exit_code == 3);
        CHECK(run.console_text.find("PositivityViolation") != std::string::npos);
    }
}

TEST_CASE("the real binary round-trips through the shell") {
    const fs::path dir = fresh_dir("binary");
    const std::string out = (dir / "stdout.txt").string();

    const std::string ok_cmd = std::string(SNMM_CLI_PATH) + " validate " +
                               shipped_config("cluster_sim.json") + " > " + out + " 2>&1";
    int status = std::system(ok_cmd.c_str());
    REQUIRE(status != -1);
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(read_file(out).find("config ok (simulate)") != std::string::npos);

    // trim the shipped study to seconds: 2 runs over 200 clusters
    ordered_json doc = ordered_json::parse(read_file(shipped_config("cluster_sim.json")),
                                           nullptr, true, true);
    doc["replicates"] = 2;
    doc["study"]["clusters"] = 200;
    write_file(dir / "small_sim.json", doc.dump(2));
    const std::string small_cmd = std::string(SNMM_CLI_PATH) + " simulate " +
                                  (dir / "small_sim.json").string() + " --seed 4 --output " +
                                  (dir / "run").string() + " > /dev/null 2>&1";
    status = std::system(small_cmd.c_str());
    REQUIRE(status != -1);
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(fs::exists(dir / "run" / "cluster_study.txt"));
    CHECK(fs::exists(dir / "run" / "cluster_study.json"));
    const ordered_json report =
        ordered_json::parse(read_file(dir / "run" / "cluster_study.json"));
    CHECK(report["config"]["seed"] == 4);

    const std::string bad_cmd = std::string(SNMM_CLI_PATH) + " > /dev/null 2>&1";
    status = std::system(bad_cmd.c_str());
    REQUIRE(status != -1);
    CHECK(WEXITSTATUS(status) == 2);
}
