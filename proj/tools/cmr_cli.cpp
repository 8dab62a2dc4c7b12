#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmr/config.hpp"
#include "cmr/errors.hpp"
#include "cmr/report.hpp"

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw cmr::ContractViolation("cannot read file '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw cmr::ContractViolation("cannot parse '" + path + "': " + e.what());
    }
}

void emit(const json& report, const std::string& out_path,
          const std::string& format, bool quiet) {
    const std::string body =
        format == "csv" ? cmr::to_csv(report) : report.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << body;
        return;
    }
    std::ofstream out(out_path);
    if (!out) {
        throw cmr::ContractViolation("cannot write file '" + out_path + "'");
    }
    out << body;
    if (!quiet) std::cerr << "wrote " << out_path << "\n";
}

int run_command(const std::string& config_path, const std::string& out_path,
                const std::string& format, std::optional<std::uint64_t> seed,
                bool quiet) {
    const json config = read_json_file(config_path);
    const cmr::RunRequest request = cmr::parse_config(config);
    json report = cmr::run_task(request, seed);
    if (config.contains("dgp")) report["dgp"] = config.at("dgp");
    // The config may fix an output target; command-line flags win.
    const std::string target =
        !out_path.empty() ? out_path : config.value("out", std::string{});
    const std::string fmt = format.empty() ? config.value("format", "json") : format;
    emit(report, target, fmt, quiet);
    return 0;
}

int list_command() {
    const json listing = cmr::registry_listing();
    std::cout << "builtin laws:\n";
    for (const auto& b : listing.at("builtins")) {
        std::cout << "  " << b.at("name").get<std::string>() << "\n    "
                  << b.at("description").get<std::string>() << "\n    example: "
                  << b.at("example_config").dump() << "\n";
    }
    const auto print_families = [](const char* title, const json& families) {
        std::cout << title << ":\n";
        for (const auto& f : families) {
            std::cout << "  " << f.at("name").get<std::string>() << "\n    "
                      << f.at("description").get<std::string>()
                      << "\n    schema: " << f.at("schema").dump() << "\n";
        }
    };
    print_families("block families", listing.at("block_families"));
    print_families("selection families", listing.at("selection_families"));
    print_families("instrument families", listing.at("instrument_families"));
    return 0;
}

int compare_command(const std::vector<std::string>& paths, double tol,
                    const std::string& out_path, const std::string& format,
                    bool quiet) {
    std::vector<json> reports;
    reports.reserve(paths.size());
    for (const auto& path : paths) reports.push_back(read_json_file(path));

    json pairs = json::array();
    int flagged_total = 0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        for (std::size_t j = i + 1; j < reports.size(); ++j) {
            const cmr::CompareReport cmp =
                cmr::compare_reports(reports[i], reports[j], tol);
            json flagged = json::array();
            for (const auto& entry : cmp.shared) {
                if (entry.flagged) {
                    flagged.push_back(
                        json{{"path", entry.path}, {"diff", entry.max_abs_diff}});
                }
            }
            flagged_total += cmp.flagged_count;
            pairs.push_back(json{{"left", paths[i]},
                                 {"right", paths[j]},
                                 {"shared_paths", cmp.shared.size()},
                                 {"max_abs_diff", cmp.max_abs_diff},
                                 {"flagged_count", cmp.flagged_count},
                                 {"flagged", std::move(flagged)}});
            if (!quiet) {
                std::cout << paths[i] << " vs " << paths[j]
                          << ": max abs diff " << cmp.max_abs_diff << " over "
                          << cmp.shared.size() << " shared values, "
                          << cmp.flagged_count << " above " << tol << "\n";
            }
        }
    }
    const json summary{{"task", "compare"},
                       {"tol", tol},
                       {"pairs", std::move(pairs)},
                       {"flagged_total", flagged_total}};
    if (!out_path.empty() || quiet) {
        emit(summary, out_path, format.empty() ? "json" : format, quiet);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional-moment efficiency bounds and efficient scores"};
    app.require_subcommand(1);
    bool quiet = false;

    auto* run = app.add_subcommand("run", "execute a config-driven task");
    std::string config_path, run_out, run_format;
    std::uint64_t seed_value = 0;
    run->add_option("--config", config_path, "config file (JSON)")->required();
    run->add_option("--out", run_out, "output path (default: stdout)");
    run->add_option("--format", run_format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    auto* seed_opt =
        run->add_option("--seed", seed_value, "override the config seed");
    run->add_flag("--quiet", quiet, "suppress log lines on stderr");

    auto* list = app.add_subcommand("list", "print the builtin registry");

    auto* compare = app.add_subcommand("compare", "diff reports numerically");
    std::vector<std::string> report_paths;
    double tol = 0.0;
    std::string cmp_out, cmp_format;
    compare->add_option("reports", report_paths, "report files (JSON)")
        ->expected(2, -1);
    compare->add_option("--tol", tol, "flag pairs differing by more than this");
    compare->add_option("--out", cmp_out, "write the pairwise summary here");
    compare->add_option("--format", cmp_format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    compare->add_flag("--quiet", quiet, "only write the summary file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            std::optional<std::uint64_t> seed;
            if (seed_opt->count() > 0) seed = seed_value;
            return run_command(config_path, run_out, run_format, seed, quiet);
        }
        if (*list) return list_command();
        if (*compare) return compare_command(report_paths, tol, cmp_out,
                                             cmp_format, quiet);
    } catch (const cmr::ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cmr::NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
