// qtraj command-line runner: execute experiment specs, describe their key
// schemas, print the version. Exit codes: 0 success, 2 spec problem,
// 3 runtime/convergence failure.
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "qtraj/experiment.hpp"

namespace {

int cmd_run(const std::string& spec_path) {
    std::ifstream f(spec_path, std::ios::binary);
    if (!f) throw qtraj::spec_error("cannot open spec file '" + spec_path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    const qtraj::ExperimentSpec spec = qtraj::parse_spec(ss.str());
    const qtraj::ResultManifest manifest = qtraj::run(spec);
    for (const qtraj::ArtifactInfo& a : manifest.artifacts)
        std::cout << "wrote " << a.path << " (" << a.rows << " rows)\n";
    std::cout << "wrote " << manifest.path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous weak-measurement qubit trajectory toolkit"};
    app.require_subcommand(1);

    std::string spec_path;
    CLI::App* run_cmd = app.add_subcommand("run", "execute a JSON experiment spec");
    run_cmd->add_option("spec-file", spec_path, "path to the spec document")->required();

    std::string kind;
    CLI::App* describe_cmd =
        app.add_subcommand("describe", "show required/optional keys for an experiment kind");
    describe_cmd->add_option("kind", kind, "experiment kind")->required();

    CLI::App* version_cmd = app.add_subcommand("version", "print the version string");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(spec_path);
        if (describe_cmd->parsed()) {
            std::cout << qtraj::describe(kind);
            return 0;
        }
        if (version_cmd->parsed()) {
            std::cout << qtraj::version_string() << "\n";
            return 0;
        }
    } catch (const qtraj::spec_error& e) {
        std::cerr << "spec error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
