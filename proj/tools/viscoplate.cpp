// Command-line front end: `viscoplate run <config>` and `viscoplate sweep <config> --axis ...`.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "viscoplate/viscoplate.hpp"

namespace {

void print_checks(const viscoplate::RunReport& rep) {
    for (const auto& c : rep.checks) {
        std::cout << "  " << c.name << ": " << viscoplate::to_string(c.verdict);
        if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
        std::cout << "\n";
    }
}

viscoplate::RunOptions make_options(int refine, bool dump, int stride, const std::string& out) {
    viscoplate::RunOptions opt;
    opt.refine = refine;
    opt.dump_grams = dump;
    if (stride > 0) opt.stride = stride;
    if (!out.empty()) opt.out = out;
    return opt;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"viscoelastic plate simulator with diagnostics"};
    app.require_subcommand(1);

    std::string config, out;
    int refine = 0, stride = 0;
    bool dump_grams = false;
    std::vector<std::string> axes;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config, "scenario file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--refine", refine, "refinement levels dt, dt/2, ... for the rate-order check")
            ->check(CLI::Range(0, 8));
        cmd->add_option("--out", out, "output directory (overrides [output] dir)");
        cmd->add_option("--stride", stride, "write every K-th step to timeseries.csv")
            ->check(CLI::PositiveNumber);
        cmd->add_flag("--dump-grams", dump_grams, "write M0.csv, M1.csv, M2.csv");
    };
    auto* run_cmd = app.add_subcommand("run", "run one scenario");
    add_common(run_cmd);
    auto* sweep_cmd = app.add_subcommand("sweep", "run the Cartesian product of --axis values");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--axis", axes, "key=v1,v2,... (repeatable); kernel.b0/a/q edit the kernel")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    viscoplate::Scenario sc;
    try {
        sc = viscoplate::parse_scenario(config);
    } catch (const viscoplate::ConfigError& e) {
        std::cerr << config << ": invalid scenario\n";
        for (const auto& issue : e.issues()) std::cerr << "  " << issue << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    const auto opt = make_options(refine, dump_grams, stride, out);

    if (*run_cmd) {
        const auto outcome = viscoplate::run_scenario(sc, opt);
        std::cout << sc.name << " -> " << outcome.dir.string() << "\n";
        if (outcome.report) print_checks(*outcome.report);
        if (!outcome.error.empty()) std::cerr << "error: " << outcome.error << "\n";
        std::cout << "exit " << outcome.exit_code << "\n";
        return outcome.exit_code;
    }

    std::vector<viscoplate::SweepAxis> parsed;
    try {
        for (const auto& a : axes) parsed.push_back(viscoplate::parse_axis(a));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    const auto cells = viscoplate::sweep(sc, parsed, opt);
    int worst = 0;
    for (const auto& cell : cells) {
        std::cout << "cell " << cell.index << ":";
        for (const auto& v : cell.values) std::cout << " " << v;
        std::cout << " -> exit " << cell.outcome.exit_code;
        if (!cell.outcome.error.empty()) std::cout << " (" << cell.outcome.error << ")";
        std::cout << "\n";
        worst = std::max(worst, cell.outcome.exit_code);
    }
    return worst;
}
