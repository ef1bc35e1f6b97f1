// tdrg: command-line front end for the delayed-loop explicit reference governor.
//
//   tdrg simulate   <scenario.json|preset:NAME>   run a scenario, write the CSV trace
//   tdrg reproduce  <preset>                      run a built-in flow experiment, print a summary
//   tdrg lmi        <scenario> [--variant ...]    feasibility of each certificate type along K = k * 1
//   tdrg sweep      <scenario> <path> <grid>      one summary row per grid value
//   tdrg synthesize <scenario> --variant V        search for a certificate (optionally volume-optimized)
//
// Exit codes: 0 clean run, 2 constraint violation below -1e-6, 1 error.

#include "tdrg/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

tdrg::Variant to_variant(const std::string& name) {
    if (auto v = tdrg::parse_variant(name))
        return *v;
    throw tdrg::InvalidArgument("unknown variant '" + name + "' (razumikhin|krasovskii_q|krasovskii_r)");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace tdrg::cli;

    CLI::App app{"Explicit reference governor for linear systems with input delay"};
    app.require_subcommand(1);

    CommonOptions common;
    std::optional<double> dt, duration;
    std::optional<std::uint64_t> seed;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", common.out, "Output path ('-' for stdout)");
        sub->add_option("--dt", dt, "Override the integration step [s]")->check(CLI::PositiveNumber);
        sub->add_option("--duration", duration, "Override the simulated duration [s]")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "Seed for certificate searches");
        sub->add_flag("--quiet", common.quiet, "Suppress summaries, notes and warnings");
    };

    std::string source;
    auto* simulate = app.add_subcommand("simulate", "Run a scenario and write its CSV trace");
    simulate->add_option("scenario", source, "Scenario file or preset:NAME")->required();
    add_common(simulate);

    std::string preset;
    auto* reproduce = app.add_subcommand("reproduce", "Run a built-in flow experiment and print a summary");
    reproduce->add_option("name", preset, "norg|erg1|erg2|erg3|erg4|aggressive-norg|aggressive-erg1|aggressive-erg4")
        ->required();
    add_common(reproduce);

    std::vector<std::string> variant_names;
    LmiScanOptions scan;
    int restarts = scan.synthesis.budget.restarts;
    auto* lmi = app.add_subcommand("lmi", "Certificate feasibility along K = k * direction, with boundaries");
    lmi->add_option("scenario", source, "Scenario file or preset:NAME")->required();
    lmi->add_option("--variant", variant_names, "Variants to scan (default: all)");
    lmi->add_option("--k-min", scan.k_min, "Lower end of the k grid");
    lmi->add_option("--k-max", scan.k_max, "Upper end of the k grid");
    lmi->add_option("--steps", scan.steps, "Number of grid points")->check(CLI::Range(2, 100000));
    lmi->add_option("--restarts", restarts, "Search restarts per probe")->check(CLI::PositiveNumber);
    add_common(lmi);

    std::string param, grid_text;
    auto* sweep = app.add_subcommand("sweep", "Run a scenario over a grid of one numeric parameter");
    sweep->add_option("scenario", source, "Scenario file or preset:NAME")->required();
    sweep->add_option("param", param, "Parameter path, e.g. erg.kappa2 or /erg/kappa2")->required();
    sweep->add_option("grid", grid_text, "Values: a,b,c or lo:hi:count (empty for none)")->required();
    add_common(sweep);

    std::string synth_variant;
    bool optimize = false;
    auto* synth = app.add_subcommand("synthesize", "Search for a stability certificate");
    synth->add_option("scenario", source, "Scenario file or preset:NAME")->required();
    synth->add_option("--variant", synth_variant, "razumikhin|krasovskii_q|krasovskii_r")->required();
    synth->add_flag("--optimize", optimize, "Minimize log det P subject to the constraint normals");
    add_common(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitError;
    }
    common.overrides = LoadOverrides{dt, duration, seed};

    try {
        if (*simulate)
            return cmd_simulate(source, common, std::cout, std::cerr);
        if (*reproduce)
            return cmd_reproduce(preset, common, std::cout, std::cerr);
        if (*lmi) {
            if (!variant_names.empty()) {
                scan.variants.clear();
                for (const auto& n : variant_names)
                    scan.variants.push_back(to_variant(n));
            }
            scan.synthesis.budget.restarts = restarts;
            return cmd_lmi(source, scan, common, std::cout);
        }
        if (*sweep)
            return cmd_sweep(source, param, parse_grid(grid_text), common, std::cout, std::cerr);
        if (*synth)
            return cmd_synthesize(source, to_variant(synth_variant), optimize, common, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
