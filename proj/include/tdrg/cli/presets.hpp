#pragma once

/// Built-in scenarios for the water-flow experiment: scalar plant
/// x' = -0.82 x + 0.7279 u(t - 0.8), flow bound x <= 26.6, set-point 26.

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tdrg::cli {

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"norg", "erg1",      "erg2",           "erg3",
                                                "erg4", "aggressive-norg", "aggressive-erg1", "aggressive-erg4"};
    return names;
}

namespace detail {

inline nlohmann::json flow_base(double k) {
    using nlohmann::json;
    json doc;
    doc["system"] = {{"A", {{-0.82}}}, {"B", {{0.7279}}}, {"C", {{1.0}}}, {"D", {{0.0}}}, {"tau", 0.8}};
    doc["constraints"] = json::array({{{"h_x", {-1.0}}, {"h_u", {0.0}}, {"g", 26.6}}});
    doc["controller"] = {{"K", {{k}}}};
    doc["erg"] = "none";
    doc["run"] = {{"dt", 1e-3},
                  {"duration", 60.0},
                  {"x0", {0.0}},
                  {"v0", {0.0}},
                  {"reference", json::array({{{"t", 0.0}, {"value", {26.0}}}})}};
    doc["output"] = {{"decimation", 1}};
    return doc;
}

inline nlohmann::json erg_block(double T, const char* variant) {
    return {{"T", T},         {"kappa1", 50.0}, {"kappa2", 20.0}, {"eta", 1.0},
            {"zeta", 0.3},    {"delta", 0.05},  {"update_period", 0.01}, {"variant", variant}};
}

}  // namespace detail

/// Scenario document for a preset name (an optional "flow-" prefix is
/// accepted), or nullopt if the name is unknown.
inline std::optional<nlohmann::json> preset_scenario(std::string_view name) {
    using nlohmann::json;
    if (name.substr(0, 5) == "flow-")
        name.remove_prefix(5);

    const bool aggressive = name.substr(0, 11) == "aggressive-";
    const std::string_view base = aggressive ? name.substr(11) : name;
    const double k = aggressive ? -1.68 : -1.0;
    // The prediction horizon must cover the delay, so the Lyapunov-based
    // presets use T = tau = 0.8 s.
    constexpr double kTerminalHorizon = 0.8;

    json doc = detail::flow_base(k);
    if (base == "norg") {
        return doc;
    } else if (base == "erg1") {
        doc["erg"] = detail::erg_block(7.0, "infinite_horizon");
        return doc;
    } else if (base == "erg4") {
        doc["erg"] = detail::erg_block(kTerminalHorizon, "terminal");
        doc["certificate"] = {{"variant", "krasovskii_r"}, {"P", {{1.0}}}, {"R", {{aggressive ? 0.64 : 0.95}}},
                              {"seed", 0}};
        return doc;
    } else if (!aggressive && base == "erg2") {
        doc["erg"] = detail::erg_block(kTerminalHorizon, "terminal");
        doc["certificate"] = {{"variant", "razumikhin"}, {"P", {{1.0}}}, {"q", 0.82}};
        return doc;
    } else if (!aggressive && base == "erg3") {
        doc["erg"] = detail::erg_block(kTerminalHorizon, "terminal");
        doc["certificate"] = {{"variant", "krasovskii_q"}, {"P", {{1.0}}}, {"Q", {{0.86}}}};
        return doc;
    }
    return std::nullopt;
}

}  // namespace tdrg::cli
