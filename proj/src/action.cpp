#include "bpdx/action.hpp"

#include <algorithm>

#include "bpdx/bundle.hpp"

namespace bpdx {

Action Action::send_to(std::string node) {
    return {"send-to", nlohmann::json{{"node", std::move(node)}}};
}

Action Action::drop() { return {"drop", nlohmann::json::object()}; }

std::string Action::target() const {
    if (!is_send_to()) return {};
    const auto it = args.find("node");
    return it != args.end() && it->is_string() ? it->get<std::string>() : std::string{};
}

std::vector<VerbDescriptor> core_verbs() {
    return {
        {"send-to", {{"node", "node-name"}}, {Action::send_to("example")}},
        {"drop", nlohmann::json::object(), {Action::drop()}},
    };
}

std::optional<ActionListError> validate_action_list(std::span<const Action> actions,
                                                    std::span<const VerbDescriptor> supported) {
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto& action = actions[i];
        if (!action.args.is_object()) return ActionListError{"bad-args", i};
        if (action.is_send_to()) {
            const auto it = action.args.find("node");
            if (it == action.args.end() || !it->is_string() ||
                !valid_node_name(it->get_ref<const std::string&>()))
                return ActionListError{"bad-args", i};
            continue;
        }
        if (action.is_drop()) {
            if (!action.args.empty()) return ActionListError{"bad-args", i};
            continue;
        }
        const auto known = std::any_of(supported.begin(), supported.end(),
                                       [&](const VerbDescriptor& d) { return d.verb == action.verb; });
        if (!known) return ActionListError{"unknown-verb", i};
    }
    return std::nullopt;
}

void to_json(nlohmann::json& j, const Action& action) {
    j = nlohmann::json{{"verb", action.verb}, {"args", action.args}};
}

void from_json(const nlohmann::json& j, Action& action) {
    j.at("verb").get_to(action.verb);
    action.args = j.contains("args") ? j.at("args") : nlohmann::json::object();
}

void to_json(nlohmann::json& j, const VerbDescriptor& descriptor) {
    j = nlohmann::json{{"verb", descriptor.verb}, {"args", descriptor.args}, {"example", descriptor.example}};
}

void from_json(const nlohmann::json& j, VerbDescriptor& descriptor) {
    j.at("verb").get_to(descriptor.verb);
    descriptor.args = j.value("args", nlohmann::json::object());
    descriptor.example = j.value("example", ActionList{});
}

std::string to_string(const ActionList& actions) {
    std::string out = "[";
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (i) out += ", ";
        out += actions[i].verb;
        if (actions[i].is_send_to()) out += "(" + actions[i].target() + ")";
    }
    return out + "]";
}

}  // namespace bpdx
