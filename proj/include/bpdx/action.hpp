#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace bpdx {

/// One bundle processing action. Core verbs are "send-to" {node} and "drop".
struct Action {
    std::string verb;
    nlohmann::json args = nlohmann::json::object();

    static Action send_to(std::string node);
    static Action drop();

    bool is_send_to() const noexcept { return verb == "send-to"; }
    bool is_drop() const noexcept { return verb == "drop"; }
    /// Target node of a send-to action; empty for anything else.
    std::string target() const;

    friend bool operator==(const Action&, const Action&) = default;
};

using ActionList = std::vector<Action>;

/// Announced action: verb plus a map of argument name -> value type.
struct VerbDescriptor {
    std::string verb;
    nlohmann::json args = nlohmann::json::object();
    /// Sample list using the verb; must itself validate.
    ActionList example;

    friend bool operator==(const VerbDescriptor&, const VerbDescriptor&) = default;
};

/// Descriptors for the verbs every node supports.
std::vector<VerbDescriptor> core_verbs();

struct ActionListError {
    std::string code;  // "unknown-verb" or "bad-args"
    std::size_t index = 0;

    std::string str() const { return code + "(" + std::to_string(index) + ")"; }
    friend bool operator==(const ActionListError&, const ActionListError&) = default;
};

/// Returns nothing when every verb is core or announced in `supported` and
/// every send-to names a valid node.
std::optional<ActionListError> validate_action_list(std::span<const Action> actions,
                                                    std::span<const VerbDescriptor> supported);

void to_json(nlohmann::json& j, const Action& action);
void from_json(const nlohmann::json& j, Action& action);
void to_json(nlohmann::json& j, const VerbDescriptor& descriptor);
void from_json(const nlohmann::json& j, VerbDescriptor& descriptor);

std::string to_string(const ActionList& actions);

}  // namespace bpdx
