#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "teach/core.hpp"

namespace teach {

using Json = nlohmann::json;

Json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const Json& j);

// Demonstration record: {id, scenario, agent_tag, steps: [[state], [action]]..., final_state, reward}.
Json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const Json& j);

Json segmentation_to_json(const std::string& trajectory_id, const SkillSegmentation& seg);

Json read_json_file(const std::filesystem::path& path);
// Writes `j` with a trailing newline; output bytes depend only on `j`.
void write_json_file(const std::filesystem::path& path, const Json& j, int indent = -1);

// Field accessor that reports the missing or mistyped field by name.
const Json& require_field(const Json& j, const char* name);

}  // namespace teach
