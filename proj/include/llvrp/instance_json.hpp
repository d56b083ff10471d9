#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "llvrp/vrp.hpp"

namespace llvrp {

// Canonical JSON form:
//   {"kind","n","metric","coords":[[x,y],...],"demands":[...],"capacity","seed"}
// Floats carry 17 significant digits so the text round-trips bit-exactly. A
// trailing "rounding" field appears only for rounded benchmark instances.
std::string instance_to_json(const Instance& inst);
Instance instance_from_json(std::string_view text);

void save_instance(const Instance& inst, const std::filesystem::path& path);
Instance load_instance(const std::filesystem::path& path);

}  // namespace llvrp
