#include "llvrp/instance_json.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "llvrp/error.hpp"

namespace llvrp {

std::string instance_to_json(const Instance& inst) {
  std::string out = fmt::format(R"({{"kind":"{}","n":{},"metric":"{}","coords":[)",
                                to_string(inst.kind), inst.size(), to_string(inst.metric));
  for (std::size_t i = 0; i < inst.coords.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("[{:.17g},{:.17g}]", inst.coords[i].x, inst.coords[i].y);
  }
  out += R"(],"demands":[)";
  for (std::size_t i = 0; i < inst.demands.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(inst.demands[i]);
  }
  out += fmt::format(R"(],"capacity":{},"seed":{})", inst.capacity, inst.seed);
  if (inst.rounding != CostRounding::None) {
    out += fmt::format(R"(,"rounding":"{}")", to_string(inst.rounding));
  }
  out += "}";
  return out;
}

Instance instance_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("instance JSON: {}", e.what()));
  }
  try {
    Instance inst;
    inst.kind = parse_problem_kind(j.at("kind").get<std::string>());
    inst.metric = parse_metric(j.at("metric").get<std::string>());
    for (const auto& c : j.at("coords")) {
      if (c.size() != 2) throw ParseError("instance JSON: coordinate is not a pair");
      inst.coords.push_back({c[0].get<double>(), c[1].get<double>()});
    }
    inst.demands = j.value("demands", std::vector<int>{});
    inst.capacity = j.value("capacity", 0);
    inst.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("rounding")) inst.rounding = parse_rounding(j["rounding"].get<std::string>());
    const auto n = j.at("n").get<std::size_t>();
    if (inst.coords.empty() || n != inst.size()) {
      throw ParseError(fmt::format("instance JSON: n={} but {} coordinates", n, inst.coords.size()));
    }
    validate(inst, inst.rounding == CostRounding::None);
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("instance JSON: {}", e.what()));
  } catch (const ConfigError& e) {
    throw ParseError(fmt::format("instance JSON: {}", e.what()));
  } catch (const ContractError& e) {
    throw ParseError(fmt::format("instance JSON: {}", e.what()));
  }
}

void save_instance(const Instance& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << instance_to_json(inst) << '\n';
}

Instance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return instance_from_json(ss.str());
}

}  // namespace llvrp
