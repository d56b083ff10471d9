#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llvrp/vrp.hpp"

namespace llvrp {

// A TSPLIB or CVRPLIB file. Coordinates are kept verbatim and costs use
// nearest-integer edge rounding; see normalized_copy for network input.
struct BenchmarkInstance {
  std::string name;
  std::string comment;
  Instance instance;
  std::optional<double> best_known;   // from "Optimal value: N" / "Best value: N" in COMMENT
  std::vector<std::string> warnings;  // e.g. a normalised depot demand
};

// Throws ParseError (with a line number) on malformed input and
// UnsupportedFeature for anything outside the EUC_2D coordinate subset.
BenchmarkInstance parse_tsplib(std::string_view text);
BenchmarkInstance parse_cvrplib(std::string_view text);
// Dispatches on the TYPE field.
BenchmarkInstance parse_benchmark(std::string_view text);

// Reads a file, transparently inflating gzip input.
std::string read_text_file(const std::filesystem::path& path);
BenchmarkInstance load_benchmark(const std::filesystem::path& path);

// Inverse of the parsers for their supported subset.
std::string to_tsplib(const BenchmarkInstance& b);
std::string to_cvrplib(const BenchmarkInstance& b);

// TOUR_SECTION of a .tour file as 0-based node indices.
std::vector<std::uint32_t> parse_tour(std::string_view text);

// Copy mapped into the unit square by min-max scaling with one common factor
// (aspect ratio kept), exact distances, for feeding the network.
Instance normalized_copy(const Instance& inst);

struct ResultRecord {
  std::string instance;
  std::string method;
  std::string metric;
  double objective = 0.0;
  double gap = 0.0;
  double seconds = 0.0;
  bool integer_objective = false;  // rounded benchmark costs print as integers
};

// Columns: instance,method,metric,objective,gap,seconds. Rows keep input
// order. Objectives use 3 decimals, or none when integer_objective is set;
// gap and seconds are written with 17 significant digits.
std::string write_results(const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_results(std::string_view csv);

}  // namespace llvrp
