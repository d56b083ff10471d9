#include "llvrp/benchmark_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <regex>

#include <fmt/format.h>
#include <zlib.h>

#include "llvrp/error.hpp"

namespace llvrp {

namespace {

struct Line {
  std::size_t no;
  std::string text;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ParseError(fmt::format("line {}: {}", line, msg));
}

double to_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) fail(line, fmt::format("malformed number '{}'", s));
  return v;
}

long to_long(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') fail(line, fmt::format("malformed integer '{}'", s));
  return v;
}

struct RawFile {
  std::map<std::string, std::pair<std::string, std::size_t>> fields;
  std::vector<Point> coords;
  std::vector<long> demands;
  std::vector<long> depots;
  bool has_coords = false, has_demands = false, has_depots = false;
  std::size_t last_line = 0;

  const std::string* get(const std::string& key) const {
    auto it = fields.find(key);
    return it == fields.end() ? nullptr : &it->second.first;
  }
};

std::size_t require_dimension(const RawFile& raw, std::size_t line) {
  const std::string* d = raw.get("DIMENSION");
  if (!d) fail(line, "section appears before DIMENSION");
  const long n = to_long(*d, raw.fields.at("DIMENSION").second);
  if (n < 1) fail(raw.fields.at("DIMENSION").second, fmt::format("DIMENSION {} must be positive", n));
  return static_cast<std::size_t>(n);
}

RawFile scan(std::string_view text) {
  std::vector<Line> lines;
  std::size_t no = 0;
  for (std::size_t pos = 0; pos <= text.size();) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    ++no;
    std::string t = trim(text.substr(pos, end - pos));
    if (!t.empty()) lines.push_back({no, std::move(t)});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }

  static const char* kSpecKeys[] = {"NAME", "COMMENT", "TYPE", "DIMENSION", "EDGE_WEIGHT_TYPE", "CAPACITY",
                                    "NODE_COORD_TYPE", "DISPLAY_DATA_TYPE"};
  RawFile raw;
  std::size_t i = 0;
  while (i < lines.size()) {
    const Line& ln = lines[i];
    const auto colon = ln.text.find(':');
    std::string key = trim(colon == std::string::npos ? ln.text : ln.text.substr(0, colon));
    const std::string value = colon == std::string::npos ? std::string() : trim(ln.text.substr(colon + 1));
    raw.last_line = ln.no;
    ++i;
    if (key == "EOF") break;
    if (key.size() > 8 && key.ends_with("_SECTION")) {
      if (!value.empty()) fail(ln.no, fmt::format("unexpected data after {}", key));
      if (key == "NODE_COORD_SECTION") {
        const std::size_t n = require_dimension(raw, ln.no);
        raw.has_coords = true;
        raw.coords.resize(n);
        for (std::size_t k = 0; k < n; ++k, ++i) {
          if (i >= lines.size()) fail(raw.last_line, fmt::format("NODE_COORD_SECTION ends after {} of {} nodes", k, n));
          const auto t = tokens(lines[i].text);
          if (t.size() != 3) fail(lines[i].no, fmt::format("expected 'index x y', got '{}'", lines[i].text));
          if (to_long(t[0], lines[i].no) != static_cast<long>(k + 1)) {
            fail(lines[i].no, fmt::format("node index {} out of order (expected {})", t[0], k + 1));
          }
          raw.coords[k] = {to_double(t[1], lines[i].no), to_double(t[2], lines[i].no)};
        }
      } else if (key == "DEMAND_SECTION") {
        const std::size_t n = require_dimension(raw, ln.no);
        raw.has_demands = true;
        raw.demands.resize(n);
        for (std::size_t k = 0; k < n; ++k, ++i) {
          if (i >= lines.size()) fail(raw.last_line, fmt::format("DEMAND_SECTION ends after {} of {} nodes", k, n));
          const auto t = tokens(lines[i].text);
          if (t.size() != 2) fail(lines[i].no, fmt::format("expected 'index demand', got '{}'", lines[i].text));
          if (to_long(t[0], lines[i].no) != static_cast<long>(k + 1)) {
            fail(lines[i].no, fmt::format("demand index {} out of order (expected {})", t[0], k + 1));
          }
          raw.demands[k] = to_long(t[1], lines[i].no);
        }
      } else if (key == "DEPOT_SECTION") {
        raw.has_depots = true;
        for (;; ++i) {
          if (i >= lines.size()) fail(raw.last_line, "DEPOT_SECTION is not terminated by -1");
          const long v = to_long(trim(lines[i].text), lines[i].no);
          if (v == -1) {
            ++i;
            break;
          }
          raw.depots.push_back(v);
        }
      } else {
        throw UnsupportedFeature(fmt::format("line {}: unsupported section {}", ln.no, key));
      }
      continue;
    }
    if (colon == std::string::npos) fail(ln.no, fmt::format("expected 'KEY : VALUE', got '{}'", ln.text));
    if (std::find(std::begin(kSpecKeys), std::end(kSpecKeys), key) == std::end(kSpecKeys)) {
      throw UnsupportedFeature(fmt::format("line {}: unsupported keyword {}", ln.no, key));
    }
    if (raw.fields.count(key)) fail(ln.no, fmt::format("duplicate keyword {}", key));
    raw.fields[key] = {value, ln.no};
  }

  if (const auto* t = raw.get("TYPE"); t && *t != "TSP" && *t != "CVRP") {
    throw UnsupportedFeature(fmt::format("line {}: TYPE {}", raw.fields.at("TYPE").second, *t));
  }
  if (const auto* e = raw.get("EDGE_WEIGHT_TYPE")) {
    if (*e != "EUC_2D") {
      throw UnsupportedFeature(fmt::format("line {}: EDGE_WEIGHT_TYPE {} (only EUC_2D is supported)",
                                           raw.fields.at("EDGE_WEIGHT_TYPE").second, *e));
    }
  } else {
    fail(raw.last_line, "missing EDGE_WEIGHT_TYPE");
  }
  if (const auto* t = raw.get("NODE_COORD_TYPE"); t && *t != "TWOD_COORDS") {
    throw UnsupportedFeature(fmt::format("line {}: NODE_COORD_TYPE {}", raw.fields.at("NODE_COORD_TYPE").second, *t));
  }
  if (!raw.get("DIMENSION")) fail(raw.last_line, "missing DIMENSION");
  if (!raw.has_coords) fail(raw.last_line, "missing NODE_COORD_SECTION");
  return raw;
}

std::optional<double> best_known_from(const std::string& comment) {
  static const std::regex re(R"((?:Optimal|Best)\s+value\s*:\s*([0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  std::smatch m;
  if (std::regex_search(comment, m, re)) return std::stod(m[1].str());
  return std::nullopt;
}

void fill_header(BenchmarkInstance& b, const RawFile& raw) {
  if (const auto* n = raw.get("NAME")) b.name = *n;
  if (const auto* c = raw.get("COMMENT")) b.comment = *c;
  b.best_known = best_known_from(b.comment);
}

void require_type(const RawFile& raw, std::string_view want) {
  const auto* t = raw.get("TYPE");
  if (!t) fail(raw.last_line, "missing TYPE");
  if (*t != want) {
    throw UnsupportedFeature(fmt::format("line {}: TYPE {} (expected {})", raw.fields.at("TYPE").second, *t, want));
  }
}

std::string fmt_coord(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

BenchmarkInstance parse_tsplib(std::string_view text) {
  const RawFile raw = scan(text);
  require_type(raw, "TSP");
  if (raw.has_demands || raw.has_depots || raw.get("CAPACITY")) {
    throw UnsupportedFeature("TSP file carries CVRP sections");
  }
  BenchmarkInstance b;
  fill_header(b, raw);
  b.instance.kind = ProblemKind::TSP;
  b.instance.coords = raw.coords;
  b.instance.rounding = CostRounding::Nearest;
  try {
    validate(b.instance, false);
  } catch (const ContractError& e) {
    throw ParseError(e.what());
  }
  return b;
}

BenchmarkInstance parse_cvrplib(std::string_view text) {
  const RawFile raw = scan(text);
  require_type(raw, "CVRP");
  const auto* cap = raw.get("CAPACITY");
  if (!cap) fail(raw.last_line, "missing CAPACITY");
  if (!raw.has_demands) fail(raw.last_line, "missing DEMAND_SECTION");
  if (!raw.has_depots) fail(raw.last_line, "missing DEPOT_SECTION");
  if (raw.depots.size() != 1) {
    throw UnsupportedFeature(fmt::format("{} depots listed (only single-depot instances are supported)", raw.depots.size()));
  }
  const std::size_t n = raw.coords.size();
  const long depot = raw.depots[0];
  if (depot < 1 || depot > static_cast<long>(n)) {
    throw ParseError(fmt::format("depot {} outside 1..{}", depot, n));
  }

  BenchmarkInstance b;
  fill_header(b, raw);
  Instance& inst = b.instance;
  inst.kind = ProblemKind::CVRP;
  inst.rounding = CostRounding::Nearest;
  inst.capacity = static_cast<int>(to_long(*cap, raw.fields.at("CAPACITY").second));
  const std::size_t d = static_cast<std::size_t>(depot - 1);
  inst.coords.push_back(raw.coords[d]);
  inst.demands.push_back(static_cast<int>(raw.demands[d]));
  for (std::size_t k = 0; k < n; ++k) {
    if (k == d) continue;
    inst.coords.push_back(raw.coords[k]);
    inst.demands.push_back(static_cast<int>(raw.demands[k]));
  }
  if (inst.demands[0] != 0) {
    b.warnings.push_back(fmt::format("depot demand {} normalised to 0", inst.demands[0]));
    inst.demands[0] = 0;
  }
  try {
    validate(inst, false);
  } catch (const ContractError& e) {
    throw ParseError(e.what());
  }
  return b;
}

BenchmarkInstance parse_benchmark(std::string_view text) {
  const RawFile raw = scan(text);
  const auto* t = raw.get("TYPE");
  if (t && *t == "CVRP") return parse_cvrplib(text);
  return parse_tsplib(text);
}

std::string read_text_file(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw Error(fmt::format("cannot open {}", path.string()));
  std::string out;
  char buf[1 << 15];
  int got = 0;
  while ((got = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(got));
  const bool bad = got < 0;
  gzclose(f);
  if (bad) throw ParseError(fmt::format("{}: corrupt compressed stream", path.string()));
  return out;
}

BenchmarkInstance load_benchmark(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_benchmark(text);
  } catch (const UnsupportedFeature& e) {
    throw UnsupportedFeature(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string to_tsplib(const BenchmarkInstance& b) {
  const Instance& inst = b.instance;
  std::string out = fmt::format("NAME : {}\n", b.name);
  if (!b.comment.empty()) out += fmt::format("COMMENT : {}\n", b.comment);
  out += fmt::format("TYPE : TSP\nDIMENSION : {}\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n", inst.num_nodes());
  for (std::size_t i = 0; i < inst.num_nodes(); ++i) {
    out += fmt::format("{} {} {}\n", i + 1, fmt_coord(inst.coords[i].x), fmt_coord(inst.coords[i].y));
  }
  return out + "EOF\n";
}

std::string to_cvrplib(const BenchmarkInstance& b) {
  const Instance& inst = b.instance;
  std::string out = fmt::format("NAME : {}\n", b.name);
  if (!b.comment.empty()) out += fmt::format("COMMENT : {}\n", b.comment);
  out += fmt::format("TYPE : CVRP\nDIMENSION : {}\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : {}\nNODE_COORD_SECTION\n",
                     inst.num_nodes(), inst.capacity);
  for (std::size_t i = 0; i < inst.num_nodes(); ++i) {
    out += fmt::format("{} {} {}\n", i + 1, fmt_coord(inst.coords[i].x), fmt_coord(inst.coords[i].y));
  }
  out += "DEMAND_SECTION\n";
  for (std::size_t i = 0; i < inst.num_nodes(); ++i) out += fmt::format("{} {}\n", i + 1, inst.demands[i]);
  return out + "DEPOT_SECTION\n1\n-1\nEOF\n";
}

std::vector<std::uint32_t> parse_tour(std::string_view text) {
  std::vector<std::uint32_t> tour;
  bool in_section = false;
  std::size_t no = 0;
  for (std::size_t pos = 0; pos <= text.size();) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    ++no;
    const std::string t = trim(text.substr(pos, end - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (t.empty()) continue;
    if (!in_section) {
      if (t == "TOUR_SECTION") in_section = true;
      continue;
    }
    if (t == "EOF") break;
    bool done = false;
    for (const auto& tok : tokens(t)) {
      const long v = to_long(tok, no);
      if (v == -1) {
        done = true;
        break;
      }
      if (v < 1) fail(no, fmt::format("node id {} must be positive", v));
      tour.push_back(static_cast<std::uint32_t>(v - 1));
    }
    if (done) break;
  }
  if (!in_section) throw ParseError("missing TOUR_SECTION");
  return tour;
}

Instance normalized_copy(const Instance& inst) {
  Instance out = inst;
  out.rounding = CostRounding::None;
  if (inst.coords.empty()) return out;
  double minx = inst.coords[0].x, maxx = minx, miny = inst.coords[0].y, maxy = miny;
  for (const Point& p : inst.coords) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  double scale = std::max(maxx - minx, maxy - miny);
  if (!(scale > 0.0)) scale = 1.0;
  for (Point& p : out.coords) {
    p.x = std::clamp((p.x - minx) / scale, 0.0, 1.0);
    p.y = std::clamp((p.y - miny) / scale, 0.0, 1.0);
  }
  return out;
}

std::string write_results(const std::vector<ResultRecord>& records) {
  std::string out = "instance,method,metric,objective,gap,seconds\n";
  for (const ResultRecord& r : records) {
    for (const std::string* s : {&r.instance, &r.method, &r.metric}) {
      if (s->find_first_of(",\n\"") != std::string::npos) {
        throw ContractError(fmt::format("result field '{}' contains a separator", *s));
      }
    }
    const std::string obj = r.integer_objective ? fmt::format("{:.0f}", r.objective) : fmt::format("{:.3f}", r.objective);
    out += fmt::format("{},{},{},{},{:.17g},{:.17g}\n", r.instance, r.method, r.metric, obj, r.gap, r.seconds);
  }
  return out;
}

std::vector<ResultRecord> read_results(std::string_view csv) {
  std::vector<ResultRecord> out;
  std::size_t no = 0;
  for (std::size_t pos = 0; pos < csv.size();) {
    const auto nl = csv.find('\n', pos);
    const auto end = nl == std::string_view::npos ? csv.size() : nl;
    const std::string line(csv.substr(pos, end - pos));
    pos = end + 1;
    ++no;
    if (no == 1) {
      if (line != "instance,method,metric,objective,gap,seconds") fail(1, "unexpected results header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t s = 0;
    for (std::size_t c = 0; c <= line.size(); ++c) {
      if (c == line.size() || line[c] == ',') {
        f.push_back(line.substr(s, c - s));
        s = c + 1;
      }
    }
    if (f.size() != 6) fail(no, fmt::format("expected 6 fields, got {}", f.size()));
    ResultRecord r;
    r.instance = f[0];
    r.method = f[1];
    r.metric = f[2];
    r.objective = to_double(f[3], no);
    r.integer_objective = f[3].find('.') == std::string::npos;
    r.gap = to_double(f[4], no);
    r.seconds = to_double(f[5], no);
    out.push_back(std::move(r));
  }
  if (no == 0) throw ParseError("empty results file");
  return out;
}

}  // namespace llvrp
