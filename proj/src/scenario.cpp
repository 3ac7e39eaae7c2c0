#include "sbr/scenario.hpp"

#include <fstream>
#include <json.hpp>
#include <string>

#include "sbr/errors.hpp"

namespace sbr {

using nlohmann::json;

namespace {

json PointsToJson(std::span<const Vec2> pts) {
  json arr = json::array();
  for (const Vec2& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

std::vector<Vec2> PointsFromJson(const json& arr) {
  std::vector<Vec2> out;
  out.reserve(arr.size());
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) throw ValidationError("point must be [x, y]");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

json UnitsJson() {
  return {{"position", "m"}, {"sample_rate", "Hz"}, {"time_step", "1/sample_rate s"}};
}

// Reads header + records from a line-delimited file, tagging errors with the
// 1-based line number.
template <typename RecordFn>
void ReadRecords(const std::filesystem::path& path, const char* format, RecordFn&& on_record) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::string line;
  size_t line_no = 0;
  auto parse = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ", byte " +
                       std::to_string(e.byte) + ": malformed record");
    }
  };

  if (!std::getline(in, line)) throw ParseError(path.string() + ": line 1: missing header");
  ++line_no;
  const json header = parse(line);
  const std::string found = header.is_object() ? header.value("format", "") : "";
  if (found != format) {
    throw FormatVersionError(path.string() + ": line 1: expected format " + format +
                             ", found '" + found + "'");
  }
  if (!header.contains("count") || !header["count"].is_number_unsigned()) {
    throw ParseError(path.string() + ": line 1: header lacks a record count");
  }
  const size_t expected = header["count"].get<size_t>();

  size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json record = parse(line);
    try {
      on_record(record);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    ++records;
  }
  if (records != expected) {
    throw ParseError(path.string() + ": line " + std::to_string(line_no + 1) + ": expected " +
                     std::to_string(expected) + " records, found " + std::to_string(records) +
                     " (truncated file?)");
  }
}

void WriteLines(const std::filesystem::path& path, const std::string& header,
                const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << header << '\n';
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

void Validate(const Scenario& s) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("scenario " + std::to_string(s.id) + ": " + what);
  };
  if (s.agents.empty()) fail("agents must be non-empty (N >= 1)");
  if (!(s.sample_rate > 0.0) || !std::isfinite(s.sample_rate)) fail("sample_rate must be > 0");
  if (s.history_len < 2) fail("history_len must be >= 2");
  if (s.future_len < 3) fail("future_len must be >= 3");
  for (const Agent& a : s.agents) {
    if (a.history.size() != s.history_len) {
      fail("agent " + std::to_string(a.id) + " history has " + std::to_string(a.history.size()) +
           " points, expected history_len " + std::to_string(s.history_len));
    }
    if (a.future.size() != s.future_len) {
      fail("agent " + std::to_string(a.id) + " future has " + std::to_string(a.future.size()) +
           " points, expected future_len " + std::to_string(s.future_len));
    }
    for (const Vec2& p : a.history) {
      if (!IsFinite(p)) fail("agent " + std::to_string(a.id) + " history is not finite");
    }
    for (const Vec2& p : a.future) {
      if (!IsFinite(p)) fail("agent " + std::to_string(a.id) + " future is not finite");
    }
  }
  for (const Lane& l : s.lanes) {
    if (l.centerline.empty()) fail("lane " + std::to_string(l.id) + " has no vertices");
    for (const Vec2& p : l.centerline) {
      if (!IsFinite(p)) fail("lane " + std::to_string(l.id) + " is not finite");
    }
  }
}

ModeSet::ModeSet(size_t modes, size_t agents, size_t steps)
    : modes_(modes), agents_(agents), steps_(steps), points_(modes * agents * steps) {}

void Validate(const ModeSet& m) {
  if (m.modes() < 1) throw ValidationError("mode set must have K >= 1");
  if (m.agents() < 1) throw ValidationError("mode set must have N >= 1");
  for (const Vec2& p : m.points()) {
    if (!IsFinite(p)) throw ValidationError("mode set contains a non-finite coordinate");
  }
}

ModeSet GroundTruthModes(const Scenario& s) {
  ModeSet gt(1, s.agents.size(), s.future_len);
  for (size_t i = 0; i < s.agents.size(); ++i) {
    std::copy(s.agents[i].future.begin(), s.agents[i].future.end(), gt.trajectory(0, i).begin());
  }
  return gt;
}

std::string ScenarioHeaderLine(size_t count) {
  return json{{"format", kScenarioFormat}, {"count", count}, {"units", UnitsJson()}}.dump();
}

std::string ScenarioLine(const Scenario& s) {
  json rec;
  rec["id"] = s.id;
  rec["archetype"] = s.archetype;
  rec["sample_rate"] = s.sample_rate;
  rec["history_len"] = s.history_len;
  rec["future_len"] = s.future_len;
  json agents = json::array();
  for (const Agent& a : s.agents) {
    agents.push_back(
        {{"id", a.id}, {"history", PointsToJson(a.history)}, {"future", PointsToJson(a.future)}});
  }
  rec["agents"] = std::move(agents);
  json lanes = json::array();
  for (const Lane& l : s.lanes) {
    lanes.push_back({{"id", l.id}, {"tag", l.tag}, {"centerline", PointsToJson(l.centerline)}});
  }
  rec["lanes"] = std::move(lanes);
  return rec.dump();
}

void WriteScenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios) {
  std::vector<std::string> lines;
  lines.reserve(scenarios.size());
  for (const Scenario& s : scenarios) {
    Validate(s);
    lines.push_back(ScenarioLine(s));
  }
  WriteLines(path, ScenarioHeaderLine(scenarios.size()), lines);
}

std::vector<Scenario> ReadScenarios(const std::filesystem::path& path) {
  std::vector<Scenario> out;
  ReadRecords(path, kScenarioFormat, [&](const json& rec) {
    Scenario s;
    s.id = rec.at("id").get<int64_t>();
    s.archetype = rec.value("archetype", "");
    s.sample_rate = rec.at("sample_rate").get<double>();
    s.history_len = rec.at("history_len").get<size_t>();
    s.future_len = rec.at("future_len").get<size_t>();
    for (const auto& a : rec.at("agents")) {
      s.agents.push_back({a.at("id").get<int64_t>(), PointsFromJson(a.at("history")),
                          PointsFromJson(a.at("future"))});
    }
    for (const auto& l : rec.at("lanes")) {
      s.lanes.push_back({l.at("id").get<int64_t>(), PointsFromJson(l.at("centerline")),
                         l.value("tag", "")});
    }
    Validate(s);
    out.push_back(std::move(s));
  });
  return out;
}

void WriteModes(const std::filesystem::path& path, std::span<const ModeRecord> records) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const ModeRecord& r : records) {
    Validate(r.modes);
    json modes = json::array();
    for (size_t k = 0; k < r.modes.modes(); ++k) {
      json agents = json::array();
      for (size_t i = 0; i < r.modes.agents(); ++i) {
        agents.push_back(PointsToJson(r.modes.trajectory(k, i)));
      }
      modes.push_back(std::move(agents));
    }
    json rec{{"scenario_id", r.scenario_id},
             {"K", r.modes.modes()},
             {"N", r.modes.agents()},
             {"T", r.modes.steps()},
             {"modes", std::move(modes)}};
    lines.push_back(rec.dump());
  }
  const json header{{"format", kModeFormat}, {"count", records.size()}, {"units", UnitsJson()}};
  WriteLines(path, header.dump(), lines);
}

std::vector<ModeRecord> ReadModes(const std::filesystem::path& path) {
  std::vector<ModeRecord> out;
  ReadRecords(path, kModeFormat, [&](const json& rec) {
    const size_t k = rec.at("K").get<size_t>();
    const size_t n = rec.at("N").get<size_t>();
    const size_t t = rec.at("T").get<size_t>();
    ModeRecord r{rec.at("scenario_id").get<int64_t>(), ModeSet(k, n, t)};
    const json& modes = rec.at("modes");
    if (modes.size() != k) throw ValidationError("modes array has wrong K");
    for (size_t m = 0; m < k; ++m) {
      if (modes[m].size() != n) throw ValidationError("mode " + std::to_string(m) + " has wrong N");
      for (size_t i = 0; i < n; ++i) {
        const auto pts = PointsFromJson(modes[m][i]);
        if (pts.size() != t) throw ValidationError("trajectory length differs from T");
        std::copy(pts.begin(), pts.end(), r.modes.trajectory(m, i).begin());
      }
    }
    Validate(r.modes);
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace sbr
