#pragma once

// Structured report files: one JSON document with top-level `meta` (seed and
// resolved config echo) and `records` (an array). Doubles are emitted with
// shortest round-trip formatting, so read-back reproduces stored values
// bit-exactly.

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "debiasnp/dataset.hpp"

namespace debiasnp {

using Json = nlohmann::ordered_json;

struct Report {
  Json meta = Json::object();
  Json records = Json::array();

  Json to_json() const {
    Json doc = Json::object();
    doc["meta"] = meta;
    doc["records"] = records;
    return doc;
  }
};

inline void write_report(const Report& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open report file for writing: " + path.string());
  out << report.to_json().dump(2) << "\n";
  if (!out) throw DataError("failed writing report file: " + path.string());
}

inline Report read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report file: " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const std::exception& e) {
    throw DataError("malformed report file " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("meta") || !doc.contains("records"))
    throw DataError("report file missing meta/records: " + path.string());
  Report report;
  report.meta = doc["meta"];
  report.records = doc["records"];
  return report;
}

}  // namespace debiasnp
