#include "sidecar/data_io.hpp"

#include <fstream>

#include "sidecar/errors.hpp"

namespace sidecar {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::vector<nlohmann::json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<std::string> read_bytes_records(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::size_t line_no = 0;
  for (const auto& record : read_jsonl(path)) {
    ++line_no;
    if (!record.is_object() || !record.contains("bytes") || !record["bytes"].is_string()) {
      throw FormatError(path.string() + ": record " + std::to_string(line_no) + " has no string field 'bytes'");
    }
    out.push_back(record["bytes"].get<std::string>());
  }
  if (out.empty()) throw FormatError(path.string() + ": no records");
  return out;
}

std::vector<ics::ScoredResponse> read_scored_responses(const std::filesystem::path& path) {
  std::vector<ics::ScoredResponse> out;
  for (const auto& record : read_jsonl(path)) out.push_back(ics::response_from_json(record));
  return out;
}

}  // namespace sidecar
