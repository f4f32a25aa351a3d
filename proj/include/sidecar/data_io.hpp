#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidecar/ics.hpp"

namespace sidecar {

/// Reads a JSONL file line by line. Blank lines are skipped; a line that is
/// not valid JSON raises FormatError naming the line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// The `bytes` string field of every record (training data, probe sets).
std::vector<std::string> read_bytes_records(const std::filesystem::path& path);

std::vector<ics::ScoredResponse> read_scored_responses(const std::filesystem::path& path);

}  // namespace sidecar
