#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hscm/hierarchy.hpp"

namespace hscm {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based source line of every row
};

/// Plain comma-separated text without quoting. Blank lines are skipped; rows
/// with the wrong number of fields raise SchemaError naming the line.
CsvTable parse_csv(std::string_view text, const std::string& source);
CsvTable read_csv(const std::filesystem::path& path);

/// Reads groups.csv (group_id,Z1..Zq), units.csv (group_id,X1..Xp) and an
/// optional factor2.csv (group_id,W1..). Group ids of units must appear in
/// groups.csv; factor2.csv must list exactly the same groups.
HierDataset read_dataset(const std::filesystem::path& groups, const std::filesystem::path& units,
                         const std::optional<std::filesystem::path>& factor2 = std::nullopt);

std::string groups_csv(const HierDataset& data);
std::string units_csv(const HierDataset& data);
std::string factor2_csv(const HierDataset& data);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace hscm
