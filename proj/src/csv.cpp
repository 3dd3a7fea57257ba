#include "hscm/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hscm/error.hpp"

namespace hscm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(const std::string& field, const std::string& source, int line) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw SchemaError(source + ":" + std::to_string(line) + ": '" + field +
                      "' is not a finite number");
  }
  return v;
}

int parse_label(const std::string& field, const std::string& source, int line) {
  int v = 0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw SchemaError(source + ":" + std::to_string(line) + ": group_id '" + field +
                      "' is not an integer");
  }
  return v;
}

// Checks "group_id,<prefix>1..<prefix>k" and returns k.
int check_header(const CsvTable& t, char prefix, const std::string& source) {
  if (t.header.empty() || t.header[0] != "group_id") {
    throw SchemaError(source + ":1: first column must be group_id");
  }
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    const std::string want = std::string(1, prefix) + std::to_string(c);
    if (t.header[c] != want) {
      throw SchemaError(source + ":1: column " + std::to_string(c + 1) + " must be named " + want +
                        ", found '" + t.header[c] + "'");
    }
  }
  return static_cast<int>(t.header.size()) - 1;
}

std::string table_text(const std::string& prefix, const std::vector<int>& labels,
                       const std::vector<std::vector<double>>& cols) {
  std::string out = "group_id";
  for (std::size_t c = 0; c < cols.size(); ++c) out += "," + prefix + std::to_string(c + 1);
  out += '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += std::to_string(labels[i]);
    for (const auto& col : cols) out += "," + format_double(col[i]);
    out += '\n';
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (v == 0.0) v = 0.0;  // no negative zero
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

CsvTable parse_csv(std::string_view text, const std::string& source) {
  CsvTable t;
  int line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw SchemaError(source + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header.size()) + " fields, found " +
                        std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (!have_header) throw SchemaError(source + ": empty file");
  return t;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw UsageError("failed writing " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_text(path), path.filename().string());
}

HierDataset read_dataset(const std::filesystem::path& groups, const std::filesystem::path& units,
                         const std::optional<std::filesystem::path>& factor2) {
  HierDataset data;
  const std::string gsrc = groups.filename().string();
  const CsvTable gt = read_csv(groups);
  const int q = check_header(gt, 'Z', gsrc);
  data.z.assign(q, {});
  std::set<int> seen;
  for (std::size_t r = 0; r < gt.rows.size(); ++r) {
    const int label = parse_label(gt.rows[r][0], gsrc, gt.lines[r]);
    if (!seen.insert(label).second) {
      throw SchemaError(gsrc + ":" + std::to_string(gt.lines[r]) + ": duplicate group_id " +
                        std::to_string(label));
    }
    data.group_labels.push_back(label);
    for (int c = 0; c < q; ++c) data.z[c].push_back(parse_number(gt.rows[r][c + 1], gsrc, gt.lines[r]));
  }

  const std::string usrc = units.filename().string();
  const CsvTable ut = read_csv(units);
  const int p = check_header(ut, 'X', usrc);
  data.x.assign(p, {});
  std::set<int> unknown;
  for (std::size_t r = 0; r < ut.rows.size(); ++r) {
    const int label = parse_label(ut.rows[r][0], usrc, ut.lines[r]);
    if (!seen.contains(label)) unknown.insert(label);
    data.unit_group.push_back(label);
    for (int c = 0; c < p; ++c) data.x[c].push_back(parse_number(ut.rows[r][c + 1], usrc, ut.lines[r]));
  }
  if (!unknown.empty()) {
    std::string msg = usrc + ": group ids not present in " + gsrc + ":";
    for (int g : unknown) msg += " " + std::to_string(g);
    throw SchemaError(msg);
  }

  if (factor2) {
    const std::string wsrc = factor2->filename().string();
    const CsvTable wt = read_csv(*factor2);
    const int qw = check_header(wt, 'W', wsrc);
    std::map<int, std::vector<double>> by_label;
    for (std::size_t r = 0; r < wt.rows.size(); ++r) {
      const int label = parse_label(wt.rows[r][0], wsrc, wt.lines[r]);
      std::vector<double> values;
      for (int c = 0; c < qw; ++c) values.push_back(parse_number(wt.rows[r][c + 1], wsrc, wt.lines[r]));
      if (!by_label.emplace(label, std::move(values)).second) {
        throw SchemaError(wsrc + ":" + std::to_string(wt.lines[r]) + ": duplicate group_id " +
                          std::to_string(label));
      }
    }
    std::set<int> mismatch;
    for (const auto& [label, _] : by_label) {
      if (!seen.contains(label)) mismatch.insert(label);
    }
    for (int label : data.group_labels) {
      if (!by_label.contains(label)) mismatch.insert(label);
    }
    if (!mismatch.empty()) {
      std::string msg = wsrc + ": group ids differ from " + gsrc + ":";
      for (int g : mismatch) msg += " " + std::to_string(g);
      throw SchemaError(msg);
    }
    data.w.assign(qw, {});
    for (int label : data.group_labels) {
      for (int c = 0; c < qw; ++c) data.w[c].push_back(by_label[label][c]);
    }
  }
  data.validate();
  return data;
}

std::string groups_csv(const HierDataset& data) { return table_text("Z", data.group_labels, data.z); }
std::string units_csv(const HierDataset& data) { return table_text("X", data.unit_group, data.x); }
std::string factor2_csv(const HierDataset& data) { return table_text("W", data.group_labels, data.w); }

}  // namespace hscm
