#include "deepwound/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "deepwound/error.hpp"

namespace deepwound::dataset {

namespace fs = std::filesystem;

namespace {

// RFC 4180 style: fields may be double-quoted, "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"' && cur.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) {
    throw Error(ErrorCode::kManifestParseError, "line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string quote_if_needed(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += '"';
  return out;
}

}  // namespace

std::string manifest_header() {
  std::string h = "path";
  for (auto name : kLabelNames) {
    h += ',';
    h += name;
  }
  h += ",source_tag";
  return h;
}

Manifest parse_manifest(const std::string& text, const std::string& base_dir) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Manifest entries;
  std::unordered_set<std::string> seen;
  bool header_seen = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;

    if (!header_seen) {
      if (line != manifest_header()) {
        throw Error(ErrorCode::kManifestParseError,
                    "line " + std::to_string(line_no) + ": expected header '" + manifest_header() + "'");
      }
      header_seen = true;
      continue;
    }

    auto fields = split_csv_line(line, line_no);
    if (fields.size() != kNumLabels + 2) {
      throw Error(ErrorCode::kManifestParseError,
                  "line " + std::to_string(line_no) + ": expected " + std::to_string(kNumLabels + 2) +
                      " fields, got " + std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.image_path = fields[0];
    if (e.image_path.empty()) {
      throw Error(ErrorCode::kManifestParseError, "line " + std::to_string(line_no) + ": empty path");
    }
    if (!base_dir.empty() && fs::path(e.image_path).is_relative()) {
      e.image_path = (fs::path(base_dir) / e.image_path).lexically_normal().string();
    }
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      const std::string& v = fields[k + 1];
      if (v == "0") e.labels[k] = false;
      else if (v == "1") e.labels[k] = true;
      else {
        throw Error(ErrorCode::kManifestParseError,
                    "line " + std::to_string(line_no) + ": label '" + std::string(kLabelNames[k]) +
                        "' must be 0 or 1, got '" + v + "'");
      }
    }
    e.source_tag = fields[kNumLabels + 1];
    if (!seen.insert(e.image_path).second) {
      throw Error(ErrorCode::kDuplicatePath,
                  "line " + std::to_string(line_no) + ": duplicate path " + e.image_path);
    }
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw Error(ErrorCode::kManifestParseError, "line 1: missing header");
  return entries;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto base = fs::path(path).parent_path().string();
  return parse_manifest(buf.str(), base);
}

std::string format_manifest(const Manifest& entries) {
  std::string out = manifest_header() + "\n";
  for (const auto& e : entries) {
    out += quote_if_needed(e.image_path);
    for (bool b : e.labels) out += b ? ",1" : ",0";
    out += ',';
    out += quote_if_needed(e.source_tag);
    out += '\n';
  }
  return out;
}

void save_manifest(const Manifest& entries, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest " + path);
  out << format_manifest(entries);
}

ClassCounts class_counts(const Manifest& entries) {
  ClassCounts counts{};
  for (const auto& e : entries) {
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      if (e.labels[k]) ++counts[k].positive;
      else ++counts[k].negative;
    }
  }
  return counts;
}

DatasetSplit split_dataset(const Manifest& entries, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorCode::kInvalidRatio, "split ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
  if (entries.empty()) throw Error(ErrorCode::kEmptySample, "cannot split an empty manifest");

  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(entries.size())));
  DatasetSplit split;
  split.seed = seed;
  split.ratio = ratio;
  split.train.reserve(n_train);
  split.validation.reserve(entries.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? split.train : split.validation).push_back(entries[order[i]]);
  }
  return split;
}

}  // namespace deepwound::dataset
