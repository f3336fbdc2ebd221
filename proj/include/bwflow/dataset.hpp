#pragma once

#include "bwflow/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace bwflow {

/// Train/test split of a binary-labeled tabular dataset, ready to feed a
/// LogisticPosterior. Labels are mapped to {-1, +1} by sorted token order.
struct DatasetSplit {
  Mat train_features;
  Vec train_labels;
  Mat test_features;
  Vec test_labels;
  std::vector<std::string> warnings;      // e.g. dropped constant columns
  std::vector<Index> kept_columns;        // original feature-column indices
  std::pair<std::string, std::string> label_tokens;  // mapped to (-1, +1)
};

namespace detail {

inline bool parse_double(const std::string& token, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(token, &used);
    while (used < token.size() && std::isspace(static_cast<unsigned char>(token[used]))) ++used;
    return used == token.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

// Explicit Fisher-Yates with a bounded draw so the permutation is the same
// on every platform (std::shuffle's draw sequence is implementation-defined).
inline void deterministic_shuffle(std::vector<Index>& order, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  for (Index i = static_cast<Index>(order.size()) - 1; i > 0; --i) {
    const std::uint64_t bound = static_cast<std::uint64_t>(i) + 1;
    std::uint64_t draw = 0;
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    do {
      draw = eng();
    } while (draw >= limit);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(draw % bound)]);
  }
}

}  // namespace detail

/// Loads a CSV with numeric feature columns and one binary label column
/// (negative index counts from the end). A header row is auto-detected: if
/// any first-row cell fails to parse as a number, the row is a header.
/// The split is a deterministic function of split_seed; standardization uses
/// train-set statistics only, and constant train columns are dropped with a
/// recorded warning.
inline DatasetSplit load_uci_csv(const std::string& path, Index label_column, bool standardize,
                                 std::uint64_t split_seed, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw config_error("load_uci_csv: test_fraction must be in (0, 1)");
  std::ifstream in(path);
  if (!in) throw config_error("load_uci_csv: cannot open '" + path + "'");

  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_csv_line(line));
  }
  if (rows.empty()) throw config_error("load_uci_csv: '" + path + "' has no data rows");

  // Header detection: a header row is entirely non-numeric (labels may be
  // string tokens in data rows, so a single non-numeric cell is not enough).
  bool header = true;
  for (const auto& cell : rows.front()) {
    double ignored;
    if (detail::parse_double(detail::trim(cell), ignored)) {
      header = false;
      break;
    }
  }
  const std::size_t first_data = header ? 1 : 0;
  if (rows.size() <= first_data) throw config_error("load_uci_csv: header but no data rows");

  const Index num_cols = static_cast<Index>(rows[first_data].size());
  Index label_idx = label_column >= 0 ? label_column : num_cols + label_column;
  if (label_idx < 0 || label_idx >= num_cols)
    throw config_error("load_uci_csv: label column out of range");

  const Index num_rows = static_cast<Index>(rows.size() - first_data);
  const Index num_features = num_cols - 1;
  Mat features(num_rows, num_features);
  std::vector<std::string> label_strings(static_cast<std::size_t>(num_rows));
  for (Index r = 0; r < num_rows; ++r) {
    const auto& cells = rows[static_cast<std::size_t>(r) + first_data];
    if (static_cast<Index>(cells.size()) != num_cols)
      throw config_error("load_uci_csv: row " + std::to_string(r + 1) + " has " +
                         std::to_string(cells.size()) + " cells, expected " +
                         std::to_string(num_cols));
    Index feat = 0;
    for (Index c = 0; c < num_cols; ++c) {
      const std::string token = detail::trim(cells[static_cast<std::size_t>(c)]);
      if (c == label_idx) {
        label_strings[static_cast<std::size_t>(r)] = token;
        continue;
      }
      double value;
      if (!detail::parse_double(token, value))
        throw config_error("load_uci_csv: unparseable cell at row " + std::to_string(r + 1) +
                           ", column " + std::to_string(c + 1) + ": '" + token + "'");
      features(r, feat++) = value;
    }
  }

  // Binary labels by sorted token order -> (-1, +1).
  std::vector<std::string> tokens = label_strings;
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  if (tokens.size() != 2)
    throw config_error("load_uci_csv: expected exactly 2 label classes, found " +
                       std::to_string(tokens.size()));
  Vec labels(num_rows);
  for (Index r = 0; r < num_rows; ++r)
    labels[r] = label_strings[static_cast<std::size_t>(r)] == tokens[0] ? -1.0 : 1.0;

  // Deterministic shuffled split.
  std::vector<Index> order(static_cast<std::size_t>(num_rows));
  for (Index i = 0; i < num_rows; ++i) order[static_cast<std::size_t>(i)] = i;
  detail::deterministic_shuffle(order, split_seed);
  Index num_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(num_rows)));
  num_test = std::clamp<Index>(num_test, 1, num_rows - 1);
  const Index num_train = num_rows - num_test;

  DatasetSplit out;
  out.label_tokens = {tokens[0], tokens[1]};
  out.train_features.resize(num_train, num_features);
  out.train_labels.resize(num_train);
  out.test_features.resize(num_test, num_features);
  out.test_labels.resize(num_test);
  for (Index i = 0; i < num_train; ++i) {
    out.train_features.row(i) = features.row(order[static_cast<std::size_t>(i)]);
    out.train_labels[i] = labels[order[static_cast<std::size_t>(i)]];
  }
  for (Index i = 0; i < num_test; ++i) {
    const Index src = order[static_cast<std::size_t>(num_train + i)];
    out.test_features.row(i) = features.row(src);
    out.test_labels[i] = labels[src];
  }

  if (std::abs(out.train_labels.sum()) == static_cast<double>(num_train))
    throw config_error("load_uci_csv: training split contains a single class");

  for (Index c = 0; c < num_features; ++c) out.kept_columns.push_back(c);
  if (standardize) {
    const RowVec mean = out.train_features.colwise().mean();
    RowVec var(num_features);
    for (Index c = 0; c < num_features; ++c)
      var[c] = (out.train_features.col(c).array() - mean[c]).square().mean();
    std::vector<Index> keep;
    for (Index c = 0; c < num_features; ++c) {
      if (var[c] < 1e-12) {
        out.warnings.push_back("dropped constant feature column " + std::to_string(c));
      } else {
        keep.push_back(c);
      }
    }
    Mat train(num_train, static_cast<Index>(keep.size()));
    Mat test(num_test, static_cast<Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      const Index c = keep[j];
      const double sd = std::sqrt(var[c]);
      train.col(static_cast<Index>(j)) = (out.train_features.col(c).array() - mean[c]) / sd;
      test.col(static_cast<Index>(j)) = (out.test_features.col(c).array() - mean[c]) / sd;
    }
    out.train_features = std::move(train);
    out.test_features = std::move(test);
    out.kept_columns = std::move(keep);
  }
  return out;
}

}  // namespace bwflow
