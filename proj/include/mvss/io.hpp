#pragma once

// Plain-text persistence: headerless numeric CSV matrices, a groups file with
// one size per line, JSON documents and JSONL sample streams.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvss/core.hpp"

namespace mvss::io {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double parse_double(const std::string& field, const std::string& where) {
  const std::string t = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError(where + ": not a number: '" + t + "'");
  return v;
}

}  // namespace detail

/// Writes with 17 significant digits so that reading back is bit-exact.
inline void write_matrix_csv(std::ostream& out, const Matrix& A) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (j > 0) out << ',';
      out << A(i, j);
    }
    out << '\n';
  }
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& A) {
  auto out = detail::open_out(path);
  write_matrix_csv(out, A);
}

/// Reads a rectangular headerless CSV; blank lines are skipped.
inline Matrix read_matrix_csv(std::istream& in, const std::string& name = "csv") {
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    int col = 0;
    while (std::getline(ss, field, ',')) {
      ++col;
      row.push_back(detail::parse_double(field, name + ":" + std::to_string(lineno) + ":" + std::to_string(col)));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) +
                       " fields, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
  Matrix A(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) A(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return A;
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_matrix_csv(in, path.string());
}

inline void write_groups(const std::filesystem::path& path, const GroupStructure& g) {
  auto out = detail::open_out(path);
  for (int m : g.sizes()) out << m << '\n';
}

inline GroupStructure read_groups(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<int> sizes;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || v < 1)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": group size must be a positive integer");
    sizes.push_back(v);
  }
  if (sizes.empty()) throw ParseError(path.string() + ": no groups listed");
  return GroupStructure(std::move(sizes));
}

struct DataFiles {
  std::filesystem::path x, y, groups;

  static DataFiles in(const std::filesystem::path& dir) {
    return {dir / "X.csv", dir / "Y.csv", dir / "groups.txt"};
  }
};

/// Loads X, Y and the groups and checks that they agree.
inline std::pair<Dataset, GroupStructure> load_dataset(const DataFiles& f) {
  Matrix X = read_matrix_csv(f.x);
  Matrix Y = read_matrix_csv(f.y);
  GroupStructure g = read_groups(f.groups);
  if (X.rows() != Y.rows())
    throw DimensionError("X has " + std::to_string(X.rows()) + " rows but Y has " + std::to_string(Y.rows()));
  if (X.cols() != g.p())
    throw DimensionError("X has " + std::to_string(X.cols()) + " columns but the groups sum to " +
                         std::to_string(g.p()));
  return {Dataset(std::move(X), std::move(Y)), std::move(g)};
}

inline void save_dataset(const DataFiles& f, const Dataset& data, const GroupStructure& g) {
  write_matrix_csv(f.x, data.X);
  write_matrix_csv(f.y, data.Y);
  write_groups(f.groups, g);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// One JSON document per line.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mvss::io
