#include "gqr/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace gqr {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

Csv read_csv(std::istream& in, const std::string& origin) {
  Csv csv;
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ValidationError(origin + ": empty file (header row required)");
  ++line_no;
  csv.header = split_line(line);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != csv.header.size())
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(csv.header.size()) + " fields, got " +
                            std::to_string(cells.size()));
    csv.rows.push_back(std::move(cells));
  }
  return csv;
}

Csv read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  return read_csv(in, path);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, const std::string& origin, int line) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ValidationError(origin + ":" + std::to_string(line) + ": cannot parse number '" + cell + "'");
  return v;
}

std::string to_csv_string(const Csv& csv) {
  std::ostringstream out;
  for (std::size_t j = 0; j < csv.header.size(); ++j) {
    if (j) out << ',';
    out << csv.header[j];
  }
  out << '\n';
  for (const auto& row : csv.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << '\n';
  }
  return out.str();
}

void write_csv_file(const std::string& path, const Csv& csv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << to_csv_string(csv);
  if (!out) throw NumericalError("write failed for '" + path + "'");
}

Dataset csv_to_dataset(const Csv& csv, const std::string& origin) {
  Dataset data;
  data.names = csv.header;
  data.values.resize(static_cast<Eigen::Index>(csv.rows.size()),
                     static_cast<Eigen::Index>(csv.header.size()));
  for (std::size_t i = 0; i < csv.rows.size(); ++i)
    for (std::size_t j = 0; j < csv.header.size(); ++j)
      data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_double(csv.rows[i][j], origin, static_cast<int>(i) + 2);
  return data;
}

Dataset read_dataset_file(const std::string& path) { return csv_to_dataset(read_csv_file(path), path); }

Csv dataset_to_csv(const Dataset& data) {
  Csv csv;
  csv.header = data.names;
  csv.rows.resize(static_cast<std::size_t>(data.n_rows()));
  for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
    auto& row = csv.rows[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(data.n_cols()));
    for (Eigen::Index j = 0; j < data.n_cols(); ++j)
      row[static_cast<std::size_t>(j)] = format_double(data.values(i, j));
  }
  return csv;
}

}  // namespace gqr
