#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gqr/common.hpp"

namespace gqr {

/// Raw CSV content: header row plus string cells. Comma separator,
/// '.' decimal, UTF-8; no quoting dialects (values are plain numbers or
/// identifiers throughout this project).
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Csv read_csv(std::istream& in, const std::string& origin = "<stream>");
Csv read_csv_file(const std::string& path);

std::string to_csv_string(const Csv& csv);
void write_csv_file(const std::string& path, const Csv& csv);

/// Shortest exact decimal representation; re-parsing reproduces the
/// double bit-for-bit, so emitted tables round-trip.
std::string format_double(double v);
double parse_double(const std::string& cell, const std::string& origin, int line);

/// All-numeric view of a CSV (line-numbered parse errors).
Dataset csv_to_dataset(const Csv& csv, const std::string& origin = "<csv>");
Dataset read_dataset_file(const std::string& path);
Csv dataset_to_csv(const Dataset& data);

}  // namespace gqr
