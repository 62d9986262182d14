#pragma once

#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "placeopt/operators.hpp"

namespace placeopt {

using Json = nlohmann::ordered_json;

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

void write_matrix_csv(std::ostream& os, const Matrix& m);
void write_matrix_csv(const std::string& path, const Matrix& m);
Matrix read_matrix_csv(std::istream& is);
Matrix read_matrix_csv(const std::string& path);

Json matrix_to_json(const Matrix& m);
// Accepts a nested array, a flat array (column vector) or a bare number (1x1).
Matrix matrix_from_json(const Json& j, const std::string& field);

// Simple CSV table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  // Index of a header column; throws Schema if absent.
  size_t column(const std::string& name) const;
  static CsvTable parse(const std::string& text);
  std::string str() const;
  void write(const std::string& path) const;
};

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace placeopt
