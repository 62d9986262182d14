#include "placeopt/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace placeopt {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_matrix_csv(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  write_matrix_csv(f, m);
}

Matrix read_matrix_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto first = cell.data();
      auto last = cell.data() + cell.size();
      while (first != last && *first == ' ') ++first;
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc()) throw Error(ErrorKind::Io, "malformed CSV cell '" + cell + "'");
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::Io, "ragged CSV matrix");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return m;
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  return read_matrix_csv(f);
}

Json matrix_to_json(const Matrix& m) {
  Json entries = Json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) entries.push_back(m(i, j));
  Json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["entries"] = std::move(entries);
  return out;
}

Matrix matrix_from_json(const Json& j, const std::string& field) {
  auto bad = [&](const std::string& why) { return Error(ErrorKind::Config, field + ": " + why); };
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "rows" && it.key() != "cols" && it.key() != "entries") throw bad("unknown key " + it.key());
    if (!j.contains("rows") || !j.contains("cols") || !j.contains("entries")) throw bad("expected rows, cols and entries");
    if (!j["rows"].is_number_integer() || !j["cols"].is_number_integer()) throw bad("rows and cols must be integers");
    const long long r = j["rows"].get<long long>(), c = j["cols"].get<long long>();
    const Json& e = j["entries"];
    if (r < 1 || c < 1) throw bad("rows and cols must be positive");
    if (!e.is_array() || static_cast<long long>(e.size()) != r * c) throw bad("entries must hold rows * cols numbers");
    Matrix m(r, c);
    for (long long i = 0; i < r * c; ++i) {
      if (!e[static_cast<size_t>(i)].is_number()) throw bad("non-numeric entry");
      m(i / c, i % c) = e[static_cast<size_t>(i)].get<double>();
    }
    if (!m.allFinite()) throw bad("non-finite entry");
    return m;
  }
  if (!j.is_array() || j.empty()) throw bad("expected a number or a non-empty array");
  if (j.front().is_number()) {
    Matrix m(static_cast<Index>(j.size()), 1);
    for (size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw bad("mixed array");
      m(static_cast<Index>(i), 0) = j[i].get<double>();
    }
    return m;
  }
  const size_t cols = j.front().is_array() ? j.front().size() : 0;
  if (cols == 0) throw bad("expected rows of numbers");
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw bad("ragged matrix");
    for (size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw bad("non-numeric entry");
      m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
    }
  }
  if (!m.allFinite()) throw bad("non-finite entry");
  return m;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) throw Error(ErrorKind::Shape, "CSV row width differs from header");
  rows.push_back(std::move(row));
}

size_t CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(ErrorKind::Schema, "missing column '" + name + "'");
}

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw Error(ErrorKind::Schema, "CSV row width differs from header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw Error(ErrorKind::Schema, "empty CSV");
  return t;
}

std::string CsvTable::str() const {
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); ++i) {
      if (i) os << ',';
      os << r[i];
    }
    os << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return os.str();
}

void CsvTable::write(const std::string& path) const { write_text(path, str()); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace placeopt
