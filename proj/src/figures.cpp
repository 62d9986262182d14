#include <algorithm>
#include <cmath>
#include <sstream>

#include "placeopt/experiment.hpp"

namespace placeopt {

namespace {

struct Series {
  std::string name;
  std::string colour;
  std::vector<double> y;
};

std::vector<double> numeric_column(const CsvTable& t, const std::string& name) {
  const size_t c = t.column(name);
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    try {
      out.push_back(c < row.size() ? std::stod(row[c]) : std::nan(""));
    } catch (const std::exception&) {
      out.push_back(std::nan(""));
    }
  }
  return out;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void panel(std::ostringstream& os, double ox, double oy, double w, double h, const std::vector<double>& xs,
           const std::vector<Series>& series, const std::string& ylabel) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    const double pad = std::max(1e-3, 0.05 * std::abs(hi));
    lo -= pad;
    hi += pad;
  }
  const double xlo = xs.front(), xhi = xs.back();
  const double xspan = xhi > xlo ? xhi - xlo : 1.0;
  auto px = [&](double x) { return xs.size() == 1 ? ox + 0.5 * w : ox + (x - xlo) / xspan * w; };
  auto py = [&](double y) { return oy + h - (y - lo) / (hi - lo) * h; };

  os << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<text x=\"" << ox - 8 << "\" y=\"" << oy + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
     << format_double(hi) << "</text>\n";
  os << "<text x=\"" << ox - 8 << "\" y=\"" << oy + h << "\" text-anchor=\"end\" font-size=\"10\">"
     << format_double(lo) << "</text>\n";
  os << "<text x=\"" << ox + w / 2 << "\" y=\"" << oy - 8 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << esc(ylabel) << "</text>\n";
  for (double x : xs)
    os << "<text x=\"" << px(x) << "\" y=\"" << oy + h + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << format_double(x) << "</text>\n";
  os << "<text x=\"" << ox + w / 2 << "\" y=\"" << oy + h + 30
     << "\" text-anchor=\"middle\" font-size=\"11\">state dimension</text>\n";

  double ly = oy + 12;
  for (const auto& s : series) {
    std::string pts;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts += format_double(px(xs[i])) + "," + format_double(py(s.y[i])) + " ";
      os << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << s.colour << "\"/>\n";
    }
    if (!pts.empty())
      os << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << s.colour << "\"/>\n";
    if (series.size() > 1) {
      os << "<text x=\"" << ox + w - 6 << "\" y=\"" << ly << "\" text-anchor=\"end\" font-size=\"10\" fill=\""
         << s.colour << "\">" << esc(s.name) << "</text>\n";
      ly += 12;
    }
  }
}

}  // namespace

std::string emit_figure_svg(const std::string& csv_text, const std::string& title) {
  const CsvTable t = CsvTable::parse(csv_text);
  const std::vector<double> dims = numeric_column(t, "dim");
  const std::vector<double> cost = numeric_column(t, "cost");
  const std::vector<double> x = numeric_column(t, "x");
  const std::vector<double> y = numeric_column(t, "y");
  if (dims.empty()) throw Error(ErrorKind::Schema, "figure table has no rows");

  const double width = 760, height = 340;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << esc(title)
     << "</text>\n";
  panel(os, 80, 60, 260, 220, dims, {{"cost", "#1f77b4", cost}}, "optimal cost");
  panel(os, 460, 60, 260, 220, dims, {{"x", "#d62728", x}, {"y", "#2ca02c", y}}, "optimal location");
  os << "</svg>\n";
  return os.str();
}

}  // namespace placeopt
