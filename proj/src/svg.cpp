#include "unravel/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "unravel/csv.hpp"
#include "unravel/error.hpp"

namespace unravel {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 420;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Range {
  double lo, hi;
};

Range range_of(const std::vector<double>& v) {
  Range r{0.0, 1.0};
  bool any = false;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    if (!any) r = {x, x};
    r.lo = std::min(r.lo, x);
    r.hi = std::max(r.hi, x);
    any = true;
  }
  if (r.hi - r.lo < 1e-12) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

class Canvas {
 public:
  Canvas(const PlotLabels& labels, Range x, Range y) : x_(x), y_(y) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
         << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
         << xml_escape(labels.title) << "</text>\n"
         << "<text x=\"" << kLeft + (kWidth - kLeft - kRight) / 2 << "\" y=\"" << kHeight - 15
         << "\" text-anchor=\"middle\">" << xml_escape(labels.x_label) << "</text>\n"
         << "<text x=\"18\" y=\"" << kTop + (kHeight - kTop - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
         << kTop + (kHeight - kTop - kBottom) / 2 << ")\">" << xml_escape(labels.y_label) << "</text>\n";
  }

  double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

  void axes() {
    out_ << "<g class=\"axes\" stroke=\"#333\">\n"
         << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
         << kHeight - kBottom << "\"/>\n"
         << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
         << "\"/>\n</g>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      out_ << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
           << tick(xv) << "</text>\n"
           << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
           << "</text>\n";
    }
  }

  std::ostringstream& out() { return out_; }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  Range x_, y_;
  std::ostringstream out_;
};

}  // namespace

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_scatter(const PlotLabels& labels, const std::vector<double>& x, const std::vector<double>& y,
                        std::vector<std::size_t> highlight) {
  require(x.size() == y.size(), "scatter needs equally many x and y values");
  Canvas c(labels, range_of(x), range_of(y));
  c.axes();
  std::sort(highlight.begin(), highlight.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool hi = std::binary_search(highlight.begin(), highlight.end(), i);
    c.out() << "<circle class=\"point\" cx=\"" << fmt(c.px(x[i])) << "\" cy=\"" << fmt(c.py(y[i])) << "\" r=\""
            << (hi ? 5 : 3) << "\" fill=\"" << (hi ? kPalette[1] : kPalette[0]) << "\" data-x=\""
            << format_number(x[i]) << "\" data-y=\"" << format_number(y[i]) << "\"/>\n";
  }
  return c.finish();
}

std::string svg_lines(const PlotLabels& labels, const std::vector<Series>& series) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "series needs equally many x and y values");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  Canvas c(labels, range_of(xs), range_of(ys));
  c.axes();
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    c.out() << "<polyline class=\"series\" data-name=\"" << xml_escape(s.name) << "\" fill=\"none\" stroke=\""
            << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      c.out() << (i ? " " : "") << fmt(c.px(s.x[i])) << ',' << fmt(c.py(s.y[i]));
    }
    c.out() << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      c.out() << "<circle class=\"point\" cx=\"" << fmt(c.px(s.x[i])) << "\" cy=\"" << fmt(c.py(s.y[i]))
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    c.out() << "<text x=\"" << kWidth - kRight - 4 << "\" y=\"" << kTop + 14 * (k + 1)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  return c.finish();
}

std::string svg_heatmap(const PlotLabels& labels, int rows, int cols, const std::vector<double>& values, double lo,
                        double hi) {
  require(rows >= 1 && cols >= 1, "heat map needs at least one cell");
  require(values.size() == static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols),
          "heat map value count mismatch");
  require(hi > lo, "heat map range is empty");
  Canvas c(labels, {0.0, 1.0}, {0.0, 1.0});
  const double w = (kWidth - kLeft - kRight) / cols;
  const double h = (kHeight - kTop - kBottom) / rows;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = values[static_cast<std::size_t>(i * cols + j)];
      const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255 * (1.0 - t)));
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      const double x = kLeft + j * w;
      const double y = kTop + i * h;
      c.out() << "<rect class=\"cell\" x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
              << "\" height=\"" << fmt(h) << "\" fill=\"" << color << "\" data-value=\"" << format_number(v)
              << "\"/>\n";
      if (rows * cols <= 400) {
        c.out() << "<text x=\"" << fmt(x + w / 2) << "\" y=\"" << fmt(y + h / 2 + 4)
                << "\" text-anchor=\"middle\" font-size=\"10\">" << tick(v) << "</text>\n";
      }
    }
  }
  for (int j = 0; j < cols; ++j) {
    c.out() << "<text x=\"" << fmt(kLeft + (j + 0.5) * w) << "\" y=\"" << kHeight - kBottom + 16
            << "\" text-anchor=\"middle\">" << j + 1 << "</text>\n";
  }
  for (int i = 0; i < rows; ++i) {
    c.out() << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(kTop + (i + 0.5) * h + 4) << "\" text-anchor=\"end\">"
            << i + 1 << "</text>\n";
  }
  return c.finish();
}

}  // namespace unravel
