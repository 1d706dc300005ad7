#include "sgncde/svg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace sgncde::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string tick(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

void render_panel(std::ostringstream& os, const Panel& p, double top, int width, int height) {
  const double left = 70, right = 150, bottom = 40, head = 28;
  const double x0 = left, x1 = width - right, y0 = top + head, y1 = top + height - bottom;
  Range rx, ry;
  for (const Series& s : p.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      rx.add(s.x[i]);
      ry.add(s.y[i]);
    }
  }
  rx.finish();
  ry.finish();
  const auto px = [&](double x) { return x0 + (x - rx.lo) / (rx.hi - rx.lo) * (x1 - x0); };
  const auto py = [&](double y) { return y1 - (y - ry.lo) / (ry.hi - ry.lo) * (y1 - y0); };

  os << "<text x=\"" << num(x0) << "\" y=\"" << num(top + 18) << "\" font-size=\"14\" font-weight=\"bold\">"
     << escape(p.title) << "</text>\n";
  os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
     << num(y1 - y0) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
    const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    os << "<line x1=\"" << num(px(fx)) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px(fx)) << "\" y2=\"" << num(y1)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(py(fy))
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(y1 + 14) << "\" font-size=\"10\" text-anchor=\"middle\">"
       << tick(fx) << "</text>\n";
    os << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(py(fy) + 3) << "\" font-size=\"10\" text-anchor=\"end\">"
       << tick(fy) << "</text>\n";
  }
  os << "<text x=\"" << num(0.5 * (x0 + x1)) << "\" y=\"" << num(y1 + 30)
     << "\" font-size=\"11\" text-anchor=\"middle\">" << escape(p.x_label) << "</text>\n";
  os << "<text x=\"14\" y=\"" << num(0.5 * (y0 + y1)) << "\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << num(0.5 * (y0 + y1)) << ")\">" << escape(p.y_label) << "</text>\n";
  if (std::isfinite(p.marker_x) && p.marker_x >= rx.lo && p.marker_x <= rx.hi) {
    os << "<line x1=\"" << num(px(p.marker_x)) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px(p.marker_x))
       << "\" y2=\"" << num(y1) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const Series& s = p.series[k];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.markers) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.y[i])) continue;
        os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"2\" fill=\"" << s.color
           << "\"/>\n";
      }
    } else {
      std::string points;
      const auto flush = [&] {
        if (!points.empty()) {
          os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"" << points
             << "\"/>\n";
        }
        points.clear();
      };
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.y[i])) {
          flush();
          continue;
        }
        points += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
      }
      flush();
    }
    const double ly = y0 + 14 + 16 * static_cast<double>(k);
    os << "<rect x=\"" << num(x1 + 10) << "\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << s.color
       << "\"/>\n";
    os << "<text x=\"" << num(x1 + 26) << "\" y=\"" << num(ly + 1) << "\" font-size=\"11\">" << escape(s.label)
       << "</text>\n";
  }
}

}  // namespace

std::string render(const std::vector<Panel>& panels, int width, int panel_height) {
  std::ostringstream os;
  const int height = panel_height * static_cast<int>(std::max<std::size_t>(1, panels.size()));
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    render_panel(os, panels[i], static_cast<double>(i) * panel_height, width, panel_height);
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace sgncde::svg
