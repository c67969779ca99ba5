#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "emit_util.hpp"
#include "geomlens/cli.hpp"

namespace geomlens::cli {

namespace {

using detail::fmt_coord;
using detail::xml_escape;

constexpr const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                                    "#66ccee", "#aa3377", "#bbbbbb"};
constexpr int kPaletteSize = 7;

constexpr double kWidth = 640.0, kHeight = 480.0;
constexpr double kLeft = 70.0, kRight = 590.0, kTop = 50.0, kBottom = 420.0;

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double px_lo, double px_hi) const {
    double span = hi - lo;
    if (span == 0.0) span = 1.0;
    return px_lo + (v - lo) / span * (px_hi - px_lo);
  }
};

Range range_of(const std::vector<double>& values) {
  Range r{values.front(), values.front()};
  for (double v : values) {
    r.lo = std::min(r.lo, v);
    r.hi = std::max(r.hi, v);
  }
  if (r.lo == r.hi) {  // degenerate: pad so the point sits mid-axis
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  return r;
}

void open_svg(std::ostringstream& svg, const ArtifactStamp& stamp, const std::string& title) {
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<!-- " << detail::stamp_line(stamp) << " -->\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  svg << "  <text x=\"" << (kWidth / 2) << "\" y=\"28\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << xml_escape(title) << "</text>\n";
}

void draw_frame(std::ostringstream& svg) {
  svg << "  <rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << (kRight - kLeft)
      << "\" height=\"" << (kBottom - kTop)
      << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
}

void draw_x_ticks(std::ostringstream& svg, const Range& xr) {
  for (int t = 0; t <= 4; ++t) {
    const double v = xr.lo + (xr.hi - xr.lo) * t / 4.0;
    const double px = xr.map(v, kLeft, kRight);
    svg << "  <line x1=\"" << fmt_coord(px) << "\" y1=\"" << kBottom << "\" x2=\"" << fmt_coord(px)
        << "\" y2=\"" << (kBottom + 5) << "\" stroke=\"#444444\"/>\n";
    svg << "  <text x=\"" << fmt_coord(px) << "\" y=\"" << (kBottom + 20)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt_coord(v) << "</text>\n";
  }
}

void draw_y_ticks(std::ostringstream& svg, const Range& yr, double px_x, bool left,
                  const std::string& color) {
  for (int t = 0; t <= 4; ++t) {
    const double v = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    const double py = yr.map(v, kBottom, kTop);
    const double x2 = left ? px_x - 5 : px_x + 5;
    svg << "  <line x1=\"" << fmt_coord(px_x) << "\" y1=\"" << fmt_coord(py) << "\" x2=\""
        << fmt_coord(x2) << "\" y2=\"" << fmt_coord(py) << "\" stroke=\"" << color << "\"/>\n";
    svg << "  <text x=\"" << fmt_coord(left ? px_x - 8 : px_x + 8) << "\" y=\""
        << fmt_coord(py + 4) << "\" text-anchor=\"" << (left ? "end" : "start")
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">"
        << fmt_coord(v) << "</text>\n";
  }
}

void axis_labels(std::ostringstream& svg, const std::string& x_label, const std::string& y_label,
                 const std::string& y_color = "#444444") {
  svg << "  <text x=\"" << ((kLeft + kRight) / 2) << "\" y=\"" << (kHeight - 14)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "  <text x=\"18\" y=\"" << ((kTop + kBottom) / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" fill=\"" << y_color
      << "\" transform=\"rotate(-90 18 " << ((kTop + kBottom) / 2) << ")\">" << xml_escape(y_label)
      << "</text>\n";
}

}  // namespace

std::string emit_svg_scatter(const std::vector<ScatterPoint>& points, const std::string& x_label,
                             const std::string& y_label, const std::string& title,
                             const ArtifactStamp& stamp) {
  if (points.empty()) throw Error(Errc::empty_input, "scatter plot needs at least one point");

  std::vector<double> xs, ys;
  for (const ScatterPoint& p : points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const Range xr = range_of(xs), yr = range_of(ys);

  // Palette index by first appearance in sorted group order.
  std::map<std::string, int> group_color;
  for (const ScatterPoint& p : points) group_color.emplace(p.group, 0);
  int next = 0;
  for (auto& [name, color] : group_color) color = next++ % kPaletteSize;

  std::ostringstream svg;
  open_svg(svg, stamp, title);
  draw_frame(svg);
  draw_x_ticks(svg, xr);
  draw_y_ticks(svg, yr, kLeft, true, "#444444");
  axis_labels(svg, x_label, y_label);

  for (const ScatterPoint& p : points) {
    svg << "  <circle cx=\"" << fmt_coord(xr.map(p.x, kLeft, kRight)) << "\" cy=\""
        << fmt_coord(yr.map(p.y, kBottom, kTop)) << "\" r=\"3\" fill=\""
        << kPalette[group_color.at(p.group)] << "\" fill-opacity=\"0.8\"/>\n";
  }

  double ly = kTop + 14;
  for (const auto& [name, color] : group_color) {
    svg << "  <circle cx=\"" << (kRight - 120) << "\" cy=\"" << fmt_coord(ly - 4)
        << "\" r=\"4\" fill=\"" << kPalette[color] << "\"/>\n";
    svg << "  <text x=\"" << (kRight - 110) << "\" y=\"" << fmt_coord(ly)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(name) << "</text>\n";
    ly += 18;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string emit_svg_saturation(const saturation::CheckpointSeries& series,
                                const saturation::SaturationVerdict& verdict,
                                const ArtifactStamp& stamp) {
  std::vector<double> xs, losses, ranks;
  for (const auto& p : series.points) {
    xs.push_back(static_cast<double>(p.tokens));
    losses.push_back(p.loss);
    ranks.push_back(p.eff_rank_norm);
  }
  const Range xr = range_of(xs), lr = range_of(losses), rr = range_of(ranks);

  std::ostringstream svg;
  open_svg(svg, stamp, series.model_id);
  draw_frame(svg);
  draw_x_ticks(svg, xr);
  draw_y_ticks(svg, lr, kLeft, true, kPalette[0]);
  draw_y_ticks(svg, rr, kRight, false, kPalette[1]);
  axis_labels(svg, "tokens", "loss (nats)", kPalette[0]);
  svg << "  <text x=\"" << (kWidth - 14) << "\" y=\"" << ((kTop + kBottom) / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" fill=\""
      << kPalette[1] << "\" transform=\"rotate(90 " << (kWidth - 14) << " "
      << ((kTop + kBottom) / 2) << ")\">effective rank (norm)</text>\n";

  const auto polyline = [&](const std::vector<double>& ys, const Range& yrange,
                            const char* color) {
    svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
      if (i) svg << ' ';
      svg << fmt_coord(xr.map(xs[i], kLeft, kRight)) << ','
          << fmt_coord(yrange.map(ys[i], kBottom, kTop));
    }
    svg << "\"/>\n";
  };
  polyline(losses, lr, kPalette[0]);
  polyline(ranks, rr, kPalette[1]);

  const auto onset_marker = [&](long long tokens, const char* color) {
    const double px = xr.map(static_cast<double>(tokens), kLeft, kRight);
    svg << "  <line x1=\"" << fmt_coord(px) << "\" y1=\"" << kTop << "\" x2=\"" << fmt_coord(px)
        << "\" y2=\"" << kBottom << "\" stroke=\"" << color
        << "\" stroke-width=\"1\" stroke-dasharray=\"4,3\"/>\n";
  };
  if (verdict.loss_degradation_onset) onset_marker(*verdict.loss_degradation_onset, kPalette[0]);
  if (verdict.rank_collapse_onset) onset_marker(*verdict.rank_collapse_onset, kPalette[1]);

  svg << "</svg>\n";
  return svg.str();
}

std::string emit_svg_sweep(const SweepGroupReport& report, const ArtifactStamp& stamp) {
  if (report.rows.empty()) throw Error(Errc::empty_input, "sweep report has no rows");

  std::vector<double> xs, losses, metrics;
  for (const SweepGroupRow& r : report.rows) {
    xs.push_back(r.axis_value);
    losses.push_back(r.mean_scaled_loss);
    if (r.mean_eff_rank_w) metrics.push_back(*r.mean_eff_rank_w);
  }
  const Range xr = range_of(xs), lr = range_of(losses);
  const Range mr = metrics.empty() ? Range{0.0, 1.0} : range_of(metrics);

  std::ostringstream svg;
  open_svg(svg, stamp, "sweep: " + report.axis);
  draw_frame(svg);
  draw_x_ticks(svg, xr);
  draw_y_ticks(svg, lr, kLeft, true, kPalette[0]);
  if (!metrics.empty()) draw_y_ticks(svg, mr, kRight, false, kPalette[1]);
  axis_labels(svg, report.axis, "mean scaled loss", kPalette[0]);

  // One polyline per model size, solid for loss and dashed for R(W).
  std::map<long long, std::vector<const SweepGroupRow*>> by_size;
  for (const SweepGroupRow& r : report.rows) by_size[r.param_count].push_back(&r);
  int color = 0;
  for (const auto& [size, rows] : by_size) {
    std::ostringstream loss_pts, metric_pts;
    bool have_metric = true;
    for (size_t i = 0; i < rows.size(); ++i) {
      const double px = xr.map(rows[i]->axis_value, kLeft, kRight);
      if (i) loss_pts << ' ';
      loss_pts << fmt_coord(px) << ',' << fmt_coord(lr.map(rows[i]->mean_scaled_loss, kBottom, kTop));
      if (rows[i]->mean_eff_rank_w) {
        if (i) metric_pts << ' ';
        metric_pts << fmt_coord(px) << ','
                   << fmt_coord(mr.map(*rows[i]->mean_eff_rank_w, kBottom, kTop));
      } else {
        have_metric = false;
      }
    }
    const char* c = kPalette[color % kPaletteSize];
    svg << "  <polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\""
        << loss_pts.str() << "\"/>\n";
    for (const SweepGroupRow* r : rows)
      svg << "  <circle cx=\"" << fmt_coord(xr.map(r->axis_value, kLeft, kRight)) << "\" cy=\""
          << fmt_coord(lr.map(r->mean_scaled_loss, kBottom, kTop)) << "\" r=\"3\" fill=\"" << c
          << "\"/>\n";
    if (have_metric && !metrics.empty())
      svg << "  <polyline fill=\"none\" stroke=\"" << c
          << "\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\" points=\"" << metric_pts.str()
          << "\"/>\n";
    svg << "  <text x=\"" << (kLeft + 10) << "\" y=\"" << fmt_coord(kTop + 16 + 16 * color)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << c << "\">N="
        << size << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace geomlens::cli
