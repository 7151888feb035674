#pragma once

// Artifact emission: trajectory CSV (17 significant digits), per-check margin CSV,
// and SVG polyline plots with axes metadata. All output is deterministic for a
// given input; no timestamps, no locale dependence.

#include <ostream>

#include "kladapt/moore_greitzer.hpp"
#include "kladapt/verify.hpp"

namespace kladapt {

namespace detail {

inline void put_g17(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
}

}  // namespace detail

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t";
    for (std::size_t i = 1; i <= traj.x.size(); ++i) os << ",x" << i;
    for (std::size_t j = 1; j <= traj.theta_hat.size(); ++j) os << ",th" << j;
    os << ",u";
    for (const auto& [name, col] : traj.diag)
        if (name != "u") os << "," << name;
    os << "\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        detail::put_g17(os, traj.t[k]);
        for (const auto& col : traj.x) {
            os << ',';
            detail::put_g17(os, col[k]);
        }
        for (const auto& col : traj.theta_hat) {
            os << ',';
            detail::put_g17(os, col[k]);
        }
        os << ',';
        detail::put_g17(os, traj.u[k]);
        for (const auto& [name, col] : traj.diag) {
            if (name == "u") continue;
            os << ',';
            detail::put_g17(os, col[k]);
        }
        os << "\n";
    }
}

inline void write_margins_csv(std::ostream& os, const Trajectory& traj,
                              const VerificationReport& report) {
    os << "t";
    for (const auto& c : report.checks)
        if (c.margins.size() == traj.size()) os << "," << c.name;
    os << "\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        detail::put_g17(os, traj.t[k]);
        for (const auto& c : report.checks) {
            if (c.margins.size() != traj.size()) continue;
            os << ',';
            detail::put_g17(os, c.margins[k]);
        }
        os << "\n";
    }
}

inline void write_figure_csv(std::ostream& os, const moore_greitzer::FigureData& fig) {
    os << "# figure " << fig.which << "\n";
    os << "# xlabel = " << fig.xlabel << "\n";
    os << "# ylabel = " << fig.ylabel << "\n";
    os << "series,x,y\n";
    for (const auto& s : fig.series) {
        for (std::size_t k = 0; k < s.xs.size(); ++k) {
            os << s.label << ',';
            detail::put_g17(os, s.xs[k]);
            os << ',';
            detail::put_g17(os, s.ys[k]);
            os << "\n";
        }
    }
}

namespace detail {

inline const char* svg_palette(std::size_t i) {
    static const char* colors[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400",
                                   "#16a085", "#7f8c8d", "#2c3e50", "#f39c12", "#9b59b6",
                                   "#1abc9c", "#34495e", "#e74c3c", "#3498db"};
    return colors[i % (sizeof colors / sizeof colors[0])];
}

inline void put_px(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    os << buf;
}

}  // namespace detail

/// Raw polyline SVG: data series as <polyline> elements inside a frame, with the
/// axes ranges recorded as metadata. Styling is left to downstream tools.
inline void write_figure_svg(std::ostream& os, const moore_greitzer::FigureData& fig) {
    const double W = 640.0, H = 480.0, m = 56.0;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : fig.series) {
        for (double v : s.xs) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.ys) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    auto px = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (W - 2 * m); };
    auto py = [&](double y) { return H - m - (y - ymin) / (ymax - ymin) * (H - 2 * m); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
          "viewBox=\"0 0 640 480\">\n";
    os << "  <metadata>figure=" << fig.which << " xlabel=" << fig.xlabel
       << " ylabel=" << fig.ylabel << " xmin=";
    detail::put_g17(os, xmin);
    os << " xmax=";
    detail::put_g17(os, xmax);
    os << " ymin=";
    detail::put_g17(os, ymin);
    os << " ymax=";
    detail::put_g17(os, ymax);
    os << "</metadata>\n";
    os << "  <rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << (W - 2 * m) << "\" height=\""
       << (H - 2 * m) << "\" fill=\"none\" stroke=\"#000000\"/>\n";
    os << "  <text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" "
          "font-size=\"14\">"
       << fig.xlabel << "</text>\n";
    os << "  <text x=\"16\" y=\"" << H / 2
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 " << H / 2 << ")\">"
       << fig.ylabel << "</text>\n";
    for (std::size_t i = 0; i < fig.series.size(); ++i) {
        const auto& s = fig.series[i];
        os << "  <polyline fill=\"none\" stroke=\"" << detail::svg_palette(i)
           << "\" stroke-width=\"1.2\" data-label=\"" << s.label << "\" points=\"";
        for (std::size_t k = 0; k < s.xs.size(); ++k) {
            if (k) os << ' ';
            detail::put_px(os, px(s.xs[k]));
            os << ',';
            detail::put_px(os, py(s.ys[k]));
        }
        os << "\"/>\n";
    }
    os << "</svg>\n";
}

}  // namespace kladapt
