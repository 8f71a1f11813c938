#pragma once

// CSV exports, the feedback-law header block and a minimal SVG renderer.
// Numbers are written in shortest round-trip form, so equal inputs give
// byte-identical files.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pmpstab/manifold.hpp"
#include "pmpstab/observer.hpp"
#include "pmpstab/simulate.hpp"
#include "pmpstab/synthesis.hpp"

namespace pmpstab {

std::string format_number(double v);

/// psi, tau, x1..xn, nu1..nun, u (u1..um when m > 1), W, S, event_flag
void write_manifold_csv(std::ostream& out, const LagrangianManifold& man);

/// `# key: value` lines for the inner law, ε, k and C, then the manifold rows.
void write_feedback(std::ostream& out, const FeedbackLaw& law);

/// The `# key: value` block at the top of a feedback file. `inner` holds
/// the expressions joined by "; ".
std::map<std::string, std::string> read_feedback_header(std::istream& in);

/// t, x1..xn, u1..um, event_flag
void write_trajectory_csv(std::ostream& out, const Trajectory& tr);

/// t, e1, e2, V_e, W
void write_error_log_csv(std::ostream& out, const std::vector<ErrorSample>& errors);

/// t, nu2, du, e2, bound
void write_mismatch_csv(std::ostream& out, const std::vector<MismatchSample>& mismatches);

/// polyline, source, param, x1, x2: source 0 rows are computed switch
/// polylines (param = ψ), source 1 rows are the two reference arcs (param = τ).
void write_switching_curve_csv(std::ostream& out,
                               const std::vector<std::vector<SwitchPoint>>& computed,
                               const std::vector<double>& reference_taus);

/// x1..xn, class with class 0 inner, 1 illuminated, 2 dark.
void write_illumination_csv(std::ostream& out, const std::vector<Vec>& points,
                            const std::vector<Illumination>& classes);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // unparsable cells are NaN

  /// Index of a column, or nullopt.
  std::optional<std::size_t> column(const std::string& name) const;
};

/// Skips `#` lines; the first remaining line is the header.
CsvTable read_csv(std::istream& in);

struct PlotSpec {
  std::string x;                   // column name; empty picks x1 if present, else column 0
  std::vector<std::string> y;      // empty picks x2 for phase plots, else all remaining
  std::string group;               // a change of this column starts a new polyline
  std::string events;              // nonzero values get a marker; empty picks event_flag
  bool points = false;             // draw markers instead of polylines, colored by `group`
  std::string title;
  int width = 640, height = 480;
};

/// Self-contained SVG with axes, one polyline per (y column, group run) and
/// event markers. Throws ValidationError for unknown columns or empty tables.
std::string render_svg(const CsvTable& table, const PlotSpec& spec);

}  // namespace pmpstab
