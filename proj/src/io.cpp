#include "pmpstab/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace pmpstab {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

class Row {
 public:
  explicit Row(std::ostream& out) : out_(out) {}
  ~Row() { out_ << '\n'; }
  Row& operator<<(double v) { return cell(format_number(v)); }
  Row& operator<<(int v) { return cell(std::to_string(v)); }
  Row& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  Row& operator<<(std::span<const double> v) {
    for (double d : v) *this << d;
    return *this;
  }

 private:
  Row& cell(const std::string& s) {
    if (!first_) out_ << ',';
    first_ = false;
    out_ << s;
    return *this;
  }
  std::ostream& out_;
  bool first_ = true;
};

std::string indexed(const std::string& base, std::size_t count) {
  std::string s;
  for (std::size_t i = 1; i <= count; ++i) s += (i > 1 ? "," : "") + base + std::to_string(i);
  return s;
}

}  // namespace

void write_manifold_csv(std::ostream& out, const LagrangianManifold& man) {
  const std::size_t n = man.system().n(), m = man.system().m();
  out << "psi,tau," << indexed("x", n) << ',' << indexed("nu", n) << ','
      << (m == 1 ? std::string("u") : indexed("u", m)) << ",W,S,event_flag\n";
  for (const Bicharacteristic& b : man.branches())
    for (std::size_t i = 0; i < b.size(); ++i)
      Row(out) << b.seed.psi << b.tau(i) << b.x(i) << b.nu(i) << b.u(i) << b.W(i) << b.S(i)
               << int(b.flag(i));
}

void write_feedback(std::ostream& out, const FeedbackLaw& law) {
  std::string inner;
  for (const Expr& e : law.inner()) inner += (inner.empty() ? "" : "; ") + e.str();
  out << "# pmpstab feedback law\n";
  out << "# inner: " << inner << '\n';
  out << "# epsilon: " << format_number(law.epsilon()) << '\n';
  out << "# k: " << format_number(law.amplitude()) << '\n';
  out << "# C: " << format_number(law.C()) << '\n';
  write_manifold_csv(out, law.manifold());
}

std::map<std::string, std::string> read_feedback_header(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (in.peek() == '#' && std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(1, colon - 1), value = line.substr(colon + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
    };
    trim(key);
    trim(value);
    out[key] = value;
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
  out << "t," << indexed("x", tr.n) << ',' << indexed("u", tr.m) << ",event_flag\n";
  for (std::size_t i = 0; i < tr.size(); ++i)
    Row(out) << tr.t[i] << tr.x[i] << tr.u[i] << int(tr.flag[i]);
}

void write_error_log_csv(std::ostream& out, const std::vector<ErrorSample>& errors) {
  out << "t,e1,e2,V_e,W\n";
  for (const ErrorSample& e : errors) Row(out) << e.t << e.e1 << e.e2 << e.V_e << e.W;
}

void write_mismatch_csv(std::ostream& out, const std::vector<MismatchSample>& mismatches) {
  out << "t,nu2,du,e2,bound\n";
  for (const MismatchSample& s : mismatches) Row(out) << s.t << s.nu2 << s.du << s.e2 << s.bound;
}

void write_switching_curve_csv(std::ostream& out,
                               const std::vector<std::vector<SwitchPoint>>& computed,
                               const std::vector<double>& reference_taus) {
  out << "polyline,source,param,x1,x2\n";
  std::size_t id = 0;
  for (const auto& line : computed) {
    for (const SwitchPoint& p : line) Row(out) << id << 0 << p.psi << p.x[0] << p.x[1];
    ++id;
  }
  // the two reference arcs lie in (π/2, π) and (3π/2, 2π)
  for (int arc = 0; arc < 2; ++arc, ++id)
    for (double tau : reference_taus) {
      if (!in_reference_range(tau) || (tau > 3.2) != (arc == 1)) continue;
      const auto p = reference_switching_point(tau);
      Row(out) << id << 1 << tau << p[0] << p[1];
    }
}

void write_illumination_csv(std::ostream& out, const std::vector<Vec>& points,
                            const std::vector<Illumination>& classes) {
  const std::size_t n = points.empty() ? 0 : points[0].size();
  out << indexed("x", n) << ",class\n";
  for (std::size_t i = 0; i < points.size(); ++i)
    Row(out) << points[i] << static_cast<int>(classes[i]);
}

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty()) {
      t.header = split(line);
      for (auto& h : t.header) h.erase(std::remove(h.begin(), h.end(), ' '), h.end());
      continue;
    }
    std::vector<double> row;
    for (const auto& c : split(line)) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      row.push_back(end != c.c_str() ? v : std::nan(""));
    }
    row.resize(t.header.size(), std::nan(""));
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::size_t require_column(const CsvTable& t, const std::string& name) {
  const auto c = t.column(name);
  if (!c) throw ValidationError("plot: no column named '" + name + "'");
  return *c;
}

// 1-2-5 tick spacing with about five ticks over [lo, hi].
double tick_step(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double p = std::pow(10.0, std::floor(std::log10(raw)));
  for (double f : {1.0, 2.0, 5.0})
    if (raw <= f * p) return f * p;
  return 10.0 * p;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string render_svg(const CsvTable& t, const PlotSpec& spec) {
  if (t.header.empty() || t.rows.empty()) throw ValidationError("plot: the table has no rows");

  std::size_t xc = 0;
  if (!spec.x.empty()) xc = require_column(t, spec.x);
  else if (auto c = t.column("x1")) xc = *c;
  const std::optional<std::size_t> gc =
      spec.group.empty() ? std::nullopt : std::optional(require_column(t, spec.group));
  const std::optional<std::size_t> ec =
      spec.events.empty() ? t.column("event_flag") : std::optional(require_column(t, spec.events));

  std::vector<std::size_t> ycs;
  for (const auto& name : spec.y) ycs.push_back(require_column(t, name));
  if (ycs.empty()) {
    if (t.header[xc] == "x1" && t.column("x2")) {
      ycs.push_back(*t.column("x2"));
    } else {
      for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != xc && c != gc && c != ec) ycs.push_back(c);
    }
  }
  if (ycs.empty()) throw ValidationError("plot: nothing to plot against " + t.header[xc]);

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : t.rows) {
    if (!std::isfinite(r[xc])) continue;
    for (std::size_t yc : ycs) {
      if (!std::isfinite(r[yc])) continue;
      x0 = std::min(x0, r[xc]);
      x1 = std::max(x1, r[xc]);
      y0 = std::min(y0, r[yc]);
      y1 = std::max(y1, r[yc]);
    }
  }
  if (!std::isfinite(x0) || !std::isfinite(y0)) throw ValidationError("plot: no finite data");
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;

  const double W = spec.width, H = spec.height, ml = 64, mr = 16, mt = 32, mb = 48;
  auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
    << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    s << "<text x=\"" << num(W / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(spec.title) << "</text>\n";

  // axes and ticks
  s << "<g stroke=\"black\" fill=\"none\"><rect x=\"" << num(ml) << "\" y=\"" << num(mt)
    << "\" width=\"" << num(W - ml - mr) << "\" height=\"" << num(H - mt - mb) << "\"/></g>\n";
  s << "<g font-size=\"11\" fill=\"black\">\n";
  for (int axis = 0; axis < 2; ++axis) {
    const double lo = axis ? y0 : x0, hi = axis ? y1 : x1, step = tick_step(lo, hi);
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) {
      const double tv = std::fabs(v) < 1e-12 * step ? 0.0 : v;
      const std::string label = format_number(std::round(tv / step * 1e6) / 1e6 * step);
      if (axis == 0)
        s << "<text x=\"" << num(px(tv)) << "\" y=\"" << num(H - mb + 16)
          << "\" text-anchor=\"middle\">" << label << "</text>\n";
      else
        s << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(py(tv) + 4)
          << "\" text-anchor=\"end\">" << label << "</text>\n";
    }
  }
  s << "<text x=\"" << num(W / 2) << "\" y=\"" << num(H - 10) << "\" text-anchor=\"middle\">"
    << escape(t.header[xc]) << "</text>\n";
  std::string ylabel;
  for (std::size_t yc : ycs) ylabel += (ylabel.empty() ? "" : ", ") + t.header[yc];
  s << "<text x=\"14\" y=\"" << num(H / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << num(H / 2) << ")\">" << escape(ylabel) << "</text>\n</g>\n";

  auto color = [&](std::size_t series, double group) {
    const long g = std::isfinite(group) ? std::lround(group) : 0;
    const std::size_t k = spec.points ? static_cast<std::size_t>(std::abs(g)) : series;
    return kPalette[k % std::size(kPalette)];
  };

  for (std::size_t si = 0; si < ycs.size(); ++si) {
    const std::size_t yc = ycs[si];
    if (spec.points) {
      s << "<g stroke=\"none\">\n";
      for (const auto& r : t.rows)
        if (std::isfinite(r[xc]) && std::isfinite(r[yc]))
          s << "<circle cx=\"" << num(px(r[xc])) << "\" cy=\"" << num(py(r[yc]))
            << "\" r=\"2.5\" fill=\"" << color(si, gc ? r[*gc] : 0.0) << "\"/>\n";
      s << "</g>\n";
      continue;
    }
    std::string pts;
    auto flush = [&] {
      if (!pts.empty())
        s << "<polyline fill=\"none\" stroke=\"" << color(si, 0.0)
          << "\" stroke-width=\"1\" points=\"" << pts << "\"/>\n";
      pts.clear();
    };
    double prev_group = NAN;
    for (const auto& r : t.rows) {
      if (gc && r[*gc] != prev_group) {
        flush();
        prev_group = r[*gc];
      }
      if (!std::isfinite(r[xc]) || !std::isfinite(r[yc])) {
        flush();
        continue;
      }
      pts += (pts.empty() ? "" : " ") + num(px(r[xc])) + "," + num(py(r[yc]));
    }
    flush();
  }

  if (ec) {
    s << "<g fill=\"none\" stroke=\"black\">\n";
    for (const auto& r : t.rows)
      if (std::isfinite(r[*ec]) && r[*ec] != 0.0 && std::isfinite(r[xc]))
        for (std::size_t yc : ycs)
          if (std::isfinite(r[yc]))
            s << "<circle cx=\"" << num(px(r[xc])) << "\" cy=\"" << num(py(r[yc]))
              << "\" r=\"3\"/>\n";
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace pmpstab
