#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fgiv/errors.hpp"
#include "fgiv/types.hpp"

namespace fgiv {

// ---------------------------------------------------------------------------
// core data model
// ---------------------------------------------------------------------------

// Balanced T x N observation matrix with labels. Row t is one period.
struct Panel {
  Mat values;                         // T x N
  std::vector<std::string> unit_ids;  // N labels, unique
  std::vector<std::string> time_ids;  // T labels, unique

  Index n_periods() const { return values.rows(); }
  Index n_units() const { return values.cols(); }

  void validate() const {
    require(values.rows() >= 2 && values.cols() >= 2, errc::dimension_mismatch,
            "panel needs N >= 2 and T >= 2");
    require(static_cast<Index>(unit_ids.size()) == values.cols(), errc::dimension_mismatch,
            "unit label count mismatch");
    require(static_cast<Index>(time_ids.size()) == values.rows(), errc::dimension_mismatch,
            "time label count mismatch");
    require(values.allFinite(), errc::missing_cell, "panel holds non-finite entries");
    auto unique_ok = [](std::vector<std::string> v) {
      std::sort(v.begin(), v.end());
      return std::adjacent_find(v.begin(), v.end()) == v.end();
    };
    require(unique_ok(unit_ids), errc::duplicate_cell, "unit ids not unique");
    require(unique_ok(time_ids), errc::duplicate_cell, "time ids not unique");
  }
};

// Aggregation weights, one cross-section (static) or one per period.
struct ShareSeries {
  enum class Mode { fixed, varying };
  Mode mode = Mode::fixed;
  Mat weights;  // 1 x N (fixed) or T x N (varying)

  static ShareSeries make_fixed(const Vec& w) {
    ShareSeries s;
    s.mode = Mode::fixed;
    s.weights = w.transpose();
    s.validate();
    return s;
  }
  static ShareSeries make_varying(const Mat& w) {
    ShareSeries s;
    s.mode = Mode::varying;
    s.weights = w;
    s.validate();
    return s;
  }

  Index n_units() const { return weights.cols(); }
  bool time_varying() const { return mode == Mode::varying; }

  // weights applying at period t
  Vec at(Index t) const {
    return time_varying() ? Vec(weights.row(t).transpose()) : Vec(weights.row(0).transpose());
  }

  void validate() const {
    require(weights.size() > 0, errc::dimension_mismatch, "empty share series");
    require((weights.array() >= 0.0).all(), errc::not_normalized, "negative share");
    for (Index t = 0; t < weights.rows(); ++t)
      require(std::abs(weights.row(t).sum() - 1.0) <= 1e-10, errc::not_normalized,
              "shares in period " + std::to_string(t) + " do not sum to 1");
  }
};

// Role-tagged T-vector (d_t, p_t, y_St, z_t, ...).
struct AggregateSeries {
  Vec values;
  std::string label;

  Index size() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

// Subtract each period's cross-sectional mean; rows of the result sum to 0.
inline Panel demean_cross_section(const Panel& p) {
  Panel out = p;
  out.values.colwise() -= p.values.rowwise().mean();
  return out;
}

inline AggregateSeries aggregate(const Panel& p, const Vec& w, std::string label = {}) {
  require(w.size() == p.n_units(), errc::dimension_mismatch, "weight length != N");
  return AggregateSeries{p.values * w, std::move(label)};
}

inline AggregateSeries aggregate(const Panel& p, const ShareSeries& s, std::string label = {}) {
  require(s.n_units() == p.n_units(), errc::dimension_mismatch, "share width != N");
  if (!s.time_varying()) return aggregate(p, Vec(s.weights.row(0).transpose()), std::move(label));
  require(s.weights.rows() == p.n_periods(), errc::dimension_mismatch, "share length != T");
  return AggregateSeries{(p.values.array() * s.weights.array()).rowwise().sum(),
                         std::move(label)};
}

// y_St - d_t per period; a DGP sanity check, never an error when nonzero.
inline AggregateSeries market_clearing_residual(const Panel& p, const ShareSeries& s,
                                                const AggregateSeries& d) {
  require(d.size() == p.n_periods(), errc::dimension_mismatch, "demand length != T");
  AggregateSeries y_s = aggregate(p, s);
  return AggregateSeries{y_s.values - d.values, "clearing_residual"};
}

// ---------------------------------------------------------------------------
// csv ingestion
// ---------------------------------------------------------------------------

enum class CsvLayout { long_form, wide_form };

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(s.data(), last, v);
  if (res.ec != std::errc{} || res.ptr != last) return std::nullopt;
  return v;
}

// Sort labels numerically when every label parses as a number, otherwise
// lexicographically; deterministic for any input order.
inline std::vector<std::string> sorted_labels(std::vector<std::string> labels) {
  std::vector<std::pair<double, std::string>> numeric;
  numeric.reserve(labels.size());
  bool all_numeric = true;
  for (const auto& s : labels) {
    const auto v = parse_double(s);
    if (!v) {
      all_numeric = false;
      break;
    }
    numeric.emplace_back(*v, s);
  }
  if (all_numeric) {
    std::sort(numeric.begin(), numeric.end());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = numeric[i].second;
  } else {
    std::sort(labels.begin(), labels.end());
  }
  return labels;
}

struct LabeledGrid {
  Mat values;
  std::vector<std::string> unit_ids;
  std::vector<std::string> time_ids;
};

// Shared reader for panels and share files; enforces balancedness only.
inline LabeledGrid read_grid(std::istream& in, CsvLayout layout) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), errc::io_error, "empty csv stream");
  const auto header = split_csv_line(line);

  if (layout == CsvLayout::long_form) {
    require(header.size() == 3, errc::io_error, "long layout expects 3 columns (unit,time,value)");
    struct Cell {
      std::string unit, time;
      double value;
    };
    std::vector<Cell> cells;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const auto f = split_csv_line(line);
      require(f.size() == 3, errc::io_error, "line " + std::to_string(line_no) + ": expected 3 fields");
      const auto v = parse_double(f[2]);
      require(v.has_value(), errc::non_numeric_value,
              "line " + std::to_string(line_no) + ": value '" + f[2] + "'");
      cells.push_back({f[0], f[1], *v});
    }
    std::vector<std::string> units, times;
    {
      std::map<std::string, bool> useen, tseen;
      for (const auto& c : cells) {
        if (!useen.count(c.unit)) useen.emplace(c.unit, true);
        if (!tseen.count(c.time)) tseen.emplace(c.time, true);
      }
      for (const auto& [k, _] : useen) units.push_back(k);
      for (const auto& [k, _] : tseen) times.push_back(k);
    }
    units = sorted_labels(std::move(units));
    times = sorted_labels(std::move(times));
    std::map<std::string, Index> uidx, tidx;
    for (Index i = 0; i < static_cast<Index>(units.size()); ++i) uidx[units[i]] = i;
    for (Index t = 0; t < static_cast<Index>(times.size()); ++t) tidx[times[t]] = t;

    LabeledGrid g;
    g.unit_ids = units;
    g.time_ids = times;
    g.values.setConstant(static_cast<Index>(times.size()), static_cast<Index>(units.size()),
                         std::numeric_limits<double>::quiet_NaN());
    for (const auto& c : cells) {
      const Index t = tidx[c.time], i = uidx[c.unit];
      require(std::isnan(g.values(t, i)), errc::duplicate_cell,
              "duplicate cell (" + c.unit + ", " + c.time + ")");
      g.values(t, i) = c.value;
    }
    for (Index t = 0; t < g.values.rows(); ++t)
      for (Index i = 0; i < g.values.cols(); ++i)
        require(!std::isnan(g.values(t, i)), errc::missing_cell,
                "missing cell (" + units[static_cast<std::size_t>(i)] + ", " +
                    times[static_cast<std::size_t>(t)] + ")");
    return g;
  }

  // wide: header = time,<unit_1>,...,<unit_N>
  require(header.size() >= 2, errc::io_error, "wide layout expects a time column plus units");
  std::vector<std::string> raw_units(header.begin() + 1, header.end());
  {
    auto u = raw_units;
    std::sort(u.begin(), u.end());
    require(std::adjacent_find(u.begin(), u.end()) == u.end(), errc::duplicate_cell,
            "duplicate unit column");
  }
  std::vector<std::string> raw_times;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == header.size(), errc::missing_cell,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                " fields, got " + std::to_string(f.size()));
    raw_times.push_back(f[0]);
    std::vector<double> row;
    row.reserve(raw_units.size());
    for (std::size_t j = 1; j < f.size(); ++j) {
      const auto v = parse_double(f[j]);
      require(v.has_value(), errc::non_numeric_value,
              "line " + std::to_string(line_no) + ": value '" + f[j] + "'");
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  {
    auto t = raw_times;
    std::sort(t.begin(), t.end());
    require(std::adjacent_find(t.begin(), t.end()) == t.end(), errc::duplicate_cell,
            "duplicate time row");
  }

  const auto units = sorted_labels(raw_units);
  const auto times = sorted_labels(raw_times);
  std::map<std::string, Index> uorder, torder;
  for (Index i = 0; i < static_cast<Index>(units.size()); ++i) uorder[units[i]] = i;
  for (Index t = 0; t < static_cast<Index>(times.size()); ++t) torder[times[t]] = t;

  LabeledGrid g;
  g.unit_ids = units;
  g.time_ids = times;
  g.values.resize(static_cast<Index>(times.size()), static_cast<Index>(units.size()));
  for (std::size_t rt = 0; rt < raw_times.size(); ++rt) {
    const Index t = torder[raw_times[rt]];
    for (std::size_t rj = 0; rj < raw_units.size(); ++rj)
      g.values(t, uorder[raw_units[rj]]) = rows[rt][rj];
  }
  return g;
}

}  // namespace detail

inline Panel load_panel_csv(std::istream& in, CsvLayout layout) {
  auto g = detail::read_grid(in, layout);
  Panel p{std::move(g.values), std::move(g.unit_ids), std::move(g.time_ids)};
  p.validate();
  return p;
}

// Shares accept a single row (static weights) or one row per period.
inline ShareSeries load_shares_csv(std::istream& in, CsvLayout layout) {
  auto g = detail::read_grid(in, layout);
  ShareSeries s;
  s.mode = g.values.rows() == 1 ? ShareSeries::Mode::fixed : ShareSeries::Mode::varying;
  s.weights = std::move(g.values);
  s.validate();
  return s;
}

inline void write_panel_csv_wide(std::ostream& out, const Panel& p) {
  out << "time";
  for (const auto& u : p.unit_ids) out << ',' << u;
  out << '\n';
  out.precision(17);
  for (Index t = 0; t < p.n_periods(); ++t) {
    out << p.time_ids[static_cast<std::size_t>(t)];
    for (Index i = 0; i < p.n_units(); ++i) out << ',' << p.values(t, i);
    out << '\n';
  }
}

inline void write_panel_csv_long(std::ostream& out, const Panel& p) {
  out << "unit,time,value\n";
  out.precision(17);
  for (Index t = 0; t < p.n_periods(); ++t)
    for (Index i = 0; i < p.n_units(); ++i)
      out << p.unit_ids[static_cast<std::size_t>(i)] << ','
          << p.time_ids[static_cast<std::size_t>(t)] << ',' << p.values(t, i) << '\n';
}

}  // namespace fgiv
