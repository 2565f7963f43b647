#pragma once

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "esncid/io.hpp"

namespace esncid {

struct TimeSeries {
  std::vector<double> values;
  double dt = 1.0;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TimeSeries slice(std::size_t first, std::size_t count) const {
    if (first + count > values.size()) throw std::out_of_range("TimeSeries::slice: range exceeds series");
    return {{values.begin() + static_cast<std::ptrdiff_t>(first),
             values.begin() + static_cast<std::ptrdiff_t>(first + count)},
            dt};
  }
};

// CSV `t,value`, t in sampling units.
inline void save_series(const TimeSeries& s, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  out << "t,value\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out << io::fmt(static_cast<double>(i) * s.dt) << ',' << io::fmt(s.values[i]) << '\n';
}

inline TimeSeries load_series(const std::filesystem::path& path) {
  const auto rows = io::read_csv(path);
  if (rows.empty() || rows.front() != std::vector<std::string>{"t", "value"})
    throw std::runtime_error("series CSV: expected header t,value");
  TimeSeries s;
  for (std::size_t r = 1; r < rows.size(); ++r) s.values.push_back(io::parse_double(rows.at(r).at(1)));
  if (rows.size() > 2) s.dt = io::parse_double(rows[2][0]) - io::parse_double(rows[1][0]);
  return s;
}

}  // namespace esncid
