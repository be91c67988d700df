#include "sepsisrl/csv.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

namespace sepsisrl::cohort {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                     : comma - start);
    // Trim surrounding spaces (header convenience).
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.erase(0, 1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.pop_back();
    }
    cells.push_back(std::move(cell));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_double(const std::string& cell, const std::string& origin, std::size_t line_no,
                    const std::string& column) {
  if (cell.empty()) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": missing value in column '" +
                    column + "'");
  }
  double value = 0.0;
  const auto* begin = cell.data();
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": malformed number '" + cell +
                    "' in column '" + column + "'");
  }
  return value;
}

long parse_long(const std::string& cell, const std::string& origin, std::size_t line_no,
                const std::string& column) {
  if (cell.empty()) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": missing value in column '" +
                    column + "'");
  }
  long value = 0;
  const auto* begin = cell.data();
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": malformed integer '" + cell +
                    "' in column '" + column + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Cohort load_csv(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cohort file: " + path);
  return load_csv_stream(in, schema, path);
}

Cohort load_csv_stream(std::istream& in, const FeatureSchema& schema,
                       const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(origin + ": empty file, expected a header row");
  }

  std::vector<std::string> expected = {"traj_id", "step"};
  expected.insert(expected.end(), schema.invariant_names.begin(),
                  schema.invariant_names.end());
  expected.insert(expected.end(), schema.variant_names.begin(), schema.variant_names.end());
  expected.push_back("action");
  expected.push_back("reward");

  const auto header = split_line(line);
  if (header.size() != expected.size()) {
    throw DataError(origin + ":1: header has " + std::to_string(header.size()) +
                    " columns, schema expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != expected[i]) {
      throw DataError(origin + ":1: unknown column '" + header[i] + "' at position " +
                      std::to_string(i + 1) + " (expected '" + expected[i] + "')");
    }
  }

  const std::size_t ni = schema.invariant_count();
  const std::size_t nv = schema.variant_count();

  Cohort cohort;
  cohort.schema = schema;
  Trajectory current;
  bool in_trajectory = false;
  bool last_row_had_reward = false;
  std::size_t last_reward_line = 0;

  std::set<std::string> finished_ids;
  std::size_t line_no = 1;

  const auto finish_current = [&] {
    if (!in_trajectory) return;
    if (!last_row_had_reward) {
      throw DataError(origin + ": trajectory '" + current.id +
                      "' ends without a reward on its final row");
    }
    if (!finished_ids.insert(current.id).second) {
      throw DataError(origin + ": duplicate trajectory id '" + current.id + "'");
    }
    validate_trajectory(current, schema, /*allow_short=*/true);
    cohort.trajectories.push_back(std::move(current));
    current = Trajectory{};
    in_trajectory = false;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line);
    if (cells.size() != expected.size()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": row has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(expected.size()));
    }
    const std::string& id = cells[0];
    if (id.empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty traj_id");
    }
    const long step = parse_long(cells[1], origin, line_no, "step");

    if (!in_trajectory || id != current.id) {
      finish_current();
      if (finished_ids.count(id) > 0) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": trajectory id '" + id +
                        "' reappears after other rows; rows of a trajectory must be "
                        "consecutive");
      }
      in_trajectory = true;
      current.id = id;
      if (step != 0) {
        throw DataError(origin + ":" + std::to_string(line_no) +
                        ": non-contiguous steps: trajectory '" + id + "' starts at step " +
                        std::to_string(step) + ", expected 0");
      }
    } else {
      if (static_cast<std::size_t>(step) != current.steps.size()) {
        throw DataError(origin + ":" + std::to_string(line_no) +
                        ": non-contiguous steps: got " + std::to_string(step) +
                        ", expected " + std::to_string(current.steps.size()));
      }
      if (last_row_had_reward) {
        throw DataError(origin + ":" + std::to_string(last_reward_line) +
                        ": reward set before the final row of trajectory '" + id + "'");
      }
    }

    std::vector<double> inv(ni);
    for (std::size_t i = 0; i < ni; ++i) {
      inv[i] = parse_double(cells[2 + i], origin, line_no, schema.invariant_names[i]);
    }
    if (current.steps.empty()) {
      current.invariant_obs = std::move(inv);
    } else if (inv != current.invariant_obs) {
      std::size_t bad = 0;
      while (bad < ni && inv[bad] == current.invariant_obs[bad]) ++bad;
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": time-invariant column '" + schema.invariant_names[bad] +
                      "' changed within trajectory '" + id + "'");
    }

    std::vector<double> row(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      row[i] = parse_double(cells[2 + ni + i], origin, line_no, schema.variant_names[i]);
    }
    current.steps.push_back(std::move(row));

    const long action = parse_long(cells[2 + ni + nv], origin, line_no, "action");
    if (action < 0 || action >= kActionCount) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": action " +
                      std::to_string(action) + " outside [0, 24]");
    }
    current.actions.push_back(static_cast<int>(action));

    const std::string& reward_cell = cells[2 + ni + nv + 1];
    if (reward_cell.empty()) {
      last_row_had_reward = false;
    } else {
      const long r = parse_long(reward_cell, origin, line_no, "reward");
      if (r != 1 && r != -1) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": reward must be 1 or -1, got " +
                        reward_cell);
      }
      current.reward = static_cast<int>(r);
      last_row_had_reward = true;
      last_reward_line = line_no;
    }
  }
  finish_current();

  if (cohort.trajectories.empty()) {
    throw DataError(origin + ": no trajectories found");
  }
  return cohort;
}

void save_csv(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cohort file: " + path);
  save_csv_stream(cohort, out);
  if (!out) throw IoError("write failed: " + path);
}

void save_csv_stream(const Cohort& cohort, std::ostream& out) {
  std::ostringstream header;
  header << "traj_id,step";
  for (const auto& n : cohort.schema.invariant_names) header << ',' << n;
  for (const auto& n : cohort.schema.variant_names) header << ',' << n;
  header << ",action,reward\n";
  out << header.str();

  for (const Trajectory& t : cohort.trajectories) {
    if (t.id.find(',') != std::string::npos || t.id.find('"') != std::string::npos) {
      throw DataError("trajectory id '" + t.id + "' contains characters unsupported by the "
                      "unquoted CSV format");
    }
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      out << t.id << ',' << s;
      for (double v : t.invariant_obs) out << ',' << format_double(v);
      for (double v : t.steps[s]) out << ',' << format_double(v);
      out << ',' << t.actions[s] << ',';
      if (s + 1 == t.steps.size()) out << t.reward;
      out << '\n';
    }
  }
}

}  // namespace sepsisrl::cohort
