#include "rav/core/loss_history.hpp"

#include <cstdio>
#include <sstream>

#include "rav/core/error.hpp"
#include "rav/core/io.hpp"

namespace rav {

std::vector<double> LossHistory::series(const std::string& phase, const std::string& term) const {
  std::vector<double> out;
  for (const auto& row : rows_) {
    if (row.phase != phase) continue;
    auto it = row.terms.find(term);
    if (it != row.terms.end()) out.push_back(it->second);
  }
  return out;
}

std::string LossHistory::to_csv() const {
  std::string out = "step,phase,term,value\n";
  char buf[64];
  for (const auto& row : rows_) {
    for (const auto& [term, value] : row.terms) {
      std::snprintf(buf, sizeof buf, "%.9g", value);
      out += std::to_string(row.step) + "," + row.phase + "," + term + "," + buf + "\n";
    }
  }
  return out;
}

void LossHistory::write_csv(const std::filesystem::path& path) const { write_text(path, to_csv()); }

LossHistory LossHistory::read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != "step,phase,term,value")
    throw Error(ErrorCategory::format_error, "unexpected loss history header in " + path.string());
  LossHistory history;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step, phase, term, value;
    std::getline(ls, step, ',');
    std::getline(ls, phase, ',');
    std::getline(ls, term, ',');
    std::getline(ls, value, ',');
    const int s = std::stoi(step);
    if (history.rows_.empty() || history.rows_.back().step != s || history.rows_.back().phase != phase)
      history.rows_.push_back({s, phase, {}});
    history.rows_.back().terms[term] = std::stod(value);
  }
  return history;
}

std::string LossHistory::hash() const { return sha256_hex(to_csv()); }

}  // namespace rav
