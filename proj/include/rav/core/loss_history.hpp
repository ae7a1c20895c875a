#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rav {

/// Training log: one row per optimisation phase (e.g. a generator step or a
/// discriminator step), each carrying named loss terms.
struct LossRow {
  int step = 0;
  std::string phase;
  std::map<std::string, double> terms;
};

class LossHistory {
 public:
  void add(int step, std::string phase, std::map<std::string, double> terms) {
    rows_.push_back({step, std::move(phase), std::move(terms)});
  }

  const std::vector<LossRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  /// Values of `term` over all rows of `phase`, in order.
  std::vector<double> series(const std::string& phase, const std::string& term) const;

  /// Long-format CSV: step,phase,term,value with values printed to 9 significant digits.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static LossHistory read_csv(const std::filesystem::path& path);

  std::string hash() const;

 private:
  std::vector<LossRow> rows_;
};

}  // namespace rav
