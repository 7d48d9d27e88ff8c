#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rec/training.hpp"

namespace rec {

// CSV with `# key=value` comment lines carrying the resolved configuration,
// so every result file is self-describing.
class CsvWriter {
 public:
  CsvWriter(const std::string& path,
            const std::vector<std::pair<std::string, std::string>>& comments,
            const std::string& header);

  void metrics_row(const MetricsRow& row);
  void raw_row(const std::string& row);

  static std::string format_double(double v);

 private:
  std::ofstream out_;
};

}  // namespace rec
