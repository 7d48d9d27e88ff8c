#include "rec/csv.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rec {

CsvWriter::CsvWriter(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& comments,
    const std::string& header)
    : out_(path) {
  if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& [k, v] : comments) out_ << "# " << k << "=" << v << "\n";
  out_ << header << "\n";
}

std::string CsvWriter::format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void CsvWriter::metrics_row(const MetricsRow& row) {
  out_ << row.iteration << "," << format_double(row.train_rmse) << ","
       << format_double(row.valid_rmse) << "," << row.embeddings_generated
       << "," << row.cache_hits << "," << row.failed_requests << ","
       << format_double(row.elapsed_seconds) << "\n";
  out_.flush();
}

void CsvWriter::raw_row(const std::string& row) {
  out_ << row << "\n";
  out_.flush();
}

}  // namespace rec
