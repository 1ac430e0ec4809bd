#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace dsva {

using MetricFields = std::vector<std::pair<std::string, double>>;

struct MetricsRecord {
  std::uint64_t step = 0;
  MetricFields fields;
};

// Line-delimited "step=N name=value ..." records, flushed per line so a
// crashed run leaves only whole records behind. Values are printed with 17
// significant digits and parse back bit-exactly.
class MetricsWriter {
public:
  explicit MetricsWriter(const std::string& path);
  void write(std::uint64_t step, const MetricFields& fields);

private:
  std::ofstream out_;
  std::string path_;
};

std::vector<MetricsRecord> read_metrics(const std::string& path);

}  // namespace dsva
