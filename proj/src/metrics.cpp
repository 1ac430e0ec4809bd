#include "dsva/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "dsva/errors.hpp"

namespace dsva {

MetricsWriter::MetricsWriter(const std::string& path)
    : out_(path, std::ios::trunc), path_(path) {
  if (!out_) throw IoError("cannot open metrics file '" + path + "'");
}

void MetricsWriter::write(std::uint64_t step, const MetricFields& fields) {
  out_ << "step=" << step;
  char buf[40];
  for (const auto& [name, value] : fields) {
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out_ << ' ' << name << '=' << buf;
  }
  out_ << '\n';
  out_.flush();
  if (!out_) throw IoError("write to metrics file '" + path_ + "' failed");
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    MetricsRecord rec;
    std::istringstream ls(line);
    std::string tok;
    bool have_step = false;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw FormatError("metrics line " + std::to_string(lineno) +
                              ": token without '='",
                          0);
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "step") {
        rec.step = std::stoull(val);
        have_step = true;
      } else {
        rec.fields.emplace_back(key, std::stod(val));
      }
    }
    if (!have_step)
      throw FormatError("metrics line " + std::to_string(lineno) +
                            ": missing step",
                        0);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dsva
