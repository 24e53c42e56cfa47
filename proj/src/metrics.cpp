// SPDX-License-Identifier: Apache-2.0
#include "fastmetro/metrics.hpp"

#include <fstream>

#include "fastmetro/format.hpp"

namespace fastmetro {

SampleMetrics mean_metrics(const std::vector<SampleMetrics>& rows) {
  SampleMetrics m;
  m.sample_id = -1;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.mpjpe += r.mpjpe;
    m.pa_mpjpe += r.pa_mpjpe;
    m.mpvpe += r.mpvpe;
  }
  const double n = static_cast<double>(rows.size());
  m.mpjpe /= n;
  m.pa_mpjpe /= n;
  m.mpvpe /= n;
  return m;
}

void write_eval_report(const std::filesystem::path& path, const std::vector<SampleMetrics>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report " + path.string());
  out << "sample_id,mpjpe,pa_mpjpe,mpvpe\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << format_double(r.mpjpe) << ',' << format_double(r.pa_mpjpe) << ','
        << format_double(r.mpvpe) << '\n';
  }
  if (!out) throw DataError("failed writing report " + path.string());
}

}  // namespace fastmetro
