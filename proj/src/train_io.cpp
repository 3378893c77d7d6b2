#include <cstdio>
#include <fstream>

#include "inatlas/errors.hpp"
#include "inatlas/train.hpp"

namespace inatlas::train {

void write_training_log(const std::vector<LossRecord>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_training_log: cannot open " + path);
  f << "iteration,subject,mse,ce,total\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%ld,%s,%.9g,%.9g,%.9g\n", r.iteration, r.subject.c_str(),
                  r.mse, r.ce, r.total);
    f << buf;
  }
}

std::vector<double> smoothed_total_loss(const std::vector<LossRecord>& log, double alpha) {
  std::vector<double> out;
  out.reserve(log.size());
  double ema = 0.0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    ema = i == 0 ? log[i].total : (1.0 - alpha) * ema + alpha * log[i].total;
    out.push_back(ema);
  }
  return out;
}

}  // namespace inatlas::train
