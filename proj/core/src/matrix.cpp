#include "fedbif/matrix.hpp"

#include <algorithm>

namespace fedbif {

MatF to_float(const Mat& m) {
  MatF out(m.rows, m.cols);
  std::transform(m.data.begin(), m.data.end(), out.data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

Mat to_double(const MatF& m) {
  Mat out(m.rows, m.cols);
  std::transform(m.data.begin(), m.data.end(), out.data.begin(),
                 [](float v) { return static_cast<double>(v); });
  return out;
}

double inf_norm(const Mat& m) {
  double best = 0.0;
  for (double v : m.data) best = std::max(best, std::abs(v));
  return best;
}

}  // namespace fedbif
