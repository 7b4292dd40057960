#include "fedbif/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "fedbif/quantizer.hpp"

namespace fedbif {

std::string to_json_line(const RoundMetrics& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["round"] = m.round;
  j["test_accuracy"] = m.test_accuracy;
  j["train_loss"] = m.train_loss;
  j["uplink_bpp"] = m.uplink_bpp;
  j["downlink_bpp"] = m.downlink_bpp;
  j["sparsity"] = m.sparsity;
  return j.dump();
}

RoundMetrics parse_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics record: ") + e.what());
  }
  RoundMetrics m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.round = j.at("round").get<long>();
    m.test_accuracy = j.at("test_accuracy").get<double>();
    m.train_loss = j.at("train_loss").get<double>();
    m.uplink_bpp = j.at("uplink_bpp").get<double>();
    m.downlink_bpp = j.at("downlink_bpp").get<double>();
    m.sparsity = j.at("sparsity").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics record missing field: ") + e.what());
  }
  return m;
}

double sparsity_of_ints(std::span<const IntMat> layers) {
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const IntMat& layer : layers) {
    total += layer.size();
    for (std::int32_t v : layer.data) {
      if (v == 0) ++zeros;
    }
  }
  if (total == 0) throw DataError("sparsity: no weights");
  return static_cast<double>(zeros) / static_cast<double>(total);
}

double measure_sparsity(const GlobalModel& global, const QuantizedModel& context) {
  std::vector<IntMat> quantized;
  for (std::size_t l = 0; l < global.params.weights.size(); ++l) {
    quantized.push_back(
        quantize(global.params.weights[l], QuantParams{context.alphas[l], context.m}));
  }
  return sparsity_of_ints(quantized);
}

double measure_sparsity(const MlpParams& params, int m) {
  std::vector<IntMat> quantized;
  for (const Mat& w : params.weights) {
    double alpha = step_size(w, m);
    quantized.push_back(quantize(w, QuantParams{alpha, m}));
  }
  return sparsity_of_ints(quantized);
}

double raw_sparsity(const MlpParams& params, double threshold) {
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const Mat& w : params.weights) {
    total += w.size();
    for (double v : w.data) {
      if (std::abs(v) <= threshold) ++zeros;
    }
  }
  if (total == 0) throw DataError("sparsity: no weights");
  return static_cast<double>(zeros) / static_cast<double>(total);
}

RunSummary summarize(std::span<const std::uint64_t> seeds,
                     std::span<const double> final_accuracy) {
  if (seeds.size() != final_accuracy.size() || seeds.empty()) {
    throw DataError("summarize: need one final accuracy per seed");
  }
  RunSummary s;
  s.seeds.assign(seeds.begin(), seeds.end());
  s.final_accuracy.assign(final_accuracy.begin(), final_accuracy.end());
  double sum = 0.0;
  for (double a : s.final_accuracy) sum += a;
  s.mean = sum / static_cast<double>(s.final_accuracy.size());
  double var = 0.0;
  for (double a : s.final_accuracy) var += (a - s.mean) * (a - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(s.final_accuracy.size()));
  return s;
}

std::string summary_csv(const RunSummary& summary) {
  std::ostringstream os;
  os << "seed,final_accuracy\n";
  for (std::size_t i = 0; i < summary.seeds.size(); ++i) {
    os << summary.seeds[i] << "," << nlohmann::json(summary.final_accuracy[i]).dump()
       << "\n";
  }
  os << "mean," << nlohmann::json(summary.mean).dump() << "\n";
  os << "stddev," << nlohmann::json(summary.stddev).dump() << "\n";
  return os.str();
}

}  // namespace fedbif
