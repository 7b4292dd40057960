#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedbif/baselines.hpp"
#include "fedbif/dataset.hpp"
#include "fedbif/metrics.hpp"
#include "fedbif/protocol.hpp"
#include "fedbif/wire.hpp"

namespace fedbif {

enum class MethodKind { fedavg, signsgd, fedpaq, lfl, fedbif };

struct MethodSpec {
  MethodKind kind = MethodKind::fedbif;

  // bit freezing
  int m = 4;
  BitSelection selection = BitSelection::cyclic;
  int fixed_index = 0;
  int group_size = 1;
  bool msb_first = true;

  // baselines
  double signsgd_alpha = 0.001;
  int fedpaq_m = 4;
  int lfl_m_up = 1;
  int lfl_m_down = 4;

  void validate() const;
  std::string name() const;
};

struct DataSpec {
  enum class Source { blobs, csv, idx };
  Source source = Source::blobs;

  BlobSpec blobs;  // the per-run seed replaces blobs.seed

  std::filesystem::path csv_train;
  std::filesystem::path csv_test;

  std::filesystem::path idx_train_images;
  std::filesystem::path idx_train_labels;
  std::filesystem::path idx_test_images;
  std::filesystem::path idx_test_labels;

  void validate() const;
};

struct RunConfig {
  std::string name = "run";
  MethodSpec method;
  DataSpec data;
  PartitionSpec partition;
  std::vector<std::size_t> hidden_widths = {64};
  std::size_t clients_per_round = 8;
  std::size_t local_epochs = 2;
  std::size_t batch_size = 32;
  double lr = 0.1;
  long rounds = 60;
  std::vector<std::uint64_t> seeds = {1};
  Precision precision = Precision::fp64;
  std::filesystem::path out_dir;  // empty: keep results in memory only
  bool save_model = true;

  void validate() const;
};

/// Parses the declarative JSON run config; ConfigError diagnostics name the
/// offending field. The grammar is documented in the README.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// One seed's federated simulation. Construction builds the dataset,
/// partition, and initial model; run_round executes selection, broadcast,
/// local training, upload, aggregation, evaluation, and accounting for one
/// round. The whole object is a pure function of (config, seed).
class Simulation {
 public:
  Simulation(const RunConfig& cfg, std::uint64_t seed);

  RoundMetrics run_round();

  const GlobalModel& global() const { return global_; }
  const WireStats& wire_stats() const { return stats_; }
  const Dataset& test_set() const { return test_; }
  const std::vector<Dataset>& shards() const { return shards_; }
  long round() const { return global_.round; }

  /// Final model as a wire payload: quantized for bit freezing, fp32
  /// otherwise. What `run` saves and the sparsity subcommand reads.
  Bytes model_payload() const;

 private:
  RoundMetrics round_fedbif();
  RoundMetrics round_baseline();
  RoundMetrics finish_round(double train_loss, double sparsity);

  RunConfig cfg_;
  std::uint64_t seed_;
  Dataset test_;
  std::vector<Dataset> shards_;
  GlobalModel global_;
  GlobalModel lfl_reference_;  // what every client can reconstruct so far
  ActivationSchedule schedule_;
  WireStats stats_;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> rounds;
  double final_accuracy = 0.0;
  double final_sparsity = 0.0;
};

struct RunResult {
  std::vector<SeedResult> seeds;
  RunSummary summary;
  std::string metrics_log;  // JSONL, identical to the file written to out_dir
};

/// Runs every seed, collects per-round records, writes metrics.jsonl,
/// summary.csv, and model_seed<seed>.bin when out_dir is set.
RunResult run_experiment(const RunConfig& cfg);

/// Convex least-squares harness checking the error-floor behavior of bit
/// freezing with all bits activated and the decaying step schedule
/// eta_t = c / sqrt(t).
struct FloorHarnessConfig {
  std::vector<int> m_values = {2, 4, 6, 8};
  std::size_t dim = 8;
  std::size_t samples = 64;
  long rounds = 20000;  // descent iterations
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double lr_constant = 0.5;  // c

  void validate() const;
};

struct FloorSeedDetail {
  std::uint64_t seed = 0;
  std::map<int, double> gap_by_m;  // F(theta(v_bar)) - F(w*)
  double control_gap = 0.0;        // full-precision GD, same schedule
  double ne_vs_gd_gap = 0.0;       // normal equations cross-checked by long GD
};

struct FloorResult {
  std::vector<int> m_values;
  std::vector<double> mean_gap;  // parallel to m_values
  double control_mean_gap = 0.0;
  std::vector<FloorSeedDetail> seeds;
  int regenerated_designs = 0;
};

FloorResult run_floor_harness(const FloorHarnessConfig& cfg);
std::string floor_table_csv(const FloorResult& result);

}  // namespace fedbif
