#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fedbif/experiment.hpp"
#include "fedbif/metrics.hpp"
#include "fedbif/wire.hpp"

namespace {

using namespace fedbif;

// FEDBIF_OUT_DIR overrides the parent directory of relative output paths.
std::filesystem::path resolve_out_dir(const std::filesystem::path& configured) {
  if (configured.empty()) return configured;
  const char* base = std::getenv("FEDBIF_OUT_DIR");
  if (base != nullptr && configured.is_relative()) {
    return std::filesystem::path(base) / configured;
  }
  return configured;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv, const char* what) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": bad value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
  std::vector<int> out;
  for (std::uint64_t v : parse_u64_list(csv, what)) out.push_back(static_cast<int>(v));
  return out;
}

int cmd_run(const std::string& config_path, const std::string& override_out,
            const std::string& override_seeds, long override_rounds,
            double override_lr, bool quiet) {
  RunConfig cfg = load_run_config(config_path);
  if (!override_out.empty()) cfg.out_dir = override_out;
  if (!override_seeds.empty()) cfg.seeds = parse_u64_list(override_seeds, "--seeds");
  if (override_rounds > 0) cfg.rounds = override_rounds;
  if (override_lr > 0.0) cfg.lr = override_lr;
  cfg.out_dir = resolve_out_dir(cfg.out_dir);
  cfg.validate();

  RunResult result = run_experiment(cfg);
  if (!quiet) {
    std::cout << cfg.name << " method=" << cfg.method.name() << " rounds=" << cfg.rounds
              << "\n";
    for (const SeedResult& sr : result.seeds) {
      std::cout << "  seed " << sr.seed << ": accuracy " << sr.final_accuracy
                << " sparsity " << sr.final_sparsity << " uplink bpp "
                << sr.rounds.back().uplink_bpp << " downlink bpp "
                << sr.rounds.back().downlink_bpp << "\n";
    }
    std::cout << "  mean " << result.summary.mean << " (+- " << result.summary.stddev
              << ")\n";
    if (!cfg.out_dir.empty()) {
      std::cout << "  wrote " << (cfg.out_dir / "metrics.jsonl").string() << "\n";
    }
  }
  return 0;
}

int cmd_floor(const std::string& m_csv, std::size_t dim, std::size_t samples,
              long rounds, const std::string& seeds_csv, double c,
              const std::string& out) {
  FloorHarnessConfig cfg;
  cfg.m_values = parse_int_list(m_csv, "--m");
  cfg.dim = dim;
  cfg.samples = samples;
  cfg.rounds = rounds;
  cfg.seeds = parse_u64_list(seeds_csv, "--seeds");
  cfg.lr_constant = c;
  cfg.validate();

  FloorResult result = run_floor_harness(cfg);
  std::string table = floor_table_csv(result);
  std::cout << table;
  if (result.regenerated_designs > 0) {
    std::cout << "# regenerated " << result.regenerated_designs
              << " singular design(s)\n";
  }
  if (!out.empty()) {
    std::filesystem::path path = resolve_out_dir(out);
    std::filesystem::create_directories(path.parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << table;
  }
  return 0;
}

int cmd_sparsity(const std::string& model_path, int m) {
  Bytes payload = read_payload_file(model_path);
  PayloadInfo info = inspect_payload(payload);
  if (info.kind == PayloadKind::downlink_quantized) {
    QuantizedModel qm = decode_downlink(payload);
    double total = sparsity_of_ints(qm.weights);
    std::cout << "quantized model, m=" << qm.m << "\n";
    for (std::size_t l = 0; l < qm.weights.size(); ++l) {
      std::vector<IntMat> one{qm.weights[l]};
      std::cout << "  layer " << l << ": " << sparsity_of_ints(one) << "\n";
    }
    std::cout << "sparsity: " << total << "\n";
  } else if (info.kind == PayloadKind::model_fp32) {
    if (m == 0) {
      throw ConfigError("--m is required to quantize a full-precision model");
    }
    DecodedModel model = decode_model_fp32(payload);
    std::cout << "full-precision model quantized at m=" << m << "\n";
    std::cout << "sparsity: " << measure_sparsity(model.params, m) << "\n";
    std::cout << "raw zero fraction (|w| <= 1e-12): " << raw_sparsity(model.params)
              << "\n";
  } else {
    throw DecodeError("payload is not a model");
  }
  return 0;
}

int cmd_inspect(const std::string& payload_path) {
  Bytes payload = read_payload_file(payload_path);
  std::cout << describe(inspect_payload(payload));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-frozen federated learning simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a federated experiment from a config file");
  std::string run_config;
  std::string run_out, run_seeds;
  long run_rounds = 0;
  double run_lr = 0.0;
  bool run_quiet = false;
  run->add_option("-c,--config", run_config, "JSON run config")->required();
  run->add_option("-o,--out", run_out, "override output directory");
  run->add_option("--seeds", run_seeds, "override seed list, comma separated");
  run->add_option("--rounds", run_rounds, "override round count");
  run->add_option("--lr", run_lr, "override learning rate");
  run->add_flag("-q,--quiet", run_quiet, "suppress progress output");

  auto* floor = app.add_subcommand("floor", "Convex least-squares error-floor harness");
  std::string floor_m = "2,4,6,8";
  std::size_t floor_dim = 8, floor_samples = 64;
  long floor_rounds = 60000;
  std::string floor_seeds = "1,2,3,4,5";
  double floor_c = 0.5;
  std::string floor_out;
  floor->add_option("--m", floor_m, "bit widths to sweep, comma separated");
  floor->add_option("--dim", floor_dim, "least-squares dimension");
  floor->add_option("--samples", floor_samples, "sample count");
  floor->add_option("--rounds", floor_rounds, "descent iterations");
  floor->add_option("--seeds", floor_seeds, "seed list, comma separated");
  floor->add_option("--c", floor_c, "learning-rate constant in c/sqrt(t)");
  floor->add_option("-o,--out", floor_out, "write the gap table as CSV");

  auto* sparsity = app.add_subcommand("sparsity", "Report sparsity of a saved model");
  std::string sparsity_model;
  int sparsity_m = 0;
  sparsity->add_option("--model", sparsity_model, "model payload file")->required();
  sparsity->add_option("--m", sparsity_m, "bit width for full-precision models");

  auto* inspect = app.add_subcommand("inspect", "Decode a wire payload header");
  std::string inspect_path;
  inspect->add_option("--payload", inspect_path, "payload file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(run_config, run_out, run_seeds, run_rounds, run_lr, run_quiet);
    }
    if (floor->parsed()) {
      return cmd_floor(floor_m, floor_dim, floor_samples, floor_rounds, floor_seeds,
                       floor_c, floor_out);
    }
    if (sparsity->parsed()) return cmd_sparsity(sparsity_model, sparsity_m);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
  } catch (const fedbif::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
