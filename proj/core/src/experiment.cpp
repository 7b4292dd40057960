#include "fedbif/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fedbif {

namespace {

// Substream purposes, mixed with the run seed so every consumer of
// randomness has its own deterministic stream.
constexpr std::uint64_t kStreamData = 1;
constexpr std::uint64_t kStreamPartition = 2;
constexpr std::uint64_t kStreamModel = 3;
constexpr std::uint64_t kStreamSelect = 4;
constexpr std::uint64_t kStreamClient = 5;
constexpr std::uint64_t kStreamLflDown = 6;
constexpr std::uint64_t kStreamSchedule = 7;

}  // namespace

void MethodSpec::validate() const {
  switch (kind) {
    case MethodKind::fedbif: {
      ActivationSchedule s{selection, m, 0, fixed_index, group_size, msb_first};
      s.validate();
      return;
    }
    case MethodKind::fedavg:
      return;
    case MethodKind::signsgd:
      if (!(signsgd_alpha > 0.0)) throw ConfigError("method.alpha must be positive");
      return;
    case MethodKind::fedpaq:
      if (fedpaq_m < kMinBitWidth || fedpaq_m > kMaxBitWidth) {
        throw ConfigError("method.m out of [2,8]");
      }
      return;
    case MethodKind::lfl:
      if (lfl_m_up < kMinBitWidth || lfl_m_up > kMaxBitWidth ||
          lfl_m_down < kMinBitWidth || lfl_m_down > kMaxBitWidth) {
        throw ConfigError("method.m_up/m_down out of [2,8]");
      }
      return;
  }
  throw ConfigError("method.kind unknown");
}

std::string MethodSpec::name() const {
  switch (kind) {
    case MethodKind::fedavg:
      return "fedavg";
    case MethodKind::signsgd:
      return "signsgd";
    case MethodKind::fedpaq:
      return "fedpaq";
    case MethodKind::lfl:
      return "lfl";
    case MethodKind::fedbif: {
      std::ostringstream os;
      os << "fedbif-";
      switch (selection) {
        case BitSelection::cyclic:
          os << "1/" << m;
          break;
        case BitSelection::random:
          os << "r1/" << m;
          break;
        case BitSelection::fixed:
          os << "fixed" << fixed_index << "/" << m;
          break;
        case BitSelection::multi:
          os << group_size << "/" << m;
          break;
      }
      return os.str();
    }
  }
  return "unknown";
}

void DataSpec::validate() const {
  switch (source) {
    case Source::blobs:
      blobs.validate();
      return;
    case Source::csv:
      if (csv_train.empty() || csv_test.empty()) {
        throw ConfigError("data: csv needs train and test paths");
      }
      return;
    case Source::idx:
      if (idx_train_images.empty() || idx_train_labels.empty() ||
          idx_test_images.empty() || idx_test_labels.empty()) {
        throw ConfigError("data: idx needs train/test image and label paths");
      }
      return;
  }
  throw ConfigError("data.kind unknown");
}

void RunConfig::validate() const {
  method.validate();
  data.validate();
  partition.validate();
  if (hidden_widths.empty()) throw ConfigError("model.hidden must not be empty");
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw ConfigError("model.hidden widths must be >= 1");
  }
  if (clients_per_round == 0 || clients_per_round > partition.clients) {
    throw ConfigError("round.clients_per_round must lie in [1, partition.clients]");
  }
  if (local_epochs == 0) throw ConfigError("round.local_epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("round.batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("round.lr must be >= 0");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must contain at least one seed");
}

namespace {

using nlohmann::json;

[[noreturn]] void bad_field(const std::string& where, const std::string& why) {
  throw ConfigError("config field '" + where + "': " + why);
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) bad_field(where + "." + it.key(), "unknown field");
  }
}

template <typename T>
T get_field(const json& j, const std::string& where, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(where + "." + key, "wrong type");
  }
}

template <typename T>
T require_field(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) bad_field(where + "." + key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(where + "." + key, "wrong type");
  }
}

MethodSpec parse_method(const json& j) {
  MethodSpec m;
  std::string kind = require_field<std::string>(j, "method", "kind");
  if (kind == "fedavg") {
    check_keys(j, "method", {"kind"});
    m.kind = MethodKind::fedavg;
  } else if (kind == "signsgd") {
    check_keys(j, "method", {"kind", "alpha"});
    m.kind = MethodKind::signsgd;
    m.signsgd_alpha = get_field<double>(j, "method", "alpha", m.signsgd_alpha);
  } else if (kind == "fedpaq") {
    check_keys(j, "method", {"kind", "m"});
    m.kind = MethodKind::fedpaq;
    m.fedpaq_m = get_field<int>(j, "method", "m", m.fedpaq_m);
  } else if (kind == "lfl") {
    check_keys(j, "method", {"kind", "m_up", "m_down"});
    m.kind = MethodKind::lfl;
    m.lfl_m_up = get_field<int>(j, "method", "m_up", m.lfl_m_up);
    m.lfl_m_down = get_field<int>(j, "method", "m_down", m.lfl_m_down);
  } else if (kind == "fedbif") {
    check_keys(j, "method",
               {"kind", "m", "schedule", "fixed_index", "group_size", "order"});
    m.kind = MethodKind::fedbif;
    m.m = get_field<int>(j, "method", "m", m.m);
    std::string sched = get_field<std::string>(j, "method", "schedule", "cyclic");
    if (sched == "cyclic") m.selection = BitSelection::cyclic;
    else if (sched == "random") m.selection = BitSelection::random;
    else if (sched == "fixed") m.selection = BitSelection::fixed;
    else if (sched == "multi") m.selection = BitSelection::multi;
    else bad_field("method.schedule", "expected cyclic|random|fixed|multi");
    m.fixed_index = get_field<int>(j, "method", "fixed_index", m.fixed_index);
    m.group_size = get_field<int>(j, "method", "group_size", m.group_size);
    std::string order = get_field<std::string>(j, "method", "order", "msb");
    if (order == "msb") m.msb_first = true;
    else if (order == "lsb") m.msb_first = false;
    else bad_field("method.order", "expected msb|lsb");
  } else {
    bad_field("method.kind", "expected fedavg|signsgd|fedpaq|lfl|fedbif");
  }
  return m;
}

DataSpec parse_data(const json& j) {
  DataSpec d;
  std::string kind = require_field<std::string>(j, "data", "kind");
  if (kind == "blobs") {
    check_keys(j, "data", {"kind", "train", "test", "dim", "classes", "separation"});
    d.source = DataSpec::Source::blobs;
    d.blobs.n_train = get_field<std::size_t>(j, "data", "train", d.blobs.n_train);
    d.blobs.n_test = get_field<std::size_t>(j, "data", "test", d.blobs.n_test);
    d.blobs.dim = get_field<std::size_t>(j, "data", "dim", d.blobs.dim);
    d.blobs.classes = get_field<int>(j, "data", "classes", d.blobs.classes);
    d.blobs.separation = get_field<double>(j, "data", "separation", d.blobs.separation);
  } else if (kind == "csv") {
    check_keys(j, "data", {"kind", "train", "test"});
    d.source = DataSpec::Source::csv;
    d.csv_train = require_field<std::string>(j, "data", "train");
    d.csv_test = require_field<std::string>(j, "data", "test");
  } else if (kind == "idx") {
    check_keys(j, "data",
               {"kind", "train_images", "train_labels", "test_images", "test_labels"});
    d.source = DataSpec::Source::idx;
    d.idx_train_images = require_field<std::string>(j, "data", "train_images");
    d.idx_train_labels = require_field<std::string>(j, "data", "train_labels");
    d.idx_test_images = require_field<std::string>(j, "data", "test_images");
    d.idx_test_labels = require_field<std::string>(j, "data", "test_labels");
  } else {
    bad_field("data.kind", "expected blobs|csv|idx");
  }
  return d;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "",
             {"name", "method", "data", "partition", "model", "round", "rounds",
              "seeds", "precision", "output", "save_model"});
  RunConfig cfg;
  cfg.name = get_field<std::string>(j, "", "name", cfg.name);
  if (!j.contains("method")) bad_field("method", "missing");
  cfg.method = parse_method(j.at("method"));
  if (!j.contains("data")) bad_field("data", "missing");
  cfg.data = parse_data(j.at("data"));

  if (j.contains("partition")) {
    const json& p = j.at("partition");
    check_keys(p, "partition", {"scheme", "clients", "beta", "label_fraction"});
    std::string scheme = get_field<std::string>(p, "partition", "scheme", "iid");
    if (scheme == "iid") cfg.partition.scheme = PartitionScheme::iid;
    else if (scheme == "dirichlet") cfg.partition.scheme = PartitionScheme::dirichlet;
    else if (scheme == "label_subset") cfg.partition.scheme = PartitionScheme::label_subset;
    else bad_field("partition.scheme", "expected iid|dirichlet|label_subset");
    cfg.partition.clients = get_field<std::size_t>(p, "partition", "clients", cfg.partition.clients);
    cfg.partition.beta = get_field<double>(p, "partition", "beta", cfg.partition.beta);
    cfg.partition.label_fraction =
        get_field<double>(p, "partition", "label_fraction", cfg.partition.label_fraction);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"hidden"});
    cfg.hidden_widths =
        get_field<std::vector<std::size_t>>(m, "model", "hidden", cfg.hidden_widths);
  }
  if (j.contains("round")) {
    const json& r = j.at("round");
    check_keys(r, "round", {"clients_per_round", "local_epochs", "batch_size", "lr"});
    cfg.clients_per_round =
        get_field<std::size_t>(r, "round", "clients_per_round", cfg.clients_per_round);
    cfg.local_epochs = get_field<std::size_t>(r, "round", "local_epochs", cfg.local_epochs);
    cfg.batch_size = get_field<std::size_t>(r, "round", "batch_size", cfg.batch_size);
    cfg.lr = get_field<double>(r, "round", "lr", cfg.lr);
  }
  cfg.rounds = get_field<long>(j, "", "rounds", cfg.rounds);
  cfg.seeds = get_field<std::vector<std::uint64_t>>(j, "", "seeds", cfg.seeds);
  std::string precision = get_field<std::string>(j, "", "precision", "fp64");
  if (precision == "fp64") cfg.precision = Precision::fp64;
  else if (precision == "fp32") cfg.precision = Precision::fp32;
  else bad_field("precision", "expected fp64|fp32");
  cfg.out_dir = get_field<std::string>(j, "", "output", "");
  cfg.save_model = get_field<bool>(j, "", "save_model", cfg.save_model);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

Simulation::Simulation(const RunConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate();

  Dataset train;
  switch (cfg_.data.source) {
    case DataSpec::Source::blobs: {
      BlobSpec spec = cfg_.data.blobs;
      spec.seed = derive_stream(seed_, {kStreamData});
      BlobData blobs = make_blobs(spec);
      train = std::move(blobs.train);
      test_ = std::move(blobs.test);
      break;
    }
    case DataSpec::Source::csv:
      train = load_csv(cfg_.data.csv_train);
      test_ = load_csv(cfg_.data.csv_test);
      break;
    case DataSpec::Source::idx:
      train = load_idx(cfg_.data.idx_train_images, cfg_.data.idx_train_labels);
      test_ = load_idx(cfg_.data.idx_test_images, cfg_.data.idx_test_labels);
      break;
  }
  int classes = std::max(train.num_classes, test_.num_classes);
  train.num_classes = classes;
  test_.num_classes = classes;
  if (train.dim() != test_.dim()) {
    throw DataError("train/test feature dimensions differ");
  }

  PartitionSpec ps = cfg_.partition;
  ps.seed = derive_stream(seed_, {kStreamPartition});
  shards_ = partition(train, ps);

  MlpSpec mspec;
  mspec.layer_widths.push_back(train.dim());
  for (std::size_t w : cfg_.hidden_widths) mspec.layer_widths.push_back(w);
  mspec.layer_widths.push_back(static_cast<std::size_t>(classes));
  mspec.seed = derive_stream(seed_, {kStreamModel});
  global_.params = init_mlp(mspec);
  global_.round = 0;
  lfl_reference_ = global_;

  schedule_.strategy = cfg_.method.selection;
  schedule_.m = cfg_.method.m;
  schedule_.seed = derive_stream(seed_, {kStreamSchedule});
  schedule_.fixed_index = cfg_.method.fixed_index;
  schedule_.group_size = cfg_.method.group_size;
  schedule_.msb_first = cfg_.method.msb_first;

  stats_.parameter_count = global_.params.parameter_count();
}

RoundMetrics Simulation::run_round() {
  if (cfg_.method.kind == MethodKind::fedbif) return round_fedbif();
  return round_baseline();
}

RoundMetrics Simulation::finish_round(double train_loss, double sparsity) {
  RoundMetrics rm;
  rm.seed = seed_;
  rm.round = global_.round - 1;  // the round index that was just executed
  rm.train_loss = train_loss;
  rm.test_accuracy =
      accuracy(global_.params, test_.features, std::span<const int>(test_.labels));
  rm.uplink_bpp = bpp(stats_, Direction::uplink);
  rm.downlink_bpp = bpp(stats_, Direction::downlink);
  rm.sparsity = sparsity;
  return rm;
}

RoundMetrics Simulation::round_fedbif() {
  const long t = global_.round;
  std::vector<int> activated = schedule_.activated(t);
  QuantizedModel qm = server_quantize(global_, cfg_.method.m, activated);
  Bytes down = encode_downlink(qm);

  std::vector<std::size_t> selected =
      select_clients(shards_.size(), cfg_.clients_per_round,
                     derive_stream(seed_, {kStreamSelect}), t);

  RoundConfig rc;
  rc.clients_total = shards_.size();
  rc.clients_per_round = cfg_.clients_per_round;
  rc.local_epochs = cfg_.local_epochs;
  rc.batch_size = cfg_.batch_size;
  rc.lr = cfg_.lr;
  rc.m = cfg_.method.m;
  rc.schedule = schedule_;
  rc.seed = seed_;
  rc.precision = cfg_.precision;

  std::vector<ClientUpdate> updates;
  std::vector<std::uint64_t> counts;
  std::vector<double> losses;
  for (std::size_t k : selected) {
    stats_.record_downlink(down.size());
    Rng rng(derive_stream(seed_, {kStreamClient, static_cast<std::uint64_t>(t), k}));
    ClientTrainResult res =
        client_train(qm, shards_[k], rc, static_cast<std::uint32_t>(k), rng);
    Bytes up = encode_uplink(res.update, qm.m);
    stats_.record_uplink(up.size());
    counts.push_back(res.update.sample_count);
    losses.push_back(res.mean_loss);
    updates.push_back(std::move(res.update));
  }

  std::vector<double> p = proportional_weights(counts);
  double train_loss = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) train_loss += p[i] * losses[i];

  global_ = aggregate(updates, qm, p);
  return finish_round(train_loss, measure_sparsity(global_, qm));
}

RoundMetrics Simulation::round_baseline() {
  const long t = global_.round;
  const MethodKind kind = cfg_.method.kind;

  std::vector<std::size_t> selected =
      select_clients(shards_.size(), cfg_.clients_per_round,
                     derive_stream(seed_, {kStreamSelect}), t);

  // Broadcast. Everything but LFL downlinks the full-precision model; LFL
  // downlinks the stochastically quantized global update against the
  // reference model every client can reconstruct (clients share the seeded
  // initial model, so no bootstrap payload is needed).
  GlobalModel start;
  Bytes down;
  if (kind == MethodKind::lfl) {
    Rng down_rng(derive_stream(seed_, {kStreamLflDown, static_cast<std::uint64_t>(t)}));
    std::vector<QuantCompressed> layers;
    std::vector<Mat> bias_deltas;
    GlobalModel next_ref;
    next_ref.round = t;
    next_ref.params = lfl_reference_.params;
    for (std::size_t l = 0; l < global_.params.weights.size(); ++l) {
      Mat delta(global_.params.weights[l].rows, global_.params.weights[l].cols);
      for (std::size_t i = 0; i < delta.size(); ++i) {
        delta.data[i] =
            global_.params.weights[l].data[i] - lfl_reference_.params.weights[l].data[i];
      }
      QuantCompressed q = lfl_compress(delta, cfg_.method.lfl_m_down, down_rng);
      Mat recovered = q.value();
      for (std::size_t i = 0; i < recovered.size(); ++i) {
        next_ref.params.weights[l].data[i] += recovered.data[i];
      }
      layers.push_back(std::move(q));

      Mat bd(1, global_.params.biases[l].cols);
      for (std::size_t i = 0; i < bd.size(); ++i) {
        bd.data[i] =
            global_.params.biases[l].data[i] - lfl_reference_.params.biases[l].data[i];
        next_ref.params.biases[l].data[i] += bd.data[i];
      }
      bias_deltas.push_back(std::move(bd));
    }
    down = encode_delta_quantized(layers, bias_deltas, cfg_.method.lfl_m_down, t);
    lfl_reference_ = std::move(next_ref);
    start = lfl_reference_;
  } else {
    down = encode_model_fp32(global_.params, t, false);
    start = global_;
  }

  std::vector<MlpParams> applied;
  std::vector<std::uint64_t> counts;
  std::vector<double> losses;
  for (std::size_t k : selected) {
    stats_.record_downlink(down.size());
    Rng rng(derive_stream(seed_, {kStreamClient, static_cast<std::uint64_t>(t), k}));
    LocalSgdResult local = train_local_sgd(start.params, shards_[k], cfg_.local_epochs,
                                           cfg_.batch_size, cfg_.lr, cfg_.precision, rng);
    losses.push_back(local.mean_loss);
    counts.push_back(shards_[k].n());

    MlpParams delta;
    for (std::size_t l = 0; l < local.params.weights.size(); ++l) {
      Mat dw(local.params.weights[l].rows, local.params.weights[l].cols);
      for (std::size_t i = 0; i < dw.size(); ++i) {
        dw.data[i] = local.params.weights[l].data[i] - start.params.weights[l].data[i];
      }
      delta.weights.push_back(std::move(dw));
      Mat db(1, local.params.biases[l].cols);
      for (std::size_t i = 0; i < db.size(); ++i) {
        db.data[i] = local.params.biases[l].data[i] - start.params.biases[l].data[i];
      }
      delta.biases.push_back(std::move(db));
    }

    switch (kind) {
      case MethodKind::fedavg: {
        Bytes up = encode_model_fp32(delta, t, true);
        stats_.record_uplink(up.size());
        applied.push_back(std::move(delta));
        break;
      }
      case MethodKind::signsgd: {
        std::vector<SignCompressed> layers;
        for (const Mat& dw : delta.weights) {
          layers.push_back(signsgd_compress(dw, cfg_.method.signsgd_alpha));
        }
        Bytes up = encode_delta_sign(layers, delta.biases, t);
        stats_.record_uplink(up.size());
        MlpParams value;
        for (const SignCompressed& s : layers) value.weights.push_back(s.value());
        value.biases = delta.biases;
        applied.push_back(std::move(value));
        break;
      }
      case MethodKind::fedpaq: {
        std::vector<QuantCompressed> layers;
        for (const Mat& dw : delta.weights) {
          layers.push_back(fedpaq_compress(dw, cfg_.method.fedpaq_m));
        }
        Bytes up = encode_delta_quantized(layers, delta.biases, cfg_.method.fedpaq_m, t);
        stats_.record_uplink(up.size());
        MlpParams value;
        for (const QuantCompressed& q : layers) value.weights.push_back(q.value());
        value.biases = delta.biases;
        applied.push_back(std::move(value));
        break;
      }
      case MethodKind::lfl: {
        std::vector<QuantCompressed> layers;
        for (const Mat& dw : delta.weights) {
          layers.push_back(lfl_compress(dw, cfg_.method.lfl_m_up, rng));
        }
        Bytes up = encode_delta_quantized(layers, delta.biases, cfg_.method.lfl_m_up, t);
        stats_.record_uplink(up.size());
        MlpParams value;
        for (const QuantCompressed& q : layers) value.weights.push_back(q.value());
        value.biases = delta.biases;
        applied.push_back(std::move(value));
        break;
      }
      case MethodKind::fedbif:
        throw ProtocolError("round_baseline called for bit freezing");
    }
  }

  std::vector<double> p = proportional_weights(counts);
  double train_loss = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) train_loss += p[i] * losses[i];

  global_ = fedavg_apply(start, applied, p);
  return finish_round(train_loss, raw_sparsity(global_.params));
}

Bytes Simulation::model_payload() const {
  if (cfg_.method.kind == MethodKind::fedbif) {
    QuantizedModel qm = server_quantize(global_, cfg_.method.m,
                                        schedule_.activated(global_.round));
    return encode_downlink(qm);
  }
  return encode_model_fp32(global_.params, global_.round, false);
}

RunResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  RunResult result;
  std::string log;
  std::vector<double> finals;

  const bool write_files = !cfg.out_dir.empty();
  if (write_files) std::filesystem::create_directories(cfg.out_dir);

  for (std::uint64_t seed : cfg.seeds) {
    Simulation sim(cfg, seed);
    SeedResult sr;
    sr.seed = seed;
    for (long t = 0; t < cfg.rounds; ++t) {
      RoundMetrics rm = sim.run_round();
      log += to_json_line(rm);
      log += '\n';
      sr.rounds.push_back(rm);
    }
    sr.final_accuracy = sr.rounds.back().test_accuracy;
    sr.final_sparsity = sr.rounds.back().sparsity;
    finals.push_back(sr.final_accuracy);
    if (write_files && cfg.save_model) {
      Bytes payload = sim.model_payload();
      write_payload_file(cfg.out_dir / ("model_seed" + std::to_string(seed) + ".bin"),
                         payload);
    }
    result.seeds.push_back(std::move(sr));
  }

  result.summary = summarize(cfg.seeds, finals);
  result.metrics_log = std::move(log);

  if (write_files) {
    std::ofstream metrics(cfg.out_dir / "metrics.jsonl", std::ios::binary);
    if (!metrics) throw IoError("cannot write metrics.jsonl");
    metrics << result.metrics_log;
    std::ofstream csv(cfg.out_dir / "summary.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write summary.csv");
    csv << summary_csv(result.summary);
  }
  return result;
}

}  // namespace fedbif
