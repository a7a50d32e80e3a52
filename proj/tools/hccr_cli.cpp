// Command-line front end. Talks to the library through the C interface only.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hccr/hccr.h"

namespace fs = std::filesystem;

namespace {

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // internal failure or --check mismatch
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

struct Failure {
  int code;
  std::string message;
};

enum class Context { checkpoint, data, other };

int exit_code_for(hccr_status s, Context ctx) {
  switch (s) {
    case HCCR_OK: return kExitOk;
    case HCCR_ERR_INVALID_ARGUMENT:
    case HCCR_ERR_CONFIG:
    case HCCR_ERR_VARIANT_MISMATCH: return kExitConfig;
    case HCCR_ERR_DATA:
    case HCCR_ERR_CORRUPT_RECORD:
    case HCCR_ERR_OVERFLOW: return kExitData;
    case HCCR_ERR_TRUNCATED: return ctx == Context::data ? kExitData : kExitIo;
    case HCCR_ERR_IO:
    case HCCR_ERR_BAD_MAGIC:
    case HCCR_ERR_VERSION:
    case HCCR_ERR_SHAPE_MISMATCH: return ctx == Context::data ? kExitData : kExitIo;
    default: return kExitFailure;
  }
}

void check(hccr_status s, Context ctx = Context::other) {
  if (s == HCCR_OK) return;
  std::string msg = hccr_last_error();
  if (msg.empty()) msg = hccr_status_string(s);
  throw Failure{exit_code_for(s, ctx), msg};
}

[[noreturn]] void config_error(const std::string& msg) { throw Failure{kExitConfig, msg}; }

struct NetDeleter {
  void operator()(hccr_network* p) const { hccr_network_free(p); }
};
struct DataDeleter {
  void operator()(hccr_dataset* p) const { hccr_dataset_free(p); }
};
struct CostDeleter {
  void operator()(hccr_cost_report* p) const { hccr_cost_free(p); }
};
using NetPtr = std::unique_ptr<hccr_network, NetDeleter>;
using DataPtr = std::unique_ptr<hccr_dataset, DataDeleter>;
using CostPtr = std::unique_ptr<hccr_cost_report, CostDeleter>;

char variant_char(const std::string& v) {
  if (v.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(v[0])));
    if (c == 'A' || c == 'B' || c == 'C') return c;
  }
  config_error("variant must be A, B or C, got '" + v + "'");
}

struct Synthetic {
  uint32_t classes = 0;
  uint32_t per_class = 0;
};

Synthetic parse_synthetic(const std::string& text) {
  const auto x = text.find_first_of("xX");
  Synthetic s;
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    std::size_t used = 0;
    const unsigned long c = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("junk");
    const std::string rest = text.substr(x + 1);
    const unsigned long n = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("junk");
    s.classes = static_cast<uint32_t>(c);
    s.per_class = static_cast<uint32_t>(n);
  } catch (const std::logic_error&) {
    config_error("--synthetic expects CLASSESxSAMPLES, e.g. 10x200, got '" + text + "'");
  }
  if (s.classes == 0 || s.per_class == 0) config_error("--synthetic sizes must be positive");
  return s;
}

// Where samples come from: --data PATH or --synthetic CxN.
struct Source {
  std::string data;
  std::string synthetic;
  uint64_t seed = 0;
  double val_fraction = 0.2;

  bool is_synthetic() const { return !synthetic.empty(); }

  DataPtr load() const {
    if (data.empty() == synthetic.empty()) config_error("exactly one of --data or --synthetic is required");
    hccr_dataset* d = nullptr;
    if (is_synthetic()) {
      const Synthetic s = parse_synthetic(synthetic);
      check(hccr_dataset_synthetic(s.classes, s.per_class, seed, &d), Context::data);
    } else {
      check(hccr_dataset_load(data.c_str(), &d), Context::data);
    }
    return DataPtr(d);
  }

  std::pair<DataPtr, DataPtr> split(const hccr_dataset* all) const {
    hccr_dataset* t = nullptr;
    hccr_dataset* v = nullptr;
    check(hccr_dataset_split(all, val_fraction, &t, &v), Context::data);
    return {DataPtr(t), DataPtr(v)};
  }
};

void add_source_options(CLI::App* cmd, Source& src) {
  cmd->add_option("--data", src.data, "GNT directory, .gnt file, or PGM manifest");
  cmd->add_option("--synthetic", src.synthetic, "Synthetic glyphs, CLASSESxSAMPLES (e.g. 10x200)");
  cmd->add_option("--seed", src.seed, "Seed for synthetic data, init and shuffling");
  cmd->add_option("--val-fraction", src.val_fraction, "Per-class held-out fraction")->check(CLI::Range(0.0, 0.99));
}

NetPtr load_network(const std::string& path, const std::string& variant) {
  const char expected = variant.empty() ? HCCR_ANY_VARIANT : variant_char(variant);
  hccr_network* n = nullptr;
  check(hccr_network_load(path.c_str(), expected, &n), Context::checkpoint);
  return NetPtr(n);
}

std::vector<uint32_t> parse_k_list(const std::string& text) {
  std::vector<uint32_t> ks;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument("k");
      ks.push_back(static_cast<uint32_t>(v));
    } catch (const std::logic_error&) {
      config_error("--k expects positive integers separated by commas, got '" + text + "'");
    }
  }
  if (ks.empty()) config_error("--k is empty");
  return ks;
}

std::string format_line(const hccr_epoch_log& e) {
  char buf[256];
  check(hccr_format_log_line(&e, buf, sizeof buf));
  return buf;
}

// ---- train

struct TrainArgs {
  Source src;
  std::string variant = "C";
  std::string out;
  std::string init;
  double lr = 0.1;
  double momentum = 0.9;
  uint32_t batch = 0;
  uint32_t epochs = 0;
  double l2 = 0.001;
  double decay = 10.0;
  double stop_at = -1.0;
  float head_init = 0.0f;
  bool head_init_set = false;
  uint32_t min_epochs = 1;
  int bn_recal = -1;
};

struct TrainSink {
  std::ofstream log;
};

void on_epoch(const hccr_epoch_log* entry, void* user) {
  auto* sink = static_cast<TrainSink*>(user);
  const std::string line = format_line(*entry);
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  sink->log << line << '\n';
  sink->log.flush();
}

int cmd_train(TrainArgs& a, const CLI::App& cmd) {
  const char v = variant_char(a.variant);
  // Desk-scale defaults for synthetic runs; real data keeps the full recipe.
  hccr_train_config cfg;
  hccr_train_config_default(&cfg);
  const bool synth = a.src.is_synthetic();
  cfg.lr_initial = a.lr;
  cfg.momentum = a.momentum;
  cfg.l2_lambda = a.l2;
  cfg.lr_decay_factor = a.decay;
  cfg.seed = a.src.seed;
  cfg.batch_size = a.batch ? a.batch : (synth ? 32u : cfg.batch_size);
  cfg.max_epochs = a.epochs ? a.epochs : (synth ? 15u : cfg.max_epochs);
  cfg.stop_at_val_accuracy = cmd.count("--stop-at") ? a.stop_at : (synth ? 0.95 : -1.0);
  cfg.min_epochs = a.min_epochs;
  cfg.bn_recalibration_batches = a.bn_recal >= 0 ? static_cast<uint32_t>(a.bn_recal) : (synth ? 20u : 0u);

  DataPtr all = a.src.load();
  auto [train, val] = a.src.split(all.get());
  const uint32_t classes = hccr_dataset_num_classes(all.get());

  hccr_network* raw = nullptr;
  if (!a.init.empty()) {
    NetPtr start = load_network(a.init, a.variant);
    raw = start.release();
  } else {
    float head = 1.0f;
    if (a.head_init_set) {
      head = a.head_init;
    } else if (synth) {
      head = 1.0f / 36.0f;  // head starts out equal to plain averaging
    }
    check(hccr_network_build_ex(v, classes, a.src.seed, head, &raw));
  }
  NetPtr net(raw);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Failure{kExitIo, "cannot create output directory '" + a.out + "': " + ec.message()};
  const fs::path log_path = fs::path(a.out) / "train.log";
  const fs::path ckpt_path = fs::path(a.out) / "checkpoint.mnck";
  TrainSink sink;
  sink.log.open(log_path, std::ios::trunc);
  if (!sink.log) throw Failure{kExitIo, "cannot write '" + log_path.string() + "'"};

  std::printf("train samples=%zu val samples=%zu classes=%u variant=%c batch=%u max_epochs=%u\n",
              hccr_dataset_size(train.get()), hccr_dataset_size(val.get()), classes, v, cfg.batch_size,
              cfg.max_epochs);
  uint32_t epochs_run = 0;
  const hccr_dataset* val_ptr = hccr_dataset_size(val.get()) ? val.get() : nullptr;
  check(hccr_train(net.get(), train.get(), val_ptr, &cfg, on_epoch, &sink, &epochs_run), Context::data);
  check(hccr_network_save(net.get(), ckpt_path.string().c_str()), Context::checkpoint);
  std::printf("epochs=%u checkpoint=%s log=%s\n", epochs_run, ckpt_path.string().c_str(), log_path.string().c_str());
  return kExitOk;
}

// ---- eval

struct EvalArgs {
  Source src;
  std::string checkpoint;
  std::string variant;
  std::string split;
  std::string ks = "1,5,10";
  bool zero_bias = false;
};

int cmd_eval(EvalArgs& a, const CLI::App& cmd) {
  NetPtr net = load_network(a.checkpoint, a.variant);
  hccr_network_info info{};
  check(hccr_network_get_info(net.get(), &info));

  DataPtr all = a.src.load();
  if (hccr_dataset_num_classes(all.get()) > info.num_classes) {
    config_error("dataset has " + std::to_string(hccr_dataset_num_classes(all.get())) +
                 " classes, checkpoint only " + std::to_string(info.num_classes));
  }
  std::string split = a.split.empty() ? (a.src.is_synthetic() ? "val" : "all") : a.split;
  DataPtr train, val;
  const hccr_dataset* target = all.get();
  if (split != "all") {
    std::tie(train, val) = a.src.split(all.get());
    target = split == "val" ? val.get() : train.get();
  }

  std::vector<uint32_t> ks = parse_k_list(a.ks);
  if (!cmd.count("--k")) {
    std::erase_if(ks, [&](uint32_t k) { return k > info.num_classes; });
  }
  std::vector<double> acc(ks.size());
  check(hccr_evaluate(net.get(), target, ks.data(), ks.size(), a.zero_bias ? 1 : 0, acc.data()), Context::data);
  std::string line;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%stop%u=%.6f", i ? " " : "", ks[i], acc[i]);
    line += buf;
  }
  std::printf("%s\n", line.c_str());
  return kExitOk;
}

// ---- cam

struct CamArgs {
  std::string checkpoint;
  std::string variant;
  std::vector<std::string> images;
  std::vector<std::string> gnt;
  std::string out;
};

int cmd_cam(CamArgs& a) {
  if (a.images.empty() && a.gnt.empty()) config_error("give at least one --image or --gnt input");
  NetPtr net = load_network(a.checkpoint, a.variant);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Failure{kExitIo, "cannot create output directory '" + a.out + "': " + ec.message()};

  struct Input {
    std::string label, stem;
    std::vector<float> pixels;
  };
  std::vector<Input> inputs;
  std::size_t n = 0;
  auto stem_for = [&](const std::string& base) {
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%03zu_", n++);
    return prefix + base;
  };
  for (const std::string& path : a.images) {
    Input in{path, stem_for(fs::path(path).stem().string()), std::vector<float>(HCCR_IMAGE_PIXELS)};
    check(hccr_image_load_pgm(path.c_str(), in.pixels.data()), Context::data);
    inputs.push_back(std::move(in));
  }
  for (const std::string& spec : a.gnt) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) config_error("--gnt expects FILE:INDEX, got '" + spec + "'");
    const std::string file = spec.substr(0, colon);
    uint64_t index = 0;
    try {
      std::size_t used = 0;
      index = std::stoull(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument("index");
    } catch (const std::logic_error&) {
      config_error("--gnt index must be a non-negative integer, got '" + spec + "'");
    }
    Input in{spec, stem_for(fs::path(file).stem().string() + "_" + std::to_string(index)),
             std::vector<float>(HCCR_IMAGE_PIXELS)};
    uint16_t tag = 0;
    check(hccr_image_load_gnt(file.c_str(), index, in.pixels.data(), &tag), Context::data);
    inputs.push_back(std::move(in));
  }

  for (const Input& in : inputs) {
    hccr_cam_info info{};
    check(hccr_cam_emit(net.get(), in.pixels.data(), a.out.c_str(), in.stem.c_str(), &info));
    std::printf("input=%s class=%u logit=%.6f cam=%s.cam.pgm overlay=%s.overlay.pgm\n", in.label.c_str(),
                info.predicted_class, static_cast<double>(info.logit), in.stem.c_str(), in.stem.c_str());
  }
  return kExitOk;
}

// ---- analyze

struct AnalyzeArgs {
  std::string variant = "C";
  uint32_t classes = 3755;
  bool check_counts = false;
  std::string block;
  std::string format = "table";
};

uint64_t expected_total(char v) {
  switch (v) {
    case 'A': return 6507691;
    case 'B': return 6508139;
    default: return 6523819;
  }
}

int analyze_block(const AnalyzeArgs& a) {
  std::map<std::string, uint64_t> dims{{"H", 0}, {"W", 0}, {"C", 0}, {"M", 0}, {"MB", 0}};
  std::stringstream in(a.block);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    std::string key = item.substr(0, eq);
    for (char& c : key) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (key == "M_B") key = "MB";
    if (eq == std::string::npos || !dims.count(key)) config_error("bad --block entry '" + item + "'");
    try {
      dims[key] = std::stoull(item.substr(eq + 1));
    } catch (const std::logic_error&) {
      config_error("bad --block value in '" + item + "'");
    }
  }
  if (!dims["W"]) dims["W"] = dims["H"];
  hccr_block_cost b{};
  check(hccr_block_cost_custom(dims["H"], dims["W"], dims["C"], dims["M"], dims["MB"], &b));
  const double ratio = static_cast<double>(b.ratio_num) / static_cast<double>(b.ratio_den);
  if (a.format == "kv") {
    std::printf("h=%llu\nw=%llu\nc=%llu\nm=%llu\nmb=%llu\n", (unsigned long long)dims["H"],
                (unsigned long long)dims["W"], (unsigned long long)dims["C"], (unsigned long long)dims["M"],
                (unsigned long long)dims["MB"]);
    std::printf("macs_plain=%llu\nmacs_bottleneck=%llu\nratio=%llu/%llu\nratio_value=%.6g\n",
                (unsigned long long)b.macs_plain, (unsigned long long)b.macs, (unsigned long long)b.ratio_num,
                (unsigned long long)b.ratio_den, ratio);
  } else {
    std::printf("block H=%llu W=%llu C=%llu M=%llu MB=%llu\n", (unsigned long long)dims["H"],
                (unsigned long long)dims["W"], (unsigned long long)dims["C"], (unsigned long long)dims["M"],
                (unsigned long long)dims["MB"]);
    std::printf("  plain MACs       %llu\n  bottleneck MACs  %llu\n  ratio            %llu/%llu = %.6g\n",
                (unsigned long long)b.macs_plain, (unsigned long long)b.macs, (unsigned long long)b.ratio_num,
                (unsigned long long)b.ratio_den, ratio);
  }
  return kExitOk;
}

int cmd_analyze(AnalyzeArgs& a) {
  if (a.format != "table" && a.format != "kv") config_error("--format must be table or kv");
  if (!a.block.empty()) return analyze_block(a);
  const char v = variant_char(a.variant);
  hccr_cost_report* raw = nullptr;
  check(hccr_analyze(v, a.classes, &raw));
  CostPtr report(raw);
  hccr_cost_totals t{};
  check(hccr_cost_get_totals(report.get(), &t));

  using ull = unsigned long long;
  if (a.format == "kv") {
    std::printf("variant=%c\nclasses=%u\n", v, a.classes);
    for (uint32_t i = 0; i < t.layer_count; ++i) {
      hccr_layer_cost l{};
      check(hccr_cost_get_layer(report.get(), i, &l));
      std::printf("layer.%s.macs=%llu\nlayer.%s.params=%llu\n", l.name, (ull)l.macs, l.name, (ull)l.params);
    }
    for (uint32_t i = 0; i < t.block_count; ++i) {
      hccr_block_cost b{};
      check(hccr_cost_get_block(report.get(), i, &b));
      std::printf("block.%s.macs=%llu\nblock.%s.macs_plain=%llu\nblock.%s.ratio=%llu/%llu\n", b.name, (ull)b.macs,
                  b.name, (ull)b.macs_plain, b.name, (ull)b.ratio_num, (ull)b.ratio_den);
    }
    std::printf("total_macs=%llu\ntrainable_params=%llu\nnon_trainable_params=%llu\ntotal_params=%llu\n",
                (ull)t.macs, (ull)t.trainable_params, (ull)t.non_trainable_params, (ull)t.total_params);
  } else {
    std::printf("Model %c, %u classes\n\n", v, a.classes);
    std::printf("%-14s %5s %5s %5s %5s %14s %10s\n", "layer", "H", "W", "C", "M", "MACs", "params");
    for (uint32_t i = 0; i < t.layer_count; ++i) {
      hccr_layer_cost l{};
      check(hccr_cost_get_layer(report.get(), i, &l));
      std::printf("%-14s %5llu %5llu %5llu %5llu %14llu %10llu\n", l.name, (ull)l.h, (ull)l.w, (ull)l.c, (ull)l.m,
                  (ull)l.macs, (ull)l.params);
    }
    std::printf("\n%-8s %5s %6s %6s %6s %14s %14s %8s\n", "block", "side", "C", "M", "M_B", "MACs", "plain MACs",
                "ratio");
    for (uint32_t i = 0; i < t.block_count; ++i) {
      hccr_block_cost b{};
      check(hccr_cost_get_block(report.get(), i, &b));
      char ratio[32];
      std::snprintf(ratio, sizeof ratio, "%llu/%llu", (ull)b.ratio_num, (ull)b.ratio_den);
      std::printf("%-8s %5llu %6llu %6llu %6llu %14llu %14llu %8s\n", b.name, (ull)b.side, (ull)b.in_channels,
                  (ull)b.channels, (ull)b.bottleneck, (ull)b.macs, (ull)b.macs_plain, ratio);
    }
    std::printf("\ntotal MACs            %llu\ntrainable params      %llu\nnon-trainable params  %llu\n"
                "total params          %llu\n",
                (ull)t.macs, (ull)t.trainable_params, (ull)t.non_trainable_params, (ull)t.total_params);
  }

  if (a.check_counts) {
    if (a.classes != 3755) config_error("--check compares against the 3755-class reference counts");
    const uint64_t want = expected_total(v);
    if (t.total_params != want) {
      std::fprintf(stderr, "check FAILED: total params %llu, expected %llu\n", (ull)t.total_params, (ull)want);
      return kExitFailure;
    }
    std::printf("check passed: total params %llu\n", (ull)want);
  }
  return kExitOk;
}

// ---- inspect

int cmd_inspect(const std::string& path, bool tensors) {
  NetPtr net = load_network(path, "");
  hccr_network_info info{};
  check(hccr_network_get_info(net.get(), &info));
  using ull = unsigned long long;
  std::printf("checkpoint=%s\nvariant=%c\nhead=%s\nclasses=%u\ninput_size=%u\nfeature_map=%ux%ux%u\n", path.c_str(),
              info.variant, info.head, info.num_classes, info.input_size, info.feature_size, info.feature_size,
              info.feature_channels);
  std::printf("bn_epsilon=%g\nbn_momentum=%g\ntrainable_params=%llu\nnon_trainable_params=%llu\ntotal_params=%llu\n"
              "tensors=%u\n",
              static_cast<double>(info.bn_epsilon), static_cast<double>(info.bn_momentum),
              (ull)info.trainable_params, (ull)info.non_trainable_params, (ull)info.total_params,
              info.tensor_count);
  if (tensors) {
    for (uint32_t i = 0; i < info.tensor_count; ++i) {
      hccr_tensor_info t{};
      check(hccr_network_tensor(net.get(), i, &t));
      std::string dims;
      for (uint32_t d = 0; d < t.rank; ++d) dims += (d ? "x" : "") + std::to_string(t.dims[d]);
      std::printf("tensor %s %s %s\n", t.name, dims.c_str(), t.trainable ? "trainable" : "fixed");
    }
  }
  return kExitOk;
}

int threads_from_env() {
  const char* env = std::getenv("MELNYK_THREADS");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used == std::strlen(env) && n >= 1) return n;
  } catch (const std::logic_error&) {
  }
  config_error(std::string("MELNYK_THREADS must be a positive integer, got '") + env + "'");
}

// ---- --config handling: key=value lines become flags unless given explicitly.

std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw Failure{kExitConfig, "cannot read config file '" + path + "'"};

  auto given = [&](const std::string& flag) {
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };

  std::vector<std::string> extra;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Failure{kExitConfig, path + ":" + std::to_string(lineno) + ": expected key=value"};
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    for (char& c : key) if (c == '_') c = '-';
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value == "true" || value == "on") {
      extra.push_back(flag);
    } else if (value == "false" || value == "off") {
      continue;
    } else {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  // Subcommand name stays first.
  const auto pos = args.empty() ? args.end() : args.begin() + 1;
  args.insert(pos, extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Handwritten character recognition networks: train, evaluate, visualize, analyze."};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", std::string(hccr_version()));

  int threads = 0;  // 0: not given on the command line
  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads", threads, "Worker threads (falls back to MELNYK_THREADS, then 1)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--config", "key=value file; explicit flags win");
  };

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train a network and write checkpoint.mnck and train.log");
  add_source_options(train, ta.src);
  train->add_option("--variant", ta.variant, "A, B or C");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--init", ta.init, "Start from this checkpoint");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--momentum", ta.momentum, "SGD momentum");
  train->add_option("--batch-size", ta.batch, "Mini-batch size (256, or 32 for synthetic data)");
  train->add_option("--epochs", ta.epochs, "Maximum epochs (40, or 15 for synthetic data)");
  train->add_option("--l2", ta.l2, "L2 weight decay");
  train->add_option("--lr-decay", ta.decay, "Learning-rate divisor");
  train->add_option("--stop-at", ta.stop_at, "Stop at this validation top-1 (0.95 for synthetic data; <0 disables)");
  train->add_option_function<float>(
      "--head-init",
      [&](const float& v) {
        ta.head_init = v;
        ta.head_init_set = true;
      },
      "Initial GWOAP/GWAP kernel value (1, or 1/36 for synthetic data)");
  train->add_option("--min-epochs", ta.min_epochs, "No early stop before this epoch")->check(CLI::PositiveNumber);
  train->add_option("--bn-recal", ta.bn_recal,
                    "Training batches averaged into BN statistics before validation (20 for synthetic data, else 0)")
      ->check(CLI::NonNegativeNumber);
  add_threads(train);

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Top-k accuracy of a checkpoint");
  add_source_options(eval, ea.src);
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--variant", ea.variant, "Require this variant");
  eval->add_option("--split", ea.split, "val, train or all (default: val for synthetic data, else all)")
      ->check(CLI::IsMember({"val", "train", "all"}));
  eval->add_option("--k", ea.ks, "Comma-separated k values");
  eval->add_flag("--zero-bias", ea.zero_bias, "Zero the softmax bias");
  add_threads(eval);

  CamArgs ca;
  CLI::App* cam = app.add_subcommand("cam", "Class activation maps for one or more images");
  cam->add_option("--checkpoint", ca.checkpoint, "Checkpoint file")->required();
  cam->add_option("--variant", ca.variant, "Require this variant");
  cam->add_option("--image", ca.images, "PGM input (repeatable)");
  cam->add_option("--gnt", ca.gnt, "GNT record as FILE:INDEX (repeatable)");
  cam->add_option("--out", ca.out, "Output directory")->required();
  add_threads(cam);

  AnalyzeArgs aa;
  CLI::App* analyze = app.add_subcommand("analyze", "MAC and parameter counts");
  analyze->add_option("--variant", aa.variant, "A, B or C");
  analyze->add_option("--classes", aa.classes, "Number of classes")->check(CLI::PositiveNumber);
  analyze->add_flag("--check", aa.check_counts, "Compare parameter totals with the reference counts");
  analyze->add_option("--block", aa.block, "Single block, e.g. H=6,C=256,M=448,MB=256");
  analyze->add_option("--format", aa.format, "table or kv");
  add_threads(analyze);

  std::string inspect_path;
  bool inspect_tensors = false;
  CLI::App* inspect = app.add_subcommand("inspect", "Print checkpoint metadata");
  inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();
  inspect->add_flag("--tensors", inspect_tensors, "List every stored tensor");
  add_threads(inspect);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? kExitOk : kExitConfig;
    }
    if (threads == 0) threads = threads_from_env();
    check(hccr_set_threads(threads));

    if (*train) return cmd_train(ta, *train);
    if (*eval) return cmd_eval(ea, *eval);
    if (*cam) return cmd_cam(ca);
    if (*analyze) return cmd_analyze(aa);
    if (*inspect) return cmd_inspect(inspect_path, inspect_tensors);
    return kExitConfig;
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  }
}
