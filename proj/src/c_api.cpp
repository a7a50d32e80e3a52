#include "hccr/hccr.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "hccr/analysis.hpp"
#include "hccr/cam.hpp"
#include "hccr/data.hpp"
#include "hccr/model.hpp"
#include "hccr/parallel.hpp"
#include "hccr/train.hpp"

struct hccr_network {
  hccr::Network net;
  std::vector<std::string> tensor_names;
};

struct hccr_dataset {
  hccr::Dataset data;
};

struct hccr_cost_report {
  hccr::CostReport report;
};

namespace {

thread_local std::string last_error;

hccr_status from_format(hccr::FormatErrc code) {
  switch (code) {
    case hccr::FormatErrc::bad_magic: return HCCR_ERR_BAD_MAGIC;
    case hccr::FormatErrc::version_mismatch: return HCCR_ERR_VERSION;
    case hccr::FormatErrc::truncated: return HCCR_ERR_TRUNCATED;
    case hccr::FormatErrc::shape_mismatch: return HCCR_ERR_SHAPE_MISMATCH;
    case hccr::FormatErrc::variant_mismatch: return HCCR_ERR_VARIANT_MISMATCH;
    case hccr::FormatErrc::corrupt_record: return HCCR_ERR_CORRUPT_RECORD;
    case hccr::FormatErrc::overflow: return HCCR_ERR_OVERFLOW;
  }
  return HCCR_ERR_INTERNAL;
}

hccr_status fail(hccr_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename Fn>
hccr_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return HCCR_OK;
  } catch (const hccr::FormatError& e) {
    return fail(from_format(e.code()), e.what());
  } catch (const hccr::ShapeError& e) {
    return fail(HCCR_ERR_SHAPE, e.what());
  } catch (const hccr::ConfigError& e) {
    return fail(HCCR_ERR_CONFIG, e.what());
  } catch (const hccr::DataError& e) {
    return fail(HCCR_ERR_DATA, e.what());
  } catch (const hccr::IoError& e) {
    return fail(HCCR_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(HCCR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(HCCR_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(HCCR_ERR_INTERNAL, "unknown failure");
  }
}

// argument checks happen before anything can throw
#define HCCR_REQUIRE(cond, msg) \
  do {                          \
    if (!(cond)) return fail(HCCR_ERR_INVALID_ARGUMENT, msg); \
  } while (0)

hccr::Variant variant_of(char c) { return hccr::parse_variant(std::string(1, c)); }

hccr_network* wrap(hccr::Network net) {
  auto* handle = new hccr_network{std::move(net), {}};
  for (const auto& p : handle->net.parameters()) handle->tensor_names.push_back(p.name);
  return handle;
}

hccr::Tensor image_tensor(const float* image) {
  using hccr::kImageSize;
  return hccr::Tensor({kImageSize, kImageSize, 1}, std::vector<float>(image, image + kImageSize * kImageSize));
}

void fill_cam_info(const hccr::CamResult& cam, hccr_cam_info* info) {
  if (!info) return;
  info->predicted_class = static_cast<uint32_t>(cam.predicted_class);
  info->logit = cam.logit;
  info->map_height = static_cast<uint32_t>(cam.raw_map.dim(0));
  info->map_width = static_cast<uint32_t>(cam.raw_map.dim(1));
}

hccr::Dataset load_any(const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec) || path.extension() == ".gnt") return hccr::load_gnt_dataset(path);
  if (!std::filesystem::exists(path, ec)) throw hccr::DataError("data path '" + path.string() + "' does not exist");
  return hccr::load_manifest(path);
}

}  // namespace

extern "C" {

const char* hccr_version(void) { return "1.0.0"; }

const char* hccr_status_string(hccr_status status) {
  switch (status) {
    case HCCR_OK: return "ok";
    case HCCR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case HCCR_ERR_SHAPE: return "shape error";
    case HCCR_ERR_IO: return "i/o error";
    case HCCR_ERR_BAD_MAGIC: return "bad magic";
    case HCCR_ERR_VERSION: return "version mismatch";
    case HCCR_ERR_TRUNCATED: return "truncated file";
    case HCCR_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case HCCR_ERR_VARIANT_MISMATCH: return "variant mismatch";
    case HCCR_ERR_CORRUPT_RECORD: return "corrupt record";
    case HCCR_ERR_OVERFLOW: return "dimension overflow";
    case HCCR_ERR_DATA: return "data error";
    case HCCR_ERR_CONFIG: return "configuration error";
    case HCCR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* hccr_last_error(void) { return last_error.c_str(); }

hccr_status hccr_set_threads(int threads) {
  HCCR_REQUIRE(threads >= 1, "thread count must be at least 1");
  hccr::set_num_threads(threads);
  return HCCR_OK;
}

int hccr_get_threads(void) { return hccr::num_threads(); }

// ---- networks

hccr_status hccr_network_build_ex(char variant, uint32_t num_classes, uint64_t seed, float head_init,
                                  hccr_network** out) {
  HCCR_REQUIRE(out, "output handle is null");
  *out = nullptr;
  return guarded([&] {
    hccr::ModelConfig config = hccr::reference_config(variant_of(variant), num_classes);
    config.head_init = head_init;
    *out = wrap(hccr::Network::build(config, seed));
  });
}

hccr_status hccr_network_build(char variant, uint32_t num_classes, uint64_t seed, hccr_network** out) {
  return hccr_network_build_ex(variant, num_classes, seed, 1.0f, out);
}

hccr_status hccr_network_load(const char* path, char expected_variant, hccr_network** out) {
  HCCR_REQUIRE(path && out, "path or output handle is null");
  *out = nullptr;
  return guarded([&] {
    std::optional<hccr::Variant> expected;
    if (expected_variant != HCCR_ANY_VARIANT) expected = variant_of(expected_variant);
    *out = wrap(hccr::load_checkpoint(path, expected));
  });
}

hccr_status hccr_network_save(const hccr_network* net, const char* path) {
  HCCR_REQUIRE(net && path, "network or path is null");
  return guarded([&] { hccr::save_checkpoint(net->net, path); });
}

void hccr_network_free(hccr_network* net) { delete net; }

hccr_status hccr_network_get_info(const hccr_network* net, hccr_network_info* info) {
  HCCR_REQUIRE(net && info, "network or info is null");
  return guarded([&] {
    const hccr::ModelConfig& c = net->net.config();
    const hccr::ParamCount count = net->net.param_count();
    info->variant = hccr::to_char(c.variant);
    info->head = hccr::to_string(hccr::head_kind(c.variant));
    info->num_classes = static_cast<uint32_t>(c.num_classes);
    info->input_size = static_cast<uint32_t>(c.input_size);
    info->feature_size = static_cast<uint32_t>(c.feature_size());
    info->feature_channels = static_cast<uint32_t>(c.feature_channels());
    info->bn_epsilon = c.bn_epsilon;
    info->bn_momentum = c.bn_momentum;
    info->trainable_params = count.trainable;
    info->non_trainable_params = count.non_trainable;
    info->total_params = count.total();
    info->tensor_count = static_cast<uint32_t>(net->tensor_names.size());
  });
}

hccr_status hccr_network_tensor(const hccr_network* net, uint32_t index, hccr_tensor_info* info) {
  HCCR_REQUIRE(net && info, "network or info is null");
  HCCR_REQUIRE(index < net->tensor_names.size(), "tensor index out of range");
  return guarded([&] {
    const auto params = net->net.parameters();
    const hccr::ConstParamRef& p = params.at(index);
    info->name = net->tensor_names[index].c_str();
    info->rank = static_cast<uint32_t>(p.tensor->rank());
    for (uint32_t i = 0; i < 4; ++i) info->dims[i] = i < info->rank ? static_cast<uint32_t>(p.tensor->dim(i)) : 0;
    info->size = p.tensor->size();
    info->trainable = p.trainable ? 1 : 0;
  });
}

hccr_status hccr_network_predict(const hccr_network* net, const float* image, int zero_bias, float* logits,
                                 float* probs) {
  HCCR_REQUIRE(net && image, "network or image is null");
  return guarded([&] {
    const std::size_t s = net->net.config().input_size;
    const hccr::Tensor batch = image_tensor(image).reshaped({1, s, s, 1});
    const hccr::ForwardResult r = hccr::forward(net->net, batch, zero_bias != 0);
    if (logits) std::memcpy(logits, r.logits.raw(), r.logits.size() * sizeof(float));
    if (probs) std::memcpy(probs, r.probs.raw(), r.probs.size() * sizeof(float));
  });
}

// ---- datasets

hccr_status hccr_dataset_synthetic(uint32_t num_classes, uint32_t samples_per_class, uint64_t seed,
                                   hccr_dataset** out) {
  HCCR_REQUIRE(out, "output handle is null");
  *out = nullptr;
  return guarded([&] { *out = new hccr_dataset{hccr::synth_glyphs(num_classes, samples_per_class, seed)}; });
}

hccr_status hccr_dataset_load(const char* path, hccr_dataset** out) {
  HCCR_REQUIRE(path && out, "path or output handle is null");
  *out = nullptr;
  return guarded([&] { *out = new hccr_dataset{load_any(path)}; });
}

hccr_status hccr_dataset_split(const hccr_dataset* data, double validation_fraction, hccr_dataset** train,
                               hccr_dataset** validation) {
  HCCR_REQUIRE(data && train && validation, "dataset or output handle is null");
  *train = *validation = nullptr;
  return guarded([&] {
    hccr::DatasetSplit split = hccr::stratified_split(data->data, validation_fraction);
    auto t = std::make_unique<hccr_dataset>(hccr_dataset{std::move(split.train)});
    auto v = std::make_unique<hccr_dataset>(hccr_dataset{std::move(split.validation)});
    *train = t.release();
    *validation = v.release();
  });
}

size_t hccr_dataset_size(const hccr_dataset* data) { return data ? data->data.size() : 0; }

uint32_t hccr_dataset_num_classes(const hccr_dataset* data) {
  return data ? static_cast<uint32_t>(data->data.num_classes) : 0;
}

hccr_status hccr_dataset_sample(const hccr_dataset* data, size_t index, float* image, uint32_t* label) {
  HCCR_REQUIRE(data, "dataset is null");
  HCCR_REQUIRE(index < data->data.size(), "sample index out of range");
  const hccr::Sample& s = data->data.samples[index];
  if (image) std::memcpy(image, s.image.raw(), s.image.size() * sizeof(float));
  if (label) *label = static_cast<uint32_t>(s.label);
  return HCCR_OK;
}

void hccr_dataset_free(hccr_dataset* data) { delete data; }

hccr_status hccr_image_load_pgm(const char* path, float* image) {
  HCCR_REQUIRE(path && image, "path or image is null");
  return guarded([&] {
    const hccr::GrayImage img = hccr::read_pgm(path);
    const hccr::Tensor t = hccr::preprocess_bitmap(img.pixels, img.width, img.height);
    std::memcpy(image, t.raw(), t.size() * sizeof(float));
  });
}

hccr_status hccr_image_load_gnt(const char* path, uint64_t index, float* image, uint16_t* tag) {
  HCCR_REQUIRE(path && image, "path or image is null");
  return guarded([&] {
    const std::vector<hccr::GntRecord> records = hccr::read_gnt_file(path);
    if (index >= records.size()) {
      throw hccr::DataError("record " + std::to_string(index) + " requested, '" + std::string(path) + "' holds " +
                            std::to_string(records.size()));
    }
    const hccr::GntRecord& r = records[index];
    const hccr::Tensor t = hccr::preprocess_bitmap(r.bitmap, r.width, r.height);
    std::memcpy(image, t.raw(), t.size() * sizeof(float));
    if (tag) *tag = r.tag_code();
  });
}

// ---- training and evaluation

void hccr_train_config_default(hccr_train_config* config) {
  if (!config) return;
  const hccr::TrainConfig d;
  config->lr_initial = d.lr_initial;
  config->momentum = d.momentum;
  config->batch_size = static_cast<uint32_t>(d.batch_size);
  config->max_epochs = static_cast<uint32_t>(d.max_epochs);
  config->l2_lambda = d.l2_lambda;
  config->lr_decay_factor = d.lr_decay_factor;
  config->seed = d.seed;
  config->stop_at_val_accuracy = -1.0;
  config->min_epochs = static_cast<uint32_t>(d.min_epochs);
  config->bn_recalibration_batches = static_cast<uint32_t>(d.bn_recalibration_batches);
}

hccr_status hccr_train(hccr_network* net, const hccr_dataset* train, const hccr_dataset* validation,
                       const hccr_train_config* config, hccr_epoch_callback callback, void* user,
                       uint32_t* epochs_run) {
  HCCR_REQUIRE(net && train && config, "network, training set or config is null");
  return guarded([&] {
    hccr::TrainConfig c;
    c.lr_initial = config->lr_initial;
    c.momentum = config->momentum;
    c.batch_size = config->batch_size;
    c.max_epochs = config->max_epochs;
    c.l2_lambda = config->l2_lambda;
    c.lr_decay_factor = config->lr_decay_factor;
    c.seed = config->seed;
    if (config->stop_at_val_accuracy >= 0.0) c.stop_at_val_accuracy = config->stop_at_val_accuracy;
    c.min_epochs = config->min_epochs;
    c.bn_recalibration_batches = config->bn_recalibration_batches;
    const hccr::Dataset empty;
    hccr::EpochCallback on_epoch;
    if (callback) {
      on_epoch = [&](const hccr::EpochLog& e) {
        const hccr_epoch_log entry{static_cast<uint32_t>(e.epoch), e.lr, e.loss, e.train_accuracy, e.val_accuracy};
        callback(&entry, user);
      };
    }
    const hccr::TrainResult result =
        hccr::train_loop(net->net, train->data, validation ? validation->data : empty, c, on_epoch);
    if (epochs_run) *epochs_run = static_cast<uint32_t>(result.log.size());
  });
}

hccr_status hccr_format_log_line(const hccr_epoch_log* entry, char* buffer, size_t length) {
  HCCR_REQUIRE(entry && buffer && length > 0, "entry or buffer is null");
  const std::string line = hccr::format_log_line(
      hccr::EpochLog{entry->epoch, entry->lr, entry->loss, entry->train_accuracy, entry->val_accuracy});
  HCCR_REQUIRE(line.size() < length, "buffer too small for the log line");
  std::memcpy(buffer, line.c_str(), line.size() + 1);
  return HCCR_OK;
}

hccr_status hccr_evaluate(const hccr_network* net, const hccr_dataset* data, const uint32_t* ks, size_t count,
                          int zero_bias, double* accuracy) {
  HCCR_REQUIRE(net && data && ks && accuracy && count > 0, "null argument to evaluate");
  return guarded([&] {
    const std::vector<std::size_t> k(ks, ks + count);
    const hccr::Evaluation e = hccr::evaluate(net->net, data->data, k, zero_bias != 0);
    for (size_t i = 0; i < count; ++i) accuracy[i] = e.accuracy[i];
  });
}

hccr_status hccr_bias_effect(const hccr_network* net, const hccr_dataset* data, double* with_bias,
                             double* zero_bias, double* drop) {
  HCCR_REQUIRE(net && data, "network or dataset is null");
  return guarded([&] {
    const hccr::BiasEffect e = hccr::bias_effect(net->net, data->data);
    if (with_bias) *with_bias = e.with_bias;
    if (zero_bias) *zero_bias = e.zero_bias;
    if (drop) *drop = e.drop;
  });
}

// ---- class activation maps

hccr_status hccr_cam_compute(const hccr_network* net, const float* image, hccr_cam_info* info, float* raw_map,
                             float* normalized_map) {
  HCCR_REQUIRE(net && image, "network or image is null");
  return guarded([&] {
    const hccr::CamResult cam = hccr::compute_cam(net->net, image_tensor(image));
    fill_cam_info(cam, info);
    if (raw_map) std::memcpy(raw_map, cam.raw_map.raw(), cam.raw_map.size() * sizeof(float));
    if (normalized_map) {
      std::memcpy(normalized_map, cam.normalized_map.raw(), cam.normalized_map.size() * sizeof(float));
    }
  });
}

hccr_status hccr_cam_emit(const hccr_network* net, const float* image, const char* dir, const char* stem,
                          hccr_cam_info* info) {
  HCCR_REQUIRE(net && image && dir && stem, "null argument to cam_emit");
  HCCR_REQUIRE(*stem != '\0', "file stem is empty");
  return guarded([&] {
    const hccr::Tensor img = image_tensor(image);
    const hccr::CamResult cam = hccr::compute_cam(net->net, img);
    hccr::emit_overlay(img, cam, dir, stem);
    fill_cam_info(cam, info);
  });
}

// ---- cost analysis

hccr_status hccr_analyze(char variant, uint32_t num_classes, hccr_cost_report** out) {
  HCCR_REQUIRE(out, "output handle is null");
  *out = nullptr;
  return guarded([&] {
    *out = new hccr_cost_report{hccr::network_cost(hccr::reference_config(variant_of(variant), num_classes))};
  });
}

void hccr_cost_free(hccr_cost_report* report) { delete report; }

hccr_status hccr_cost_get_totals(const hccr_cost_report* report, hccr_cost_totals* totals) {
  HCCR_REQUIRE(report && totals, "report or totals is null");
  const hccr::CostReport& r = report->report;
  totals->macs = r.total_macs;
  totals->trainable_params = r.params.trainable;
  totals->non_trainable_params = r.params.non_trainable;
  totals->total_params = r.params.total();
  totals->layer_count = static_cast<uint32_t>(r.layers.size());
  totals->block_count = static_cast<uint32_t>(r.blocks.size());
  return HCCR_OK;
}

hccr_status hccr_cost_get_layer(const hccr_cost_report* report, uint32_t index, hccr_layer_cost* layer) {
  HCCR_REQUIRE(report && layer, "report or layer is null");
  HCCR_REQUIRE(index < report->report.layers.size(), "layer index out of range");
  const hccr::LayerCost& l = report->report.layers[index];
  *layer = hccr_layer_cost{l.name.c_str(), l.spec.h, l.spec.w, l.spec.c, l.spec.m, l.macs, l.params};
  return HCCR_OK;
}

namespace {

void fill_block(const hccr::BlockCost& b, hccr_block_cost* out) {
  *out = hccr_block_cost{b.name.c_str(), b.side, b.in_channels, b.channels, b.bottleneck,
                         b.macs, b.macs_plain, b.ratio.num(), b.ratio.den()};
}

thread_local hccr::BlockCost custom_block;

}  // namespace

hccr_status hccr_cost_get_block(const hccr_cost_report* report, uint32_t index, hccr_block_cost* block) {
  HCCR_REQUIRE(report && block, "report or block is null");
  HCCR_REQUIRE(index < report->report.blocks.size(), "block index out of range");
  fill_block(report->report.blocks[index], block);
  return HCCR_OK;
}

hccr_status hccr_block_cost_custom(uint64_t h, uint64_t w, uint64_t c, uint64_t m, uint64_t m_b,
                                   hccr_block_cost* block) {
  HCCR_REQUIRE(block, "block is null");
  return guarded([&] {
    if (h == 0 || w == 0 || c == 0 || m == 0 || m_b == 0) throw hccr::ConfigError("block dimensions must be positive");
    hccr::LayerCostSpec spec;
    spec.h = h;
    spec.w = w;
    spec.c = c;
    custom_block = hccr::BlockCost{"custom", c, m, m_b, h,
                                   hccr::mac_block_bottleneck(spec, m, m_b), hccr::mac_block_plain(spec, m),
                                   hccr::reduction_ratio(c, m, m_b)};
    fill_block(custom_block, block);
    block->side = h;
  });
}

}  // extern "C"
