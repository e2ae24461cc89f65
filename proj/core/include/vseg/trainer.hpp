#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vseg/autodiff.hpp"
#include "vseg/metrics.hpp"
#include "vseg/network.hpp"
#include "vseg/phantom.hpp"

namespace vseg {

struct TrainConfig {
  double lr0 = 1e-4;
  double decay = 1e-6;
  bool fixed_lr = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t batch_size = 1;
  std::int64_t steps = 500;
  std::uint64_t seed = 0;
  Extent3 patch = {16, 32, 32};  // (d, h, w)
  // Checkpoint every N steps; 0 writes only the final checkpoint.
  std::int64_t checkpoint_interval = 0;
  NetConfig net;

  // Throws ConfigError naming the offending field.
  void validate() const;
  // Canonical key=value text (train keys, then the NetConfig block).
  std::string to_text() const;
  static TrainConfig from_text(std::string_view text);
};

// lr0 / (1 + decay * t), or lr0 when fixed_lr is set.
double learning_rate(const TrainConfig& cfg, std::int64_t t);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update of every trainable parameter in `grads`:
// t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
// theta -= lr_t * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, const TrainConfig& cfg);

struct LabeledSample {
  std::string id;
  VolumeSample sample;
};

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double dice_loss = 0.0;
  double ce_loss = 0.0;
  double loss = 0.0;
};

inline constexpr const char* kTrainLogHeader = "step\tlr\tdice_loss\tce_loss\tloss";
std::string format_step(const StepRecord& r);

struct TrainOptions {
  // Receives the header and one row per step when set.
  std::ostream* log = nullptr;
  // Checkpoints go here when non-empty: ckpt_<step>.vseg and final.vseg.
  std::filesystem::path checkpoint_dir;
  // Optional warm start; must match cfg.net.
  const Network* init = nullptr;
};

struct TrainResult {
  Network net;
  std::vector<StepRecord> history;
};

// Adam training on randomly cropped patches. Each epoch visits every sample
// once in an order shuffled by the run seed; batches take consecutive samples
// of that order. Throws NumericError naming the step if the loss goes
// non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<LabeledSample>& dataset, const TrainOptions& opts = {});

// Whole-volume inference per case, metrics against the task's reference mask.
MetricsSummary evaluate(Network& net, const std::vector<LabeledSample>& dataset, Real threshold = 0.5);

}  // namespace vseg
