#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tapid/encoding.hpp"
#include "tapid/network.hpp"

namespace tapid {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  std::size_t batch_size = 32;
  /// Non-improving epochs tolerated; training stops on the next one.
  int patience = 5;
  std::uint64_t seed = 0;
  int runs = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  NetworkSpec spec;
  std::vector<NamedTensor<float>> weights;
  std::vector<EpochRecord> training_log;
  int best_epoch = 0;
  /// How images fed to this network were encoded.
  RescaleMode rescale = RescaleMode::global;
  /// class label -> user id.
  std::vector<std::string> class_users;

  Network<float> network() const { return Network<float>(spec, weights); }

  bool operator==(const Checkpoint&) const = default;
};

struct LabeledImages {
  std::vector<SignalImage> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

/// Fresh checkpoint with initialized weights.
Checkpoint build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Pixels / 255 into a [B, 1, 25, 150] tensor.
Tensor<float> to_tensor(std::span<const SignalImage> images);
Tensor<float> to_tensor(std::span<const SignalImage* const> images);

/// Multi-class training with Adam and early stopping on validation accuracy.
/// Returns the weights of the best validation epoch.
Checkpoint train_multiclass(const NetworkSpec& spec, const TrainConfig& config,
                            const LabeledImages& train_set, const LabeledImages& val_set,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

struct MultiRunResult {
  std::vector<Checkpoint> runs;
  std::size_t best_run = 0;
  double mean_train_acc = 0.0;
  double mean_val_acc = 0.0;
};

/// config.runs independent runs (seeds derived from config.seed); metrics
/// are averaged and the run with the best validation accuracy is flagged.
MultiRunResult train_runs(const NetworkSpec& spec, const TrainConfig& config,
                          const LabeledImages& train_set, const LabeledImages& val_set,
                          const std::function<void(int, const EpochRecord&)>& on_epoch = {});

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const Network<float>& net, const LabeledImages& data,
                    std::size_t batch_size = 64);

/// Post-ReLU output of the last hidden fc layer, inference mode.
std::vector<float> extract_embedding(const Network<float>& net, const SignalImage& image);
std::vector<std::vector<float>> extract_embeddings(const Network<float>& net,
                                                   std::span<const SignalImage> images,
                                                   std::size_t batch_size = 64);

}  // namespace tapid
