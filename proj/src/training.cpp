#include "tapid/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tapid/adam.hpp"
#include "tapid/random.hpp"

namespace tapid {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidInput("train: learning rate must be positive");
  if (epochs < 1) throw InvalidInput("train: epochs must be >= 1");
  if (batch_size == 0) throw InvalidInput("train: batch size must be positive");
  if (patience < 0) throw InvalidInput("train: patience must be >= 0");
  if (runs < 1) throw InvalidInput("train: runs must be >= 1");
}

Checkpoint build_network(const NetworkSpec& spec, std::uint64_t seed) {
  auto net = Network<float>::initialized(spec, seed);
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.weights = net.weights();
  return ckpt;
}

Tensor<float> to_tensor(std::span<const SignalImage* const> images) {
  Tensor<float> t({images.size(), 1, kImageRows, kImageCols});
  constexpr float inv = 1.0f / 255.0f;
  float* dst = t.ptr();
  for (const auto* img : images) {
    for (auto px : img->pixels) *dst++ = static_cast<float>(px) * inv;
  }
  return t;
}

Tensor<float> to_tensor(std::span<const SignalImage> images) {
  std::vector<const SignalImage*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return to_tensor(std::span<const SignalImage* const>(ptrs));
}

namespace {

void check_set(const LabeledImages& set, const NetworkSpec& spec, const char* what) {
  if (set.images.size() != set.labels.size()) {
    throw InvalidInput(std::string(what) + ": images/labels count mismatch");
  }
  for (int l : set.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= spec.num_classes) {
      throw InvalidInput(std::string(what) + ": label out of range");
    }
  }
}

std::size_t count_correct(const Tensor<float>& probs, std::span<const int> labels) {
  const std::size_t C = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const float* p = probs.ptr() + b * C;
    const auto pred = static_cast<int>(std::max_element(p, p + C) - p);
    correct += pred == labels[b];
  }
  return correct;
}

}  // namespace

Evaluation evaluate(const Network<float>& net, const LabeledImages& data, std::size_t batch_size) {
  Evaluation ev;
  if (data.size() == 0) {
    ev.loss = ev.accuracy = std::numeric_limits<double>::quiet_NaN();
    return ev;
  }
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    const auto batch = to_tensor(std::span(data.images).subspan(start, n));
    const auto labels = std::span(data.labels).subspan(start, n);
    const auto cache = net.forward(batch, false);
    loss += cross_entropy(cache.probabilities, labels) * static_cast<double>(n);
    correct += count_correct(cache.probabilities, labels);
  }
  ev.loss = loss / static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return ev;
}

Checkpoint train_multiclass(const NetworkSpec& spec, const TrainConfig& config,
                            const LabeledImages& train_set, const LabeledImages& val_set,
                            const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  spec.validate();
  if (train_set.size() == 0) throw InvalidInput("train_multiclass: empty training set");
  check_set(train_set, spec, "training set");
  check_set(val_set, spec, "validation set");

  auto net = Network<float>::initialized(spec, derive_seed(config.seed, {0}));
  AdamOptimizer<float> optimizer(net.weights(), config.learning_rate);

  Checkpoint best;
  best.spec = spec;
  best.weights = net.weights();
  double best_val = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  std::vector<const SignalImage*> batch_images;
  std::vector<int> batch_labels;
  std::vector<EpochRecord> log;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, {1, static_cast<std::uint64_t>(epoch)}));
    shuffle_in_place(std::span<std::size_t>(order), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::uint64_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch_images.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < start + n; ++i) {
        batch_images.push_back(&train_set.images[order[i]]);
        batch_labels.push_back(train_set.labels[order[i]]);
      }
      const auto batch = to_tensor(std::span<const SignalImage* const>(batch_images));
      const auto cache = net.forward(
          batch, true, derive_seed(config.seed, {2, static_cast<std::uint64_t>(epoch), batch_index}));
      const auto grads = net.backward(cache, batch_labels);
      optimizer.step(net.mutable_weights(), grads.gradients);
      loss_sum += grads.loss * static_cast<double>(n);
      correct += count_correct(cache.probabilities, batch_labels);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    const auto val = evaluate(net, val_set);
    rec.val_loss = val.loss;
    rec.val_acc = val.accuracy;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    // Without a validation set every epoch counts as an improvement.
    const bool improved = val_set.size() == 0 || rec.val_acc > best_val;
    if (improved) {
      best_val = val_set.size() == 0 ? best_val : rec.val_acc;
      best.weights = net.weights();
      best.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }
  best.training_log = std::move(log);
  return best;
}

MultiRunResult train_runs(const NetworkSpec& spec, const TrainConfig& config,
                          const LabeledImages& train_set, const LabeledImages& val_set,
                          const std::function<void(int, const EpochRecord&)>& on_epoch) {
  config.validate();
  MultiRunResult result;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.runs; ++r) {
    TrainConfig run_cfg = config;
    run_cfg.seed = config.runs == 1 ? config.seed
                                    : derive_seed(config.seed, {100, static_cast<std::uint64_t>(r)});
    std::function<void(const EpochRecord&)> cb;
    if (on_epoch) cb = [&](const EpochRecord& rec) { on_epoch(r, rec); };
    auto ckpt = train_multiclass(spec, run_cfg, train_set, val_set, cb);
    const auto& best_rec = ckpt.training_log.at(static_cast<std::size_t>(ckpt.best_epoch - 1));
    result.mean_train_acc += best_rec.train_acc;
    result.mean_val_acc += best_rec.val_acc;
    if (best_rec.val_acc > best_val) {
      best_val = best_rec.val_acc;
      result.best_run = static_cast<std::size_t>(r);
    }
    result.runs.push_back(std::move(ckpt));
  }
  result.mean_train_acc /= config.runs;
  result.mean_val_acc /= config.runs;
  return result;
}

std::vector<std::vector<float>> extract_embeddings(const Network<float>& net,
                                                   std::span<const SignalImage> images,
                                                   std::size_t batch_size) {
  std::vector<std::vector<float>> out;
  out.reserve(images.size());
  const std::size_t E = net.spec().embedding_width;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    const auto emb = net.embed(to_tensor(images.subspan(start, n)));
    for (std::size_t b = 0; b < n; ++b) {
      out.emplace_back(emb.data.begin() + static_cast<std::ptrdiff_t>(b * E),
                       emb.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * E));
    }
  }
  return out;
}

std::vector<float> extract_embedding(const Network<float>& net, const SignalImage& image) {
  return extract_embeddings(net, std::span(&image, 1)).front();
}

}  // namespace tapid
