#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "json.hpp"
#include "lesact/nn/adam.hpp"
#include "lesact/nn/network.hpp"
#include "lesact/volume.hpp"

namespace lesact {

struct TrainConfig {
  Shape3 crop_size{128, 128, 128};
  double flip_prob = 0.5;  // per axis
  int batch_size = 1;
  int epochs = 300;
  double lr_initial = 1e-4;
  double lr_decay = 0.985;  // per epoch
  double dice_epsilon = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  double learning_rate(int epoch) const { return lr_initial * std::pow(lr_decay, epoch); }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Soft dice loss 1 - (2 sum(p g) + eps) / (sum p + sum g + eps) over all
/// voxels of all samples. When `grad` is non-null it receives dLoss/dp per
/// sample.
template <typename Scalar>
double dice_loss(const std::vector<nn::FeatureMap<Scalar>>& pred, const std::vector<nn::FeatureMap<Scalar>>& target,
                 double epsilon, std::vector<nn::FeatureMap<Scalar>>* grad = nullptr);

template <typename Scalar>
double dice_loss(const nn::FeatureMap<Scalar>& pred, const nn::FeatureMap<Scalar>& target, double epsilon,
                 nn::FeatureMap<Scalar>* grad = nullptr);

/// A crop window in the (symmetrically zero-padded) volume plus flips.
struct CropWindow {
  std::array<Index, 3> corner{0, 0, 0};  // in padded coordinates
  std::array<Index, 3> pad{0, 0, 0};     // zero padding before the volume per axis
  std::array<bool, 3> flip{false, false, false};
  Shape3 size;
};

/// Uniform corner over all valid positions, independent flips with `flip_prob`.
CropWindow draw_crop(const Shape3& volume, const Shape3& crop, double flip_prob, std::mt19937_64& rng);

/// Extract `w` from `v`: crop voxel c maps to source voxel
/// corner + (flip ? size - 1 - c : c) - pad, zero outside the volume.
Volume apply_crop(const Volume& v, const CropWindow& w);

struct CropSample {
  Volume baseline;
  Volume followup;
  Volume truth;
  CropWindow window;
};

/// One random training crop with the identical window and flips applied to
/// baseline, follow-up and truth.
CropSample sample_training_crop(const ScanPair& pair, const Volume& truth, const TrainConfig& cfg, std::mt19937_64& rng);

/// A preprocessed training case. Per-scan models additionally need the full
/// lesion masks of both time points in `pair`.
struct TrainingCase {
  ScanPair pair;
  Volume truth;  // activity (fused) mask
};

struct StepRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;

  /// CSV with columns epoch,step,loss,lr.
  void write_csv(const std::filesystem::path& path) const;
};

/// Batch-1 (configurable) Adam training loop with per-epoch exponential
/// learning-rate decay. Sample order and crops are drawn from an RNG seeded
/// per epoch, so a resumed run reproduces the remaining epochs.
template <typename Scalar>
class Trainer {
 public:
  using EpochHook = std::function<void(int completed_epochs, const Trainer&)>;

  Trainer(nn::Network<Scalar>& net, TrainConfig cfg);

  /// Continue from `completed_epochs` with restored optimizer moments.
  void resume(int completed_epochs, nn::AdamState<Scalar> state);

  /// Train until cfg.epochs epochs are complete. The hook runs after every epoch.
  TrainingLog run(const std::vector<TrainingCase>& data, const EpochHook& on_epoch_end = {});

  /// One optimization step on explicit samples; returns the batch loss.
  /// Throws TrainingError when the loss is not finite.
  double step(const std::vector<nn::FeatureMap<Scalar>>& inputs, const std::vector<nn::FeatureMap<Scalar>>& targets,
              double lr);

  /// Training samples (input tensor, target) for one case: per-scan models
  /// yield one sample per time point, all others one per case.
  std::vector<std::pair<nn::FeatureMap<Scalar>, nn::FeatureMap<Scalar>>> make_samples(const TrainingCase& c,
                                                                                      std::mt19937_64& rng) const;

  int completed_epochs() const { return epoch_; }
  std::int64_t steps_taken() const { return steps_; }
  const TrainConfig& config() const { return cfg_; }
  const nn::Network<Scalar>& network() const { return net_; }
  const nn::AdamState<Scalar>& optimizer_state() const { return adam_.state(); }

 private:
  nn::Network<Scalar>& net_;
  TrainConfig cfg_;
  nn::Adam<Scalar> adam_;
  int epoch_ = 0;
  std::int64_t steps_ = 0;
  std::vector<double> recent_losses_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace lesact
