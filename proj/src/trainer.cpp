#include "lesact/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "lesact/errors.hpp"

namespace lesact {

using nlohmann::json;
using nn::FeatureMap;

void TrainConfig::validate() const {
  if (crop_size.x < 8 || crop_size.y < 8 || crop_size.z < 8 || !crop_size.divisible_by(8))
    throw ConfigError("train.crop_size must be positive and divisible by 8 on every axis");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("train.flip_prob must lie in [0,1]");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(lr_initial >= 0.0)) throw ConfigError("train.lr_initial must be >= 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("train.lr_decay must lie in (0,1]");
  if (!(dice_epsilon >= 0.0)) throw ConfigError("train.dice_epsilon must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"crop_size", {c.crop_size.x, c.crop_size.y, c.crop_size.z}},
           {"flip_prob", c.flip_prob},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"lr_initial", c.lr_initial},
           {"lr_decay", c.lr_decay},
           {"dice_epsilon", c.dice_epsilon},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  try {
    if (j.contains("crop_size")) {
      const auto& v = j.at("crop_size");
      if (v.is_number_integer()) {
        const auto n = v.get<Index>();
        c.crop_size = {n, n, n};
      } else {
        const auto a = v.get<std::vector<Index>>();
        if (a.size() != 3) throw ConfigError("train.crop_size must be an integer or a list of 3 integers");
        c.crop_size = {a[0], a[1], a[2]};
      }
    }
    c.flip_prob = j.value("flip_prob", c.flip_prob);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.dice_epsilon = j.value("dice_epsilon", c.dice_epsilon);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

// ---- loss --------------------------------------------------------------------

template <typename Scalar>
double dice_loss(const std::vector<FeatureMap<Scalar>>& pred, const std::vector<FeatureMap<Scalar>>& target,
                 double epsilon, std::vector<FeatureMap<Scalar>>* grad) {
  if (pred.size() != target.size() || pred.empty())
    throw InvalidArgument("dice_loss: prediction and target batches must be non-empty and of equal size");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].same_layout(target[i])) throw InvalidArgument("dice_loss: prediction and target shapes differ");
    const auto p = pred[i].values.array().template cast<double>();
    const auto g = target[i].values.array().template cast<double>();
    inter += (p * g).sum();
    psum += p.sum();
    gsum += g.sum();
  }
  const double num = 2.0 * inter + epsilon;
  const double den = psum + gsum + epsilon;
  if (den == 0.0) throw InvalidArgument("dice_loss: empty prediction and target with epsilon 0");
  if (grad) {
    // d/dp [1 - num/den] = -(2 g den - num) / den^2
    grad->clear();
    const double inv = 1.0 / (den * den);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      FeatureMap<Scalar> gmap(pred[i].channels(), pred[i].shape);
      gmap.values = ((num - 2.0 * den * target[i].values.array().template cast<double>()) * inv)
                        .matrix()
                        .template cast<Scalar>();
      grad->push_back(std::move(gmap));
    }
  }
  return 1.0 - num / den;
}

template <typename Scalar>
double dice_loss(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& target, double epsilon,
                 FeatureMap<Scalar>* grad) {
  std::vector<FeatureMap<Scalar>> g;
  const double loss = dice_loss<Scalar>({pred}, {target}, epsilon, grad ? &g : nullptr);
  if (grad) *grad = std::move(g.front());
  return loss;
}

template double dice_loss<float>(const std::vector<FeatureMap<float>>&, const std::vector<FeatureMap<float>>&, double,
                                 std::vector<FeatureMap<float>>*);
template double dice_loss<double>(const std::vector<FeatureMap<double>>&, const std::vector<FeatureMap<double>>&,
                                  double, std::vector<FeatureMap<double>>*);
template double dice_loss<float>(const FeatureMap<float>&, const FeatureMap<float>&, double, FeatureMap<float>*);
template double dice_loss<double>(const FeatureMap<double>&, const FeatureMap<double>&, double, FeatureMap<double>*);

// ---- crops -------------------------------------------------------------------

CropWindow draw_crop(const Shape3& volume, const Shape3& crop, double flip_prob, std::mt19937_64& rng) {
  CropWindow w;
  w.size = crop;
  std::bernoulli_distribution flip(flip_prob);
  for (int a = 0; a < 3; ++a) {
    const Index padded = std::max(volume[a], crop[a]);
    w.pad[a] = (padded - volume[a]) / 2;
    std::uniform_int_distribution<Index> corner(0, padded - crop[a]);
    w.corner[a] = corner(rng);
  }
  for (int a = 0; a < 3; ++a) w.flip[a] = flip_prob > 0.0 && flip(rng);
  return w;
}

Volume apply_crop(const Volume& v, const CropWindow& w) {
  const Shape3& s = v.shape();
  const Shape3& c = w.size;
  Volume::Data out = Volume::Data::Zero(c.voxels());
  for (Index k = 0; k < c.z; ++k) {
    const Index sz = w.corner[2] + (w.flip[2] ? c.z - 1 - k : k) - w.pad[2];
    if (sz < 0 || sz >= s.z) continue;
    for (Index j = 0; j < c.y; ++j) {
      const Index sy = w.corner[1] + (w.flip[1] ? c.y - 1 - j : j) - w.pad[1];
      if (sy < 0 || sy >= s.y) continue;
      for (Index i = 0; i < c.x; ++i) {
        const Index sx = w.corner[0] + (w.flip[0] ? c.x - 1 - i : i) - w.pad[0];
        if (sx < 0 || sx >= s.x) continue;
        out[c.linear(i, j, k)] = v(sx, sy, sz);
      }
    }
  }
  Eigen::Vector3d origin = v.origin();
  for (int a = 0; a < 3; ++a) origin[a] += static_cast<double>(w.corner[a] - w.pad[a]) * v.spacing()[a];
  return Volume(c, v.spacing(), origin, v.kind(), std::move(out));
}

CropSample sample_training_crop(const ScanPair& pair, const Volume& truth, const TrainConfig& cfg,
                                std::mt19937_64& rng) {
  if (!pair.baseline.same_grid(pair.followup) || !pair.baseline.same_grid(truth))
    throw InvalidArgument("sample_training_crop: baseline, follow-up and truth must share one grid");
  const CropWindow w = draw_crop(pair.baseline.shape(), cfg.crop_size, cfg.flip_prob, rng);
  return {apply_crop(pair.baseline, w), apply_crop(pair.followup, w), apply_crop(truth, w), w};
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write training log '" + path.string() + "'");
  out << "epoch,step,loss,lr\n" << std::setprecision(9);
  for (const auto& s : steps) out << s.epoch << ',' << s.step << ',' << s.loss << ',' << s.lr << '\n';
}

// ---- trainer -----------------------------------------------------------------

template <typename Scalar>
Trainer<Scalar>::Trainer(nn::Network<Scalar>& net, TrainConfig cfg)
    : net_(net), cfg_(std::move(cfg)), adam_(net.parameters()) {
  cfg_.validate();
}

template <typename Scalar>
void Trainer<Scalar>::resume(int completed_epochs, nn::AdamState<Scalar> state) {
  if (completed_epochs < 0) throw InvalidArgument("resume: negative epoch");
  adam_.set_state(std::move(state));
  epoch_ = completed_epochs;
  steps_ = adam_.state().step;
}

template <typename Scalar>
std::vector<std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>>> Trainer<Scalar>::make_samples(
    const TrainingCase& c, std::mt19937_64& rng) const {
  const auto& net_cfg = net_.config();
  auto target = [](const Volume& v) {
    return nn::FeatureMap<Scalar>(v.data().matrix().transpose().template cast<Scalar>(), v.shape());
  };
  std::vector<std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>>> out;
  if (net_cfg.is_single_scan()) {
    if (!c.pair.baseline_lesions || !c.pair.followup_lesions)
      throw InvalidArgument("per-scan training needs full lesion masks for both time points");
    const std::pair<const Volume*, const Volume*> scans[2] = {{&c.pair.baseline, &*c.pair.baseline_lesions},
                                                              {&c.pair.followup, &*c.pair.followup_lesions}};
    for (const auto& [scan, mask] : scans) {
      const CropWindow w = draw_crop(scan->shape(), cfg_.crop_size, cfg_.flip_prob, rng);
      const Volume img = apply_crop(*scan, w);
      out.emplace_back(nn::assemble_input<Scalar>(net_cfg, img.data(), img.data(), img.shape()),
                       target(apply_crop(*mask, w)));
    }
    return out;
  }
  const CropSample s = sample_training_crop(c.pair, c.truth, cfg_, rng);
  out.emplace_back(nn::assemble_input<Scalar>(net_cfg, s.baseline.data(), s.followup.data(), s.truth.shape()),
                   target(s.truth));
  return out;
}

template <typename Scalar>
double Trainer<Scalar>::step(const std::vector<FeatureMap<Scalar>>& inputs,
                             const std::vector<FeatureMap<Scalar>>& targets, double lr) {
  net_.zero_grad();
  std::vector<typename nn::Network<Scalar>::Trace> traces(inputs.size());
  std::vector<FeatureMap<Scalar>> preds;
  for (std::size_t i = 0; i < inputs.size(); ++i) preds.push_back(net_.forward(inputs[i], &traces[i]));
  std::vector<FeatureMap<Scalar>> grads;
  const double loss = dice_loss(preds, targets, cfg_.dice_epsilon, &grads);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite loss " << loss << " at step " << steps_ << " (epoch " << epoch_ << ", lr " << lr
        << "); recent losses:";
    for (double l : recent_losses_) msg << ' ' << l;
    throw TrainingError(msg.str());
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) net_.backward(traces[i], grads[i]);
  adam_.step(lr);
  ++steps_;
  recent_losses_.push_back(loss);
  if (recent_losses_.size() > 10) recent_losses_.erase(recent_losses_.begin());
  return loss;
}

template <typename Scalar>
TrainingLog Trainer<Scalar>::run(const std::vector<TrainingCase>& data, const EpochHook& on_epoch_end) {
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  for (const auto& c : data) {
    c.pair.validate();
    if (!c.truth.same_grid(c.pair.baseline)) throw InvalidArgument("train: truth grid differs from the scans");
  }
  TrainingLog log;
  for (; epoch_ < cfg_.epochs;) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(epoch_)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<FeatureMap<Scalar>> inputs, targets;
    const double lr = cfg_.learning_rate(epoch_);
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    auto flush = [&] {
      if (inputs.empty()) return;
      const double loss = step(inputs, targets, lr);
      log.steps.push_back({epoch_, steps_ - 1, loss, lr});
      epoch_loss += loss;
      ++epoch_steps;
      inputs.clear();
      targets.clear();
    };
    for (std::size_t idx : order) {
      for (auto& [in, tg] : make_samples(data[idx], rng)) {
        inputs.push_back(std::move(in));
        targets.push_back(std::move(tg));
        if (static_cast<int>(inputs.size()) == cfg_.batch_size) flush();
      }
    }
    flush();
    log.epoch_mean_loss.push_back(epoch_loss / std::max(epoch_steps, 1));
    ++epoch_;
    if (on_epoch_end) on_epoch_end(epoch_, *this);
  }
  return log;
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace lesact
