#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesact/nn/attention.hpp"
#include "lesact/nn/layers.hpp"

namespace lesact::nn {

enum class PathMode { single, two };
enum class InputFusion { none, diff, add, stack };
enum class FeatureFusion { diff, add, stack };

inline constexpr int kScales = 4;

/// Declarative architecture description.
///
/// Scales are numbered 1..4 (s1 full resolution, s4 = 1/8). Attention may be
/// placed at s2, s3 and/or s4 of a two-path model; under a 128^3 input those
/// are the 64^3, 32^3 and 16^3 locations.
struct NetworkConfig {
  PathMode paths = PathMode::two;
  InputFusion input_fusion = InputFusion::none;      // single path only
  FeatureFusion feature_fusion = FeatureFusion::add;  // two path only
  AttentionMethod attention = AttentionMethod::none;
  std::vector<int> attention_scales;  // subset of {2, 3, 4}
  int base_channels = 32;
  std::array<int, kScales> blocks_per_scale{1, 2, 2, 4};
  Shape3 input_size{128, 128, 128};

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  /// Channels of the network input tensor: 2 for SP Stack and for two-path
  /// models (baseline, follow-up), 1 otherwise.
  Index input_channels() const;

  /// Single path without input fusion: a per-scan (single time point) model.
  bool is_single_scan() const { return paths == PathMode::single && input_fusion == InputFusion::none; }

  Index channels_at(int scale) const { return Index{base_channels} << (scale - 1); }
  bool has_attention_at(int scale) const;

  /// Short human-readable name, e.g. "TP Stack C s4" or "SP Diff".
  std::string label() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// Parse a location name: "s2".."s4", "64^3"/"32^3"/"16^3" (canonical 128^3
/// aliases) or a bare scale number. "all" expands to {2,3,4}.
std::vector<int> parse_attention_scales(const nlohmann::json& j);

/// Network input tensor for one sample from baseline / follow-up intensities
/// on `shape`: [BL; FU] for two-path and SP Stack models, FU - BL for SP Diff,
/// FU + BL for SP Add. Per-scan models read only `fu`.
template <typename Scalar>
FeatureMap<Scalar> assemble_input(const NetworkConfig& cfg, const Eigen::ArrayXf& bl, const Eigen::ArrayXf& fu,
                                  Shape3 shape) {
  if (fu.size() != shape.voxels() || (!cfg.is_single_scan() && bl.size() != shape.voxels()))
    throw InvalidArgument("assemble_input: sample size does not match shape");
  FeatureMap<Scalar> out(cfg.input_channels(), shape);
  auto fu_row = fu.matrix().transpose().template cast<Scalar>();
  if (cfg.is_single_scan()) {
    out.values.row(0) = fu_row;
    return out;
  }
  auto bl_row = bl.matrix().transpose().template cast<Scalar>();
  if (cfg.paths == PathMode::two || cfg.input_fusion == InputFusion::stack) {
    out.values.row(0) = bl_row;
    out.values.row(1) = fu_row;
  } else if (cfg.input_fusion == InputFusion::diff) {
    out.values.row(0) = fu_row - bl_row;
  } else {
    out.values.row(0) = fu_row + bl_row;
  }
  return out;
}

template <typename Scalar>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& prefix, Index in_channels, const NetworkConfig& cfg);

  Conv3d<Scalar> stem;
  std::array<std::vector<ResidualBlock<Scalar>>, kScales> stages;
  std::array<PreActConv<Scalar>, kScales - 1> downs;

  template <typename F>
  void visit(F&& f) {
    stem.visit(f);
    for (int s = 0; s < kScales; ++s) {
      for (auto& b : stages[s]) b.visit(f);
      if (s < kScales - 1) downs[s].visit(f);
    }
  }
  template <typename F>
  void visit(F&& f) const {
    stem.visit(f);
    for (int s = 0; s < kScales; ++s) {
      for (const auto& b : stages[s]) b.visit(f);
      if (s < kScales - 1) downs[s].visit(f);
    }
  }
  void init_he(std::mt19937_64& rng);
};

/// Encoder-decoder segmentation network (single-path or two-path).
///
/// Input: one sample as a FeatureMap with input_channels() channels; for
/// two-path models channel 0 is the baseline and channel 1 the follow-up.
/// Output: one-channel per-voxel probabilities of the same spatial size.
template <typename Scalar>
class Network {
 public:
  struct PathTrace {
    FeatureMap<Scalar> input;
    std::array<std::vector<typename ResidualBlock<Scalar>::Trace>, kScales> blocks;
    std::array<typename PreActConv<Scalar>::Trace, kScales - 1> downs;
  };

  /// Activations retained for backpropagation.
  struct Trace {
    std::vector<PathTrace> paths;
    std::array<std::optional<typename AttentionBlock<Scalar>::Trace>, kScales> attention;
    std::array<FeatureMap<Scalar>, kScales - 1> skip_inputs;  // two-path: cat(F_bl, F_fu) before projection
    typename PreActConv<Scalar>::Trace bottleneck;            // input: fused s4 features
    std::array<typename PreActConv<Scalar>::Trace, kScales - 1> decoder_convs;
    std::array<typename ResidualBlock<Scalar>::Trace, kScales - 1> decoder_blocks;
    typename PreActConv<Scalar>::Trace head;
    FeatureMap<Scalar> logits;
    FeatureMap<Scalar> output;
  };

  explicit Network(NetworkConfig cfg, std::uint64_t seed = 0);

  const NetworkConfig& config() const { return cfg_; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& input, Trace* trace = nullptr) const;

  /// Batched forward: every sample independently (instance statistics are per sample).
  std::vector<FeatureMap<Scalar>> forward(const std::vector<FeatureMap<Scalar>>& batch) const;

  /// Two-path convenience: stacks baseline and follow-up into the input tensor.
  FeatureMap<Scalar> forward_two_path(const FeatureMap<Scalar>& v_bl, const FeatureMap<Scalar>& v_fu) const;

  /// Backpropagate dLoss/dProbability through a traced forward pass.
  /// Parameter gradients accumulate.
  void backward(const Trace& trace, const FeatureMap<Scalar>& grad_probability);

  /// One encoder path run in isolation up to the bottleneck (s4). Only
  /// meaningful without attention, since attention couples the paths.
  FeatureMap<Scalar> encode_path(int path, const FeatureMap<Scalar>& input) const;

  /// Bottleneck fusion of the two paths' s4 features.
  FeatureMap<Scalar> fuse(const FeatureMap<Scalar>& f_bl, const FeatureMap<Scalar>& f_fu) const;

  void zero_grad();
  Index parameter_count() const;
  /// Parameters of the attention block at `scale` (0 when none).
  Index attention_parameter_count(int scale) const;
  const std::optional<AttentionBlock<Scalar>>& attention_block(int scale) const { return attention_[scale - 1]; }

  const Encoder<Scalar>& encoder(int path) const { return encoders_.at(static_cast<std::size_t>(path)); }
  Encoder<Scalar>& encoder(int path) { return encoders_.at(static_cast<std::size_t>(path)); }

  /// Deterministic traversal of every parameter (checkpoint order).
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Parameter<Scalar>*> parameters();

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (auto& e : self.encoders_) e.visit(f);
    for (auto& a : self.attention_)
      if (a) a->visit(f);
    for (auto& p : self.skip_projections_) p.visit(f);
    self.bottleneck_.visit(f);
    for (int s = kScales - 2; s >= 0; --s) {
      self.decoder_convs_[s].visit(f);
      self.decoder_blocks_[s].visit(f);
    }
    self.head_.visit(f);
  }

  void check_input(const FeatureMap<Scalar>& input) const;

  NetworkConfig cfg_;
  std::vector<Encoder<Scalar>> encoders_;
  std::array<std::optional<AttentionBlock<Scalar>>, kScales> attention_;
  std::vector<Conv3d<Scalar>> skip_projections_;  // two-path: 2C_s -> C_s, 1x1x1
  PreActConv<Scalar> bottleneck_;
  std::array<PreActConv<Scalar>, kScales - 1> decoder_convs_;  // scale s+1 -> s width
  std::array<ResidualBlock<Scalar>, kScales - 1> decoder_blocks_;
  PreActConv<Scalar> head_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class Network<float>;
extern template class Network<double>;

}  // namespace lesact::nn
