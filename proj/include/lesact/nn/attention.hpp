#pragma once

#include <optional>
#include <string_view>
#include <utility>

#include "lesact/nn/layers.hpp"

namespace lesact::nn {

/// How the two encoder paths exchange information.
///  A: each path's gate is computed from the other path only.
///  B: each gate is computed from both paths, with separate weights.
///  C: one gate computed from both paths with shared weights, applied to both.
enum class AttentionMethod { none, A, B, C };

std::string_view to_string(AttentionMethod m);
AttentionMethod attention_method_from_string(std::string_view s);

/// Residual attention-guided interaction between two same-shaped feature maps.
/// Outputs are (a_bl * F_bl + F_bl, a_fu * F_fu + F_fu) with full per-channel,
/// per-voxel gates a = sigmoid(conv1x1(...)).
template <typename Scalar>
class AttentionBlock {
 public:
  struct Trace {
    FeatureMap<Scalar> f_bl, f_fu;
    FeatureMap<Scalar> a_bl, a_fu;
  };

  struct Maps {
    FeatureMap<Scalar> a_bl, a_fu;
  };

  AttentionBlock() = default;
  AttentionBlock(const std::string& name, AttentionMethod method, Index channels);

  std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> forward(const FeatureMap<Scalar>& f_bl,
                                                            const FeatureMap<Scalar>& f_fu,
                                                            Trace* trace = nullptr) const;
  std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> backward(const Trace& trace, const FeatureMap<Scalar>& grad_bl,
                                                             const FeatureMap<Scalar>& grad_fu);

  /// The gates alone, for inspection.
  Maps maps(const FeatureMap<Scalar>& f_bl, const FeatureMap<Scalar>& f_fu) const;

  void init_he(std::mt19937_64& rng);
  AttentionMethod method() const { return method_; }
  Index channels() const { return channels_; }
  Index parameter_count() const;

  template <typename F>
  void visit(F&& f) {
    theta_bl.visit(f);
    if (theta_fu) theta_fu->visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    theta_bl.visit(f);
    if (theta_fu) theta_fu->visit(f);
  }

  Conv3d<Scalar> theta_bl;
  std::optional<Conv3d<Scalar>> theta_fu;  // absent under method C (shared with theta_bl)

 private:
  void check(const FeatureMap<Scalar>& f_bl, const FeatureMap<Scalar>& f_fu) const;

  AttentionMethod method_ = AttentionMethod::none;
  Index channels_ = 0;
};

}  // namespace lesact::nn
