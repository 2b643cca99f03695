#include "lesact/nn/attention.hpp"

#include <string>

namespace lesact::nn {

std::string_view to_string(AttentionMethod m) {
  switch (m) {
    case AttentionMethod::none: return "none";
    case AttentionMethod::A: return "A";
    case AttentionMethod::B: return "B";
    case AttentionMethod::C: return "C";
  }
  return "none";
}

AttentionMethod attention_method_from_string(std::string_view s) {
  if (s == "none") return AttentionMethod::none;
  if (s == "A" || s == "a") return AttentionMethod::A;
  if (s == "B" || s == "b") return AttentionMethod::B;
  if (s == "C" || s == "c") return AttentionMethod::C;
  throw ConfigError("unknown attention method '" + std::string(s) + "' (expected none, A, B or C)");
}

template <typename Scalar>
AttentionBlock<Scalar>::AttentionBlock(const std::string& name, AttentionMethod method, Index channels)
    : method_(method), channels_(channels) {
  if (method == AttentionMethod::none) throw ConfigError("attention block requires method A, B or C");
  const Index in = method == AttentionMethod::A ? channels : 2 * channels;
  theta_bl = Conv3d<Scalar>(name + ".theta_bl", in, channels, 1);
  if (method != AttentionMethod::C) theta_fu = Conv3d<Scalar>(name + ".theta_fu", in, channels, 1);
}

template <typename Scalar>
void AttentionBlock<Scalar>::init_he(std::mt19937_64& rng) {
  theta_bl.init_he(rng);
  if (theta_fu) theta_fu->init_he(rng);
}

template <typename Scalar>
Index AttentionBlock<Scalar>::parameter_count() const {
  Index n = 0;
  visit([&](const Parameter<Scalar>& p) { n += p.size(); });
  return n;
}

template <typename Scalar>
void AttentionBlock<Scalar>::check(const FeatureMap<Scalar>& f_bl, const FeatureMap<Scalar>& f_fu) const {
  if (!f_bl.same_layout(f_fu)) throw InvalidArgument("attention: baseline and follow-up features differ in shape");
  if (f_bl.channels() != channels_)
    throw ConfigError("attention: block expects " + std::to_string(channels_) + " channels, features have " +
                      std::to_string(f_bl.channels()));
}

template <typename Scalar>
typename AttentionBlock<Scalar>::Maps AttentionBlock<Scalar>::maps(const FeatureMap<Scalar>& f_bl,
                                                                   const FeatureMap<Scalar>& f_fu) const {
  check(f_bl, f_fu);
  Maps m;
  if (method_ == AttentionMethod::A) {
    m.a_bl = theta_bl.forward(f_fu);
    m.a_fu = theta_fu->forward(f_bl);
    m.a_bl.values = sigmoid(m.a_bl.values);
    m.a_fu.values = sigmoid(m.a_fu.values);
    return m;
  }
  const FeatureMap<Scalar> joint = concat_channels(f_fu, f_bl);
  m.a_bl = theta_bl.forward(joint);
  m.a_bl.values = sigmoid(m.a_bl.values);
  if (method_ == AttentionMethod::C) {
    m.a_fu = m.a_bl;
  } else {
    m.a_fu = theta_fu->forward(joint);
    m.a_fu.values = sigmoid(m.a_fu.values);
  }
  return m;
}

template <typename Scalar>
std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> AttentionBlock<Scalar>::forward(const FeatureMap<Scalar>& f_bl,
                                                                                  const FeatureMap<Scalar>& f_fu,
                                                                                  Trace* trace) const {
  Maps m = maps(f_bl, f_fu);
  FeatureMap<Scalar> out_bl(f_bl.values.cwiseProduct(m.a_bl.values) + f_bl.values, f_bl.shape);
  FeatureMap<Scalar> out_fu(f_fu.values.cwiseProduct(m.a_fu.values) + f_fu.values, f_fu.shape);
  if (trace) {
    trace->f_bl = f_bl;
    trace->f_fu = f_fu;
    trace->a_bl = std::move(m.a_bl);
    trace->a_fu = std::move(m.a_fu);
  }
  return {std::move(out_bl), std::move(out_fu)};
}

template <typename Scalar>
std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> AttentionBlock<Scalar>::backward(const Trace& t,
                                                                                   const FeatureMap<Scalar>& grad_bl,
                                                                                   const FeatureMap<Scalar>& grad_fu) {
  // d out / d F = 1 + a ; d out / d a = F ; d a / d z = a (1 - a)
  auto gate_grad = [](const Matrix<Scalar>& grad, const Matrix<Scalar>& f, const Matrix<Scalar>& a) -> Matrix<Scalar> {
    return (grad.array() * f.array() * a.array() * (Scalar(1) - a.array())).matrix();
  };
  FeatureMap<Scalar> d_bl(grad_bl.values + grad_bl.values.cwiseProduct(t.a_bl.values), grad_bl.shape);
  FeatureMap<Scalar> d_fu(grad_fu.values + grad_fu.values.cwiseProduct(t.a_fu.values), grad_fu.shape);
  const FeatureMap<Scalar> dz_bl(gate_grad(grad_bl.values, t.f_bl.values, t.a_bl.values), grad_bl.shape);
  const FeatureMap<Scalar> dz_fu(gate_grad(grad_fu.values, t.f_fu.values, t.a_fu.values), grad_fu.shape);

  if (method_ == AttentionMethod::A) {
    d_fu.values += theta_bl.backward(t.f_fu, dz_bl).values;
    d_bl.values += theta_fu->backward(t.f_bl, dz_fu).values;
    return {std::move(d_bl), std::move(d_fu)};
  }
  const FeatureMap<Scalar> joint = concat_channels(t.f_fu, t.f_bl);
  FeatureMap<Scalar> d_joint;
  if (method_ == AttentionMethod::C) {
    // a_bl and a_fu are the same tensor, so their gate gradients add.
    d_joint = theta_bl.backward(joint, FeatureMap<Scalar>(dz_bl.values + dz_fu.values, dz_bl.shape));
  } else {
    d_joint = theta_bl.backward(joint, dz_bl);
    d_joint.values += theta_fu->backward(joint, dz_fu).values;
  }
  d_fu.values += d_joint.values.topRows(channels_);
  d_bl.values += d_joint.values.bottomRows(channels_);
  return {std::move(d_bl), std::move(d_fu)};
}

template class AttentionBlock<float>;
template class AttentionBlock<double>;

}  // namespace lesact::nn
