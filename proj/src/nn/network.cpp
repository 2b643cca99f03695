#include "lesact/nn/network.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

namespace lesact::nn {

using nlohmann::json;

namespace {

std::string_view path_name(PathMode p) { return p == PathMode::single ? "single" : "two"; }

std::string_view input_fusion_name(InputFusion f) {
  switch (f) {
    case InputFusion::none: return "none";
    case InputFusion::diff: return "diff";
    case InputFusion::add: return "add";
    case InputFusion::stack: return "stack";
  }
  return "none";
}

std::string_view feature_fusion_name(FeatureFusion f) {
  switch (f) {
    case FeatureFusion::diff: return "diff";
    case FeatureFusion::add: return "add";
    case FeatureFusion::stack: return "stack";
  }
  return "add";
}

std::string capitalized(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

int parse_scale(const std::string& s) {
  if (s == "s2" || s == "64^3" || s == "64" || s == "2") return 2;
  if (s == "s3" || s == "32^3" || s == "32" || s == "3") return 3;
  if (s == "s4" || s == "16^3" || s == "16" || s == "4") return 4;
  throw ConfigError("unknown attention location '" + s + "' (expected s2, s3, s4, 64^3, 32^3, 16^3 or all)");
}

}  // namespace

// ---- NetworkConfig -----------------------------------------------------------

void NetworkConfig::validate() const {
  if (input_fusion != InputFusion::none && paths != PathMode::single)
    throw ConfigError("network config: input_fusion requires paths = single");
  if (attention != AttentionMethod::none && paths != PathMode::two)
    throw ConfigError("network config: attention requires paths = two");
  if (attention == AttentionMethod::none && !attention_scales.empty())
    throw ConfigError("network config: attention_scales given but attention = none");
  if (attention != AttentionMethod::none && attention_scales.empty())
    throw ConfigError("network config: attention set but attention_scales is empty");
  for (int s : attention_scales)
    if (s < 2 || s > 4) throw ConfigError("network config: attention_scales entries must be s2, s3 or s4");
  if (std::set<int>(attention_scales.begin(), attention_scales.end()).size() != attention_scales.size())
    throw ConfigError("network config: attention_scales contains duplicates");
  if (base_channels < 1) throw ConfigError("network config: base_channels must be >= 1");
  for (int b : blocks_per_scale)
    if (b < 0) throw ConfigError("network config: blocks_per_scale entries must be >= 0");
  if (input_size.x < 8 || input_size.y < 8 || input_size.z < 8 || !input_size.divisible_by(8))
    throw ConfigError("network config: input_size must be divisible by 8");
}

Index NetworkConfig::input_channels() const {
  if (paths == PathMode::two) return 2;
  return input_fusion == InputFusion::stack ? 2 : 1;
}

bool NetworkConfig::has_attention_at(int scale) const {
  return std::find(attention_scales.begin(), attention_scales.end(), scale) != attention_scales.end();
}

std::string NetworkConfig::label() const {
  if (is_single_scan()) return "STP";
  std::ostringstream os;
  if (paths == PathMode::single) {
    os << "SP " << capitalized(input_fusion_name(input_fusion));
    return os.str();
  }
  os << "TP " << capitalized(feature_fusion_name(feature_fusion));
  if (attention != AttentionMethod::none) {
    os << ' ' << to_string(attention);
    std::vector<int> sorted = attention_scales;
    std::sort(sorted.begin(), sorted.end());
    if (sorted == std::vector<int>{2, 3, 4}) {
      os << " all";
    } else {
      for (int s : sorted) os << " s" << s;
    }
  }
  return os.str();
}

std::vector<int> parse_attention_scales(const json& j) {
  std::vector<int> out;
  if (j.is_null()) return out;
  if (j.is_string() && j.get<std::string>() == "all") return {2, 3, 4};
  if (!j.is_array()) throw ConfigError("network config: attention_scales must be a list or \"all\"");
  for (const auto& e : j) {
    if (e.is_number_integer()) {
      out.push_back(parse_scale(std::to_string(e.get<int>())));
    } else if (e.is_string()) {
      if (e.get<std::string>() == "all") return {2, 3, 4};
      out.push_back(parse_scale(e.get<std::string>()));
    } else {
      throw ConfigError("network config: attention_scales entries must be strings or integers");
    }
  }
  return out;
}

void to_json(json& j, const NetworkConfig& c) {
  std::vector<std::string> scales;
  for (int s : c.attention_scales) scales.push_back("s" + std::to_string(s));
  j = json{
      {"paths", path_name(c.paths)},
      {"input_fusion", input_fusion_name(c.input_fusion)},
      {"feature_fusion", feature_fusion_name(c.feature_fusion)},
      {"attention", to_string(c.attention)},
      {"attention_scales", scales},
      {"base_channels", c.base_channels},
      {"n_scales", kScales},
      {"blocks_per_scale", c.blocks_per_scale},
      {"input_size", {c.input_size.x, c.input_size.y, c.input_size.z}},
  };
}

void from_json(const json& j, NetworkConfig& c) {
  auto get_string = [&](const char* key, const char* fallback) {
    if (!j.contains(key)) return std::string(fallback);
    if (!j.at(key).is_string()) throw ConfigError(std::string("network config: '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  c = NetworkConfig{};
  const std::string paths = get_string("paths", "two");
  if (paths == "single") c.paths = PathMode::single;
  else if (paths == "two") c.paths = PathMode::two;
  else throw ConfigError("network config: paths must be 'single' or 'two'");

  const std::string in_f = get_string("input_fusion", "none");
  if (in_f == "none") c.input_fusion = InputFusion::none;
  else if (in_f == "diff") c.input_fusion = InputFusion::diff;
  else if (in_f == "add") c.input_fusion = InputFusion::add;
  else if (in_f == "stack") c.input_fusion = InputFusion::stack;
  else throw ConfigError("network config: input_fusion must be none, diff, add or stack");

  const std::string f_f = get_string("feature_fusion", "add");
  if (f_f == "diff") c.feature_fusion = FeatureFusion::diff;
  else if (f_f == "add") c.feature_fusion = FeatureFusion::add;
  else if (f_f == "stack") c.feature_fusion = FeatureFusion::stack;
  else throw ConfigError("network config: feature_fusion must be diff, add or stack");

  c.attention = attention_method_from_string(get_string("attention", "none"));
  if (j.contains("attention_scales")) c.attention_scales = parse_attention_scales(j.at("attention_scales"));
  try {
    if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<int>();
    if (j.contains("n_scales") && j.at("n_scales").get<int>() != kScales)
      throw ConfigError("network config: n_scales is fixed at 4");
    if (j.contains("blocks_per_scale")) c.blocks_per_scale = j.at("blocks_per_scale").get<std::array<int, kScales>>();
    if (j.contains("input_size")) {
      const auto v = j.at("input_size").get<std::vector<Index>>();
      if (v.size() != 3) throw ConfigError("network config: input_size must have 3 entries");
      c.input_size = {v[0], v[1], v[2]};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: malformed numeric field: ") + e.what());
  }
  c.validate();
}

// ---- Encoder -----------------------------------------------------------------

template <typename Scalar>
Encoder<Scalar>::Encoder(const std::string& prefix, Index in_channels, const NetworkConfig& cfg)
    : stem(prefix + ".stem", in_channels, cfg.channels_at(1), 3) {
  for (int s = 0; s < kScales; ++s) {
    const Index c = cfg.channels_at(s + 1);
    for (int b = 0; b < cfg.blocks_per_scale[s]; ++b)
      stages[s].emplace_back(prefix + ".s" + std::to_string(s + 1) + ".block" + std::to_string(b), c);
    if (s < kScales - 1) downs[s] = PreActConv<Scalar>(prefix + ".down" + std::to_string(s + 1), c, 2 * c, 3, 2);
  }
}

template <typename Scalar>
void Encoder<Scalar>::init_he(std::mt19937_64& rng) {
  stem.init_he(rng);
  for (int s = 0; s < kScales; ++s) {
    for (auto& b : stages[s]) b.init_he(rng);
    if (s < kScales - 1) downs[s].init_he(rng);
  }
}

// ---- Network -----------------------------------------------------------------

template <typename Scalar>
Network<Scalar>::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const bool two = cfg_.paths == PathMode::two;
  const Index path_in = two ? 1 : cfg_.input_channels();
  std::mt19937_64 rng(seed);
  if (two) {
    encoders_.emplace_back("enc_bl", path_in, cfg_);
    encoders_.emplace_back("enc_fu", path_in, cfg_);
  } else {
    encoders_.emplace_back("enc", path_in, cfg_);
  }
  for (auto& e : encoders_) e.init_he(rng);

  if (two) {
    for (int s = 1; s < kScales; ++s) {
      skip_projections_.emplace_back("skip.s" + std::to_string(s), 2 * cfg_.channels_at(s), cfg_.channels_at(s), 1);
      skip_projections_.back().init_he(rng);
    }
  }
  const Index deepest = cfg_.channels_at(kScales);
  const bool stacked = two && cfg_.feature_fusion == FeatureFusion::stack;
  bottleneck_ = PreActConv<Scalar>("decoder.s4.conv", stacked ? 2 * deepest : deepest, deepest, 3);
  bottleneck_.init_he(rng);
  for (int s = kScales - 2; s >= 0; --s) {
    const std::string name = "decoder.s" + std::to_string(s + 1);
    decoder_convs_[s] = PreActConv<Scalar>(name + ".conv", cfg_.channels_at(s + 2), cfg_.channels_at(s + 1), 3);
    decoder_convs_[s].init_he(rng);
    decoder_blocks_[s] = ResidualBlock<Scalar>(name + ".block", cfg_.channels_at(s + 1));
    decoder_blocks_[s].init_he(rng);
  }
  head_ = PreActConv<Scalar>("head", cfg_.channels_at(1), 1, 1);
  head_.init_he(rng);
  // Attention draws last so that otherwise identical models share all other weights.
  for (int s : cfg_.attention_scales) {
    attention_[s - 1].emplace("attention.s" + std::to_string(s), cfg_.attention, cfg_.channels_at(s));
    attention_[s - 1]->init_he(rng);
  }
}

template <typename Scalar>
void Network<Scalar>::check_input(const FeatureMap<Scalar>& input) const {
  if (input.channels() != cfg_.input_channels())
    throw InvalidArgument("network input has " + std::to_string(input.channels()) + " channels, model expects " +
                          std::to_string(cfg_.input_channels()));
  if (!input.shape.divisible_by(8)) throw InvalidArgument("network input spatial size must be divisible by 8");
}

template <typename Scalar>
FeatureMap<Scalar> Network<Scalar>::fuse(const FeatureMap<Scalar>& f_bl, const FeatureMap<Scalar>& f_fu) const {
  switch (cfg_.feature_fusion) {
    case FeatureFusion::diff: return FeatureMap<Scalar>(f_fu.values - f_bl.values, f_bl.shape);
    case FeatureFusion::add: return FeatureMap<Scalar>(f_fu.values + f_bl.values, f_bl.shape);
    case FeatureFusion::stack: return concat_channels(f_bl, f_fu);
  }
  return {};
}

template <typename Scalar>
FeatureMap<Scalar> Network<Scalar>::forward(const FeatureMap<Scalar>& input, Trace* trace) const {
  check_input(input);
  const bool two = cfg_.paths == PathMode::two;
  const std::size_t n_paths = encoders_.size();
  std::vector<FeatureMap<Scalar>> h(n_paths);
  if (trace) trace->paths.assign(n_paths, PathTrace{});
  for (std::size_t p = 0; p < n_paths; ++p) {
    FeatureMap<Scalar> in = two ? FeatureMap<Scalar>(input.values.row(static_cast<Index>(p)), input.shape) : input;
    h[p] = encoders_[p].stem.forward(in);
    if (trace) trace->paths[p].input = std::move(in);
  }

  std::array<FeatureMap<Scalar>, kScales - 1> skips;
  for (int s = 0; s < kScales; ++s) {
    for (std::size_t p = 0; p < n_paths; ++p) {
      const auto& blocks = encoders_[p].stages[s];
      if (trace) trace->paths[p].blocks[s].resize(blocks.size());
      for (std::size_t b = 0; b < blocks.size(); ++b)
        h[p] = blocks[b].forward(h[p], trace ? &trace->paths[p].blocks[s][b] : nullptr);
    }
    if (attention_[s]) {
      typename AttentionBlock<Scalar>::Trace* at = nullptr;
      if (trace) at = &trace->attention[s].emplace();
      auto [bl, fu] = attention_[s]->forward(h[0], h[1], at);
      h[0] = std::move(bl);
      h[1] = std::move(fu);
    }
    if (s == kScales - 1) break;
    if (two) {
      FeatureMap<Scalar> joint = concat_channels(h[0], h[1]);
      skips[s] = skip_projections_[s].forward(joint);
      if (trace) trace->skip_inputs[s] = std::move(joint);
    } else {
      skips[s] = h[0];
    }
    for (std::size_t p = 0; p < n_paths; ++p) {
      h[p] = encoders_[p].downs[s].forward(h[p], trace ? &trace->paths[p].downs[s] : nullptr);
    }
  }

  FeatureMap<Scalar> fused = two ? fuse(h[0], h[1]) : std::move(h[0]);
  FeatureMap<Scalar> d = bottleneck_.forward(fused, trace ? &trace->bottleneck : nullptr);
  for (int s = kScales - 2; s >= 0; --s) {
    FeatureMap<Scalar> up = upsample2(decoder_convs_[s].forward(d, trace ? &trace->decoder_convs[s] : nullptr));
    up.values += skips[s].values;
    d = decoder_blocks_[s].forward(up, trace ? &trace->decoder_blocks[s] : nullptr);
  }
  FeatureMap<Scalar> out = head_.forward(d, trace ? &trace->head : nullptr);
  if (trace) trace->logits = out;
  out.values = sigmoid(out.values);
  if (trace) trace->output = out;
  return out;
}

template <typename Scalar>
std::vector<FeatureMap<Scalar>> Network<Scalar>::forward(const std::vector<FeatureMap<Scalar>>& batch) const {
  std::vector<FeatureMap<Scalar>> out;
  out.reserve(batch.size());
  for (const auto& sample : batch) out.push_back(forward(sample));
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> Network<Scalar>::forward_two_path(const FeatureMap<Scalar>& v_bl,
                                                     const FeatureMap<Scalar>& v_fu) const {
  if (cfg_.paths != PathMode::two) throw ConfigError("forward_two_path requires a two-path model");
  if (!v_bl.same_layout(v_fu)) throw InvalidArgument("forward_two_path: baseline and follow-up shapes differ");
  if (v_bl.channels() != 1) throw InvalidArgument("forward_two_path: inputs must have a single channel");
  return forward(concat_channels(v_bl, v_fu));
}

template <typename Scalar>
void Network<Scalar>::backward(const Trace& t, const FeatureMap<Scalar>& grad_probability) {
  const bool two = cfg_.paths == PathMode::two;
  const std::size_t n_paths = encoders_.size();
  // sigmoid'(z) = sigmoid(z) sigmoid(-z); 1 - p would round to zero once p saturates.
  const auto& p = t.output.values;
  const Matrix<Scalar> q = sigmoid<Scalar>(-t.logits.values);
  FeatureMap<Scalar> g((grad_probability.values.array() * p.array() * q.array()).matrix(), grad_probability.shape);
  g = head_.backward(t.head, g);

  std::array<FeatureMap<Scalar>, kScales - 1> skip_grads;
  for (int s = 0; s < kScales - 1; ++s) {
    g = decoder_blocks_[s].backward(t.decoder_blocks[s], g);
    skip_grads[s] = g;
    g = decoder_convs_[s].backward(t.decoder_convs[s], upsample2_backward(g));
  }
  g = bottleneck_.backward(t.bottleneck, g);

  std::vector<FeatureMap<Scalar>> h(n_paths);
  if (!two) {
    h[0] = std::move(g);
  } else {
    switch (cfg_.feature_fusion) {
      case FeatureFusion::diff:
        h[0] = FeatureMap<Scalar>(-g.values, g.shape);
        h[1] = std::move(g);
        break;
      case FeatureFusion::add:
        h[0] = g;
        h[1] = std::move(g);
        break;
      case FeatureFusion::stack: {
        auto [bl, fu] = split_channels(g, cfg_.channels_at(kScales));
        h[0] = std::move(bl);
        h[1] = std::move(fu);
        break;
      }
    }
  }

  for (int s = kScales - 1; s >= 0; --s) {
    if (s < kScales - 1) {
      for (std::size_t q = 0; q < n_paths; ++q) h[q] = encoders_[q].downs[s].backward(t.paths[q].downs[s], h[q]);
      if (two) {
        const FeatureMap<Scalar> d_joint = skip_projections_[s].backward(t.skip_inputs[s], skip_grads[s]);
        h[0].values += d_joint.values.topRows(h[0].channels());
        h[1].values += d_joint.values.bottomRows(h[1].channels());
      } else {
        h[0].values += skip_grads[s].values;
      }
    }
    if (attention_[s]) {
      auto [bl, fu] = attention_[s]->backward(*t.attention[s], h[0], h[1]);
      h[0] = std::move(bl);
      h[1] = std::move(fu);
    }
    for (std::size_t q = 0; q < n_paths; ++q) {
      auto& blocks = encoders_[q].stages[s];
      for (std::size_t b = blocks.size(); b-- > 0;) h[q] = blocks[b].backward(t.paths[q].blocks[s][b], h[q]);
    }
  }
  for (std::size_t q = 0; q < n_paths; ++q) encoders_[q].stem.backward(t.paths[q].input, h[q], false);
}

template <typename Scalar>
FeatureMap<Scalar> Network<Scalar>::encode_path(int path, const FeatureMap<Scalar>& input) const {
  if (cfg_.attention != AttentionMethod::none)
    throw ConfigError("encode_path: paths are coupled by attention and cannot run in isolation");
  const auto& e = encoders_.at(static_cast<std::size_t>(path));
  FeatureMap<Scalar> h = e.stem.forward(input);
  for (int s = 0; s < kScales; ++s) {
    for (const auto& b : e.stages[s]) h = b.forward(h);
    if (s < kScales - 1) h = e.downs[s].forward(h);
  }
  return h;
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
  visit([](Parameter<Scalar>& p) { p.zero_grad(); });
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() const {
  Index n = 0;
  visit([&](const Parameter<Scalar>& p) { n += p.size(); });
  return n;
}

template <typename Scalar>
Index Network<Scalar>::attention_parameter_count(int scale) const {
  const auto& a = attention_.at(static_cast<std::size_t>(scale - 1));
  return a ? a->parameter_count() : 0;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Network<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  visit([&](Parameter<Scalar>& p) { out.push_back(&p); });
  return out;
}

template class Encoder<float>;
template class Encoder<double>;
template class Network<float>;
template class Network<double>;

}  // namespace lesact::nn
