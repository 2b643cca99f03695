#include "lesact/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "lesact/components.hpp"
#include "lesact/errors.hpp"
#include "lesact/volume_io.hpp"

namespace lesact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kBrainSemiAxisFraction = 0.35;  // ellipsoid spans ~70% of each axis
constexpr double kScalpScale = 1.12;              // outer scalp surface relative to the brain
constexpr double kLesionAmplitude = 1.0;          // lesion peak above tissue
constexpr int kPlacementAttempts = 2000;

struct Geometry {
  Shape3 shape;
  Eigen::Vector3d spacing;
  Eigen::Vector3d centre;  // mm
  Eigen::Vector3d axes;    // brain semi-axes, mm

  explicit Geometry(const PhantomSpec& s) : shape(s.shape), spacing(s.spacing) {
    for (int a = 0; a < 3; ++a) {
      centre[a] = 0.5 * static_cast<double>(shape[a] - 1) * spacing[a];
      axes[a] = kBrainSemiAxisFraction * static_cast<double>(shape[a]) * spacing[a];
    }
  }

  Eigen::Vector3d position(Index i, Index j, Index k) const {
    return {static_cast<double>(i) * spacing[0], static_cast<double>(j) * spacing[1],
            static_cast<double>(k) * spacing[2]};
  }

  // Squared normalised ellipsoid radius of p for axes shrunk by `inset` mm.
  double ellipsoid_radius2(const Eigen::Vector3d& p, double inset, double scale = 1.0) const {
    return ((p - centre).array() / (scale * axes.array() - inset)).square().sum();
  }
};

// Voxels whose centre lies within `radius` of `centre`, as linear indices.
std::vector<Index> ball_voxels(const Geometry& g, const Eigen::Vector3d& centre, double radius) {
  std::vector<Index> out;
  Index lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, static_cast<Index>(std::floor((centre[a] - radius) / g.spacing[a])));
    hi[a] = std::min<Index>(g.shape[a] - 1, static_cast<Index>(std::ceil((centre[a] + radius) / g.spacing[a])));
  }
  const double r2 = radius * radius;
  for (Index k = lo[2]; k <= hi[2]; ++k)
    for (Index j = lo[1]; j <= hi[1]; ++j)
      for (Index i = lo[0]; i <= hi[0]; ++i)
        if ((g.position(i, j, k) - centre).squaredNorm() <= r2) out.push_back(g.shape.linear(i, j, k));
  return out;
}

// Number of 26-connected components of (outer ball \ inner ball).
std::size_t shell_components(const Geometry& g, const Eigen::Vector3d& centre, double inner, double outer) {
  Volume::Data d = Volume::Data::Zero(g.shape.voxels());
  for (Index v : ball_voxels(g, centre, outer)) d[v] = 1.0f;
  for (Index v : ball_voxels(g, centre, inner)) d[v] = 0.0f;
  return connected_components(Volume(g.shape, g.spacing, Eigen::Vector3d::Zero(), VolumeKind::label, std::move(d))).count();
}

struct Placed {
  LesionRecord record;
  double extent_mm;  // largest radius over both time points
};

double sigma_for_radius(double r) { return r / std::sqrt(2.0 * std::log(2.0)); }

Volume::Data render_image(const Geometry& g, const PhantomSpec& spec, const std::vector<std::pair<Eigen::Vector3d, double>>& balls,
                          std::mt19937_64& rng, const Eigen::Vector3d& shift_mm) {
  std::uniform_real_distribution<double> phase(0.0, 1.0);
  const Eigen::Vector3d phi(phase(rng), phase(rng), phase(rng));
  Volume::Data img(g.shape.voxels());
  for (Index k = 0; k < g.shape.z; ++k)
    for (Index j = 0; j < g.shape.y; ++j)
      for (Index i = 0; i < g.shape.x; ++i) {
        const Eigen::Vector3d p = g.position(i, j, k) - shift_mm;
        double value = 0.0;
        const double e = g.ellipsoid_radius2(p, 0.0);
        if (e <= 1.0) {
          value = 1.0;
          double lesion = 0.0;
          for (const auto& [c, r] : balls) {
            // the profile is cut at half maximum, so the image edge coincides with the mask edge
            const double d2 = (p - c).squaredNorm();
            if (d2 > r * r) continue;
            const double s = sigma_for_radius(r);
            lesion = std::max(lesion, kLesionAmplitude * std::exp(-d2 / (2.0 * s * s)));
          }
          value += lesion;
        } else if (spec.scalp_intensity > 0.0 && g.ellipsoid_radius2(p, 0.0, kScalpScale) <= 1.0) {
          value = spec.scalp_intensity;
        }
        double bias = 1.0;
        if (spec.bias_field_amplitude > 0.0) {
          double prod = 1.0;
          for (int a = 0; a < 3; ++a) {
            const double u = static_cast<double>(a == 0 ? i : a == 1 ? j : k) / static_cast<double>(g.shape[a]);
            prod *= std::cos(M_PI * (u + phi[a]));
          }
          bias += spec.bias_field_amplitude * prod;
        }
        img[g.shape.linear(i, j, k)] = static_cast<float>(value * bias);
      }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index v = 0; v < img.size(); ++v) img[v] += static_cast<float>(noise(rng));
  }
  return img;
}

Volume::Data morph(const Shape3& s, const Volume::Data& in, bool dilate) {
  Volume::Data out = in;
  for (Index k = 0; k < s.z; ++k)
    for (Index j = 0; j < s.y; ++j)
      for (Index i = 0; i < s.x; ++i) {
        const Index v = s.linear(i, j, k);
        if ((in[v] != 0.0f) == dilate) continue;
        static constexpr int offsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : offsets) {
          const Index x = i + o[0], y = j + o[1], z = k + o[2];
          const bool neighbour = s.contains(x, y, z) && in[s.linear(x, y, z)] != 0.0f;
          if (dilate && neighbour) {
            out[v] = 1.0f;
            break;
          }
          if (!dilate && !neighbour) {
            out[v] = 0.0f;
            break;
          }
        }
      }
  return out;
}

Volume::Data rater_mask(const Volume& truth, const LesionSet& components, const PhantomSpec& spec, std::mt19937_64& rng) {
  const Shape3 s = truth.shape();
  Volume::Data out = Volume::Data::Zero(s.voxels());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-spec.rater_jitter, spec.rater_jitter);
  for (const auto& comp : components.components) {
    const bool dropped = unit(rng) < spec.rater_dropout;
    const int k = spec.rater_jitter > 0 ? jitter(rng) : 0;
    if (dropped) continue;
    Volume::Data m = Volume::Data::Zero(s.voxels());
    for (Index v : comp) m[v] = 1.0f;
    for (int step = 0; step < std::abs(k); ++step) m = morph(s, m, k > 0);
    out = out.max(m);
  }
  return out;
}

}  // namespace

void PhantomSpec::validate() const {
  if (shape.x < 8 || shape.y < 8 || shape.z < 8) throw InvalidArgument("phantom: shape components must be >= 8");
  if (!(spacing.array() > 0.0).all()) throw InvalidArgument("phantom: spacing must be strictly positive");
  if (n_baseline_lesions < 0 || n_new_lesions < 0 || n_enlarged_lesions < 0)
    throw InvalidArgument("phantom: lesion counts must be non-negative");
  if (n_enlarged_lesions > n_baseline_lesions)
    throw InvalidArgument("phantom: n_enlarged_lesions must not exceed n_baseline_lesions");
  double extent = 1e300;
  for (int a = 0; a < 3; ++a) extent = std::min(extent, static_cast<double>(shape[a]) * spacing[a]);
  if (!(lesion_radius_min_mm > 0.0) || lesion_radius_max_mm < lesion_radius_min_mm || lesion_radius_max_mm >= extent / 4.0)
    throw InvalidArgument("phantom: lesion radius range must lie within (0, min(shape * spacing) / 4)");
  if (noise_sigma < 0.0 || bias_field_amplitude < 0.0 || bias_field_amplitude >= 1.0 || misalignment_mm < 0.0)
    throw InvalidArgument("phantom: noise, bias amplitude (< 1) and misalignment must be non-negative");
  if (n_raters < 1) throw InvalidArgument("phantom: n_raters must be >= 1");
  if (rater_jitter < 0 || rater_dropout < 0.0 || rater_dropout > 1.0)
    throw InvalidArgument("phantom: rater_jitter must be >= 0 and rater_dropout in [0,1]");
}

SyntheticCase generate_case(const PhantomSpec& spec) {
  spec.validate();
  const Geometry g(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double gap = 2.0 * spec.spacing.maxCoeff();
  const double margin = spec.spacing.maxCoeff();

  std::vector<Placed> placed;
  auto fits = [&](const Eigen::Vector3d& c, double extent) {
    if (g.ellipsoid_radius2(c, extent + margin) > 1.0) return false;
    for (const auto& p : placed)
      if ((p.record.centre_mm - c).norm() < p.extent_mm + extent + gap) return false;
    return true;
  };
  auto random_centre = [&]() {
    Eigen::Vector3d c;
    for (int a = 0; a < 3; ++a) c[a] = g.centre[a] + (2.0 * unit(rng) - 1.0) * g.axes[a];
    return c;
  };
  auto random_radius = [&]() {
    return spec.lesion_radius_min_mm + unit(rng) * (spec.lesion_radius_max_mm - spec.lesion_radius_min_mm);
  };

  const int n_total = spec.n_baseline_lesions + spec.n_new_lesions;
  for (int n = 0; n < n_total; ++n) {
    const bool baseline = n < spec.n_baseline_lesions;
    const bool enlarged = n < spec.n_enlarged_lesions;
    bool ok = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
      const Eigen::Vector3d c = random_centre();
      const double r = random_radius();
      double grown = r;
      const auto base_count = static_cast<Index>(ball_voxels(g, c, r).size());
      if (base_count == 0) continue;
      Index grown_count = base_count;
      if (enlarged) {
        const auto need = static_cast<Index>(std::ceil(1.5 * static_cast<double>(base_count)));
        for (int step = 0; step < 40 && grown_count < need; ++step) {
          grown = r * (1.15 + 0.05 * step);
          grown_count = static_cast<Index>(ball_voxels(g, c, grown).size());
        }
        if (grown_count < need) continue;
      }
      if (!fits(c, grown)) continue;
      if (enlarged && shell_components(g, c, r, grown) != 1) continue;
      Placed p;
      p.record.role = enlarged ? LesionRole::enlarged : baseline ? LesionRole::old : LesionRole::fresh;
      p.record.centre_mm = c;
      p.record.radius_mm = baseline ? r : 0.0;
      p.record.followup_radius_mm = grown;
      p.record.baseline_voxels = baseline ? base_count : 0;
      p.record.followup_voxels = grown_count;
      p.extent_mm = grown;
      placed.push_back(p);
      ok = true;
    }
    if (!ok)
      throw GenerationError("phantom: could not place lesion " + std::to_string(n) + " of " + std::to_string(n_total) +
                            " after " + std::to_string(kPlacementAttempts) + " attempts");
  }

  // Lesion masks and image content per time point.
  Volume::Data bl_mask = Volume::Data::Zero(g.shape.voxels());
  Volume::Data fu_mask = Volume::Data::Zero(g.shape.voxels());
  std::vector<std::pair<Eigen::Vector3d, double>> bl_balls, fu_balls;
  for (const auto& p : placed) {
    const auto& r = p.record;
    if (r.role != LesionRole::fresh) {
      for (Index v : ball_voxels(g, r.centre_mm, r.radius_mm)) bl_mask[v] = 1.0f;
      bl_balls.emplace_back(r.centre_mm, r.radius_mm);
    }
    for (Index v : ball_voxels(g, r.centre_mm, r.followup_radius_mm)) fu_mask[v] = 1.0f;
    fu_balls.emplace_back(r.centre_mm, r.followup_radius_mm);
  }

  Eigen::Vector3d shift = Eigen::Vector3d::Zero();
  if (spec.misalignment_mm > 0.0) {
    std::normal_distribution<double> dir(0.0, 1.0);
    Eigen::Vector3d d(dir(rng), dir(rng), dir(rng));
    shift = spec.misalignment_mm * d.normalized();
  }
  Volume::Data bl_img = render_image(g, spec, bl_balls, rng, Eigen::Vector3d::Zero());
  Volume::Data fu_img = render_image(g, spec, fu_balls, rng, shift);

  const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  auto make = [&](VolumeKind kind, Volume::Data d) { return Volume(g.shape, g.spacing, origin, kind, std::move(d)); };
  Volume truth = make(VolumeKind::label, (fu_mask != 0.0f && bl_mask == 0.0f).cast<float>());

  SyntheticCase out{
      ScanPair{make(VolumeKind::intensity, std::move(bl_img)), make(VolumeKind::intensity, std::move(fu_img)), {},
               make(VolumeKind::label, bl_mask), make(VolumeKind::label, fu_mask)},
      truth,
      {},
      {},
      spec};
  const LesionSet activity = connected_components(truth);
  for (int r = 0; r < spec.n_raters; ++r) {
    std::mt19937_64 rater_rng(derive_seed(spec.seed, 1000003ULL + static_cast<std::uint64_t>(r)));
    out.rater_masks.push_back(make(VolumeKind::label, rater_mask(truth, activity, spec, rater_rng)));
  }
  out.pair.activity_masks = out.rater_masks;
  for (const auto& p : placed) out.lesions.push_back(p.record);
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<PhantomSpec> plan_dataset(const DatasetSpec& spec) {
  if (spec.n_cases < 1) throw InvalidArgument("dataset: n_cases must be >= 1");
  if (spec.activity_free_fraction < 0.0 || spec.activity_free_fraction > 1.0)
    throw InvalidArgument("dataset: activity_free_fraction must lie in [0,1]");
  const auto n = static_cast<std::size_t>(spec.n_cases);
  const auto n_free = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.activity_free_fraction + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(spec.seed, 0xFFFFFFFFULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> inactive(n, false);
  for (std::size_t i = 0; i < n_free; ++i) inactive[order[i]] = true;

  std::vector<PhantomSpec> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    PhantomSpec p = spec.phantom;
    p.seed = derive_seed(spec.seed, i + 1);
    if (inactive[i]) {
      p.n_new_lesions = 0;
      p.n_enlarged_lesions = 0;
    } else if (spec.mean_active_lesions) {
      const double m = *spec.mean_active_lesions;
      const int lo = static_cast<int>(std::floor(m));
      const int total = lo + (unit(rng) < m - lo ? 1 : 0);
      p.n_enlarged_lesions = std::min(total / 2, p.n_baseline_lesions);
      p.n_new_lesions = total - p.n_enlarged_lesions;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<SyntheticCase> generate_cases(const DatasetSpec& spec) {
  std::vector<SyntheticCase> out;
  const auto plan = plan_dataset(spec);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    try {
      out.push_back(generate_case(plan[i]));
    } catch (const std::exception& e) {
      throw GenerationError("case " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

Manifest generate_dataset(const DatasetSpec& spec, const fs::path& root) {
  const auto plan = plan_dataset(spec);
  Manifest m;
  m.seed = spec.seed;
  fs::create_directories(root);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    std::optional<SyntheticCase> generated;
    try {
      generated.emplace(generate_case(plan[i]));
    } catch (const std::exception& e) {
      throw GenerationError("case " + std::to_string(i) + ": " + e.what());
    }
    const SyntheticCase& c = *generated;
    char id[32];
    std::snprintf(id, sizeof id, "case_%03zu", i);
    ManifestEntry e;
    e.id = id;
    e.spec = plan[i];
    e.n_active_lesions = plan[i].n_new_lesions + plan[i].n_enlarged_lesions;
    const fs::path dir = fs::path(id);
    e.baseline = dir / "baseline.lvol";
    e.followup = dir / "followup.lvol";
    e.truth = dir / "truth.lvol";
    e.baseline_lesions = dir / "baseline_lesions.lvol";
    e.followup_lesions = dir / "followup_lesions.lvol";
    write_volume(c.pair.baseline, root / e.baseline);
    write_volume(c.pair.followup, root / e.followup);
    write_volume(c.activity_truth, root / e.truth);
    write_volume(*c.pair.baseline_lesions, root / *e.baseline_lesions);
    write_volume(*c.pair.followup_lesions, root / *e.followup_lesions);
    for (std::size_t r = 0; r < c.rater_masks.size(); ++r) {
      e.raters.push_back(dir / ("rater_" + std::to_string(r) + ".lvol"));
      write_volume(c.rater_masks[r], root / e.raters.back());
    }
    m.cases.push_back(std::move(e));
  }
  write_manifest(m, root);
  return m;
}

// ---- JSON --------------------------------------------------------------------

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"shape", {s.shape.x, s.shape.y, s.shape.z}},
           {"spacing", {s.spacing[0], s.spacing[1], s.spacing[2]}},
           {"n_baseline_lesions", s.n_baseline_lesions},
           {"n_new_lesions", s.n_new_lesions},
           {"n_enlarged_lesions", s.n_enlarged_lesions},
           {"lesion_radius_range", {s.lesion_radius_min_mm, s.lesion_radius_max_mm}},
           {"noise_sigma", s.noise_sigma},
           {"bias_field_amplitude", s.bias_field_amplitude},
           {"misalignment_mm", s.misalignment_mm},
           {"n_raters", s.n_raters},
           {"rater_jitter", s.rater_jitter},
           {"rater_dropout", s.rater_dropout},
           {"scalp_intensity", s.scalp_intensity},
           {"seed", s.seed}};
}

void from_json(const json& j, PhantomSpec& s) {
  s = PhantomSpec{};
  try {
    if (j.contains("shape")) {
      const auto v = j.at("shape").get<std::vector<Index>>();
      if (v.size() != 3) throw InvalidArgument("phantom: shape must have 3 entries");
      s.shape = {v[0], v[1], v[2]};
    }
    if (j.contains("spacing")) {
      const auto v = j.at("spacing").get<std::vector<double>>();
      if (v.size() != 3) throw InvalidArgument("phantom: spacing must have 3 entries");
      s.spacing = {v[0], v[1], v[2]};
    }
    s.n_baseline_lesions = j.value("n_baseline_lesions", s.n_baseline_lesions);
    s.n_new_lesions = j.value("n_new_lesions", s.n_new_lesions);
    s.n_enlarged_lesions = j.value("n_enlarged_lesions", s.n_enlarged_lesions);
    if (j.contains("lesion_radius_range")) {
      const auto v = j.at("lesion_radius_range").get<std::vector<double>>();
      if (v.size() != 2) throw InvalidArgument("phantom: lesion_radius_range must have 2 entries");
      s.lesion_radius_min_mm = v[0];
      s.lesion_radius_max_mm = v[1];
    }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.bias_field_amplitude = j.value("bias_field_amplitude", s.bias_field_amplitude);
    s.misalignment_mm = j.value("misalignment_mm", s.misalignment_mm);
    s.n_raters = j.value("n_raters", s.n_raters);
    s.rater_jitter = j.value("rater_jitter", s.rater_jitter);
    s.rater_dropout = j.value("rater_dropout", s.rater_dropout);
    s.scalp_intensity = j.value("scalp_intensity", s.scalp_intensity);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("phantom spec: ") + e.what());
  }
}

void to_json(json& j, const DatasetSpec& s) {
  j = json{{"phantom", s.phantom},
           {"n_cases", s.n_cases},
           {"seed", s.seed},
           {"activity_free_fraction", s.activity_free_fraction},
           {"mean_active_lesions", s.mean_active_lesions ? json(*s.mean_active_lesions) : json(nullptr)}};
}

void from_json(const json& j, DatasetSpec& s) {
  s = DatasetSpec{};
  if (j.contains("phantom")) s.phantom = j.at("phantom").get<PhantomSpec>();
  try {
    s.n_cases = j.value("n_cases", s.n_cases);
    s.seed = j.value("seed", s.seed);
    s.activity_free_fraction = j.value("activity_free_fraction", s.activity_free_fraction);
    if (j.contains("mean_active_lesions") && !j.at("mean_active_lesions").is_null())
      s.mean_active_lesions = j.at("mean_active_lesions").get<double>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("dataset spec: ") + e.what());
  }
}

void to_json(json& j, const Manifest& m) {
  json cases = json::array();
  for (const auto& e : m.cases) {
    json files = {{"baseline", e.baseline.generic_string()},
                  {"followup", e.followup.generic_string()},
                  {"truth", e.truth.generic_string()}};
    if (e.baseline_lesions) files["baseline_lesions"] = e.baseline_lesions->generic_string();
    if (e.followup_lesions) files["followup_lesions"] = e.followup_lesions->generic_string();
    json raters = json::array();
    for (const auto& r : e.raters) raters.push_back(r.generic_string());
    files["raters"] = raters;
    cases.push_back({{"id", e.id}, {"spec", e.spec}, {"n_active_lesions", e.n_active_lesions}, {"files", files}});
  }
  j = json{{"version", m.version}, {"seed", m.seed}, {"preprocessed", m.preprocessed}, {"cases", cases}};
}

void from_json(const json& j, Manifest& m) {
  m = Manifest{};
  try {
    m.version = j.at("version").get<int>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.preprocessed = j.value("preprocessed", false);
    for (const auto& c : j.at("cases")) {
      ManifestEntry e;
      e.id = c.at("id").get<std::string>();
      if (c.contains("spec")) e.spec = c.at("spec").get<PhantomSpec>();
      e.n_active_lesions = c.value("n_active_lesions", 0);
      const auto& f = c.at("files");
      e.baseline = f.at("baseline").get<std::string>();
      e.followup = f.at("followup").get<std::string>();
      if (f.contains("truth")) e.truth = f.at("truth").get<std::string>();
      if (f.contains("baseline_lesions")) e.baseline_lesions = fs::path(f.at("baseline_lesions").get<std::string>());
      if (f.contains("followup_lesions")) e.followup_lesions = fs::path(f.at("followup_lesions").get<std::string>());
      if (f.contains("raters"))
        for (const auto& r : f.at("raters")) e.raters.emplace_back(r.get<std::string>());
      m.cases.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

Manifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open manifest '" + file.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + file.string() + "' is not valid JSON: " + e.what());
  }
  return j.get<Manifest>();
}

void write_manifest(const Manifest& m, const fs::path& root) {
  fs::create_directories(root);
  std::ofstream out(root / "manifest.json");
  if (!out) throw FormatError("cannot write manifest in '" + root.string() + "'");
  out << json(m).dump(2) << '\n';
}

LoadedCase load_case(const fs::path& root, const ManifestEntry& e) {
  LoadedCase c{e.id,
               ScanPair{read_volume(root / e.baseline, VolumeKind::intensity),
                        read_volume(root / e.followup, VolumeKind::intensity),
                        {},
                        std::nullopt,
                        std::nullopt},
               std::nullopt};
  for (const auto& r : e.raters) c.pair.activity_masks.push_back(read_volume(root / r, VolumeKind::label));
  if (e.baseline_lesions) c.pair.baseline_lesions = read_volume(root / *e.baseline_lesions, VolumeKind::label);
  if (e.followup_lesions) c.pair.followup_lesions = read_volume(root / *e.followup_lesions, VolumeKind::label);
  if (!e.truth.empty()) c.truth = read_volume(root / e.truth, VolumeKind::label);
  c.pair.validate();
  return c;
}

}  // namespace lesact
