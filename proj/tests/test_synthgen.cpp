#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "lesact/components.hpp"
#include "lesact/errors.hpp"
#include "lesact/metrics.hpp"
#include "lesact/synthgen.hpp"
#include "lesact/volume_io.hpp"

using namespace lesact;

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.shape = {40, 40, 40};
  s.n_baseline_lesions = 4;
  s.n_new_lesions = 2;
  s.n_enlarged_lesions = 1;
  s.lesion_radius_min_mm = 2.0;
  s.lesion_radius_max_mm = 3.5;
  s.seed = seed;
  return s;
}

bool touches(const std::vector<Index>& comp, const Volume& mask) {
  const Shape3 s = mask.shape();
  for (Index v : comp) {
    const Index x = v % s.x, y = (v / s.x) % s.y, z = v / (s.x * s.y);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (s.contains(x + dx, y + dy, z + dz) && mask(x + dx, y + dy, z + dz) != 0.0f) return true;
  }
  return false;
}

bool same(const Volume& a, const Volume& b) { return a.shape() == b.shape() && (a.data() == b.data()).all(); }

}  // namespace

TEST_CASE("spec validation") {
  PhantomSpec s = small_spec(1);
  CHECK_NOTHROW(s.validate());
  s.n_enlarged_lesions = 5;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec(1);
  s.lesion_radius_max_mm = 10.0;  // min extent 40 mm / 4
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.lesion_radius_max_mm = 3.0;
  s.lesion_radius_min_mm = 0.0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("same seed gives bit-identical cases") {
  const SyntheticCase a = generate_case(small_spec(7)), b = generate_case(small_spec(7));
  CHECK(same(a.pair.baseline, b.pair.baseline));
  CHECK(same(a.pair.followup, b.pair.followup));
  CHECK(same(a.activity_truth, b.activity_truth));
  REQUIRE(a.rater_masks.size() == b.rater_masks.size());
  for (std::size_t i = 0; i < a.rater_masks.size(); ++i) CHECK(same(a.rater_masks[i], b.rater_masks[i]));
  const SyntheticCase c = generate_case(small_spec(8));
  CHECK_FALSE(same(a.pair.followup, c.pair.followup));
}

TEST_CASE("no new or enlarged lesions means no activity") {
  PhantomSpec s = small_spec(2);
  s.n_new_lesions = 0;
  s.n_enlarged_lesions = 0;
  const SyntheticCase c = generate_case(s);
  CHECK(c.activity_truth.count_nonzero() == 0);
  for (const auto& r : c.rater_masks) CHECK(r.count_nonzero() == 0);
}

TEST_CASE("activity components follow the lesion bookkeeping") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    CAPTURE(seed);
    const SyntheticCase c = generate_case(small_spec(seed));
    const Volume& bl = *c.pair.baseline_lesions;
    const LesionSet truth = connected_components(c.activity_truth);
    int adjacent = 0, isolated = 0;
    for (const auto& comp : truth.components) (touches(comp, bl) ? adjacent : isolated)++;
    CHECK(isolated == 2);
    CHECK(adjacent == 1);
  }
}

TEST_CASE("activity truth is FU lesions minus BL lesions and never overlaps old material") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const SyntheticCase c = generate_case(small_spec(seed));
    const Volume& bl = *c.pair.baseline_lesions;
    const Volume& fu = *c.pair.followup_lesions;
    for (Index i = 0; i < bl.size(); ++i) {
      CHECK_FALSE((c.activity_truth[i] != 0.0f && bl[i] != 0.0f));
      REQUIRE(c.activity_truth[i] == ((fu[i] != 0.0f && bl[i] == 0.0f) ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("enlarged lesions grow by at least half their volume") {
  int enlarged = 0;
  for (std::uint64_t seed = 30; seed < 36; ++seed) {
    const SyntheticCase c = generate_case(small_spec(seed));
    const LesionSet bl = connected_components(*c.pair.baseline_lesions);
    const LesionSet fu = connected_components(*c.pair.followup_lesions);
    for (const auto& rec : c.lesions) {
      if (rec.role != LesionRole::enlarged) continue;
      ++enlarged;
      CHECK(rec.followup_voxels >= static_cast<Index>(std::ceil(1.5 * static_cast<double>(rec.baseline_voxels))));
      // match the FU component containing the BL component and measure both
      const Shape3 s = c.pair.baseline.shape();
      const Eigen::Vector3d v = (rec.centre_mm - c.pair.baseline.origin()).cwiseQuotient(c.pair.baseline.spacing());
      const Index centre = s.linear(std::lround(v.x()), std::lround(v.y()), std::lround(v.z()));
      const auto lb = bl.labels[static_cast<std::size_t>(centre)], lf = fu.labels[static_cast<std::size_t>(centre)];
      REQUIRE(lb > 0);
      REQUIRE(lf > 0);
      const auto nb = bl.components[static_cast<std::size_t>(lb - 1)].size();
      const auto nf = fu.components[static_cast<std::size_t>(lf - 1)].size();
      CHECK(nf >= static_cast<std::size_t>(std::ceil(1.5 * static_cast<double>(nb))));
    }
  }
  CHECK(enlarged == 6);
}

TEST_CASE("exact raters reproduce the truth and the vote keeps majority components") {
  PhantomSpec s = small_spec(40);
  s.rater_jitter = 0;
  s.rater_dropout = 0.0;
  const SyntheticCase exact = generate_case(s);
  for (const auto& r : exact.rater_masks) CHECK(same(r, exact.activity_truth));

  const SyntheticCase noisy = generate_case(small_spec(41));
  REQUIRE(noisy.rater_masks.size() == 3);
  const Volume vote = majority_vote(noisy.rater_masks);
  const LesionSet truth = connected_components(noisy.activity_truth);
  for (const auto& comp : truth.components) {
    int present = 0;
    for (const auto& r : noisy.rater_masks) {
      bool hit = false;
      for (Index v : comp) hit = hit || r[v] != 0.0f;
      present += hit ? 1 : 0;
    }
    if (present < 2) continue;
    bool voted = false;
    for (Index v : comp) voted = voted || vote[v] != 0.0f;
    CHECK(voted);
  }
}

TEST_CASE("lesions stand out of the tissue") {
  PhantomSpec s = small_spec(50);
  s.bias_field_amplitude = 0.0;
  s.scalp_intensity = 0.0;
  const SyntheticCase c = generate_case(s);
  const Volume& img = c.pair.followup;
  const Volume& les = *c.pair.followup_lesions;
  double lesion = 0.0, tissue = 0.0;
  Index nl = 0, nt = 0;
  for (Index i = 0; i < img.size(); ++i) {
    if (les[i] != 0.0f) {
      lesion += img[i];
      ++nl;
    } else if (img[i] > 0.5f) {
      tissue += img[i];
      ++nt;
    }
  }
  REQUIRE(nl > 0);
  REQUIRE(nt > 0);
  CHECK(lesion / nl - tissue / nt >= 3.0 * s.noise_sigma);
}

TEST_CASE("infeasible placement reports a generation error") {
  PhantomSpec s = small_spec(3);
  s.shape = {16, 16, 16};
  s.n_baseline_lesions = 40;
  s.lesion_radius_min_mm = 3.0;
  s.lesion_radius_max_mm = 3.9;
  CHECK_THROWS_AS(generate_case(s), GenerationError);
}

TEST_CASE("activity-free fraction rounds down") {
  DatasetSpec d;
  d.phantom = small_spec(0);
  d.n_cases = 10;
  d.seed = 3;
  d.activity_free_fraction = 0.5;
  const auto plan = plan_dataset(d);
  REQUIRE(plan.size() == 10);
  int empty = 0;
  for (const auto& p : plan) empty += (p.n_new_lesions + p.n_enlarged_lesions == 0) ? 1 : 0;
  CHECK(empty == 5);
  d.activity_free_fraction = 0.48;
  empty = 0;
  for (const auto& p : plan_dataset(d)) empty += (p.n_new_lesions + p.n_enlarged_lesions == 0) ? 1 : 0;
  CHECK(empty == 4);
  std::set<std::uint64_t> seeds;
  for (const auto& p : plan) seeds.insert(p.seed);
  CHECK(seeds.size() == 10);
}

TEST_CASE("mean active lesion count") {
  DatasetSpec d;
  d.phantom = small_spec(0);
  d.n_cases = 2000;
  d.activity_free_fraction = 0.0;
  d.mean_active_lesions = 3.52;
  double total = 0.0;
  for (const auto& p : plan_dataset(d)) {
    const int n = p.n_new_lesions + p.n_enlarged_lesions;
    CHECK((n == 3 || n == 4));
    total += n;
  }
  CHECK(std::abs(total / 2000.0 - 3.52) < 0.05);  // about 4.5 standard errors
}

TEST_CASE("dataset on disk round-trips through the manifest") {
  testing_util::TempDir dir("synth");
  DatasetSpec d;
  d.phantom = small_spec(0);
  d.phantom.shape = {32, 32, 32};
  d.phantom.n_baseline_lesions = 2;
  d.phantom.lesion_radius_max_mm = 3.0;
  d.n_cases = 3;
  d.seed = 9;
  const Manifest m = generate_dataset(d, dir.path);
  const Manifest r = read_manifest(dir.path);
  REQUIRE(r.cases.size() == 3);
  CHECK(nlohmann::json(m) == nlohmann::json(r));
  const auto mem = generate_cases(d);
  for (std::size_t i = 0; i < r.cases.size(); ++i) {
    const LoadedCase c = load_case(dir.path, r.cases[i]);
    CHECK(same(c.pair.baseline, mem[i].pair.baseline));
    CHECK(same(c.pair.followup, mem[i].pair.followup));
    REQUIRE(c.truth.has_value());
    CHECK(same(*c.truth, mem[i].activity_truth));
    CHECK(c.pair.activity_masks.size() == r.cases[i].raters.size());
  }
  const nlohmann::json spec = d;
  CHECK(spec.get<DatasetSpec>().mean_active_lesions == d.mean_active_lesions);
  CHECK(nlohmann::json(spec.get<DatasetSpec>()) == spec);
}
