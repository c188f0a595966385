#include "support.hpp"

#include "nuq/error.hpp"
#include "nuq/group.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

using namespace nuq;
using testing::TempDir;

namespace {

// nA + nB subjects, `nvox` voxels, `m` draws. Group A is shifted by `shift`;
// subjects scatter by `between` around the group value and their draws by
// `post_std` around the subject value.
CohortSamples synthetic_cohort(std::size_t n_a, std::size_t n_b, std::size_t nvox, std::size_t m, double shift,
                               double between, double post_std, std::uint64_t seed) {
  testing::Gen gen(seed);
  CohortSamples c;
  c.dims = {nvox, 1, 1};
  c.geometry = NiftiVolume(c.dims);
  for (std::size_t k = 0; k < nvox; ++k) c.voxels.push_back(k);
  std::vector<double> base(nvox);
  for (auto &b : base) b = gen.uniform(0.3, 0.6);
  for (std::size_t s = 0; s < n_a + n_b; ++s) {
    const bool a = s < n_a;
    c.labels.push_back(a ? GroupLabel::A : GroupLabel::B);
    Eigen::MatrixXd draws(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(nvox));
    for (std::size_t k = 0; k < nvox; ++k) {
      const double value = base[k] + (a ? shift : 0.0) + gen.normal(between);
      for (std::size_t j = 0; j < m; ++j)
        draws(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = value + gen.normal(post_std);
    }
    c.subjects.push_back(std::move(draws));
  }
  return c;
}

double median_abs(const std::vector<double> &t) {
  std::vector<double> a;
  for (double v : t)
    if (std::isfinite(v)) a.push_back(std::abs(v));
  std::sort(a.begin(), a.end());
  return a.size() % 2 ? a[a.size() / 2] : 0.5 * (a[a.size() / 2 - 1] + a[a.size() / 2]);
}

} // namespace

TEST_CASE("subject weight") {
  const std::vector<double> flat{0.4, 0.4, 0.4};
  const SubjectWeight w0 = subject_weight(flat);
  CHECK(w0.value == 1.0 / kStdFloor);
  CHECK(w0.degenerate);

  const std::vector<double> pair{0.0, 2.0};
  const SubjectWeight w1 = subject_weight(pair);
  CHECK(std::abs(w1.value - 1.0 / std::sqrt(2.0)) <= 1e-15);
  CHECK_FALSE(w1.degenerate);

  const std::vector<double> scaled{0.0, 20.0};
  CHECK(std::abs(subject_weight(scaled).value - w1.value / 10.0) <= 1e-15);

  const std::vector<double> single{1.0};
  CHECK_THROWS_AS(subject_weight(single), ContractError);
}

TEST_CASE("identical groups give zero-difference voxels") {
  CohortSamples c = synthetic_cohort(5, 0, 30, 20, 0.0, 0.01, 0.01, 1);
  const std::size_t n = c.subjects.size();
  for (std::size_t s = 0; s < n; ++s) {
    c.subjects.push_back(c.subjects[s]);
    c.labels.push_back(GroupLabel::B);
  }
  const GroupReport r = bayesian_t_map(c);
  for (std::size_t k = 0; k < 30; ++k) {
    CHECK(std::isnan(r.t[k]));
    CHECK(r.flags[k] == VoxelFlag::zero_difference);
    CHECK(std::abs(r.mean_diff[k]) <= 1e-15);
  }
  CHECK(r.defined_count() == 0);
  const auto summary = r.summary();
  CHECK(summary["zero_difference_voxels"] == 30);
  CHECK(summary["fraction_abs_t_gt_2"] == 0.0);
}

TEST_CASE("shifted group gives large t") {
  const CohortSamples c = synthetic_cohort(20, 20, 200, 100, 0.2, 0.01, 0.01, 2);
  const GroupReport r = bayesian_t_map(c);
  const auto above = std::count_if(r.t.begin(), r.t.end(), [](double t) { return t > 5.0; });
  CHECK(static_cast<double>(above) >= 0.99 * 200);
  for (double d : r.mean_diff) CHECK(std::abs(d - 0.2) < 0.02);
  CHECK(r.summary()["fraction_abs_t_gt_2"].get<double>() >= 0.99);
}

TEST_CASE("swapping labels negates the maps") {
  const CohortSamples c = synthetic_cohort(6, 7, 40, 30, 0.05, 0.02, 0.03, 3);
  CohortSamples swapped = c;
  for (auto &l : swapped.labels) l = l == GroupLabel::A ? GroupLabel::B : GroupLabel::A;
  for (WeightMode mode : {WeightMode::per_voxel, WeightMode::global}) {
    const GroupReport a = bayesian_t_map(c, mode);
    const GroupReport b = bayesian_t_map(swapped, mode);
    for (std::size_t k = 0; k < 40; ++k) {
      CHECK(a.mean_diff[k] == -b.mean_diff[k]);
      if (std::isfinite(a.t[k])) CHECK(a.t[k] == -b.t[k]);
    }
  }
}

TEST_CASE("common weight scaling leaves t unchanged") {
  testing::Gen gen(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t subjects = gen.index(2, 10), m = gen.index(2, 30);
    Eigen::MatrixXd draws = gen.matrix(static_cast<Eigen::Index>(subjects), static_cast<Eigen::Index>(m));
    std::vector<GroupLabel> labels(subjects, GroupLabel::B);
    labels[0] = GroupLabel::A;
    for (std::size_t s = 1; s < subjects; ++s) labels[s] = gen.uniform(0, 1) < 0.5 ? GroupLabel::A : GroupLabel::B;
    labels[1] = GroupLabel::B;
    std::vector<double> w(subjects), w_scaled(subjects);
    const double alpha = gen.uniform(0.01, 100);
    for (std::size_t s = 0; s < subjects; ++s) {
      w[s] = gen.uniform(0.1, 5);
      w_scaled[s] = alpha * w[s];
    }
    const VoxelT a = weighted_t_at_voxel(draws, labels, w);
    const VoxelT b = weighted_t_at_voxel(draws, labels, w_scaled);
    CHECK(std::abs(a.t - b.t) <= 1e-12 * std::max(1.0, std::abs(a.t)));
    CHECK(std::abs(a.mean_diff - b.mean_diff) <= 1e-12);
  }
}

TEST_CASE("t at one voxel by hand") {
  // Two subjects, A = {1, 3}, B = {0, 0}; equal weights; differences {1, 3}.
  Eigen::MatrixXd draws(2, 2);
  draws << 1, 3, 0, 0;
  const std::vector<GroupLabel> labels{GroupLabel::A, GroupLabel::B};
  const std::vector<double> w{1.0, 1.0};
  const VoxelT v = weighted_t_at_voxel(draws, labels, w);
  CHECK(v.mean_diff == 2.0);
  CHECK(std::abs(v.t - 2.0 / std::sqrt(2.0)) <= 1e-15);
  CHECK(v.flag == VoxelFlag::ok);
}

TEST_CASE("subjects without a posterior are skipped") {
  Eigen::MatrixXd draws(3, 2);
  draws << 1, 3, 0, 0, std::nan(""), std::nan("");
  const std::vector<GroupLabel> labels{GroupLabel::A, GroupLabel::B, GroupLabel::B};
  const VoxelT v = weighted_t_at_voxel(draws, labels, std::vector<double>{1, 1, 1});
  CHECK(v.mean_diff == 2.0);
  const std::vector<GroupLabel> lonely{GroupLabel::A, GroupLabel::A, GroupLabel::B};
  const VoxelT missing = weighted_t_at_voxel(draws, lonely, std::vector<double>{1, 1, 1});
  CHECK(missing.flag == VoxelFlag::missing_group);
  CHECK(std::isnan(missing.t));
}

TEST_CASE("sharper posteriors raise |t|") {
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    double previous = 0.0;
    bool ok = true;
    for (double post_std : {0.05, 0.02, 0.01}) {
      const CohortSamples c = synthetic_cohort(10, 10, 50, 50, 0.02, 0.0, post_std, seed);
      const double med = median_abs(bayesian_t_map(c).t);
      ok = ok && med > previous;
      previous = med;
    }
    monotone += ok ? 1 : 0;
  }
  CHECK(monotone >= 19);
}

TEST_CASE("global weights are one per subject") {
  const CohortSamples c = synthetic_cohort(3, 3, 20, 10, 0.1, 0.01, 0.02, 5);
  const GroupReport r = bayesian_t_map(c, WeightMode::global);
  for (Eigen::Index s = 0; s < r.weights.rows(); ++s)
    CHECK((r.weights.row(s).array() == r.weights(s, 0)).all());
  const GroupReport v = bayesian_t_map(c, WeightMode::per_voxel);
  CHECK(v.weights(0, 0) != v.weights(0, 1));
}

TEST_CASE("cohort contract") {
  CohortSamples c = synthetic_cohort(3, 3, 5, 10, 0.1, 0.01, 0.02, 6);
  CohortSamples only_a = c;
  for (auto &l : only_a.labels) l = GroupLabel::A;
  CHECK_THROWS_AS(bayesian_t_map(only_a), ContractError);
  CohortSamples ragged = c;
  ragged.subjects[1] = Eigen::MatrixXd::Zero(9, 5);
  CHECK_THROWS_AS(bayesian_t_map(ragged), ContractError);
  CohortSamples one_draw = c;
  for (auto &s : one_draw.subjects) s = Eigen::MatrixXd(s.topRows(1));
  CHECK_THROWS_AS(bayesian_t_map(one_draw), ContractError);
}

TEST_CASE("cohort manifest loading") {
  TempDir dir("group");
  const CohortSamples c = synthetic_cohort(2, 2, 6, 8, 0.2, 0.01, 0.01, 7);
  nlohmann::json manifest;
  for (std::size_t s = 0; s < 4; ++s) {
    NiftiVolume stack({3, 2, 1}, 8);
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 6; ++k)
        stack.at(k, j) = c.subjects[s](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    stack.at(5, 0) = std::nan("");
    const std::string name = "s" + std::to_string(s) + ".nii.gz";
    write_nifti(stack, dir / name);
    manifest["subjects"].push_back({{"path", name}, {"group", s < 2 ? "A" : "B"}});
  }
  {
    std::ofstream(dir / "cohort.json") << manifest.dump();
  }
  const CohortSamples loaded = load_cohort(dir / "cohort.json");
  CHECK(loaded.subjects.size() == 4);
  CHECK(loaded.voxels == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(loaded.draws() == 8);
  CHECK(loaded.labels[3] == GroupLabel::B);
  CHECK(loaded.subjects[2](3, 4) == c.subjects[2](3, 4));

  NiftiVolume mask({3, 2, 1}, 1, 0.0);
  mask.data[1] = mask.data[4] = 1.0;
  write_nifti(mask, dir / "mask.nii.gz", Datatype::u8);
  manifest["mask"] = "mask.nii.gz";
  {
    std::ofstream(dir / "masked.json") << manifest.dump();
  }
  CHECK(load_cohort(dir / "masked.json").voxels == std::vector<std::size_t>{1, 4});

  const GroupReport r = bayesian_t_map(loaded);
  const NiftiVolume tmap = cohort_map(loaded, r.t);
  CHECK(tmap.dims == std::array<std::size_t, 4>{3, 2, 1, 1});
  CHECK(std::isnan(tmap.data[5]));
  CHECK(tmap.data[0] > 5.0);

  manifest["subjects"][1]["group"] = "C";
  {
    std::ofstream(dir / "bad.json") << manifest.dump();
  }
  CHECK_THROWS_AS(load_cohort(dir / "bad.json"), ParseError);
  manifest["subjects"][1]["group"] = "A";
  manifest["subjects"][1]["path"] = "missing.nii.gz";
  {
    std::ofstream(dir / "missing.json") << manifest.dump();
  }
  CHECK_THROWS_AS(load_cohort(dir / "missing.json"), IoError);
  {
    std::ofstream(dir / "broken.json") << "{not json";
  }
  CHECK_THROWS_AS(load_cohort(dir / "broken.json"), ParseError);
}
