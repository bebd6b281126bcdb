#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "poc/error.hpp"
#include "poc/mlcore.hpp"
#include "poc/rng.hpp"

namespace poc::ml {
namespace {

Dataset blobs(int dim, int classes, double sep, size_t n, uint64_t seed) {
  return sample_blobs(BlobSpec{dim, classes, sep, 100 + seed}, n, seed);
}

TEST(MlCore, LayoutsFollowTheArchitecture) {
  const ModelSpec lr{ModelKind::kLogistic, 4, 3, 0};
  EXPECT_EQ(lr.layout().size(), 3 * 4 + 3);
  const ModelSpec mlp{ModelKind::kMlp, 4, 3, 5};
  EXPECT_EQ(mlp.layout().size(), 5 * 4 + 5 + 3 * 5 + 3);
  const auto back = ModelSpec::from_layout(mlp.layout());
  EXPECT_EQ(back.kind, ModelKind::kMlp);
  EXPECT_EQ(back.hidden, 5);
  EXPECT_EQ(back.dim, 4);
}

TEST(MlCore, ZeroModelLossIsLogK) {
  for (int k : {2, 10}) {
    const Dataset d = blobs(3, k, 1.0, 40, 1);
    const ModelWeights zero = ModelWeights::zeros(ModelSpec{ModelKind::kLogistic, 3, k, 0}.layout());
    EXPECT_NEAR(local_loss(zero, d), std::log(static_cast<double>(k)), 1e-12);
  }
}

TEST(MlCore, ZeroEpochsLeavesModelUnchanged) {
  const Dataset d = blobs(4, 3, 1.0, 30, 2);
  const ModelWeights w0 = init_model(ModelSpec{ModelKind::kMlp, 4, 3, 6}, 7);
  EXPECT_EQ(train_local(w0, d, TrainerConfig{0.1, 0, 10, 1}), w0);
}

TEST(MlCore, LearnsSeparableBlobs) {
  const Dataset d = blobs(5, 2, 4.0, 200, 3);
  const ModelWeights w0 = init_model(ModelSpec{ModelKind::kLogistic, 5, 2, 0}, 1);
  const ModelWeights w = train_local(w0, d, TrainerConfig{0.1, 5, 20, 4});
  EXPECT_GE(accuracy(w, d), 0.95);
  EXPECT_EQ(train_local(w0, d, TrainerConfig{0.1, 5, 20, 4}), w);
  EXPECT_NE(train_local(w0, d, TrainerConfig{0.1, 5, 20, 5}), w);
}

TEST(MlCore, FrozenBlobAccuracy) {
  // First-run values; any drift in data generation, training or inference shows here.
  const BlobSpec spec{20, 10, 1.0, 20};
  const Dataset train = sample_blobs(spec, 1000, 21);
  const OwnerSplit split = split_owner_data(sample_blobs(spec, 400, 22), 23);
  const ModelWeights w0 = init_model(ModelSpec{ModelKind::kLogistic, 20, 10, 0}, 24);
  const ModelWeights w = train_local(w0, train, TrainerConfig{0.1, 2, 20, 25});
  EXPECT_EQ(split.test.size(), 200);
  EXPECT_EQ(correct_count(w, split.test), 199);
}

TEST(MlCore, ConstantLogitsTieBreakToFirstClass) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(6, 2);
  const Dataset zeros(x, std::vector<int>(6, 0), 3);
  const Dataset twos(x, std::vector<int>(6, 2), 3);
  const ModelWeights w = ModelWeights::zeros(ModelSpec{ModelKind::kLogistic, 2, 3, 0}.layout());
  EXPECT_EQ(accuracy(w, zeros), 1.0);
  EXPECT_EQ(accuracy(w, twos), 0.0);
  EXPECT_THROW(accuracy(w, Dataset(Eigen::MatrixXd(0, 2), {}, 3)), Error);
}

TEST(MlCore, MemorizingTableIsPerfect) {
  // One-hot features, identity weights: every sample maps to its own class.
  const int n = 10;
  const Dataset d(Eigen::MatrixXd::Identity(n, n), [] {
    std::vector<int> l(10);
    for (int i = 0; i < 10; ++i) l[static_cast<size_t>(i)] = i;
    return l;
  }(), n);
  const Layout layout = ModelSpec{ModelKind::kLogistic, n, n, 0}.layout();
  std::vector<double> v(static_cast<size_t>(layout.size()), 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
  EXPECT_EQ(accuracy(ModelWeights::from_doubles(layout, v), d), 1.0);
}

TEST(MlCore, FixedForwardMatchesLayerDefinition) {
  const Dataset d = blobs(4, 3, 1.0, 8, 6);
  const ModelWeights w = init_model(ModelSpec{ModelKind::kMlp, 4, 3, 5}, 9);
  const FixedForward f = forward_fixed(w, d.fixed_features());
  ASSERT_EQ(f.hidden.rows(), 8);
  for (Eigen::Index i = 0; i < f.pre.rows(); ++i)
    for (Eigen::Index j = 0; j < f.pre.cols(); ++j) EXPECT_EQ(f.hidden(i, j), std::max(f.pre(i, j), Fixed()));
  EXPECT_EQ(f.logits.cols(), 3);
  EXPECT_EQ(correct_count(w, d), [&] {
    const auto p = argmax_rows(f.logits);
    int64_t c = 0;
    for (size_t i = 0; i < p.size(); ++i) c += p[i] == d.labels()[i];
    return c;
  }());
}

TEST(MlCore, ByzantineIgnoresHonestModel) {
  const Layout layout = ModelSpec{ModelKind::kLogistic, 50, 10, 0}.layout();
  const ModelWeights a = ModelWeights::zeros(layout);
  std::vector<double> ones(static_cast<size_t>(layout.size()), 1.0);
  const ModelWeights b = ModelWeights::from_doubles(layout, ones);
  const AttackSpec spec{AttackKind::kByzantine, 2.0, 10.0};
  Rng r1(4), r2(4);
  const ModelWeights xa = apply_attack(a, spec, r1), xb = apply_attack(b, spec, r2);
  EXPECT_EQ(xa, xb);
  const Eigen::VectorXd v = xa.to_doubles();
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
  EXPECT_NEAR(mean, 0.0, 0.3);
  EXPECT_NEAR(sd, 2.0, 0.25);
}

TEST(MlCore, BackdoorScalesThePoisonedModel) {
  const Dataset d = blobs(6, 4, 1.0, 80, 8);
  const ModelWeights w0 = init_model(ModelSpec{ModelKind::kLogistic, 6, 4, 0}, 2);
  const TrainerConfig cfg{0.1, 2, 10, 3};
  Rng rng(1);
  const ModelWeights out = malicious_update(w0, d, cfg, AttackSpec{AttackKind::kBackdoor, 1.0, 10.0}, rng);
  const ModelWeights poisoned = train_local(w0, poison_dataset(d), cfg);
  EXPECT_NEAR(out.to_doubles().norm(), 10.0 * poisoned.to_doubles().norm(), 1e-3);

  // Single-class data is unchanged by poisoning, so beta = 1 is plain training.
  const Dataset one_class(d.features(), std::vector<int>(static_cast<size_t>(d.size()), 0), 4);
  Rng rng2(1);
  EXPECT_EQ(malicious_update(w0, one_class, cfg, AttackSpec{AttackKind::kBackdoor, 1.0, 1.0}, rng2),
            train_local(w0, one_class, cfg));
}

TEST(MlCore, PoisonRelabelsTopDecile) {
  Eigen::MatrixXd x(10, 1);
  for (int i = 0; i < 10; ++i) x(i, 0) = i;
  const Dataset d(x, std::vector<int>(10, 3), 4);
  const Dataset p = poison_dataset(d);
  EXPECT_EQ(p.labels()[9], 0);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(p.labels()[static_cast<size_t>(i)], 3);
}

TEST(MlCore, PartitionSchemes) {
  const Dataset d = blobs(3, 10, 1.0, 500, 10);
  const auto whole = partition(d, PartitionSpec{}, 1, 1);
  ASSERT_EQ(whole.size(), 1u);
  EXPECT_EQ(whole[0].size(), d.size());
  EXPECT_EQ(whole[0].label_histogram(), d.label_histogram());

  const auto iid = partition(d, PartitionSpec{}, 5, 1);
  for (const auto& s : iid) EXPECT_EQ(s.size(), 100);

  const auto excl = partition(d, PartitionSpec{PartitionScheme::kLabelExclusive, {}, 0}, 5, 1);
  std::set<int> seen;
  for (const auto& s : excl) {
    const std::set<int> labels(s.labels().begin(), s.labels().end());
    EXPECT_EQ(labels.size(), 2u);
    for (int l : labels) EXPECT_TRUE(seen.insert(l).second);
  }
  const auto rare = partition(d, PartitionSpec{PartitionScheme::kRareLabel, {0, 1}, 2}, 5, 1);
  for (size_t i = 0; i < rare.size(); ++i) {
    for (int l : rare[i].labels()) EXPECT_EQ(l == 0 || l == 1, i == 2);
  }
  EXPECT_THROW(partition(d, PartitionSpec{}, 1000, 1), Error);
}

TEST(MlCore, OwnerSplit) {
  const Dataset two = blobs(2, 2, 1.0, 2, 1);
  const OwnerSplit s = split_owner_data(two, 3);
  EXPECT_EQ(s.validation.size(), 1);
  EXPECT_EQ(s.test.size(), 1);
  const Dataset d = blobs(3, 4, 1.0, 101, 2);
  const OwnerSplit a = split_owner_data(d, 9), b = split_owner_data(d, 9);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.validation.size() + a.test.size(), 101);
}

TEST(MlCore, DatasetSerializationRoundTrips) {
  const Dataset d = blobs(3, 4, 1.0, 12, 5);
  EXPECT_EQ(Dataset::deserialize(d.serialize()), d);
}

TEST(MlCore, IdxFilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "poc_idx_test";
  std::filesystem::create_directories(dir);
  IdxArray images{{3, 2, 2}, {0, 255, 128, 64, 1, 2, 3, 4, 10, 20, 30, 40}};
  IdxArray labels{{3}, {1, 0, 2}};
  write_idx(dir / "img.idx", images);
  write_idx(dir / "lbl.idx", labels);
  const IdxArray back = read_idx(dir / "img.idx");
  EXPECT_EQ(back.dims, images.dims);
  EXPECT_EQ(back.data, images.data);
  const Dataset d = load_idx_dataset(dir / "img.idx", dir / "lbl.idx", 3);
  EXPECT_EQ(d.size(), 3);
  EXPECT_EQ(d.dim(), 4);
  EXPECT_NEAR(d.features()(0, 1), 1.0, 1e-4);
  EXPECT_EQ(d.labels(), (std::vector<int>{1, 0, 2}));
  std::ofstream(dir / "bad.idx") << "nope";
  EXPECT_THROW(read_idx(dir / "bad.idx"), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace poc::ml
