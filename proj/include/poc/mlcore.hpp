#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "poc/bytes.hpp"
#include "poc/linalg.hpp"
#include "poc/rng.hpp"

namespace poc::ml {

/// Labelled samples. Features are kept on the fixed-point grid so the
/// committed (fixed-point) form and the training (double) form agree exactly.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Eigen::MatrixXd features, std::vector<int> labels, int num_classes);

  Eigen::Index size() const noexcept { return features_.rows(); }
  Eigen::Index dim() const noexcept { return features_.cols(); }
  int num_classes() const noexcept { return num_classes_; }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  FixedMatrix fixed_features() const;
  Dataset subset(std::span<const size_t> rows) const;
  std::vector<int64_t> label_histogram() const;

  Bytes serialize() const;
  static Dataset deserialize(std::span<const uint8_t> bytes);

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_classes_ == b.num_classes_ && a.labels_ == b.labels_ && a.features_ == b.features_;
  }

 private:
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  int num_classes_ = 0;
};

enum class ModelKind { kLogistic, kMlp };

/// Architecture description; determines the parameter layout.
struct ModelSpec {
  ModelKind kind = ModelKind::kLogistic;
  int dim = 0;
  int classes = 0;
  int hidden = 32;

  Layout layout() const;
  /// Recovers the architecture from layer names and shapes.
  static ModelSpec from_layout(const Layout& layout);
};

/// LR starts at zero; the MLP draws small Gaussian weights (zero biases).
ModelWeights init_model(const ModelSpec& spec, uint64_t seed);

struct TrainerConfig {
  double learning_rate = 0.1;
  int epochs = 1;
  int batch_size = 20;
  uint64_t seed = 0;
};

/// Mean cross-entropy of the model on `data`, computed in double.
double local_loss(const ModelWeights& w, const Dataset& data);

/// Deterministic minibatch SGD. Throws `kDivergence` on non-finite loss.
ModelWeights train_local(const ModelWeights& w0, const Dataset& data, const TrainerConfig& cfg);

/// Fixed-point inference trace. For the MLP, `pre` holds hidden
/// pre-activations and `hidden` their ReLU; both are empty for LR.
struct FixedForward {
  FixedMatrix logits;
  FixedMatrix pre;     ///< MLP only
  FixedMatrix hidden;  ///< MLP only, relu(pre)
  RemainderMatrix logits_remainder;
  RemainderMatrix pre_remainder;
};

/// Weight matrix of layer `name` ({out, in}) transposed to in x out.
FixedMatrix layer_transposed(const ModelWeights& w, const std::string& name);

FixedForward forward_fixed(const ModelWeights& w, const FixedMatrix& features);

/// Row-wise argmax with ties broken toward the lowest index.
std::vector<int> argmax_rows(const FixedMatrix& logits);

/// Number of samples whose argmax logit equals the label (no softmax).
int64_t correct_count(const ModelWeights& w, const Dataset& data);
double accuracy(const ModelWeights& w, const Dataset& data);

enum class AttackKind { kNone, kByzantine, kBackdoor };

struct AttackSpec {
  AttackKind kind = AttackKind::kNone;
  double sigma = 1.0;  ///< Byzantine noise scale.
  double beta = 10.0;  ///< Backdoor scale factor.
};

/// Trigger rule: samples whose first feature exceeds its 90th percentile are relabelled to class 0.
Dataset poison_dataset(const Dataset& data);

/// Byzantine: i.i.d. N(0, sigma^2) weights independent of the input.
/// Backdoor: beta * w (the input should already be trained on poisoned data).
ModelWeights apply_attack(const ModelWeights& w, const AttackSpec& spec, Rng& rng);

/// Full malicious local step: backdoor trains on poisoned data first.
ModelWeights malicious_update(const ModelWeights& base, const Dataset& data, const TrainerConfig& cfg,
                              const AttackSpec& spec, Rng& rng);

enum class PartitionScheme { kIid, kLabelExclusive, kRareLabel };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kIid;
  std::vector<int> rare_labels{0, 1};
  size_t holder = 0;  ///< Shard index receiving the rare labels.
};

/// Splits `data` into `count` equally sized shards. Throws `kInsufficientData`.
std::vector<Dataset> partition(const Dataset& data, const PartitionSpec& spec, size_t count, uint64_t seed);

struct OwnerSplit {
  Dataset validation;
  Dataset test;
};

/// Seeded 50/50 split of the project owner's data.
OwnerSplit split_owner_data(const Dataset& data, uint64_t seed);

/// Synthetic Gaussian-blob classification task. Class centres are fixed by
/// `center_seed`; samples are centre + N(0, 1) per coordinate.
struct BlobSpec {
  int dim = 20;
  int classes = 10;
  double separation = 1.0;
  uint64_t center_seed = 0;
};

/// Class-balanced sample (label i % K before shuffling).
Dataset sample_blobs(const BlobSpec& spec, size_t n, uint64_t seed);

// IDX files (big-endian magic + dimensions, unsigned-byte payload).
struct IdxArray {
  std::vector<uint32_t> dims;
  std::vector<uint8_t> data;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);
/// Images are flattened and scaled to [0, 1].
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes);

/// Structured-text manifest pointing at IDX files.
struct DataManifest {
  std::filesystem::path train_images, train_labels, owner_images, owner_labels;
  int num_classes = 10;
  uint64_t split_seed = 0;
};

/// Relative paths resolve against the manifest's directory.
DataManifest read_manifest(const std::filesystem::path& path);

}  // namespace poc::ml
