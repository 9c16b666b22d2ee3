#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xfer/nnet.hpp"
#include "xfer/rng.hpp"

// Domain-adversarial training through a gradient-reversal point, and its
// incremental variant over a stream of progressively shifted domains.
namespace xfer::ada {

enum class Shape { two_moons, two_gaussians };

std::string to_string(Shape s);
Shape shape_from_string(const std::string& name);

struct DomainSpec {
  Shape base_shape = Shape::two_moons;
  double rotation_deg = 0.0;
  double noise_std = 0.1;
  std::size_t n_per_class = 200;
};

/// Points are n x 2; labels are empty for unlabelled batches.
struct LabelledBatch {
  nnet::Matrix points;
  std::vector<int> labels;
  std::size_t domain_id = 0;

  bool has_labels() const { return !labels.empty(); }
  std::size_t size() const { return points.rows; }
};

inline constexpr std::size_t kClasses = 2;

/// Canonical shape centred on the origin, rotated counter-clockwise by
/// rotation_deg, plus isotropic Gaussian noise. Rows alternate class 0 / 1.
LabelledBatch sample_domain(const DomainSpec& spec, Rng& rng, std::size_t domain_id = 0);

/// Noise-free class means of the canonical (unrotated) shape.
std::array<std::array<double, 2>, kClasses> canonical_class_means(Shape shape);

struct ArchConfig {
  std::vector<std::size_t> feature_hidden{32, 32};
  std::vector<std::size_t> label_hidden{32};
  std::vector<std::size_t> domain_hidden{32};
};

/// Feature embedding plus label and domain heads. The feature net's last
/// hidden width is the embedding width.
struct AdaModel {
  nnet::DenseNet feature_net;
  nnet::DenseNet label_head;
  nnet::DenseNet domain_head;

  static AdaModel create(const ArchConfig& arch, Rng& rng);
  bool operator==(const AdaModel&) const = default;
};

struct AdaOptimizers {
  nnet::OptimState feature;
  nnet::OptimState label;
  nnet::OptimState domain;

  static AdaOptimizers adam(const AdaModel& model, double learning_rate);
};

struct AdaLosses {
  double label_loss = 0.0;
  double domain_loss = 0.0;
};

struct AdaGradients {
  AdaLosses losses;
  /// Label-loss gradient plus the reversed domain-loss gradient.
  nnet::Gradients feature;
  nnet::Gradients label;
  nnet::Gradients domain;
};

/// Source rows carry domain label 0, target rows domain label 1.
AdaGradients ada_gradients(const AdaModel& model, const LabelledBatch& src, const LabelledBatch& tgt, double lambda);

/// Label cross-entropy on the source plus domain cross-entropy on src and tgt,
/// with the domain gradient reversed (scaled by lambda) into the feature net.
AdaLosses ada_step(AdaModel& model, AdaOptimizers& optim, const LabelledBatch& src, const LabelledBatch& tgt,
                   double lambda);

/// The two loss terms evaluated without gradients.
AdaLosses ada_losses(const AdaModel& model, const LabelledBatch& src, const LabelledBatch& tgt);

std::vector<int> classify(const AdaModel& model, const nnet::Matrix& points);
double accuracy(const AdaModel& model, const LabelledBatch& batch);
/// Clamped domain-head probabilities, one per point.
std::vector<double> domain_probability(const AdaModel& model, const nnet::Matrix& points);

struct AdaConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double lambda_max = 1.0;
  std::size_t test_per_class = 500;
  ArchConfig arch;
};

/// Linear warm-up from 0 to lambda_max over the first half of the steps.
double lambda_schedule(std::size_t step, std::size_t total_steps, double lambda_max);

struct StageMetrics {
  std::size_t stage = 0;
  double rotation_deg = 0.0;
  double src_acc = 0.0;
  double tgt_acc = 0.0;
  double baseline_tgt_acc = 0.0;
  std::uint64_t seed = 0;
};

struct AdaResult {
  AdaModel model;
  AdaModel baseline;
  std::vector<StageMetrics> stages;

  /// Columns: stage,rotation_deg,src_acc,tgt_acc,baseline_tgt_acc,seed.
  std::string to_csv() const;
};

/// Adapts a fresh model from `src` to `tgt`; also trains the source-only
/// baseline (lambda fixed at 0) from the same seed.
AdaResult train_ada(const DomainSpec& src, const DomainSpec& tgt, const AdaConfig& config);

/// Stage k adapts the model of stage k-1 towards stream[k], with the labelled
/// source data available at every stage. Lambda warms up in stage 0 only.
/// A one-element stream reproduces train_ada exactly.
AdaResult train_iada(const DomainSpec& src, std::span<const DomainSpec> stream, const AdaConfig& config);

/// Class-1 probability of the label head on a regular grid over [lo, hi]^2.
std::vector<double> decision_raster(const AdaModel& model, std::size_t resolution, double lo, double hi);

}  // namespace xfer::ada
