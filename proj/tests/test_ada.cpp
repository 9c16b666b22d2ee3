#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xfer/ada.hpp"
#include "xfer/error.hpp"

using namespace xfer;
using namespace xfer::ada;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.feature_hidden = {4, 4};
  a.label_hidden = {4};
  a.domain_hidden = {4};
  return a;
}

LabelledBatch small_batch(double rotation, std::uint64_t seed, std::size_t n) {
  DomainSpec spec;
  spec.rotation_deg = rotation;
  spec.n_per_class = n;
  Rng rng(seed);
  return sample_domain(spec, rng);
}

// Independent reference: label loss on the source rows and mean domain BCE.
double composed_objective(const AdaModel& m, const LabelledBatch& src, const LabelledBatch& tgt, double lambda) {
  const auto ls = ada_losses(m, src, tgt);
  return ls.label_loss - lambda * ls.domain_loss;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("sample_domain rows alternate classes and respect the spec") {
  const auto b = small_batch(0.0, 1, 50);
  REQUIRE(b.size() == 100);
  REQUIRE(b.labels.size() == 100);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b.labels[i] == static_cast<int>(i % 2));
  DomainSpec bad;
  bad.noise_std = 0.0;
  Rng rng(0);
  CHECK_THROWS_AS(sample_domain(bad, rng), InvalidInput);
  CHECK_THROWS_AS(shape_from_string("three_moons"), InvalidInput);
  CHECK(shape_from_string(to_string(Shape::two_gaussians)) == Shape::two_gaussians);
}

TEST_CASE("rotation by 360 degrees reproduces the unrotated batch") {
  CHECK(small_batch(0.0, 7, 100).points == small_batch(360.0, 7, 100).points);
}

TEST_CASE("class means at 90 degrees match the rotated analytic means") {
  for (Shape shape : {Shape::two_moons, Shape::two_gaussians}) {
    DomainSpec spec;
    spec.base_shape = shape;
    spec.rotation_deg = 90.0;
    spec.n_per_class = 5000;
    Rng rng(3);
    const auto b = sample_domain(spec, rng);
    const auto means = canonical_class_means(shape);
    for (int cls = 0; cls < 2; ++cls) {
      // Rotating (x, y) by 90 degrees counter-clockwise gives (-y, x).
      const double expect[2] = {-means[cls][1], means[cls][0]};
      for (std::size_t d = 0; d < 2; ++d) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < b.size(); ++i) {
          if (b.labels[i] != cls) continue;
          sum += b.points(i, d);
          sq += b.points(i, d) * b.points(i, d);
          ++n;
        }
        const double mean = sum / n;
        const double sd = std::sqrt(sq / n - mean * mean);
        CHECK(std::abs(mean - expect[d]) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
      }
    }
  }
}

TEST_CASE("model heads chain dimensions and the domain head stays inside (0, 1)") {
  Rng rng(0);
  const auto m = AdaModel::create(ArchConfig{}, rng);
  CHECK(m.feature_net.input_dim() == 2);
  CHECK(m.label_head.input_dim() == m.feature_net.output_dim());
  CHECK(m.domain_head.input_dim() == m.feature_net.output_dim());
  CHECK(m.label_head.output_dim() == kClasses);
  CHECK(m.domain_head.output_dim() == 1);
  const auto far = nnet::Matrix::from_rows({{1e6, -1e6}, {-1e6, 1e6}, {0, 0}});
  for (double p : domain_probability(m, far)) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("lambda zero leaves the feature gradient equal to the label-only gradient") {
  Rng rng(5);
  const auto m = AdaModel::create(tiny_arch(), rng);
  const auto src = small_batch(0.0, 11, 8);
  const auto tgt = small_batch(45.0, 12, 8);
  const auto g = ada_gradients(m, src, tgt, 0.0);

  // Label-only path computed by hand on the source rows.
  const auto f = nnet::forward(m.feature_net, src.points);
  const auto l = nnet::forward(m.label_head, f.output);
  nnet::Matrix d_logits(src.size(), kClasses);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double a = l.output(i, 0), b = l.output(i, 1);
    const double mx = std::max(a, b);
    const double z = std::exp(a - mx) + std::exp(b - mx);
    for (std::size_t k = 0; k < kClasses; ++k) {
      const double p = std::exp(l.output(i, k) - mx) / z;
      d_logits(i, k) = (p - (static_cast<int>(k) == src.labels[i] ? 1.0 : 0.0)) / static_cast<double>(src.size());
    }
  }
  const auto lb = nnet::backward(m.label_head, l, d_logits);
  const auto fb = nnet::backward(m.feature_net, f, lb.d_input);
  CHECK(g.feature.flatten() == fb.grads.flatten());
  CHECK(g.label.flatten() == lb.grads.flatten());
}

TEST_CASE("feature gradient matches finite differences of label minus lambda times domain loss") {
  Rng rng(9);
  const auto m = AdaModel::create(tiny_arch(), rng);
  CHECK(m.feature_net.parameter_count() + m.label_head.parameter_count() + m.domain_head.parameter_count() <= 200);
  const auto src = small_batch(0.0, 21, 6);
  auto tgt = small_batch(60.0, 22, 6);
  tgt.labels.clear();
  for (double lambda : {0.0, 0.3, 1.0}) {
    const auto g = ada_gradients(m, src, tgt, lambda);
    const auto fd = nnet::finite_diff_grad(
        [&](const nnet::DenseNet& net) {
          AdaModel p = m;
          p.feature_net = net;
          return composed_objective(p, src, tgt, lambda);
        },
        m.feature_net, 1e-6);
    CHECK(max_relative_error(g.feature.flatten(), fd.flatten()) < 1e-4);
    const auto fd_domain = nnet::finite_diff_grad(
        [&](const nnet::DenseNet& net) {
          AdaModel p = m;
          p.domain_head = net;
          return ada_losses(p, src, tgt).domain_loss;
        },
        m.domain_head, 1e-6);
    CHECK(max_relative_error(g.domain.flatten(), fd_domain.flatten()) < 1e-4);
  }
}

TEST_CASE("ada_gradients validates its inputs") {
  Rng rng(0);
  const auto m = AdaModel::create(tiny_arch(), rng);
  auto src = small_batch(0.0, 1, 4);
  const auto tgt = small_batch(0.0, 2, 4);
  src.labels.clear();
  CHECK_THROWS_AS(ada_gradients(m, src, tgt, 1.0), InvalidInput);
  CHECK_THROWS_AS(ada_gradients(m, tgt, tgt, -1.0), InvalidInput);
}

TEST_CASE("identical source and target drive the domain head towards one half") {
  Rng rng(4);
  auto m = AdaModel::create(ArchConfig{}, rng);
  auto optim = AdaOptimizers::adam(m, 1e-3);
  const auto batch = small_batch(0.0, 8, 32);
  for (int step = 0; step < 500; ++step) ada_step(m, optim, batch, batch, 1.0);
  const auto p = domain_probability(m, batch.points);
  double mean = 0.0;
  for (double v : p) mean += std::abs(v - 0.5);
  CHECK(mean / static_cast<double>(p.size()) < 0.05);
}

TEST_CASE("lambda schedule ramps linearly over the first half") {
  CHECK(lambda_schedule(0, 100, 2.0) == 0.0);
  CHECK(lambda_schedule(25, 100, 2.0) == doctest::Approx(1.0));
  CHECK(lambda_schedule(50, 100, 2.0) == 2.0);
  CHECK(lambda_schedule(99, 100, 2.0) == 2.0);
  CHECK(lambda_schedule(0, 0, 2.0) == 2.0);
}

TEST_CASE("zero training steps give chance-level accuracy on average") {
  AdaConfig cfg;
  cfg.steps = 0;
  DomainSpec src;
  double total = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s);
    total += train_ada(src, src, cfg).stages[0].tgt_acc;
  }
  CHECK(std::abs(total / seeds - 0.5) < 0.15);
}

TEST_CASE("adapting to the source domain costs at most two points") {
  AdaConfig cfg;
  cfg.seed = 2;
  DomainSpec src;
  const auto r = train_ada(src, src, cfg);
  CHECK(r.stages[0].tgt_acc >= r.stages[0].baseline_tgt_acc - 0.02);
  CHECK(r.stages[0].src_acc > 0.95);
}

TEST_CASE("a singleton stream reproduces train_ada byte for byte") {
  AdaConfig cfg;
  cfg.seed = 6;
  cfg.steps = 200;
  DomainSpec src, tgt;
  tgt.rotation_deg = 30.0;
  const auto a = train_ada(src, tgt, cfg);
  const DomainSpec stream[] = {tgt};
  const auto b = train_iada(src, stream, cfg);
  CHECK(a.model == b.model);
  CHECK(a.baseline == b.baseline);
  CHECK(a.to_csv() == b.to_csv());
  CHECK_THROWS_AS(train_iada(src, std::span<const DomainSpec>{}, cfg), InvalidInput);
}

TEST_CASE("a stream of identical domains keeps accuracy flat") {
  DomainSpec src;
  const DomainSpec stream[] = {src, src, src};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    AdaConfig cfg;
    cfg.seed = seed;
    const auto r = train_iada(src, stream, cfg);
    REQUIRE(r.stages.size() == 3);
    double lo = 1.0, hi = 0.0;
    for (const auto& s : r.stages) {
      lo = std::min(lo, s.tgt_acc);
      hi = std::max(hi, s.tgt_acc);
    }
    CHECK(hi - lo < 0.03);
  }
}

TEST_CASE("csv has one row per stage") {
  AdaConfig cfg;
  cfg.steps = 10;
  DomainSpec src, a, b;
  a.rotation_deg = 10;
  b.rotation_deg = 20;
  const DomainSpec stream[] = {a, b};
  const auto csv = train_iada(src, stream, cfg).to_csv();
  CHECK(csv.rfind("stage,rotation_deg,src_acc,tgt_acc,baseline_tgt_acc,seed\n0,10,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("decision raster covers the grid with probabilities") {
  Rng rng(0);
  const auto m = AdaModel::create(tiny_arch(), rng);
  const auto r = decision_raster(m, 5, -2.0, 2.0);
  CHECK(r.size() == 25);
  for (double v : r) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(decision_raster(m, 1, 0, 1), InvalidInput);
}
