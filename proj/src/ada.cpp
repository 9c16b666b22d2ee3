#include "xfer/ada.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xfer/error.hpp"
#include "xfer/io.hpp"

namespace xfer::ada {

std::string to_string(Shape s) { return s == Shape::two_moons ? "two_moons" : "two_gaussians"; }

Shape shape_from_string(const std::string& name) {
  if (name == "two_moons") return Shape::two_moons;
  if (name == "two_gaussians") return Shape::two_gaussians;
  throw InvalidInput("unknown base_shape '" + name + "'");
}

namespace {

// Moons are shifted so that the union of both classes is centred on the origin.
constexpr double kMoonShiftX = 0.5;
constexpr double kMoonShiftY = 0.25;
constexpr double kGaussianOffset = 1.0;

}  // namespace

std::array<std::array<double, 2>, kClasses> canonical_class_means(Shape shape) {
  if (shape == Shape::two_gaussians) return {{{-kGaussianOffset, 0.0}, {kGaussianOffset, 0.0}}};
  const double arch = 2.0 / std::numbers::pi;  // mean of sin(t) for t ~ U[0, pi]
  return {{{0.0 - kMoonShiftX, arch - kMoonShiftY}, {1.0 - kMoonShiftX, 0.5 - arch - kMoonShiftY}}};
}

LabelledBatch sample_domain(const DomainSpec& spec, Rng& rng, std::size_t domain_id) {
  require(spec.noise_std > 0.0, "sample_domain: noise_std must be positive");
  require(spec.n_per_class > 0, "sample_domain: n_per_class must be positive");
  const double theta = std::fmod(spec.rotation_deg, 360.0) * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  LabelledBatch batch;
  batch.domain_id = domain_id;
  batch.points = nnet::Matrix(2 * spec.n_per_class, 2);
  batch.labels.resize(2 * spec.n_per_class);
  for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    double x = 0.0;
    double y = 0.0;
    if (spec.base_shape == Shape::two_moons) {
      const double t = rng.uniform() * std::numbers::pi;
      if (label == 0) {
        x = std::cos(t) - kMoonShiftX;
        y = std::sin(t) - kMoonShiftY;
      } else {
        x = 1.0 - std::cos(t) - kMoonShiftX;
        y = 0.5 - std::sin(t) - kMoonShiftY;
      }
    } else {
      x = label == 0 ? -kGaussianOffset : kGaussianOffset;
    }
    const double nx = rng.normal(0.0, spec.noise_std);
    const double ny = rng.normal(0.0, spec.noise_std);
    batch.points(i, 0) = c * x - s * y + nx;
    batch.points(i, 1) = s * x + c * y + ny;
    batch.labels[i] = label;
  }
  return batch;
}

AdaModel AdaModel::create(const ArchConfig& arch, Rng& rng) {
  require(!arch.feature_hidden.empty(), "AdaModel: the feature net needs at least one layer");
  using nnet::Activation;
  std::vector<std::size_t> f{2};
  f.insert(f.end(), arch.feature_hidden.begin(), arch.feature_hidden.end());
  const std::size_t embed = f.back();
  std::vector<std::size_t> l{embed};
  l.insert(l.end(), arch.label_hidden.begin(), arch.label_hidden.end());
  l.push_back(kClasses);
  std::vector<std::size_t> d{embed};
  d.insert(d.end(), arch.domain_hidden.begin(), arch.domain_hidden.end());
  d.push_back(1);
  AdaModel m;
  m.feature_net = nnet::DenseNet::glorot(f, Activation::tanh, Activation::tanh, rng);
  m.label_head = nnet::DenseNet::glorot(l, Activation::tanh, Activation::identity, rng);
  m.domain_head = nnet::DenseNet::glorot(d, Activation::tanh, Activation::sigmoid, rng);
  return m;
}

AdaOptimizers AdaOptimizers::adam(const AdaModel& model, double learning_rate) {
  return {nnet::OptimState(nnet::Method::adam, learning_rate, model.feature_net.parameter_count()),
          nnet::OptimState(nnet::Method::adam, learning_rate, model.label_head.parameter_count()),
          nnet::OptimState(nnet::Method::adam, learning_rate, model.domain_head.parameter_count())};
}

namespace {

nnet::Matrix stack(const nnet::Matrix& a, const nnet::Matrix& b) {
  require(a.cols == b.cols, "stack: column mismatch");
  nnet::Matrix out(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

// Mean softmax cross-entropy and its gradient with respect to the logits.
double softmax_xent(const nnet::Matrix& logits, std::span<const int> labels, nnet::Matrix* d_logits) {
  const std::size_t n = logits.rows;
  double loss = 0.0;
  if (d_logits) *d_logits = nnet::Matrix(n, logits.cols);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += -(row[y] - m - std::log(z));
    if (d_logits) {
      for (std::size_t k = 0; k < row.size(); ++k) {
        const double p = std::exp(row[k] - m) / z;
        (*d_logits)(i, k) = (p - (k == y ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  }
  return loss / static_cast<double>(n);
}

// Mean binary cross-entropy on clamped probabilities; rows [0, n_src) have
// label 0, the rest label 1. The gradient is with respect to the probabilities.
double domain_xent(const nnet::Matrix& probs, std::size_t n_src, nnet::Matrix* d_probs) {
  const std::size_t n = probs.rows;
  double loss = 0.0;
  if (d_probs) *d_probs = nnet::Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = nnet::clamp_probability(probs(i, 0));
    const double y = i < n_src ? 0.0 : 1.0;
    loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    if (d_probs) (*d_probs)(i, 0) = (-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

void check_batches(const LabelledBatch& src, const LabelledBatch& tgt) {
  require(src.has_labels(), "ada: the source batch must be labelled");
  require(src.labels.size() == src.size(), "ada: label count does not match point count");
  require(src.size() > 0 && tgt.size() > 0, "ada: empty batch");
}

}  // namespace

AdaGradients ada_gradients(const AdaModel& model, const LabelledBatch& src, const LabelledBatch& tgt, double lambda) {
  check_batches(src, tgt);
  const std::size_t n_src = src.size();
  const nnet::Matrix x = stack(src.points, tgt.points);
  const auto f_trace = nnet::forward(model.feature_net, x);
  const nnet::Matrix& h = f_trace.output;

  // Label head sees the source rows only.
  nnet::Matrix h_src(n_src, h.cols);
  std::copy_n(h.data.begin(), h_src.data.size(), h_src.data.begin());
  const auto l_trace = nnet::forward(model.label_head, h_src);
  nnet::Matrix d_logits;
  AdaGradients out;
  out.losses.label_loss = softmax_xent(l_trace.output, src.labels, &d_logits);
  auto l_back = nnet::backward(model.label_head, l_trace, d_logits);
  out.label = std::move(l_back.grads);

  const auto d_trace = nnet::forward(model.domain_head, h);
  nnet::Matrix d_probs;
  out.losses.domain_loss = domain_xent(d_trace.output, n_src, &d_probs);
  auto d_back = nnet::backward(model.domain_head, d_trace, d_probs);
  out.domain = std::move(d_back.grads);

  nnet::Matrix d_h = nnet::grad_reverse(d_back.d_input, lambda);
  for (std::size_t i = 0; i < l_back.d_input.data.size(); ++i) d_h.data[i] += l_back.d_input.data[i];
  out.feature = nnet::backward(model.feature_net, f_trace, d_h).grads;
  return out;
}

AdaLosses ada_losses(const AdaModel& model, const LabelledBatch& src, const LabelledBatch& tgt) {
  check_batches(src, tgt);
  const nnet::Matrix h_src = nnet::predict(model.feature_net, src.points);
  const nnet::Matrix h_all = stack(h_src, nnet::predict(model.feature_net, tgt.points));
  AdaLosses out;
  out.label_loss = softmax_xent(nnet::predict(model.label_head, h_src), src.labels, nullptr);
  out.domain_loss = domain_xent(nnet::predict(model.domain_head, h_all), src.size(), nullptr);
  return out;
}

AdaLosses ada_step(AdaModel& model, AdaOptimizers& optim, const LabelledBatch& src, const LabelledBatch& tgt,
                   double lambda) {
  auto g = ada_gradients(model, src, tgt, lambda);
  if (!std::isfinite(g.losses.label_loss) || !std::isfinite(g.losses.domain_loss)) {
    throw TrainingDiverged("ada: non-finite loss");
  }
  nnet::optimizer_step(model.feature_net, g.feature, optim.feature);
  nnet::optimizer_step(model.label_head, g.label, optim.label);
  nnet::optimizer_step(model.domain_head, g.domain, optim.domain);
  return g.losses;
}

std::vector<int> classify(const AdaModel& model, const nnet::Matrix& points) {
  const auto logits = nnet::predict(model.label_head, nnet::predict(model.feature_net, points));
  std::vector<int> out(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(const AdaModel& model, const LabelledBatch& batch) {
  require(batch.has_labels(), "accuracy: batch has no labels");
  const auto pred = classify(model, batch.points);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<double> domain_probability(const AdaModel& model, const nnet::Matrix& points) {
  const auto p = nnet::predict(model.domain_head, nnet::predict(model.feature_net, points));
  std::vector<double> out(p.rows);
  for (std::size_t i = 0; i < p.rows; ++i) out[i] = nnet::clamp_probability(p(i, 0));
  return out;
}

double lambda_schedule(std::size_t step, std::size_t total_steps, double lambda_max) {
  const double ramp = static_cast<double>(total_steps) / 2.0;
  if (ramp <= 0.0) return lambda_max;
  return lambda_max * std::min(1.0, static_cast<double>(step) / ramp);
}

std::string AdaResult::to_csv() const {
  std::string out = "stage,rotation_deg,src_acc,tgt_acc,baseline_tgt_acc,seed\n";
  for (const auto& s : stages) {
    out += std::to_string(s.stage) + ',' + io::format_double(s.rotation_deg) + ',' + io::format_double(s.src_acc) +
           ',' + io::format_double(s.tgt_acc) + ',' + io::format_double(s.baseline_tgt_acc) + ',' +
           std::to_string(s.seed) + '\n';
  }
  return out;
}

namespace {

LabelledBatch minibatch(const LabelledBatch& data, std::size_t size, Rng& rng) {
  LabelledBatch b;
  b.domain_id = data.domain_id;
  b.points = nnet::Matrix(size, data.points.cols);
  if (data.has_labels()) b.labels.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(data.size()));
    std::copy_n(data.points.row(j).begin(), data.points.cols, b.points.row(i).begin());
    if (data.has_labels()) b.labels[i] = data.labels[j];
  }
  return b;
}

LabelledBatch unlabelled(LabelledBatch b) {
  b.labels.clear();
  return b;
}

void train_stage(AdaModel& model, const LabelledBatch& src, const LabelledBatch& tgt, const AdaConfig& config,
                 bool adversarial, bool warm_up, Rng batch_rng) {
  AdaOptimizers optim = AdaOptimizers::adam(model, config.learning_rate);
  for (std::size_t step = 0; step < config.steps; ++step) {
    double lambda = 0.0;
    if (adversarial) lambda = warm_up ? lambda_schedule(step, config.steps, config.lambda_max) : config.lambda_max;
    const auto sb = minibatch(src, config.batch_size, batch_rng);
    const auto tb = minibatch(tgt, config.batch_size, batch_rng);
    ada_step(model, optim, sb, tb, lambda);
  }
}

}  // namespace

AdaResult train_iada(const DomainSpec& src, std::span<const DomainSpec> stream, const AdaConfig& config) {
  require(!stream.empty(), "train_iada: the domain stream is empty");
  require(config.batch_size > 0, "ada: batch_size must be positive");
  require(config.lambda_max >= 0.0, "ada: lambda_max must be nonnegative");
  Rng root(config.seed);
  Rng data_rng = root.split();
  Rng init_rng = root.split();
  Rng batch_rng = root.split();

  DomainSpec test_spec = src;
  test_spec.n_per_class = config.test_per_class;
  const LabelledBatch src_train = sample_domain(src, data_rng, 0);
  const LabelledBatch src_test = sample_domain(test_spec, data_rng, 0);
  std::vector<LabelledBatch> tgt_train;
  std::vector<LabelledBatch> tgt_test;
  for (std::size_t k = 0; k < stream.size(); ++k) {
    tgt_train.push_back(unlabelled(sample_domain(stream[k], data_rng, k + 1)));
    DomainSpec t = stream[k];
    t.n_per_class = config.test_per_class;
    tgt_test.push_back(sample_domain(t, data_rng, k + 1));
  }

  AdaResult result;
  result.model = AdaModel::create(config.arch, init_rng);
  result.baseline = result.model;
  // The baseline shares the initialisation and minibatch stream of stage 0.
  train_stage(result.baseline, src_train, tgt_train.front(), config, false, false, batch_rng);

  // Only the first stage warms lambda up; later stages start from an aligned embedding.
  for (std::size_t k = 0; k < stream.size(); ++k) {
    train_stage(result.model, src_train, tgt_train[k], config, true, k == 0, k == 0 ? batch_rng : batch_rng.split());
    StageMetrics m;
    m.stage = k;
    m.rotation_deg = stream[k].rotation_deg;
    m.src_acc = accuracy(result.model, src_test);
    m.tgt_acc = accuracy(result.model, tgt_test[k]);
    m.baseline_tgt_acc = accuracy(result.baseline, tgt_test[k]);
    m.seed = config.seed;
    result.stages.push_back(m);
  }
  return result;
}

AdaResult train_ada(const DomainSpec& src, const DomainSpec& tgt, const AdaConfig& config) {
  const DomainSpec stream[] = {tgt};
  return train_iada(src, stream, config);
}

std::vector<double> decision_raster(const AdaModel& model, std::size_t resolution, double lo, double hi) {
  require(resolution >= 2, "decision_raster: resolution must be at least 2");
  nnet::Matrix pts(resolution * resolution, 2);
  for (std::size_t r = 0; r < resolution; ++r) {
    for (std::size_t c = 0; c < resolution; ++c) {
      const double step = (hi - lo) / static_cast<double>(resolution - 1);
      pts(r * resolution + c, 0) = lo + step * static_cast<double>(c);
      pts(r * resolution + c, 1) = hi - step * static_cast<double>(r);  // top row = highest y
    }
  }
  const auto logits = nnet::predict(model.label_head, nnet::predict(model.feature_net, pts));
  std::vector<double> out(pts.rows);
  for (std::size_t i = 0; i < pts.rows; ++i) {
    const double a = logits(i, 0), b = logits(i, 1);
    out[i] = nnet::sigmoid(b - a);
  }
  return out;
}

}  // namespace xfer::ada
