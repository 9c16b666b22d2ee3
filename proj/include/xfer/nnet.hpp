#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xfer/rng.hpp"

// Dense feed-forward networks with explicit forward traces and reverse-mode
// gradients. Shared by the reward, classifier and discriminator models.
namespace xfer::nnet {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix column(std::span<const double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

enum class Activation { identity, tanh, relu, sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Layer maps x (n x fan_in) to act(x * weight + bias); weight is fan_in x fan_out.
struct Layer {
  Matrix weight;
  std::vector<double> bias;
  Activation activation = Activation::identity;

  bool operator==(const Layer&) const = default;
};

class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<Layer> layers);

  /// Glorot-uniform weights and zero biases. `dims` lists every width from
  /// input to output; hidden layers use `hidden`, the last layer `output`.
  static DenseNet glorot(std::span<const std::size_t> dims, Activation hidden, Activation output,
                         Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Parameters in the canonical order: per layer, weights row-major, then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  bool operator==(const DenseNet&) const = default;

 private:
  void validate() const;
  std::vector<Layer> layers_;
};

/// Everything backward() needs: per-layer inputs and pre-activations.
struct Trace {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  Matrix output;
};

Trace forward(const DenseNet& net, const Matrix& x);
Matrix predict(const DenseNet& net, const Matrix& x);

struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;

  static Gradients zeros_like(const DenseNet& net);
  std::vector<double> flatten() const;
  void add(const Gradients& other, double scale = 1.0);
  double norm() const;
  bool finite() const;
};

struct BackwardResult {
  Gradients grads;
  Matrix d_input;
};

/// Reverse-mode derivatives of sum(output .* d_out).
BackwardResult backward(const DenseNet& net, const Trace& trace, const Matrix& d_out);

/// Backward rule of a gradient-reversal point (identity in the forward pass).
Matrix grad_reverse(const Matrix& d_out, double lambda);

enum class Method { sgd, adam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Optimizer over a flat parameter vector. Minimises: p <- p - lr * update(g).
class OptimState {
 public:
  OptimState(Method method, double learning_rate, std::size_t parameter_count);

  Method method() const { return method_; }
  double learning_rate() const { return learning_rate_; }
  std::size_t step_count() const { return step_count_; }
  std::size_t parameter_count() const { return m_.size(); }

  void apply(std::span<double> params, std::span<const double> grads);

 private:
  Method method_;
  double learning_rate_;
  AdamParams adam_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t step_count_ = 0;
};

void optimizer_step(DenseNet& net, const Gradients& grads, OptimState& state);

/// Central-difference gradient of `loss` at `net`; test oracle for backward().
Gradients finite_diff_grad(const std::function<double(const DenseNet&)>& loss, const DenseNet& net,
                           double eps);

inline constexpr double kProbFloor = 1e-7;
double clamp_probability(double p);
double sigmoid(double x);

nlohmann::json to_json(const DenseNet& net);
DenseNet net_from_json(const nlohmann::json& j);

}  // namespace xfer::nnet
