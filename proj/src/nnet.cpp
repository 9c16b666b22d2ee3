#include "xfer/nnet.hpp"

#include <algorithm>
#include <cmath>

#include "xfer/error.hpp"

namespace xfer::nnet {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == m.cols, "Matrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::column(std::span<const double> values) {
  Matrix m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data.begin());
  return m;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw InvalidInput("unknown activation '" + name + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sigmoid: return sigmoid(x);
  }
  return x;
}

// Derivative expressed through the pre-activation and the activated value.
double activation_slope(Activation a, double pre, double post) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - post * post;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return post * (1.0 - post);
  }
  return 1.0;
}

}  // namespace

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

void DenseNet::validate() const {
  require(!layers_.empty(), "DenseNet: at least one layer required");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.weight.data.size() == l.weight.rows * l.weight.cols, "DenseNet: weight storage size mismatch");
    require(l.bias.size() == l.weight.cols, "DenseNet: bias length must equal layer fan-out");
    if (i > 0) {
      require(layers_[i - 1].weight.cols == l.weight.rows, "DenseNet: adjacent layer dimensions do not chain");
    }
  }
}

DenseNet DenseNet::glorot(std::span<const std::size_t> dims, Activation hidden, Activation output,
                          Rng& rng) {
  require(dims.size() >= 2, "DenseNet::glorot: need input and output widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    require(fan_in > 0 && fan_out > 0, "DenseNet::glorot: zero-width layer");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Layer layer;
    layer.weight = Matrix(fan_in, fan_out);
    for (double& w : layer.weight.data) w = rng.uniform(-limit, limit);
    layer.bias.assign(fan_out, 0.0);
    layer.activation = (i + 2 == dims.size()) ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.rows; }
std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.cols; }

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.data.size() + l.bias.size();
  return n;
}

std::vector<double> DenseNet::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weight.data.begin(), l.weight.data.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void DenseNet::assign(std::span<const double> flat) {
  require(flat.size() == parameter_count(), "DenseNet::assign: parameter count mismatch");
  auto it = flat.begin();
  for (auto& l : layers_) {
    std::copy_n(it, l.weight.data.size(), l.weight.data.begin());
    it += static_cast<std::ptrdiff_t>(l.weight.data.size());
    std::copy_n(it, l.bias.size(), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
}

Trace forward(const DenseNet& net, const Matrix& x) {
  if (x.cols != net.input_dim()) {
    throw InvalidInput("forward: input has " + std::to_string(x.cols) + " columns, network expects " +
                       std::to_string(net.input_dim()));
  }
  Trace trace;
  trace.inputs.reserve(net.layers().size());
  trace.pre.reserve(net.layers().size());
  Matrix current = x;
  for (const auto& layer : net.layers()) {
    const std::size_t n = current.rows;
    const std::size_t in = layer.weight.rows;
    const std::size_t out = layer.weight.cols;
    Matrix pre(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < out; ++j) pre(r, j) = layer.bias[j];
      for (std::size_t k = 0; k < in; ++k) {
        const double xv = current(r, k);
        if (xv == 0.0) continue;
        const double* wrow = layer.weight.data.data() + k * out;
        double* prow = pre.data.data() + r * out;
        for (std::size_t j = 0; j < out; ++j) prow[j] += xv * wrow[j];
      }
    }
    Matrix post(n, out);
    for (std::size_t i = 0; i < pre.data.size(); ++i) post.data[i] = activate(layer.activation, pre.data[i]);
    trace.inputs.push_back(std::move(current));
    trace.pre.push_back(std::move(pre));
    current = std::move(post);
  }
  trace.output = std::move(current);
  return trace;
}

Matrix predict(const DenseNet& net, const Matrix& x) { return forward(net, x).output; }

Gradients Gradients::zeros_like(const DenseNet& net) {
  Gradients g;
  for (const auto& l : net.layers()) {
    g.layers.push_back({Matrix(l.weight.rows, l.weight.cols), std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> flat;
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data.begin(), l.weight.data.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void Gradients::add(const Gradients& other, double scale) {
  require(other.layers.size() == layers.size(), "Gradients::add: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& a = layers[i];
    const auto& b = other.layers[i];
    require(a.weight.data.size() == b.weight.data.size() && a.bias.size() == b.bias.size(),
            "Gradients::add: shape mismatch");
    for (std::size_t k = 0; k < a.weight.data.size(); ++k) a.weight.data[k] += scale * b.weight.data[k];
    for (std::size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += scale * b.bias[k];
  }
}

double Gradients::norm() const {
  double s = 0.0;
  for (double g : flatten()) s += g * g;
  return std::sqrt(s);
}

bool Gradients::finite() const {
  for (double g : flatten()) {
    if (!std::isfinite(g)) return false;
  }
  return true;
}

BackwardResult backward(const DenseNet& net, const Trace& trace, const Matrix& d_out) {
  const auto& layers = net.layers();
  require(trace.inputs.size() == layers.size() && trace.pre.size() == layers.size(),
          "backward: trace does not belong to this network");
  require(d_out.rows == trace.output.rows && d_out.cols == trace.output.cols,
          "backward: d_out shape does not match forward output");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    require(trace.inputs[i].cols == layers[i].weight.rows && trace.pre[i].cols == layers[i].weight.cols,
            "backward: trace does not belong to this network");
  }

  BackwardResult result;
  result.grads = Gradients::zeros_like(net);
  Matrix upstream = d_out;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    const Matrix& input = trace.inputs[li];
    const Matrix& pre = trace.pre[li];
    const Matrix& post = (li + 1 == layers.size()) ? trace.output : trace.inputs[li + 1];
    const std::size_t n = input.rows;
    const std::size_t in = layer.weight.rows;
    const std::size_t out = layer.weight.cols;

    Matrix delta(n, out);
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
      delta.data[i] = upstream.data[i] * activation_slope(layer.activation, pre.data[i], post.data[i]);
    }

    auto& g = result.grads.layers[li];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < in; ++k) {
        const double xv = input(r, k);
        for (std::size_t j = 0; j < out; ++j) g.weight(k, j) += xv * delta(r, j);
      }
      for (std::size_t j = 0; j < out; ++j) g.bias[j] += delta(r, j);
    }

    Matrix down(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < in; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < out; ++j) s += layer.weight(k, j) * delta(r, j);
        down(r, k) = s;
      }
    }
    upstream = std::move(down);
  }
  result.d_input = std::move(upstream);
  return result;
}

Matrix grad_reverse(const Matrix& d_out, double lambda) {
  require(lambda >= 0.0, "grad_reverse: lambda must be nonnegative");
  Matrix out = d_out;
  for (double& v : out.data) v = -lambda * v;
  return out;
}

OptimState::OptimState(Method method, double learning_rate, std::size_t parameter_count)
    : method_(method), learning_rate_(learning_rate) {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "OptimState: learning rate must be positive");
  if (method_ == Method::adam) {
    m_.assign(parameter_count, 0.0);
    v_.assign(parameter_count, 0.0);
  } else {
    m_.assign(parameter_count, 0.0);
  }
}

void OptimState::apply(std::span<double> params, std::span<const double> grads) {
  require(params.size() == grads.size() && params.size() == m_.size(),
          "optimizer: parameter/gradient shape mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) throw TrainingDiverged("optimizer: non-finite gradient");
  }
  ++step_count_;
  if (method_ == Method::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate_ * grads[i];
  } else {
    const double t = static_cast<double>(step_count_);
    const double c1 = 1.0 - std::pow(adam_.beta1, t);
    const double c2 = 1.0 - std::pow(adam_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = adam_.beta1 * m_[i] + (1.0 - adam_.beta1) * grads[i];
      v_[i] = adam_.beta2 * v_[i] + (1.0 - adam_.beta2) * grads[i] * grads[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + adam_.eps);
    }
  }
  for (double p : params) {
    if (!std::isfinite(p)) throw TrainingDiverged("optimizer: parameters became non-finite");
  }
}

void optimizer_step(DenseNet& net, const Gradients& grads, OptimState& state) {
  auto params = net.flatten();
  const auto flat = grads.flatten();
  state.apply(params, flat);
  net.assign(params);
}

Gradients finite_diff_grad(const std::function<double(const DenseNet&)>& loss, const DenseNet& net,
                           double eps) {
  require(eps > 0.0, "finite_diff_grad: eps must be positive");
  const auto base = net.flatten();
  std::vector<double> grad(base.size());
  DenseNet probe = net;
  auto params = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    params[i] = base[i] + eps;
    probe.assign(params);
    const double plus = loss(probe);
    params[i] = base[i] - eps;
    probe.assign(params);
    const double minus = loss(probe);
    params[i] = base[i];
    grad[i] = (plus - minus) / (2.0 * eps);
  }
  Gradients g = Gradients::zeros_like(net);
  auto it = grad.begin();
  for (auto& l : g.layers) {
    std::copy_n(it, l.weight.data.size(), l.weight.data.begin());
    it += static_cast<std::ptrdiff_t>(l.weight.data.size());
    std::copy_n(it, l.bias.size(), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
  return g;
}

nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"rows", l.weight.rows},
                      {"cols", l.weight.cols},
                      {"weights", l.weight.data},
                      {"bias", l.bias},
                      {"activation", to_string(l.activation)}});
  }
  return {{"layers", layers}};
}

DenseNet net_from_json(const nlohmann::json& j) {
  std::vector<Layer> layers;
  for (const auto& jl : j.at("layers")) {
    Layer l;
    l.weight.rows = jl.at("rows").get<std::size_t>();
    l.weight.cols = jl.at("cols").get<std::size_t>();
    l.weight.data = jl.at("weights").get<std::vector<double>>();
    l.bias = jl.at("bias").get<std::vector<double>>();
    l.activation = activation_from_string(jl.at("activation").get<std::string>());
    layers.push_back(std::move(l));
  }
  return DenseNet(std::move(layers));
}

}  // namespace xfer::nnet
