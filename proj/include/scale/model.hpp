#pragma once

// Layered classification networks with analytic gradients.
//
// A Model is a list of LayerSpecs plus one flat parameter vector per layer.
// Dense layers store W[out][in] row-major followed by b[out]. Conv layers
// (3x3-style, stride 1, zero "same" padding) store K[out_c][in_c][k][k]
// followed by b[out_c]; activations are laid out channel-major [c][h][w],
// so a conv layer feeds a dense layer directly (the flatten is implicit).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scale {

enum class ArchId { mlp, mini_cnn, custom };
enum class LayerKind { dense, conv2d };
enum class Activation { relu, none };

std::string_view to_string(ArchId a);
std::string_view to_string(LayerKind k);
std::string_view to_string(Activation a);
ArchId parse_arch(std::string_view s);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Activation activation = Activation::relu;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act = Activation::relu);
  static LayerSpec conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t h, std::size_t w,
                          Activation act = Activation::relu);

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t weight_count() const;
  std::size_t bias_count() const;
  std::size_t param_count() const { return weight_count() + bias_count(); }
  /// Glorot fan-in / fan-out.
  std::size_t fan_in() const;
  std::size_t fan_out() const;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.rows; }
};

/// Per-layer gradient vectors, shape-congruent with Model::params.
struct Gradients {
  std::vector<std::vector<double>> layers;

  double squared_norm() const;
  void scale(double factor);
  void add(const Gradients& other);
};

class Model {
 public:
  Model() = default;
  /// Parameters start at zero; call glorot_init() for the standard init.
  Model(ArchId arch, std::vector<LayerSpec> layers, std::uint64_t seed = 0);

  /// Dense stack input -> hidden... -> classes, ReLU on hidden layers.
  static Model mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                   std::uint64_t seed);

  /// conv(8,k3)-relu-conv(16,k3)-relu-flatten-dense(hidden)-relu-dense(classes)
  /// over a channels x height x width input.
  static Model mini_cnn(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                        std::size_t dense_hidden, std::uint64_t seed);

  /// Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); biases zero.
  void glorot_init(std::uint64_t seed);

  ArchId arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_layers() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t l) const;
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t input_dim() const;
  std::size_t num_classes() const;
  std::size_t total_params() const;

  std::span<const double> params(std::size_t l) const;
  std::span<double> mutable_params(std::size_t l);
  const std::vector<std::vector<double>>& all_params() const { return params_; }

  /// Copy of layer l's flat parameters.
  std::vector<double> layer_view(std::size_t l) const;
  void layer_write(std::size_t l, std::span<const double> values);

  /// Same architecture (layer specs), parameters ignored.
  bool congruent(const Model& other) const;
  bool all_finite() const;

  Gradients zero_gradients() const;

  friend bool operator==(const Model& a, const Model& b);

 private:
  void check_layer(std::size_t l) const;

  ArchId arch_ = ArchId::custom;
  std::uint64_t seed_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<std::vector<double>> params_;
};

/// Activations retained by forward_cached for the backward pass.
struct ForwardCache {
  /// inputs[l] is the input to layer l; inputs.back() is the logits.
  std::vector<Matrix> inputs;
  /// Pre-activation outputs of each layer.
  std::vector<Matrix> pre;

  const Matrix& logits() const { return inputs.back(); }
};

Matrix forward(const Model& model, const Matrix& inputs);
ForwardCache forward_cached(const Model& model, const Matrix& inputs);

/// Back-propagates dL/dlogits (batch x classes) to parameter gradients.
Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& dlogits);

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Mean cross-entropy over the batch and its gradient.
LossAndGrads loss_and_grads(const Model& model, const Batch& batch);
double loss(const Model& model, const Batch& batch);

/// Numerically stable log-softmax of one row.
void log_softmax(std::span<const double> logits, std::span<double> out);
void softmax(std::span<const double> logits, std::span<double> out);

/// params -= eta * grads
void sgd_step(Model& model, const Gradients& grads, double eta);

/// Adam with per-tensor moment buffers.
class Adam {
 public:
  explicit Adam(const Model& model, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Model& model, const Gradients& grads);
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Rescales grads in place so the global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(Gradients& grads, double max_norm);

}  // namespace scale
