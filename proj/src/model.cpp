#include "scale/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scale/error.hpp"
#include "scale/kernels.hpp"
#include "scale/rng.hpp"

namespace scale {

std::string_view to_string(ArchId a) {
  switch (a) {
    case ArchId::mlp:
      return "mlp";
    case ArchId::mini_cnn:
      return "mini_cnn";
    case ArchId::custom:
      return "custom";
  }
  return "custom";
}

std::string_view to_string(LayerKind k) { return k == LayerKind::dense ? "dense" : "conv2d"; }
std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "none"; }

ArchId parse_arch(std::string_view s) {
  if (s == "mlp") return ArchId::mlp;
  if (s == "mini_cnn") return ArchId::mini_cnn;
  if (s == "custom") return ArchId::custom;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// LayerSpec

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_dim = in;
  s.out_dim = out;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t h, std::size_t w,
                            Activation act) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.kernel = k;
  s.height = h;
  s.width = w;
  s.activation = act;
  return s;
}

std::size_t LayerSpec::input_size() const {
  return kind == LayerKind::dense ? in_dim : in_channels * height * width;
}

std::size_t LayerSpec::output_size() const {
  return kind == LayerKind::dense ? out_dim : out_channels * height * width;
}

std::size_t LayerSpec::weight_count() const {
  return kind == LayerKind::dense ? in_dim * out_dim : out_channels * in_channels * kernel * kernel;
}

std::size_t LayerSpec::bias_count() const { return kind == LayerKind::dense ? out_dim : out_channels; }

std::size_t LayerSpec::fan_in() const {
  return kind == LayerKind::dense ? in_dim : in_channels * kernel * kernel;
}

std::size_t LayerSpec::fan_out() const {
  return kind == LayerKind::dense ? out_dim : out_channels * kernel * kernel;
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.kind == b.kind && a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.in_channels == b.in_channels &&
         a.out_channels == b.out_channels && a.kernel == b.kernel && a.height == b.height && a.width == b.width &&
         a.activation == b.activation;
}

// ---------------------------------------------------------------------------
// Gradients

double Gradients::squared_norm() const {
  double acc = 0.0;
  for (const auto& g : layers) acc += kernels::dot(g, g);
  return acc;
}

void Gradients::scale(double factor) {
  for (auto& g : layers) kernels::scal(factor, g);
}

void Gradients::add(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (other.layers[l].size() != layers[l].size()) throw ShapeError("gradient shape mismatch");
    kernels::axpy(1.0, other.layers[l], layers[l]);
  }
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ArchId arch, std::vector<LayerSpec> layers, std::uint64_t seed)
    : arch_(arch), seed_(seed), layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& s = layers_[l];
    const bool ok = s.kind == LayerKind::dense
                        ? (s.in_dim > 0 && s.out_dim > 0)
                        : (s.in_channels > 0 && s.out_channels > 0 && s.kernel > 0 && s.kernel % 2 == 1 &&
                           s.height > 0 && s.width > 0);
    if (!ok) throw ShapeError("layer " + std::to_string(l) + " has non-positive or unsupported dimensions");
    if (l + 1 < layers_.size() && s.activation == Activation::none) {
      throw ShapeError("only the final layer may have no activation (layer " + std::to_string(l) + ")");
    }
    if (l > 0 && layers_[l - 1].output_size() != s.input_size()) {
      throw ShapeError("layer " + std::to_string(l) + " input size " + std::to_string(s.input_size()) +
                       " does not match previous output " + std::to_string(layers_[l - 1].output_size()));
    }
  }
  params_.reserve(layers_.size());
  for (const auto& s : layers_) params_.emplace_back(s.param_count(), 0.0);
}

Model Model::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                 std::uint64_t seed) {
  std::vector<LayerSpec> layers;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    layers.push_back(LayerSpec::dense(in, h, Activation::relu));
    in = h;
  }
  layers.push_back(LayerSpec::dense(in, classes, Activation::none));
  Model m(ArchId::mlp, std::move(layers), seed);
  m.glorot_init(seed);
  return m;
}

Model Model::mini_cnn(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                      std::size_t dense_hidden, std::uint64_t seed) {
  std::vector<LayerSpec> layers;
  layers.push_back(LayerSpec::conv2d(channels, 8, 3, height, width));
  layers.push_back(LayerSpec::conv2d(8, 16, 3, height, width));
  layers.push_back(LayerSpec::dense(16 * height * width, dense_hidden));
  layers.push_back(LayerSpec::dense(dense_hidden, classes, Activation::none));
  Model m(ArchId::mini_cnn, std::move(layers), seed);
  m.glorot_init(seed);
  return m;
}

void Model::glorot_init(std::uint64_t seed) {
  seed_ = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& s = layers_[l];
    const double a = std::sqrt(6.0 / static_cast<double>(s.fan_in() + s.fan_out()));
    auto& p = params_[l];
    const std::size_t nw = s.weight_count();
    for (std::size_t i = 0; i < nw; ++i) p[i] = rng.uniform(-a, a);
    std::fill(p.begin() + static_cast<std::ptrdiff_t>(nw), p.end(), 0.0);
  }
}

void Model::check_layer(std::size_t l) const {
  if (l >= layers_.size()) {
    throw IndexError("layer index " + std::to_string(l) + " out of range (L=" + std::to_string(layers_.size()) + ")");
  }
}

const LayerSpec& Model::layer(std::size_t l) const {
  check_layer(l);
  return layers_[l];
}

std::size_t Model::input_dim() const { return layers_.empty() ? 0 : layers_.front().input_size(); }
std::size_t Model::num_classes() const { return layers_.empty() ? 0 : layers_.back().output_size(); }

std::size_t Model::total_params() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::span<const double> Model::params(std::size_t l) const {
  check_layer(l);
  return params_[l];
}

std::span<double> Model::mutable_params(std::size_t l) {
  check_layer(l);
  return params_[l];
}

std::vector<double> Model::layer_view(std::size_t l) const {
  check_layer(l);
  return params_[l];
}

void Model::layer_write(std::size_t l, std::span<const double> values) {
  check_layer(l);
  if (values.size() != params_[l].size()) {
    throw ShapeError("layer " + std::to_string(l) + " expects " + std::to_string(params_[l].size()) +
                     " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), params_[l].begin());
}

bool Model::congruent(const Model& other) const { return layers_ == other.layers_; }

bool Model::all_finite() const {
  for (const auto& p : params_)
    for (double v : p)
      if (!std::isfinite(v)) return false;
  return true;
}

Gradients Model::zero_gradients() const {
  Gradients g;
  g.layers.reserve(params_.size());
  for (const auto& p : params_) g.layers.emplace_back(p.size(), 0.0);
  return g;
}

bool operator==(const Model& a, const Model& b) {
  return a.arch_ == b.arch_ && a.layers_ == b.layers_ && a.params_ == b.params_;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

// Patch matrix for one sample: row p holds the k*k*in_c receptive field of
// output pixel p (zero padded), ordered [ic][ky][kx] to match K's layout.
void im2col(const LayerSpec& s, std::span<const double> x, Matrix& patches) {
  const std::size_t h = s.height, w = s.width, k = s.kernel, c = s.in_channels;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  patches = Matrix(h * w, c * k * k, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      auto row = patches.row(y * w + xx);
      std::size_t col = 0;
      for (std::size_t ic = 0; ic < c; ++ic) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx, ++col) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - half;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - half;
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w)) {
              continue;
            }
            row[col] = x[ic * h * w + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

void col2im_add(const LayerSpec& s, const Matrix& dpatches, std::span<double> dx) {
  const std::size_t h = s.height, w = s.width, k = s.kernel, c = s.in_channels;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      auto row = dpatches.row(y * w + xx);
      std::size_t col = 0;
      for (std::size_t ic = 0; ic < c; ++ic) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx, ++col) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - half;
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - half;
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w)) {
              continue;
            }
            dx[ic * h * w + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += row[col];
          }
        }
      }
    }
  }
}

void layer_forward(const LayerSpec& s, std::span<const double> p, const Matrix& in, Matrix& pre) {
  const std::size_t batch = in.rows;
  pre = Matrix(batch, s.output_size());
  if (s.kind == LayerKind::dense) {
    const std::size_t nin = s.in_dim;
    for (std::size_t b = 0; b < batch; ++b) {
      auto x = in.row(b);
      auto out = pre.row(b);
      for (std::size_t o = 0; o < s.out_dim; ++o) {
        out[o] = kernels::dot(p.subspan(o * nin, nin), x) + p[s.weight_count() + o];
      }
    }
    return;
  }
  const std::size_t hw = s.height * s.width;
  const std::size_t field = s.in_channels * s.kernel * s.kernel;
  Matrix patches;
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(s, in.row(b), patches);
    auto out = pre.row(b);
    for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
      auto kern = p.subspan(oc * field, field);
      const double bias = p[s.weight_count() + oc];
      for (std::size_t px = 0; px < hw; ++px) out[oc * hw + px] = kernels::dot(kern, patches.row(px)) + bias;
    }
  }
}

void activate(Activation a, const Matrix& pre, Matrix& out) {
  out = pre;
  if (a == Activation::relu) {
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  }
}

void check_input(const Model& model, const Matrix& inputs) {
  if (model.num_layers() == 0) throw ShapeError("empty model");
  if (inputs.cols != model.input_dim()) {
    throw ShapeError("input dimension " + std::to_string(inputs.cols) + " does not match model input " +
                     std::to_string(model.input_dim()));
  }
}

}  // namespace

ForwardCache forward_cached(const Model& model, const Matrix& inputs) {
  check_input(model, inputs);
  ForwardCache cache;
  const std::size_t L = model.num_layers();
  cache.inputs.resize(L + 1);
  cache.pre.resize(L);
  cache.inputs[0] = inputs;
  for (std::size_t l = 0; l < L; ++l) {
    layer_forward(model.layer(l), model.params(l), cache.inputs[l], cache.pre[l]);
    activate(model.layer(l).activation, cache.pre[l], cache.inputs[l + 1]);
  }
  return cache;
}

Matrix forward(const Model& model, const Matrix& inputs) {
  check_input(model, inputs);
  Matrix cur = inputs;
  Matrix pre;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    layer_forward(model.layer(l), model.params(l), cur, pre);
    activate(model.layer(l).activation, pre, cur);
  }
  return cur;
}

Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& dlogits) {
  const std::size_t L = model.num_layers();
  const std::size_t batch = cache.inputs[0].rows;
  if (dlogits.rows != batch || dlogits.cols != model.num_classes()) throw ShapeError("dlogits shape mismatch");

  Gradients grads = model.zero_gradients();
  Matrix dout = dlogits;
  for (std::size_t li = L; li-- > 0;) {
    const auto& s = model.layer(li);
    const auto p = model.params(li);
    auto& g = grads.layers[li];
    const Matrix& pre = cache.pre[li];
    const Matrix& in = cache.inputs[li];

    Matrix dpre = dout;
    if (s.activation == Activation::relu) {
      for (std::size_t i = 0; i < dpre.data.size(); ++i)
        if (pre.data[i] <= 0.0) dpre.data[i] = 0.0;
    }

    const bool need_dx = li > 0;
    Matrix din(need_dx ? batch : 0, s.input_size(), 0.0);
    std::span<double> gw(g.data(), s.weight_count());
    std::span<double> gb(g.data() + s.weight_count(), s.bias_count());

    if (s.kind == LayerKind::dense) {
      const std::size_t nin = s.in_dim;
      for (std::size_t b = 0; b < batch; ++b) {
        auto x = in.row(b);
        auto d = dpre.row(b);
        for (std::size_t o = 0; o < s.out_dim; ++o) {
          if (d[o] == 0.0) continue;
          kernels::axpy(d[o], x, gw.subspan(o * nin, nin));
          gb[o] += d[o];
          if (need_dx) kernels::axpy(d[o], p.subspan(o * nin, nin), din.row(b));
        }
      }
    } else {
      const std::size_t hw = s.height * s.width;
      const std::size_t field = s.in_channels * s.kernel * s.kernel;
      Matrix patches;
      Matrix dpatches;
      for (std::size_t b = 0; b < batch; ++b) {
        im2col(s, in.row(b), patches);
        if (need_dx) dpatches = Matrix(hw, field, 0.0);
        auto d = dpre.row(b);
        for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
          auto kern = p.subspan(oc * field, field);
          auto gk = gw.subspan(oc * field, field);
          for (std::size_t px = 0; px < hw; ++px) {
            const double dv = d[oc * hw + px];
            if (dv == 0.0) continue;
            kernels::axpy(dv, patches.row(px), gk);
            gb[oc] += dv;
            if (need_dx) kernels::axpy(dv, kern, dpatches.row(px));
          }
        }
        if (need_dx) col2im_add(s, dpatches, din.row(b));
      }
    }
    dout = std::move(din);
  }
  return grads;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= z;
}

namespace {

void check_labels(const Model& model, const Batch& batch) {
  if (batch.size() == 0) throw ShapeError("empty batch");
  if (batch.labels.size() != batch.size()) throw ShapeError("label count does not match batch size");
  const auto C = static_cast<int>(model.num_classes());
  for (int y : batch.labels)
    if (y < 0 || y >= C) throw ShapeError("label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
}

void check_finite(const Matrix& m, int layer, const char* what) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " at layer " + std::to_string(layer), layer);
}

}  // namespace

LossAndGrads loss_and_grads(const Model& model, const Batch& batch) {
  check_labels(model, batch);
  ForwardCache cache = forward_cached(model, batch.inputs);
  for (std::size_t l = 1; l < cache.inputs.size(); ++l) {
    check_finite(cache.inputs[l], static_cast<int>(l - 1), "activation");
  }
  const Matrix& logits = cache.logits();
  const std::size_t B = batch.size(), C = model.num_classes();
  Matrix dlogits(B, C);
  std::vector<double> lsm(C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    log_softmax(logits.row(b), lsm);
    const auto y = static_cast<std::size_t>(batch.labels[b]);
    total -= lsm[y];
    auto d = dlogits.row(b);
    for (std::size_t c = 0; c < C; ++c) d[c] = std::exp(lsm[c]) / static_cast<double>(B);
    d[y] -= 1.0 / static_cast<double>(B);
  }
  LossAndGrads out;
  out.loss = total / static_cast<double>(B);
  out.grads = backward(model, cache, dlogits);
  for (std::size_t l = 0; l < out.grads.layers.size(); ++l) {
    for (double v : out.grads.layers[l])
      if (!std::isfinite(v)) {
        throw NumericError("non-finite gradient at layer " + std::to_string(l), static_cast<int>(l));
      }
  }
  return out;
}

double loss(const Model& model, const Batch& batch) {
  check_labels(model, batch);
  const Matrix logits = forward(model, batch.inputs);
  std::vector<double> lsm(model.num_classes());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    log_softmax(logits.row(b), lsm);
    total -= lsm[static_cast<std::size_t>(batch.labels[b])];
  }
  return total / static_cast<double>(batch.size());
}

void sgd_step(Model& model, const Gradients& grads, double eta) {
  if (grads.layers.size() != model.num_layers()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto p = model.mutable_params(l);
    if (grads.layers[l].size() != p.size()) throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    kernels::axpy(-eta, grads.layers[l], p);
  }
}

// ---------------------------------------------------------------------------
// Optimisation helpers

Adam::Adam(const Model& model, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : model.all_params()) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(Model& model, const Gradients& grads) {
  if (grads.layers.size() != m_.size()) throw ShapeError("Adam: gradient layer count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t l = 0; l < m_.size(); ++l) {
    auto p = model.mutable_params(l);
    const auto& g = grads.layers[l];
    if (g.size() != p.size()) throw ShapeError("Adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[l][i] = beta1_ * m_[l][i] + (1.0 - beta1_) * g[i];
      v_[l][i] = beta2_ * v_[l][i] + (1.0 - beta2_) * g[i] * g[i];
      const double mh = m_[l][i] / c1;
      const double vh = v_[l][i] / c2;
      p[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

double clip_grad_norm(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0.0) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace scale
