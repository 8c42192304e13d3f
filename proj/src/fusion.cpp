#include "m2ctts/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace m2ctts {

ag::Var ParameterSet::add(std::string name, Matrix init) {
  for (const auto& [existing, _] : entries_)
    if (existing == name) throw std::logic_error("duplicate parameter name " + name);
  auto var = ag::parameter(std::move(init));
  entries_.emplace_back(std::move(name), var);
  return var;
}

std::vector<ag::Var> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<ag::Var> out;
  for (const auto& [name, var] : entries_)
    if (name.starts_with(prefix)) out.push_back(var);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, var] : entries_) var.mutable_grad().setZero();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, var] : entries_) n += static_cast<std::size_t>(var.value().size());
  return n;
}

Matrix sinusoidal_positions(int n, int d) {
  if (n < 1) throw std::invalid_argument("sinusoidal_positions: n must be >= 1");
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("sinusoidal_positions: d must be even");
  Matrix out(n, d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / d);
      out(pos, 2 * i) = std::sin(angle);
      out(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return out;
}

ag::Var activate(const ag::Var& x, Activation act) {
  switch (act) {
    case Activation::Linear: return x;
    case Activation::Relu: return ag::relu(x);
    case Activation::Tanh: return ag::tanh(x);
  }
  return x;
}

namespace {

Matrix xavier(int rows, int cols, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

}  // namespace

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  weight = params.add(name + ".weight", xavier(in, out, in, out, rng));
  if (with_bias) bias = params.add(name + ".bias", Matrix::Zero(1, out));
}

ag::Var Linear::operator()(const ag::Var& x) const {
  auto y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_rowvec(y, bias) : y;
}

Embedding::Embedding(ParameterSet& params, const std::string& name, int n, int d, Rng& rng) {
  Matrix init(n, d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = s * rng.normal();
  table = params.add(name + ".table", std::move(init));
}

ag::Var Embedding::operator()(std::span<const int> ids) const {
  for (int id : ids)
    if (id < 0 || id >= table.rows())
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside table of " +
                              std::to_string(table.rows()));
  return ag::gather_rows(table, ids);
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, int d) {
  gamma = params.add(name + ".gamma", Matrix::Ones(1, d));
  beta = params.add(name + ".beta", Matrix::Zero(1, d));
}

ag::Var LayerNorm::operator()(const ag::Var& x) const {
  return ag::add_rowvec(ag::mul_rowvec(ag::layer_norm_rows(x, kEps), gamma), beta);
}

Saln::Saln(ParameterSet& params, const std::string& name, int d, int style_dim, Rng& rng) {
  gain = Linear(params, name + ".gain", style_dim, d, rng);
  shift = Linear(params, name + ".shift", style_dim, d, rng);
  gain.bias.mutable_value().setOnes();
  // Small style-dependent modulation at init.
  gain.weight.mutable_value() *= 0.1;
  shift.weight.mutable_value() *= 0.1;
}

ag::Var Saln::operator()(const ag::Var& h, const ag::Var& style) const {
  const auto normed = ag::layer_norm_rows(h, kEps);
  return ag::add_rowvec(ag::mul_rowvec(normed, gain(style)), shift(style));
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, int d,
                                       int n_heads, Rng& rng)
    : heads(n_heads) {
  if (n_heads < 1 || d % n_heads != 0)
    throw std::invalid_argument("MultiHeadAttention: width must be divisible by heads");
  query = Linear(params, name + ".query", d, d, rng);
  key = Linear(params, name + ".key", d, d, rng);
  value = Linear(params, name + ".value", d, d, rng);
  output = Linear(params, name + ".output", d, d, rng);
}

AttentionResult MultiHeadAttention::operator()(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                                               const Mask& key_mask) const {
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value length mismatch");
  const auto qp = query(q), kp = key(k), vp = value(v);
  const int d = static_cast<int>(qp.cols());
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult result;
  std::vector<ag::Var> parts;
  for (int h = 0; h < heads; ++h) {
    const auto qh = ag::slice_cols(qp, h * dh, dh);
    const auto kh = ag::slice_cols(kp, h * dh, dh);
    const auto vh = ag::slice_cols(vp, h * dh, dh);
    const auto probs = ag::masked_softmax_rows(ag::scale(ag::matmul_transposed(qh, kh), inv_sqrt), key_mask);
    result.weights.push_back(probs.value());
    parts.push_back(ag::matmul(probs, vh));
  }
  result.output = output(heads == 1 ? parts[0] : ag::concat_cols(parts));
  return result;
}

AdditiveAttentionPool::AdditiveAttentionPool(ParameterSet& params, const std::string& name,
                                             int d_query, int d_key, int d_att, Rng& rng) {
  query_proj = Linear(params, name + ".query", d_query, d_att, rng);
  key_proj = Linear(params, name + ".key", d_key, d_att, rng, /*bias=*/false);
  score = params.add(name + ".score", xavier(d_att, 1, d_att, 1, rng));
}

PoolResult AdditiveAttentionPool::operator()(const ag::Var& query, const ag::Var& keys,
                                             const Mask& mask) const {
  const auto energy = ag::tanh(ag::add_rowvec(key_proj(keys), query_proj(query)));
  const auto scores = ag::transpose(ag::matmul(energy, score));  // 1 x n
  const auto weights = ag::masked_softmax_rows(scores, mask);
  return {ag::matmul(weights, keys), weights.value()};
}

Gru::Gru(ParameterSet& params, const std::string& name, int d_in, int d_h, Rng& rng) : hidden(d_h) {
  const double a = 1.0 / std::sqrt(static_cast<double>(d_h));
  auto uniform = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
    return m;
  };
  input_weight = params.add(name + ".input_weight", uniform(d_in, 3 * d_h));
  input_bias = params.add(name + ".input_bias", uniform(1, 3 * d_h));
  hidden_weight = params.add(name + ".hidden_weight", uniform(d_h, 3 * d_h));
  hidden_bias = params.add(name + ".hidden_bias", uniform(1, 3 * d_h));
}

GruResult Gru::operator()(const ag::Var& seq, const ag::Var& init, const Mask& step_mask) const {
  if (static_cast<Eigen::Index>(step_mask.size()) != seq.rows())
    throw std::invalid_argument("gru: mask length mismatch");
  if (init.rows() != 1 || init.cols() != hidden) throw std::invalid_argument("gru: bad initial state");
  GruResult result{init, {}};
  if (seq.rows() == 0) return result;

  const auto projected = ag::add_rowvec(ag::matmul(seq, input_weight), input_bias);  // n x 3h
  std::vector<ag::Var> states;
  ag::Var h = init;
  for (Eigen::Index t = 0; t < seq.rows(); ++t) {
    if (step_mask[static_cast<size_t>(t)]) {
      const auto xt = ag::slice_rows(projected, t, 1);
      const auto ht = ag::add_rowvec(ag::matmul(h, hidden_weight), hidden_bias);
      const auto r = ag::sigmoid(ag::add(ag::slice_cols(xt, 0, hidden), ag::slice_cols(ht, 0, hidden)));
      const auto z = ag::sigmoid(ag::add(ag::slice_cols(xt, hidden, hidden), ag::slice_cols(ht, hidden, hidden)));
      const auto n = ag::tanh(ag::add(ag::slice_cols(xt, 2 * hidden, hidden),
                                      ag::mul(r, ag::slice_cols(ht, 2 * hidden, hidden))));
      h = ag::add(ag::mul(ag::affine(z, -1.0, 1.0), n), ag::mul(z, h));
    }
    states.push_back(h);
  }
  result.final_state = h;
  result.states = ag::concat_rows(states);
  return result;
}

Conv1d::Conv1d(ParameterSet& params, const std::string& name, int d_in, int d_out, int k, Rng& rng)
    : kernel(k) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("Conv1d: kernel must be odd");
  weight = params.add(name + ".weight", xavier(k * d_in, d_out, k * d_in, d_out, rng));
  bias = params.add(name + ".bias", Matrix::Zero(1, d_out));
}

ag::Var Conv1d::operator()(const ag::Var& x) const {
  if (kernel == 1) return ag::add_rowvec(ag::matmul(x, weight), bias);
  const int radius = kernel / 2;
  std::vector<ag::Var> taps;
  for (int offset = -radius; offset <= radius; ++offset)
    taps.push_back(offset == 0 ? x : ag::shift_rows(x, -offset));
  return ag::add_rowvec(ag::matmul(ag::concat_cols(taps), weight), bias);
}

ConvContextualizer::ConvContextualizer(ParameterSet& params, const std::string& name, int d,
                                       int kernel, Rng& rng, Activation act)
    : conv(params, name, d, d, kernel, rng), activation(act) {}

ag::Var ConvContextualizer::operator()(const ag::Var& x, const Mask& mask) const {
  return ag::mask_rows(activate(conv(ag::mask_rows(x, mask)), activation), mask);
}

}  // namespace m2ctts
