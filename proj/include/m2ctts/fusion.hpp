#pragma once

// Neural building blocks shared by the context modules and the acoustic
// backbone. Every layer registers its parameters in a ParameterSet and builds
// autograd graphs, so analytic gradients come for free.

#include <string>
#include <utility>
#include <vector>

#include "m2ctts/autograd.hpp"
#include "m2ctts/common.hpp"

namespace m2ctts {

/// Ordered, named collection of trainable parameters. Registration order is
/// the serialisation order of checkpoints.
class ParameterSet {
 public:
  ag::Var add(std::string name, Matrix init);

  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Parameters whose name starts with `prefix`.
  std::vector<ag::Var> with_prefix(const std::string& prefix) const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Row `pos`, column 2i = sin(pos / 10000^(2i/d)), column 2i+1 = cos(...).
Matrix sinusoidal_positions(int n, int d);

enum class Activation { Linear, Relu, Tanh };
ag::Var activate(const ag::Var& x, Activation act);

struct Linear {
  ag::Var weight;  // in x out
  ag::Var bias;    // 1 x out, undefined when built without bias

  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  ag::Var operator()(const ag::Var& x) const;
  int in() const { return static_cast<int>(weight.rows()); }
  int out() const { return static_cast<int>(weight.cols()); }
};

struct Embedding {
  ag::Var table;  // n x d

  Embedding() = default;
  Embedding(ParameterSet& params, const std::string& name, int n, int d, Rng& rng);
  ag::Var operator()(std::span<const int> ids) const;
};

struct LayerNorm {
  static constexpr double kEps = 1e-5;
  ag::Var gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, int d);
  ag::Var operator()(const ag::Var& x) const;
};

/// Style-adaptive layer norm: gain(w) * normalize(h) + bias(w), where gain and
/// bias are affine maps of the style vector.
struct Saln {
  static constexpr double kEps = 1e-5;
  Linear gain;  // style -> d, bias initialised to 1
  Linear shift;  // style -> d, bias initialised to 0

  Saln() = default;
  Saln(ParameterSet& params, const std::string& name, int d, int style_dim, Rng& rng);
  ag::Var operator()(const ag::Var& h, const ag::Var& style) const;
};

struct AttentionResult {
  ag::Var output;
  std::vector<Matrix> weights;  // one (queries x keys) matrix per head
};

/// Scaled dot-product attention with per-head projections, concatenation and
/// an output projection. Masked keys get zero weight; an all-masked key set
/// is an error.
struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, int d, int heads, Rng& rng);
  AttentionResult operator()(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                             const Mask& key_mask) const;
};

struct PoolResult {
  ag::Var output;     // 1 x d_k
  RowVector weights;  // 1 x n
};

/// score_i = v^T tanh(W_q q + b + W_k k_i); output = sum_i softmax(score)_i k_i.
struct AdditiveAttentionPool {
  Linear query_proj;  // d_q -> d_att, with bias
  Linear key_proj;    // d_k -> d_att, no bias
  ag::Var score;      // d_att x 1

  AdditiveAttentionPool() = default;
  AdditiveAttentionPool(ParameterSet& params, const std::string& name, int d_query, int d_key,
                        int d_att, Rng& rng);
  PoolResult operator()(const ag::Var& query, const ag::Var& keys, const Mask& mask) const;
};

struct GruResult {
  ag::Var final_state;  // 1 x d_h
  ag::Var states;       // n x d_h, undefined when n == 0
};

/// Standard GRU (reset gate r, update gate z, tanh candidate n):
///   h' = (1 - z) * n + z * h. Steps whose mask entry is false leave h as is.
struct Gru {
  ag::Var input_weight;   // d_in x 3 d_h, gate order r | z | n
  ag::Var input_bias;     // 1 x 3 d_h
  ag::Var hidden_weight;  // d_h x 3 d_h
  ag::Var hidden_bias;    // 1 x 3 d_h
  int hidden = 0;

  Gru() = default;
  Gru(ParameterSet& params, const std::string& name, int d_in, int d_h, Rng& rng);
  GruResult operator()(const ag::Var& seq, const ag::Var& init, const Mask& step_mask) const;
};

/// Same-length 1D convolution along the sequence axis with zero padding.
struct Conv1d {
  ag::Var weight;  // kernel * d_in x d_out, tap-major
  ag::Var bias;    // 1 x d_out
  int kernel = 1;

  Conv1d() = default;
  Conv1d(ParameterSet& params, const std::string& name, int d_in, int d_out, int kernel, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
};

/// Conv1d followed by a pointwise nonlinearity; rows outside `mask` are
/// zeroed before and after.
struct ConvContextualizer {
  Conv1d conv;
  Activation activation = Activation::Relu;

  ConvContextualizer() = default;
  ConvContextualizer(ParameterSet& params, const std::string& name, int d, int kernel, Rng& rng,
                     Activation act = Activation::Relu);
  ag::Var operator()(const ag::Var& x, const Mask& mask) const;
};

}  // namespace m2ctts
