#pragma once

// Training-only prosody predictor: estimates the current turn's acoustic
// utterance embedding from the global context vectors, constrained by MSE.

#include "m2ctts/autograd.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/context.hpp"
#include "m2ctts/fusion.hpp"

namespace m2ctts {

class ProsodyPredictor {
 public:
  ProsodyPredictor() = default;
  ProsodyPredictor(ParameterSet& params, const std::string& name, int d, int out_dim, Rng& rng);

  /// Throws std::invalid_argument when neither coarse embedding is present.
  ag::Var operator()(const NullContext& nulls, const ContextEmbeddings& ctx) const;  // 1 x out_dim

  Linear hidden;  // 2d -> d, tanh
  Linear output;  // d -> out_dim
};

/// Mean (or sum) of squared differences.
double prosody_loss(const RowVector& prediction, const RowVector& target,
                    Reduction reduction = Reduction::Mean);
ag::Var prosody_loss(const ag::Var& prediction, const RowVector& target,
                     Reduction reduction = Reduction::Mean);

}  // namespace m2ctts
