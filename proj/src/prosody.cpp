#include "m2ctts/prosody.hpp"

#include <stdexcept>

namespace m2ctts {

ProsodyPredictor::ProsodyPredictor(ParameterSet& params, const std::string& name, int d, int out_dim,
                                   Rng& rng) {
  hidden = Linear(params, name + ".hidden", 2 * d, d, rng);
  output = Linear(params, name + ".output", d, out_dim, rng);
}

ag::Var ProsodyPredictor::operator()(const NullContext& nulls, const ContextEmbeddings& ctx) const {
  if (!ctx.text && !ctx.acoustic)
    throw std::invalid_argument("prosody predictor needs at least one coarse context embedding");
  return output(ag::tanh(hidden(nulls.fill(ctx))));
}

double prosody_loss(const RowVector& prediction, const RowVector& target, Reduction reduction) {
  if (prediction.size() != target.size())
    throw std::invalid_argument("prosody_loss: dimension mismatch (" + std::to_string(prediction.size()) +
                                " vs " + std::to_string(target.size()) + ")");
  const double sum = (prediction - target).squaredNorm();
  return reduction == Reduction::Mean ? sum / static_cast<double>(target.size()) : sum;
}

ag::Var prosody_loss(const ag::Var& prediction, const RowVector& target, Reduction reduction) {
  if (prediction.rows() != 1 || prediction.cols() != target.size())
    throw std::invalid_argument("prosody_loss: dimension mismatch");
  const auto sum = ag::masked_sq_sum(prediction, Matrix(target), Mask{true});
  return reduction == Reduction::Mean ? ag::scale(sum, 1.0 / static_cast<double>(target.size())) : sum;
}

}  // namespace m2ctts
