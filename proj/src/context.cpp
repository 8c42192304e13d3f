#include "m2ctts/context.hpp"

#include <algorithm>

namespace m2ctts {

namespace {

Matrix small_normal(int rows, int cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

}  // namespace

NullContext::NullContext(ParameterSet& params, const std::string& name, int d, Rng& rng) {
  text = params.add(name + ".text", small_normal(1, d, 0.1, rng));
  acoustic = params.add(name + ".acoustic", small_normal(1, d, 0.1, rng));
}

ag::Var NullContext::fill(const ContextEmbeddings& ctx) const {
  const ag::Var parts[] = {ctx.text.value_or(text), ctx.acoustic.value_or(acoustic)};
  return ag::concat_cols(parts);
}

CoarseContextEncoder::CoarseContextEncoder(ParameterSet& params, const std::string& name,
                                           int history_dim, int current_dim, int d, Rng& rng) {
  history_proj = Linear(params, name + ".history_proj", history_dim, d, rng);
  current_proj = Linear(params, name + ".current_proj", current_dim, d, rng);
  gru = Gru(params, name + ".gru", d, d, rng);
  initial_state = params.add(name + ".initial_state", small_normal(1, d, 0.1, rng));
  fuse = Linear(params, name + ".fuse", 2 * d, d, rng);
  pool = AdditiveAttentionPool(params, name + ".pool", d, d, d, rng);
}

CoarseOutput CoarseContextEncoder::operator()(const Matrix& history, const Mask& history_mask,
                                              const RowVector& current) const {
  if (static_cast<Eigen::Index>(history_mask.size()) != history.rows())
    throw std::invalid_argument("coarse context: history mask length mismatch");
  const auto cur = current_proj(ag::constant(current));
  const bool any = std::any_of(history_mask.begin(), history_mask.end(), [](bool b) { return b; });

  GruResult summary{initial_state, {}};
  if (any) summary = gru(history_proj(ag::constant(history)), initial_state, history_mask);

  const ag::Var joined[] = {summary.final_state, cur};
  const auto query = fuse(ag::concat_cols(joined));
  PoolResult pooled = any ? pool(query, summary.states, history_mask)
                          : pool(query, initial_state, Mask{true});
  return {pooled.output, pooled.weights};
}

FineContextEncoder::FineContextEncoder(ParameterSet& params, const std::string& name,
                                       Modality mod, int feature_dim, int d, int heads, int kernel,
                                       bool speaker_embedding, Rng& rng)
    : modality(mod), use_speaker(speaker_embedding) {
  if (use_speaker) speaker = Embedding(params, name + ".speaker", 2, feature_dim, rng);
  in_proj = Linear(params, name + ".in_proj", feature_dim, d, rng);
  contextualizer = ConvContextualizer(params, name + ".conv", d, kernel, rng);
  attention = MultiHeadAttention(params, name + ".attention", d, heads, rng);
}

FineGrainedMemory FineContextEncoder::build_memory(const MemoryRows& rows) const {
  const auto n = rows.features.rows();
  if (static_cast<Eigen::Index>(rows.mask.size()) != n)
    throw std::invalid_argument("fine context: memory mask length mismatch");
  FineGrainedMemory mem{{}, rows.mask, modality};
  if (n == 0) return mem;

  const int max_pos = *std::max_element(rows.position.begin(), rows.position.end());
  const Matrix table = sinusoidal_positions(max_pos + 1, static_cast<int>(rows.features.cols()));
  Matrix base = rows.features;
  for (Eigen::Index r = 0; r < n; ++r) base.row(r) += table.row(rows.position[static_cast<size_t>(r)]);
  ag::Var x = ag::constant(std::move(base));
  if (use_speaker) x = ag::add(x, speaker(rows.speaker));
  x = ag::mask_rows(x, rows.mask);
  mem.rows = ag::mask_rows(in_proj(x), rows.mask);
  return mem;
}

FineOutput FineContextEncoder::operator()(const ag::Var& encoder_out, const Mask& phoneme_mask,
                                          const MemoryRows& rows) const {
  FineOutput out;
  if (std::none_of(rows.mask.begin(), rows.mask.end(), [](bool b) { return b; })) return out;
  const auto mem = build_memory(rows);
  const auto ctx = contextualizer(mem.rows, mem.mask);
  auto attended = attention(encoder_out, ctx, ctx, mem.mask);
  out.delta = ag::mask_rows(attended.output, phoneme_mask);
  out.weights = std::move(attended.weights);
  return out;
}

StyleAssembler::StyleAssembler(ParameterSet& params, const std::string& name, int d, int style_dim,
                               Rng& rng) {
  proj = Linear(params, name + ".proj", 2 * d, style_dim, rng);
}

ag::Var StyleAssembler::operator()(const NullContext& nulls, const ContextEmbeddings& ctx) const {
  return proj(nulls.fill(ctx));
}

}  // namespace m2ctts
