#include "m2ctts/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "m2ctts/common.hpp"
#include "m2ctts/tensor_file.hpp"

namespace m2ctts {

using ordered_json = nlohmann::ordered_json;

ordered_json LossBreakdown::to_json() const {
  ordered_json j;
  j["mel_l1"] = mel_l1;
  j["pitch_mse"] = pitch_mse;
  j["energy_mse"] = energy_mse;
  j["logdur_mse"] = logdur_mse;
  j["prosody_mse"] = prosody_mse;
  j["total"] = total;
  return j;
}

LossResult total_loss(const std::vector<ItemOutput>& outputs, const Batch& batch, const TrainConfig& train) {
  if (static_cast<int>(outputs.size()) != batch.size())
    throw std::invalid_argument("total_loss: outputs do not match batch");
  std::vector<ag::Var> mel_terms, pitch_terms, energy_terms, dur_terms, prosody_terms;
  double frames = 0, phonemes = 0;
  for (int b = 0; b < batch.size(); ++b) {
    const auto& out = outputs[static_cast<size_t>(b)];
    if (out.mel.rows() != batch.max_frames())
      throw std::invalid_argument("total_loss: mel length differs from batch frame axis");
    const Mask frame_mask = batch.frame_row_mask(b);
    const Mask ph_mask = batch.phoneme_row_mask(b);
    frames += static_cast<double>(std::count(frame_mask.begin(), frame_mask.end(), true));
    phonemes += static_cast<double>(std::count(ph_mask.begin(), ph_mask.end(), true));

    mel_terms.push_back(ag::masked_abs_sum(out.mel, batch.mel[static_cast<size_t>(b)], frame_mask));
    const Matrix pitch_target = batch.pitch.row(b).transpose();
    const Matrix energy_target = batch.energy.row(b).transpose();
    Matrix logdur_target = Matrix::Zero(batch.max_phonemes(), 1);
    for (int j = 0; j < batch.max_phonemes(); ++j)
      if (ph_mask[static_cast<size_t>(j)]) logdur_target(j, 0) = std::log(static_cast<double>(batch.durations(b, j)));
    pitch_terms.push_back(ag::masked_sq_sum(out.predictions.pitch, pitch_target, ph_mask));
    energy_terms.push_back(ag::masked_sq_sum(out.predictions.energy, energy_target, ph_mask));
    dur_terms.push_back(ag::masked_sq_sum(out.predictions.log_duration, logdur_target, ph_mask));
    if (out.prosody)
      prosody_terms.push_back(prosody_loss(*out.prosody, batch.features[static_cast<size_t>(b)].current_acoustic,
                                           train.prosody_reduction));
  }

  auto sum_terms = [](const std::vector<ag::Var>& terms, double divisor) {
    ag::Var acc = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
    return ag::scale(acc, 1.0 / divisor);
  };
  const auto mel = sum_terms(mel_terms, frames * kMelChannels);
  const auto pitch = sum_terms(pitch_terms, phonemes);
  const auto energy = sum_terms(energy_terms, phonemes);
  const auto logdur = sum_terms(dur_terms, phonemes);

  LossResult result;
  auto& lb = result.breakdown;
  lb.mel_l1 = mel.scalar();
  lb.pitch_mse = pitch.scalar();
  lb.energy_mse = energy.scalar();
  lb.logdur_mse = logdur.scalar();

  ag::Var total = ag::add(ag::add(mel, pitch), ag::add(energy, logdur));
  if (!prosody_terms.empty()) {
    const auto prosody = sum_terms(prosody_terms, static_cast<double>(prosody_terms.size()));
    lb.prosody_mse = prosody.scalar();
    total = ag::add(total, ag::scale(prosody, train.lambda_prosody));
  }
  lb.total = total.scalar();

  const std::pair<const char*, double> terms[] = {{"mel_l1", lb.mel_l1},         {"pitch_mse", lb.pitch_mse},
                                                  {"energy_mse", lb.energy_mse}, {"logdur_mse", lb.logdur_mse},
                                                  {"prosody_mse", lb.prosody_mse}, {"total", lb.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value)) throw Error(std::string("non-finite loss term: ") + name);
  result.total = total;
  return result;
}

TrainingSet::TrainingSet(std::vector<ConversationWindow> windows, FeatureProvider& features,
                         const RunConfig& config)
    : windows_(std::move(windows)),
      features_(features),
      needs_(needs_for(config.ablation)),
      pad_id_(config.pad_phoneme_id),
      capacity_(config.model.memory_capacity) {
  if (windows_.empty()) throw ValidationError("training set has no windows");
}

Batch TrainingSet::batch(std::span<const int> indices) const {
  std::vector<ConversationWindow> picked;
  picked.reserve(indices.size());
  for (int i : indices) picked.push_back(windows_.at(static_cast<size_t>(i)));
  return make_batch(picked, pad_id_, capacity_, features_, needs_);
}

Batch TrainingSet::all() const {
  return make_batch(windows_, pad_id_, capacity_, features_, needs_);
}

TrainState TrainState::clone() const {
  TrainState s;
  s.step = step;
  s.model = model->clone();
  s.adam = adam;
  s.rng = rng;
  s.order = order;
  s.cursor = cursor;
  s.config = config;
  return s;
}

TrainState init_train_state(const RunConfig& config) {
  TrainState s;
  s.config = config;
  s.model = std::make_unique<Model>(config.model, config.train.seed);
  for (const auto& [_, p] : s.model->parameters().entries()) {
    s.adam.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.adam.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  s.rng = Rng(stream_seed(config.train.seed, "batch-sampler"));
  return s;
}

std::vector<int> next_batch_indices(TrainState& state, std::size_t dataset_size) {
  const auto n = static_cast<int>(dataset_size);
  const int take = std::min(std::max(1, state.config.train.batch_size), n);
  if (state.order.size() != dataset_size || state.cursor + static_cast<size_t>(take) > dataset_size) {
    state.order.resize(dataset_size);
    for (int i = 0; i < n; ++i) state.order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(state.order[static_cast<size_t>(i)], state.order[static_cast<size_t>(state.rng.uniform_int(0, i))]);
    state.cursor = 0;
  }
  std::vector<int> out(state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor),
                       state.order.begin() + static_cast<std::ptrdiff_t>(state.cursor) + take);
  state.cursor += static_cast<size_t>(take);
  return out;
}

double learning_rate_at(const TrainConfig& train, std::int64_t step) {
  if (train.warmup_steps <= 0) return train.learning_rate;
  return train.learning_rate * std::min(1.0, static_cast<double>(step) / train.warmup_steps);
}

LossBreakdown train_step(TrainState& state, const Batch& batch) {
  auto& params = state.model->parameters();
  params.zero_grad();
  const auto outputs = state.model->forward(batch, state.config.ablation, Mode::Train);
  const auto loss = total_loss(outputs, batch, state.config.train);
  ag::backward(loss.total);

  const auto& tc = state.config.train;
  const auto& entries = params.entries();
  if (tc.grad_clip > 0) {
    double sq = 0;
    for (const auto& [_, p] : entries) sq += p.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw Error("non-finite gradient norm");
    if (norm > tc.grad_clip)
      for (const auto& [_, p] : entries) ag::Var(p).mutable_grad() *= tc.grad_clip / norm;
  }

  state.step += 1;
  const double lr = learning_rate_at(tc, state.step);
  const double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < entries.size(); ++i) {
    ag::Var p = entries[i].second;
    const Matrix& g = p.grad();
    auto& m = state.adam.m[i];
    auto& v = state.adam.v[i];
    m = tc.adam_beta1 * m + (1.0 - tc.adam_beta1) * g;
    v = tc.adam_beta2 * v + (1.0 - tc.adam_beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + tc.adam_eps);
  }
  return loss.breakdown;
}

std::vector<LossBreakdown> train(TrainState& state, const TrainingSet& data, int steps,
                                 const std::function<void(std::int64_t, const LossBreakdown&)>& on_step) {
  std::vector<LossBreakdown> history;
  history.reserve(static_cast<size_t>(std::max(steps, 0)));
  for (int i = 0; i < steps; ++i) {
    const auto indices = next_batch_indices(state, data.size());
    const auto loss = train_step(state, data.batch(indices));
    history.push_back(loss);
    if (on_step) on_step(state.step, loss);
  }
  return history;
}

// Checkpoint layout (little-endian):
//   "M2CK" | u32 version | u64 config fingerprint | u32 len + config JSON
//   | i64 step | u32 n_params | per param: u32 len + name, u32 rows, u32 cols,
//     rows*cols f64 value, f64 adam m, f64 adam v
//   | u32 len + sampler engine state (text) | u32 n + i32 order | u64 cursor
namespace {

static_assert(std::endian::native == std::endian::little);

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  void put_matrix(const Matrix& m) {
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<size_t>(m.size()) * sizeof(double));
  }
  std::string out;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : in_(bytes), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = in_.substr(at_, n);
    at_ += n;
    return s;
  }
  void get_matrix(Matrix& m) {
    const auto bytes = static_cast<size_t>(m.size()) * sizeof(double);
    need(bytes);
    if (bytes != 0) std::memcpy(m.data(), in_.data() + at_, bytes);
    at_ += bytes;
  }
  bool done() const { return at_ == in_.size(); }

 private:
  void need(size_t n) const {
    if (n > in_.size() - at_) throw FormatError(origin_ + ": truncated checkpoint");
  }
  const std::string& in_;
  std::string origin_;
  size_t at_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TrainState& state) {
  Writer w;
  w.out.append(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(state.config.fingerprint());
  w.put_string(state.config.to_json().dump());
  w.put<std::int64_t>(state.step);
  const auto& entries = state.model->parameters().entries();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, p] = entries[i];
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.cols()));
    w.put_matrix(p.value());
    w.put_matrix(state.adam.m[i]);
    w.put_matrix(state.adam.v[i]);
  }
  std::ostringstream engine;
  engine << state.rng.engine();
  w.put_string(engine.str());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.order.size()));
  for (int i : state.order) w.put<std::int32_t>(i);
  w.put<std::uint64_t>(state.cursor);
  return std::move(w.out);
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  const std::string origin = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(origin + ": bad magic, expected M2CK checkpoint");
  Reader r(bytes, origin);
  (void)r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto fingerprint = r.get<std::uint64_t>();
  TrainState s;
  s.config = RunConfig::from_json(nlohmann::json::parse(r.get_string()));
  if (s.config.fingerprint() != fingerprint)
    throw FormatError(origin + ": stored configuration does not match its fingerprint");
  s.step = r.get<std::int64_t>();
  s.model = std::make_unique<Model>(s.config.model, s.config.train.seed);
  const auto& entries = s.model->parameters().entries();
  const auto n = r.get<std::uint32_t>();
  if (n != entries.size())
    throw FormatError(origin + ": parameter count " + std::to_string(n) + " does not match model (" +
                      std::to_string(entries.size()) + ")");
  for (size_t i = 0; i < entries.size(); ++i) {
    ag::Var p = entries[i].second;
    const auto name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (name != entries[i].first || rows != p.rows() || cols != p.cols())
      throw FormatError(origin + ": parameter " + name + " does not match model layout");
    r.get_matrix(p.mutable_value());
    Matrix m(rows, cols), v(rows, cols);
    r.get_matrix(m);
    r.get_matrix(v);
    s.adam.m.push_back(std::move(m));
    s.adam.v.push_back(std::move(v));
  }
  std::istringstream engine(r.get_string());
  engine >> s.rng.engine();
  if (!engine) throw FormatError(origin + ": corrupt sampler state");
  const auto order_n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < order_n; ++i) s.order.push_back(r.get<std::int32_t>());
  s.cursor = r.get<std::uint64_t>();
  if (!r.done()) throw FormatError(origin + ": trailing bytes in checkpoint");
  return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& expected) {
  auto s = load_checkpoint(path);
  if (s.config.fingerprint() != expected.fingerprint())
    throw ValidationError(path.string() + ": checkpoint config hash does not match the requested config");
  // Run-control settings (steps, paths) come from the caller.
  s.config = expected;
  return s;
}

ordered_json AblationRow::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["tum"] = modules.tum;
  j["wum"] = modules.wum;
  j["tpm"] = modules.tpm;
  j["wpm"] = modules.wpm;
  const auto loss = final_loss.to_json();
  for (const auto& [k, v] : loss.items()) j[k] = v;
  j["val_mel_l1"] = val_mel_l1;
  j["val_on_train"] = val_on_train;
  return j;
}

double evaluate_mel_l1(const Model& model, const AblationConfig& ablation, const TrainingSet& data) {
  double abs_sum = 0, count = 0;
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    const int idx[] = {i};
    const Batch b = data.batch(idx);
    const auto out = model.forward_item(b, 0, ablation, Mode::Train);
    const auto frames = b.windows[0].current.num_frames();
    abs_sum += (out.mel.value().topRows(frames) - b.mel[0].topRows(frames)).cwiseAbs().sum();
    count += static_cast<double>(frames) * kMelChannels;
  }
  return abs_sum / count;
}

std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_dialogues(const std::vector<Dialogue>& all,
                                                                        double val_fraction) {
  const auto held = static_cast<size_t>(std::floor(static_cast<double>(all.size()) * std::clamp(val_fraction, 0.0, 1.0)));
  const size_t keep = all.size() - std::min(held, all.size() > 0 ? all.size() - 1 : 0);
  return {std::vector<Dialogue>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep)),
          std::vector<Dialogue>(all.begin() + static_cast<std::ptrdiff_t>(keep), all.end())};
}

std::vector<AblationRow> run_ablation(const std::vector<std::string>& names, const std::vector<Dialogue>& corpus,
                                      FeatureProvider& features, const RunConfig& base, int steps,
                                      std::uint64_t seed, const std::filesystem::path& metrics_path) {
  std::vector<AblationConfig> configs;
  for (const auto& n : names) configs.push_back(AblationConfig::named(n));  // validates before training

  const auto [train_dialogues, val_dialogues] = split_dialogues(corpus, base.val_fraction);
  const int c = base.model.memory_capacity;
  std::vector<AblationRow> rows;
  std::string lines;
  for (const auto& ablation : configs) {
    RunConfig cfg = base;
    cfg.ablation = ablation;
    cfg.train.seed = seed;
    cfg.train.steps = steps;
    TrainingSet train_set(all_windows(train_dialogues, c), features, cfg);
    auto state = init_train_state(cfg);
    const auto history = train(state, train_set, steps);

    AblationRow row;
    row.name = ablation.name;
    row.modules = ablation;
    if (!history.empty()) row.final_loss = history.back();
    row.val_on_train = val_dialogues.empty();
    const TrainingSet val_set(row.val_on_train ? all_windows(train_dialogues, c) : all_windows(val_dialogues, c),
                              features, cfg);
    row.val_mel_l1 = evaluate_mel_l1(*state.model, ablation, val_set);
    lines += row.to_json().dump() + "\n";
    rows.push_back(std::move(row));
  }
  if (!metrics_path.empty()) write_file_bytes(metrics_path, lines);
  return rows;
}

}  // namespace m2ctts
