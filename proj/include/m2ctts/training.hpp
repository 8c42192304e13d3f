#pragma once

// Loss aggregation, Adam training loop with warmup, checkpoints, and the
// ablation harness over the M1..M7 module matrix.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m2ctts/batch.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/model.hpp"

namespace m2ctts {

struct LossBreakdown {
  double mel_l1 = 0;
  double pitch_mse = 0;
  double energy_mse = 0;
  double logdur_mse = 0;
  double prosody_mse = 0;
  double total = 0;

  nlohmann::ordered_json to_json() const;
  bool operator==(const LossBreakdown&) const = default;
};

struct LossResult {
  LossBreakdown breakdown;
  ag::Var total;
};

/// Masked means over real frames / phonemes. The prosody term is present only
/// when a coarse module is enabled, weighted by lambda_prosody. Throws Error
/// naming the first non-finite term.
LossResult total_loss(const std::vector<ItemOutput>& outputs, const Batch& batch,
                      const TrainConfig& train);

/// Windows plus a memoised feature source, sliced into batches on demand.
class TrainingSet {
 public:
  TrainingSet(std::vector<ConversationWindow> windows, FeatureProvider& features,
              const RunConfig& config);

  Batch batch(std::span<const int> indices) const;
  Batch all() const;
  std::size_t size() const { return windows_.size(); }
  const std::vector<ConversationWindow>& windows() const { return windows_; }

 private:
  std::vector<ConversationWindow> windows_;
  mutable MemoFeatures features_;
  FeatureNeeds needs_;
  int pad_id_;
  int capacity_;
};

struct AdamState {
  std::vector<Matrix> m, v;
};

struct TrainState {
  std::int64_t step = 0;
  std::unique_ptr<Model> model;
  AdamState adam;
  Rng rng{0};
  std::vector<int> order;  // current epoch permutation
  std::size_t cursor = 0;
  RunConfig config;

  TrainState clone() const;
};

TrainState init_train_state(const RunConfig& config);

/// Deterministic epoch-shuffled window indices for the next step.
std::vector<int> next_batch_indices(TrainState& state, std::size_t dataset_size);

/// One optimiser update on `batch`. Throws Error if the loss is non-finite.
LossBreakdown train_step(TrainState& state, const Batch& batch);

/// Runs `steps` updates, calling `on_step(step, loss)` after each.
std::vector<LossBreakdown> train(TrainState& state, const TrainingSet& data, int steps,
                                 const std::function<void(std::int64_t, const LossBreakdown&)>& on_step = {});

/// Learning rate at 1-based step `step` (linear warmup, then constant).
double learning_rate_at(const TrainConfig& train, std::int64_t step);

inline constexpr char kCheckpointMagic[4] = {'M', '2', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const TrainState& state);
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Restores the state recorded in the file.
TrainState load_checkpoint(const std::filesystem::path& path);
/// As above, but fails unless the stored configuration fingerprint matches.
TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& expected);

struct AblationRow {
  std::string name;
  AblationConfig modules;
  LossBreakdown final_loss;
  double val_mel_l1 = 0;
  bool val_on_train = false;

  nlohmann::ordered_json to_json() const;
};

/// Mean mel L1 over real frames, teacher-forced lengths.
double evaluate_mel_l1(const Model& model, const AblationConfig& ablation, const TrainingSet& data);

/// Splits dialogues into (train, validation); the last floor(n * fraction)
/// dialogues are held out.
std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_dialogues(const std::vector<Dialogue>& all,
                                                                        double val_fraction);

/// Trains each named configuration from the same seed and writes one JSON
/// line per configuration to `metrics_path` (skipped when empty).
std::vector<AblationRow> run_ablation(const std::vector<std::string>& names,
                                      const std::vector<Dialogue>& corpus, FeatureProvider& features,
                                      const RunConfig& base, int steps, std::uint64_t seed,
                                      const std::filesystem::path& metrics_path = {});

}  // namespace m2ctts
