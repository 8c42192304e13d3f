#pragma once

// Corpus preprocessing: validation, embedding-cache population (stub mode)
// or completeness check (cache mode), and corpus statistics.
//
// Output directory layout:
//   <out>/cache/<dialogue_id>/<turn_index>.<kind>.m2ct
//   <out>/stats.json   pitch / energy ranges and corpus counts
//   <out>/config.json  effective configuration

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m2ctts/common.hpp"
#include "m2ctts/config.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/extractors.hpp"

namespace m2ctts {

struct CorpusStats {
  double pitch_min = 0, pitch_max = 0;
  double energy_min = 0, energy_max = 0;
  int dialogues = 0;
  int turns = 0;

  nlohmann::ordered_json to_json() const;
  static CorpusStats from_json(const nlohmann::json& j);
};

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues);

/// Raised in cache mode; lists every missing or malformed entry.
class MissingCacheError : public ValidationError {
 public:
  MissingCacheError(std::vector<CacheKey> missing);
  const std::vector<CacheKey>& missing() const { return missing_; }

 private:
  std::vector<CacheKey> missing_;
};

struct PreprocessReport {
  CorpusStats stats;
  int written = 0;    // cache files (re)written
  int unchanged = 0;  // cache files already byte-identical
};

std::filesystem::path cache_dir(const std::filesystem::path& data_dir);

PreprocessReport preprocess(const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
                            const RunConfig& config);

/// Applies stats.json ranges from `data_dir` to the model config, if present.
void apply_corpus_stats(RunConfig& config, const std::filesystem::path& data_dir);

/// Feature source matching the configured extractor mode.
std::unique_ptr<FeatureProvider> make_feature_provider(const RunConfig& config,
                                                       const std::filesystem::path& data_dir);

}  // namespace m2ctts
