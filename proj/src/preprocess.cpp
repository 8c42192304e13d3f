#include "m2ctts/preprocess.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "m2ctts/common.hpp"
#include "m2ctts/tensor_file.hpp"

namespace m2ctts {

namespace fs = std::filesystem;

nlohmann::ordered_json CorpusStats::to_json() const {
  nlohmann::ordered_json j;
  j["pitch_min"] = pitch_min;
  j["pitch_max"] = pitch_max;
  j["energy_min"] = energy_min;
  j["energy_max"] = energy_max;
  j["dialogues"] = dialogues;
  j["turns"] = turns;
  return j;
}

CorpusStats CorpusStats::from_json(const nlohmann::json& j) {
  CorpusStats s;
  s.pitch_min = j.at("pitch_min").get<double>();
  s.pitch_max = j.at("pitch_max").get<double>();
  s.energy_min = j.at("energy_min").get<double>();
  s.energy_max = j.at("energy_max").get<double>();
  s.dialogues = j.at("dialogues").get<int>();
  s.turns = j.at("turns").get<int>();
  return s;
}

CorpusStats corpus_stats(const std::vector<Dialogue>& dialogues) {
  CorpusStats s;
  constexpr double inf = std::numeric_limits<double>::infinity();
  s.pitch_min = s.energy_min = inf;
  s.pitch_max = s.energy_max = -inf;
  for (const auto& d : dialogues) {
    ++s.dialogues;
    for (const auto& t : d.turns) {
      ++s.turns;
      for (double p : t.pitch) s.pitch_min = std::min(s.pitch_min, p), s.pitch_max = std::max(s.pitch_max, p);
      for (double e : t.energy) s.energy_min = std::min(s.energy_min, e), s.energy_max = std::max(s.energy_max, e);
    }
  }
  if (s.turns == 0) throw ValidationError("corpus is empty");
  // Keep ranges non-degenerate for quantisation.
  if (s.pitch_max <= s.pitch_min) s.pitch_max = s.pitch_min + 1.0;
  if (s.energy_max <= s.energy_min) s.energy_max = s.energy_min + 1.0;
  return s;
}

namespace {

std::string describe(const std::vector<CacheKey>& keys) {
  std::string s = std::to_string(keys.size()) + " missing cache entr" + (keys.size() == 1 ? "y" : "ies") + ":";
  for (const auto& k : keys) s += "\n  " + k.to_string();
  return s;
}

}  // namespace

MissingCacheError::MissingCacheError(std::vector<CacheKey> missing)
    : ValidationError(describe(missing)), missing_(std::move(missing)) {}

fs::path cache_dir(const fs::path& data_dir) { return data_dir / "cache"; }

PreprocessReport preprocess(const fs::path& manifest, const fs::path& out_dir, const RunConfig& config) {
  const auto dialogues = load_manifest(manifest);
  for (const auto& d : dialogues)
    for (const auto& t : d.turns) validate_turn(t, config.model.vocab_size);

  PreprocessReport report;
  report.stats = corpus_stats(dialogues);
  const fs::path root = cache_dir(out_dir);
  const auto& dims = config.model.dims;

  if (config.extractor_mode == ExtractorMode::Stub) {
    StubFeatures stub(dims, config.train.seed);
    for (const auto& d : dialogues) {
      for (const auto& t : d.turns) {
        for (auto kind : kAllExtractorKinds) {
          const CacheKey key{t.dialogue_id, t.turn_index, kind};
          const std::string bytes = encode_tensor(stub.extract(t, kind));
          const fs::path path = root / key.relative_path();
          if (fs::exists(path) && read_file_bytes(path) == bytes) {
            ++report.unchanged;
            continue;
          }
          write_file_bytes(path, bytes);
          ++report.written;
        }
      }
    }
  } else {
    std::vector<CacheKey> missing;
    CachedFeatures cached(root, dims);
    for (const auto& d : dialogues) {
      for (const auto& t : d.turns) {
        for (auto kind : kAllExtractorKinds) {
          const CacheKey key{t.dialogue_id, t.turn_index, kind};
          try {
            cached.extract(t, kind);
            ++report.unchanged;
          } catch (const Error&) {
            missing.push_back(key);
          }
        }
      }
    }
    if (!missing.empty()) throw MissingCacheError(std::move(missing));
  }

  auto write_if_changed = [](const fs::path& path, const std::string& text) {
    if (fs::exists(path) && read_file_bytes(path) == text) return;
    write_file_bytes(path, text);
  };
  write_if_changed(out_dir / "stats.json", report.stats.to_json().dump(2) + "\n");
  write_if_changed(out_dir / "config.json", config.to_json().dump(2) + "\n");
  return report;
}

void apply_corpus_stats(RunConfig& config, const fs::path& data_dir) {
  const fs::path path = data_dir / "stats.json";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  const auto stats = CorpusStats::from_json(nlohmann::json::parse(in));
  config.model.pitch_min = stats.pitch_min;
  config.model.pitch_max = stats.pitch_max;
  config.model.energy_min = stats.energy_min;
  config.model.energy_max = stats.energy_max;
}

std::unique_ptr<FeatureProvider> make_feature_provider(const RunConfig& config, const fs::path& data_dir) {
  if (!data_dir.empty() && fs::exists(cache_dir(data_dir)))
    return std::make_unique<CachedFeatures>(cache_dir(data_dir), config.model.dims);
  if (config.extractor_mode == ExtractorMode::Cache)
    throw ValidationError("cache mode needs a preprocessed data directory");
  return std::make_unique<StubFeatures>(config.model.dims, config.train.seed);
}

}  // namespace m2ctts
