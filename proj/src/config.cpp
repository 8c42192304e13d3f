#include "m2ctts/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "m2ctts/common.hpp"

namespace m2ctts {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

ModelConfig ModelConfig::compact() {
  ModelConfig c;
  c.vocab_size = 40;
  c.d_model = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_hidden = 32;
  c.ffn_kernel = 3;
  c.style_dim = 16;
  c.variance_hidden = 16;
  c.variance_bins = 16;
  c.dims = {24, 24, 12, 12};
  return c;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("invalid model config: " + what);
  };
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(d_model >= 2 && d_model % 2 == 0, "d_model must be even");
  require(heads >= 1 && d_model % heads == 0, "d_model must be divisible by heads");
  require(encoder_layers >= 1 && decoder_layers >= 1, "need at least one encoder and decoder layer");
  require(ffn_hidden >= 1 && variance_hidden >= 1 && style_dim >= 1, "widths must be >= 1");
  require(ffn_kernel % 2 == 1 && ffn_kernel_out % 2 == 1 && context_kernel % 2 == 1 &&
              variance_kernel % 2 == 1,
          "kernels must be odd");
  require(variance_bins >= 2, "variance_bins must be >= 2");
  require(pitch_max > pitch_min && energy_max > energy_min, "variance ranges must be non-empty");
  require(dims.text_utterance >= 1 && dims.acoustic_utterance >= 1, "utterance dims must be >= 1");
  require(dims.text_sequence >= 2 && dims.text_sequence % 2 == 0 && dims.acoustic_sequence >= 2 &&
              dims.acoustic_sequence % 2 == 0,
          "sequence feature dims must be even");
  require(memory_capacity >= 0, "memory_capacity must be >= 0");
}

AblationConfig AblationConfig::named(const std::string& name) {
  AblationConfig a;
  a.name = name;
  if (name == "M1") return a;
  if (name == "M2") { a.tum = true; return a; }
  if (name == "M3") { a.wum = true; return a; }
  if (name == "M4") { a.tum = a.tpm = true; return a; }
  if (name == "M5") { a.wum = a.wpm = true; return a; }
  if (name == "M6") { a.tum = a.wum = true; return a; }
  if (name == "M7") { a.tum = a.wum = a.tpm = a.wpm = true; return a; }
  throw ValidationError("unknown ablation config \"" + name + "\" (expected M1..M7)");
}

AblationConfig AblationConfig::parse(const std::string& spec) {
  if (spec.size() == 2 && spec[0] == 'M') return named(spec);
  AblationConfig a;
  a.name = "custom";
  if (spec == "none") return named("M1");
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "tum") a.tum = true;
    else if (part == "wum") a.wum = true;
    else if (part == "tpm") a.tpm = true;
    else if (part == "wpm") a.wpm = true;
    else throw ValidationError("unknown ablation config \"" + spec + "\"");
  }
  // A module list that matches a named row takes that name.
  for (const char* n : kAblationNames) {
    const auto row = named(n);
    if (row.tum == a.tum && row.wum == a.wum && row.tpm == a.tpm && row.wpm == a.wpm) return row;
  }
  return a;
}

namespace {

std::string ablation_spec(const AblationConfig& a) {
  if (a.name != "custom") return a.name;
  std::string s;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += n;
  };
  add(a.tum, "tum");
  add(a.wum, "wum");
  add(a.tpm, "tpm");
  add(a.wpm, "wpm");
  return s.empty() ? "none" : s;
}

struct Field {
  const char* key;
  bool run_control;
  std::function<ordered_json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T, typename Member>
Field plain(const char* key, Member member, bool run_control = false) {
  return Field{key, run_control,
               [member](const RunConfig& c) { return ordered_json(member(const_cast<RunConfig&>(c))); },
               [member](RunConfig& c, const json& v) { member(c) = v.get<T>(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
#define M2_MODEL(T, name) f.push_back(plain<T>(#name, [](RunConfig& c) -> T& { return c.model.name; }))
#define M2_TRAIN(T, name) f.push_back(plain<T>(#name, [](RunConfig& c) -> T& { return c.train.name; }))
    M2_MODEL(int, vocab_size);
    M2_MODEL(int, d_model);
    M2_MODEL(int, heads);
    M2_MODEL(int, encoder_layers);
    M2_MODEL(int, decoder_layers);
    M2_MODEL(int, ffn_hidden);
    M2_MODEL(int, ffn_kernel);
    M2_MODEL(int, ffn_kernel_out);
    M2_MODEL(int, context_kernel);
    M2_MODEL(int, style_dim);
    M2_MODEL(int, variance_hidden);
    M2_MODEL(int, variance_kernel);
    M2_MODEL(int, variance_bins);
    M2_MODEL(double, pitch_min);
    M2_MODEL(double, pitch_max);
    M2_MODEL(double, energy_min);
    M2_MODEL(double, energy_max);
    M2_MODEL(int, memory_capacity);
    M2_MODEL(bool, wpm_speaker_embedding);
    M2_MODEL(bool, tpm_speaker_embedding);
    f.push_back(plain<int>("text_utterance_dim", [](RunConfig& c) -> int& { return c.model.dims.text_utterance; }));
    f.push_back(plain<int>("acoustic_utterance_dim", [](RunConfig& c) -> int& { return c.model.dims.acoustic_utterance; }));
    f.push_back(plain<int>("text_sequence_dim", [](RunConfig& c) -> int& { return c.model.dims.text_sequence; }));
    f.push_back(plain<int>("acoustic_sequence_dim", [](RunConfig& c) -> int& { return c.model.dims.acoustic_sequence; }));
    M2_TRAIN(double, learning_rate);
    M2_TRAIN(int, warmup_steps);
    M2_TRAIN(double, adam_beta1);
    M2_TRAIN(double, adam_beta2);
    M2_TRAIN(double, adam_eps);
    M2_TRAIN(double, grad_clip);
    M2_TRAIN(double, lambda_prosody);
    M2_TRAIN(int, batch_size);
    M2_TRAIN(std::uint64_t, seed);
#undef M2_MODEL
#undef M2_TRAIN
    f.push_back(plain<int>("steps", [](RunConfig& c) -> int& { return c.train.steps; }, true));
    f.push_back(Field{"prosody_reduction", false,
                      [](const RunConfig& c) {
                        return ordered_json(c.train.prosody_reduction == Reduction::Mean ? "mean" : "sum");
                      },
                      [](RunConfig& c, const json& v) {
                        const auto s = v.get<std::string>();
                        if (s == "mean") c.train.prosody_reduction = Reduction::Mean;
                        else if (s == "sum") c.train.prosody_reduction = Reduction::Sum;
                        else throw ValidationError("prosody_reduction must be \"mean\" or \"sum\"");
                      }});
    f.push_back(Field{"ablation", false,
                      [](const RunConfig& c) { return ordered_json(ablation_spec(c.ablation)); },
                      [](RunConfig& c, const json& v) { c.ablation = AblationConfig::parse(v.get<std::string>()); }});
    f.push_back(Field{"extractor_mode", false,
                      [](const RunConfig& c) {
                        return ordered_json(c.extractor_mode == ExtractorMode::Stub ? "stub" : "cache");
                      },
                      [](RunConfig& c, const json& v) {
                        const auto s = v.get<std::string>();
                        if (s == "stub") c.extractor_mode = ExtractorMode::Stub;
                        else if (s == "cache") c.extractor_mode = ExtractorMode::Cache;
                        else throw ValidationError("extractor_mode must be \"stub\" or \"cache\"");
                      }});
    f.push_back(plain<std::string>("corpus", [](RunConfig& c) -> std::string& { return c.corpus; }, true));
    f.push_back(plain<std::string>("data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; }, true));
    f.push_back(plain<double>("val_fraction", [](RunConfig& c) -> double& { return c.val_fraction; }));
    f.push_back(plain<int>("pad_phoneme_id", [](RunConfig& c) -> int& { return c.pad_phoneme_id; }));
    f.push_back(plain<int>("log_every", [](RunConfig& c) -> int& { return c.log_every; }, true));
    f.push_back(plain<int>("checkpoint_every", [](RunConfig& c) -> int& { return c.checkpoint_every; }, true));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

}  // namespace

ordered_json RunConfig::to_json() const {
  ordered_json j = ordered_json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  for (const auto& item : j.items()) {
    const Field* f = find_field(item.key());
    if (!f) throw ValidationError("unknown config key \"" + item.key() + "\"");
    try {
      f->set(c, item.value());
    } catch (const json::exception& e) {
      throw ValidationError("config key \"" + item.key() + "\": " + e.what());
    }
  }
  c.model.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ValidationError("unknown config key \"" + key + "\"");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  try {
    f->set(*this, v);
  } catch (const json::exception&) {
    // "123" for a string field parses as a number; retry as a string.
    try {
      f->set(*this, json(value));
    } catch (const json::exception& e) {
      throw ValidationError("config key \"" + key + "\": " + e.what());
    }
  }
  model.validate();
}

std::uint64_t RunConfig::fingerprint() const {
  ordered_json j = ordered_json::object();
  for (const auto& f : fields())
    if (!f.run_control) j[f.key] = f.get(*this);
  return fnv1a(j.dump());
}

}  // namespace m2ctts
