// m2ctts: preprocess corpora, train, synthesize, run ablations and the
// verification suites.
//
// Exit codes: 0 success, 1 validation or verification failure, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "m2ctts/config.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/model.hpp"
#include "m2ctts/preprocess.hpp"
#include "m2ctts/tensor_file.hpp"
#include "m2ctts/training.hpp"
#include "m2ctts/verify.hpp"

namespace fs = std::filesystem;
using namespace m2ctts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config file, then `--key value` overrides, then the M2CTTS_SEED fallback
// when no seed was given explicitly.
struct ConfigSource {
  std::string file;
  std::set<std::string> explicit_keys;

  RunConfig resolve(const std::vector<std::string>& extras) {
    RunConfig cfg;
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ValidationError("cannot open config " + file);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(file + ": " + e.what());
      }
      cfg = RunConfig::from_json(j);
      for (const auto& item : j.items()) explicit_keys.insert(item.key());
    }
    for (size_t i = 0; i < extras.size(); ++i) {
      std::string arg = extras[i];
      if (arg.rfind("--", 0) != 0) throw UsageError("unexpected argument \"" + arg + "\"");
      arg = arg.substr(2);
      std::string value;
      if (const auto eq = arg.find('='); eq != std::string::npos) {
        value = arg.substr(eq + 1);
        arg = arg.substr(0, eq);
      } else {
        if (i + 1 >= extras.size()) throw UsageError("missing value for --" + arg);
        value = extras[++i];
      }
      std::replace(arg.begin(), arg.end(), '-', '_');
      if (!cfg.to_json().contains(arg))
        throw UsageError("unknown option --" + arg);
      cfg.set(arg, value);
      explicit_keys.insert(arg);
    }
    if (!explicit_keys.contains("seed")) {
      if (const char* env = std::getenv("M2CTTS_SEED"); env && *env) {
        cfg.set("seed", env);
        explicit_keys.insert("seed");
      }
    }
    return cfg;
  }

  bool has_ranges() const {
    for (const char* k : {"pitch_min", "pitch_max", "energy_min", "energy_max"})
      if (explicit_keys.contains(k)) return true;
    return false;
  }
};

fs::path manifest_path(const std::string& corpus) {
  if (corpus.empty()) throw ValidationError("no corpus given (set --corpus-dir or the \"corpus\" key)");
  fs::path p(corpus);
  if (fs::is_directory(p)) p /= "manifest.jsonl";
  if (!fs::exists(p)) throw ValidationError("manifest not found: " + p.string());
  return p;
}

void write_snapshot(const fs::path& out_dir, const RunConfig& cfg) {
  fs::create_directories(out_dir);
  write_file_bytes(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
}

int cmd_preprocess(const std::string& corpus_dir, const std::string& out_dir, const std::string& mode,
                   ConfigSource& src, const std::vector<std::string>& extras) {
  RunConfig cfg = src.resolve(extras);
  if (!mode.empty()) cfg.set("extractor_mode", mode);
  if (!corpus_dir.empty()) cfg.corpus = corpus_dir;
  cfg.data_dir = out_dir;
  const auto report = preprocess(manifest_path(cfg.corpus), out_dir, cfg);
  std::cout << "dialogues " << report.stats.dialogues << ", turns " << report.stats.turns << ", cache files written "
            << report.written << ", unchanged " << report.unchanged << "\n";
  return kExitOk;
}

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::unique_ptr<FeatureProvider> features;
};

Corpus open_corpus(RunConfig& cfg, bool apply_stats) {
  Corpus c;
  c.dialogues = load_manifest(manifest_path(cfg.corpus));
  if (apply_stats && !cfg.data_dir.empty()) apply_corpus_stats(cfg, cfg.data_dir);
  c.features = make_feature_provider(cfg, cfg.data_dir);
  return c;
}

std::string format_loss(const LossBreakdown& l) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "total %.5f  mel %.5f  pitch %.5f  energy %.5f  logdur %.5f  prosody %.5f",
                l.total, l.mel_l1, l.pitch_mse, l.energy_mse, l.logdur_mse, l.prosody_mse);
  return buf;
}

int cmd_train(const std::string& out_dir, const std::string& corpus_dir, const std::string& data_dir,
              const std::string& resume, ConfigSource& src, const std::vector<std::string>& extras) {
  RunConfig cfg = src.resolve(extras);
  if (!corpus_dir.empty()) cfg.corpus = corpus_dir;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  auto corpus = open_corpus(cfg, !src.has_ranges());
  write_snapshot(out_dir, cfg);

  const auto [train_dialogues, val_dialogues] = split_dialogues(corpus.dialogues, cfg.val_fraction);
  const int c = cfg.model.memory_capacity;
  TrainingSet data(all_windows(train_dialogues, c), *corpus.features, cfg);

  TrainState state = resume.empty() ? init_train_state(cfg) : load_checkpoint(resume, cfg);
  state.config = cfg;

  const fs::path loss_path = fs::path(out_dir) / "loss.jsonl";
  std::ofstream loss_file(loss_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!loss_file) throw Error("cannot write " + loss_path.string());
  const int remaining = std::max<int>(0, cfg.train.steps - static_cast<int>(state.step));
  train(state, data, remaining, [&](std::int64_t step, const LossBreakdown& loss) {
    nlohmann::ordered_json line;
    line["step"] = step;
    const auto fields = loss.to_json();
    for (const auto& [k, v] : fields.items()) line[k] = v;
    loss_file << line.dump() << "\n";
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1))
      std::cerr << "step " << step << "  " << format_loss(loss) << "\n";
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06lld.m2ck", static_cast<long long>(step));
      save_checkpoint(state, fs::path(out_dir) / "checkpoints" / name);
    }
  });
  loss_file.close();
  const fs::path final_path = fs::path(out_dir) / "final.m2ck";
  save_checkpoint(state, final_path);

  const bool val_on_train = val_dialogues.empty();
  const TrainingSet val(all_windows(val_on_train ? train_dialogues : val_dialogues, c), *corpus.features, cfg);
  nlohmann::ordered_json summary;
  summary["steps"] = state.step;
  summary["val_mel_l1"] = evaluate_mel_l1(*state.model, cfg.ablation, val);
  summary["val_on_train"] = val_on_train;
  write_file_bytes(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << final_path.string() << "\n";
  return kExitOk;
}

// heads x N x M, one tensor per module.
void write_attention(const fs::path& path, const std::vector<Matrix>& heads) {
  Tensor t;
  const auto n = heads.empty() ? 0 : heads.front().rows();
  const auto m = heads.empty() ? 0 : heads.front().cols();
  t.shape = {static_cast<std::uint32_t>(heads.size()), static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m)};
  for (const auto& h : heads)
    for (Eigen::Index i = 0; i < h.size(); ++i) t.data.push_back(static_cast<float>(h.data()[i]));
  write_tensor(path, t);
}

int cmd_synthesize(const std::string& checkpoint, const std::string& dialogue_id, int turn, std::string out_dir,
                   const std::string& corpus_dir, const std::string& data_dir) {
  TrainState state = load_checkpoint(checkpoint);
  RunConfig cfg = state.config;
  if (!corpus_dir.empty()) cfg.corpus = corpus_dir;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  auto corpus = open_corpus(cfg, false);

  const Dialogue* dialogue = nullptr;
  for (const auto& d : corpus.dialogues)
    if (d.dialogue_id == dialogue_id) dialogue = &d;
  if (!dialogue) throw ValidationError("unknown dialogue \"" + dialogue_id + "\"");
  if (turn < 0 || turn >= static_cast<int>(dialogue->turns.size()))
    throw ValidationError("dialogue " + dialogue_id + " has no turn " + std::to_string(turn));

  const auto w = window(*dialogue, turn, cfg.model.memory_capacity);
  const auto result = synthesize(*state.model, cfg.ablation, w, *corpus.features, cfg.pad_phoneme_id);

  if (out_dir.empty()) out_dir = (fs::path(checkpoint).parent_path() / "synth").string();
  write_snapshot(out_dir, cfg);
  const std::string stem = dialogue_id + "_" + std::to_string(turn);
  const fs::path mel_path = fs::path(out_dir) / (stem + ".mel.m2ct");
  write_tensor(mel_path, Tensor::from_matrix(result.mel));
  if (cfg.ablation.tpm) write_attention(fs::path(out_dir) / (stem + ".tpm_attention.m2ct"), result.tpm_weights);
  if (cfg.ablation.wpm) write_attention(fs::path(out_dir) / (stem + ".wpm_attention.m2ct"), result.wpm_weights);
  std::cout << mel_path.string() << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<PropertyResult> results;
  try {
    results = run_verify_suite(suite, seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.suite << ": " << r.property;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    failed += r.passed ? 0 : 1;
  }
  std::cout << results.size() - static_cast<size_t>(failed) << "/" << results.size() << " properties passed\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

std::vector<std::string> split_names(const std::string& names) {
  std::vector<std::string> out;
  std::stringstream ss(names);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

int cmd_ablate(const std::string& names, const std::string& out_dir, const std::string& corpus_dir,
               const std::string& data_dir, ConfigSource& src, const std::vector<std::string>& extras) {
  RunConfig cfg = src.resolve(extras);
  if (!corpus_dir.empty()) cfg.corpus = corpus_dir;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  std::vector<std::string> list = split_names(names);
  if (list.empty()) list.assign(std::begin(kAblationNames), std::end(kAblationNames));
  for (const auto& n : list) AblationConfig::named(n);
  auto corpus = open_corpus(cfg, !src.has_ranges());
  write_snapshot(out_dir, cfg);
  const auto rows = run_ablation(list, corpus.dialogues, *corpus.features, cfg, cfg.train.steps, cfg.train.seed,
                                 fs::path(out_dir) / "metrics.jsonl");
  for (const auto& r : rows)
    std::cout << r.name << "  " << format_loss(r.final_loss) << "  val_mel_l1 " << r.val_mel_l1
              << (r.val_on_train ? " (train set)" : "") << "\n";
  return kExitOk;
}

int cmd_gen_toy(const std::string& out_dir, std::uint64_t seed, int dialogues, int turns) {
  std::cout << gen_toy_corpus(seed, dialogues, turns, out_dir).string() << "\n";
  return kExitOk;
}

std::uint64_t env_seed(std::uint64_t fallback) {
  const char* env = std::getenv("M2CTTS_SEED");
  if (!env || !*env) return fallback;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw UsageError(std::string("M2CTTS_SEED is not an unsigned integer: ") + env);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational acoustic model toolkit"};
  app.require_subcommand(1);
  ConfigSource src;
  std::string corpus_dir, out_dir, data_dir, mode, resume, checkpoint, dialogue_id, suite = "all", names;
  int turn = 0, dialogues = 2, turns = 4;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto* pre = app.add_subcommand("preprocess", "Validate a corpus, fill or check the feature cache, write stats");
  pre->add_option("--corpus-dir,--corpus_dir", corpus_dir, "Corpus directory or manifest file")->required();
  pre->add_option("--out-dir,--out_dir", out_dir, "Output directory")->required();
  pre->add_option("--extractor-mode,--extractor_mode", mode, "stub or cache")->check(CLI::IsMember({"stub", "cache"}));
  pre->add_option("--config", src.file, "JSON config file");
  pre->allow_extras();

  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", src.file, "JSON config file");
  trn->add_option("--out-dir,--out_dir", out_dir, "Output directory")->required();
  trn->add_option("--corpus-dir,--corpus_dir", corpus_dir, "Corpus directory or manifest file");
  trn->add_option("--data-dir,--data_dir", data_dir, "Preprocessed directory");
  trn->add_option("--resume", resume, "Checkpoint to resume from");
  trn->allow_extras();

  auto* syn = app.add_subcommand("synthesize", "Synthesize the mel spectrogram of one dialogue turn");
  syn->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  syn->add_option("--dialogue-id,--dialogue_id", dialogue_id, "Dialogue id")->required();
  syn->add_option("--turn,-t", turn, "Turn index")->required();
  syn->add_option("--out-dir,--out_dir", out_dir, "Output directory (default: <checkpoint dir>/synth)");
  syn->add_option("--corpus-dir,--corpus_dir", corpus_dir, "Corpus directory or manifest file");
  syn->add_option("--data-dir,--data_dir", data_dir, "Preprocessed directory");

  auto* ver = app.add_subcommand("verify", "Run the property suites");
  ver->add_option("suite,--suite", suite, "Suite name or \"all\"");
  ver->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });

  auto* abl = app.add_subcommand("ablate", "Train and evaluate ablation configurations");
  abl->add_option("--names", names, "Comma-separated configurations (default M1..M7)");
  abl->add_option("--config", src.file, "JSON config file");
  abl->add_option("--out-dir,--out_dir", out_dir, "Output directory")->required();
  abl->add_option("--corpus-dir,--corpus_dir", corpus_dir, "Corpus directory or manifest file");
  abl->add_option("--data-dir,--data_dir", data_dir, "Preprocessed directory");
  abl->allow_extras();

  auto* toy = app.add_subcommand("gen-toy", "Write a synthetic toy corpus");
  toy->add_option("--out-dir,--out_dir", out_dir, "Output directory")->required();
  toy->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });
  toy->add_option("--dialogues", dialogues, "Number of dialogues")->check(CLI::PositiveNumber);
  toy->add_option("--turns", turns, "Turns per dialogue")->check(CLI::Range(2, 10000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre) return cmd_preprocess(corpus_dir, out_dir, mode, src, pre->remaining());
    if (*trn) return cmd_train(out_dir, corpus_dir, data_dir, resume, src, trn->remaining());
    if (*syn) return cmd_synthesize(checkpoint, dialogue_id, turn, out_dir, corpus_dir, data_dir);
    if (*ver) return cmd_verify(suite, seed_given ? seed : env_seed(0));
    if (*abl) return cmd_ablate(names, out_dir, corpus_dir, data_dir, src, abl->remaining());
    if (*toy) return cmd_gen_toy(out_dir, seed_given ? seed : env_seed(7), dialogues, turns);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
