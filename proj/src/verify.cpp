#include "m2ctts/verify.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "m2ctts/config.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/fusion.hpp"
#include "m2ctts/gradcheck.hpp"
#include "m2ctts/model.hpp"
#include "m2ctts/tensor_file.hpp"
#include "m2ctts/training.hpp"

namespace m2ctts {

namespace fs = std::filesystem;

namespace {

class Reporter {
 public:
  Reporter(std::string suite, std::vector<PropertyResult>& out) : suite_(std::move(suite)), out_(out) {}

  void check(const std::string& property, const std::function<std::string()>& body) {
    PropertyResult r{suite_, property, false, {}};
    try {
      r.detail = body();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out_.push_back(std::move(r));
  }

 private:
  std::string suite_;
  std::vector<PropertyResult>& out_;
};

std::string fmt(const char* label, double value) {
  std::ostringstream s;
  s << label << " = " << value;
  return s.str();
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Synthetic turn with `phonemes` phonemes spread over `frames` frames.
Turn synthetic_turn(Rng& rng, const std::string& did, int index, int phonemes, int frames) {
  Turn t;
  t.dialogue_id = did;
  t.turn_index = index;
  t.speaker = index % 2 == 0 ? Speaker::A : Speaker::B;
  t.text = "turn " + std::to_string(index);
  t.durations.assign(static_cast<size_t>(phonemes), 1);
  for (int extra = frames - phonemes, p = 0; extra > 0; --extra, p = (p + 1) % phonemes)
    ++t.durations[static_cast<size_t>(p)];
  for (int p = 0; p < phonemes; ++p) {
    t.phoneme_ids.push_back(rng.uniform_int(1, 30));
    t.pitch.push_back(rng.uniform(-1, 1));
    t.energy.push_back(rng.uniform(-1, 1));
  }
  t.mel = std::make_shared<const Matrix>(random_matrix(rng, frames, kMelChannels));
  return t;
}

void suite_windowing(Reporter& rep, std::uint64_t seed) {
  rep.check("matches index-filter oracle on 1000 random triples", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-windowing"));
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = rng.uniform_int(1, 12);
      const int t = rng.uniform_int(0, n - 1);
      const int c = rng.uniform_int(0, 8);
      Dialogue d;
      d.dialogue_id = "w";
      for (int i = 0; i < n; ++i) {
        Turn turn;
        turn.dialogue_id = "w";
        turn.turn_index = i;
        d.turns.push_back(turn);
      }
      const auto w = window(d, t, c);
      std::vector<int> expected;
      for (int i = 0; i < n; ++i)
        if (i < t && i >= t - c) expected.push_back(i);
      std::vector<int> got;
      for (const auto& h : w.history) got.push_back(h.turn_index);
      if (got != expected || w.current.turn_index != t)
        return "mismatch at n=" + std::to_string(n) + " t=" + std::to_string(t) + " c=" + std::to_string(c);
    }
    return {};
  });
  rep.check("out-of-range turn is rejected", [&]() -> std::string {
    Dialogue d;
    d.dialogue_id = "w";
    d.turns.resize(3);
    try {
      window(d, 3, 4);
    } catch (const std::exception&) {
      return {};
    }
    return "no error for t == length";
  });
}

void suite_attention(Reporter& rep, std::uint64_t seed) {
  rep.check("masked softmax rows sum to one with zeros at masked keys", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-attention"));
    for (int trial = 0; trial < 200; ++trial) {
      const int rows = rng.uniform_int(1, 6);
      const int cols = rng.uniform_int(1, 9);
      Mask mask(static_cast<size_t>(cols));
      for (auto&& m : mask) m = rng.uniform() < 0.6;
      mask[static_cast<size_t>(rng.uniform_int(0, cols - 1))] = true;
      const Matrix scores = 5.0 * random_matrix(rng, rows, cols);
      const Matrix w = ag::masked_softmax_rows(ag::constant(scores), mask).value();
      for (int r = 0; r < rows; ++r) {
        if (std::abs(w.row(r).sum() - 1.0) > 1e-5) return fmt("row sum deviation", w.row(r).sum() - 1.0);
        for (int c = 0; c < cols; ++c)
          if (!mask[static_cast<size_t>(c)] && w(r, c) != 0.0) return "masked key has nonzero weight";
      }
    }
    return {};
  });
  rep.check("all-masked keys raise an error", [&]() -> std::string {
    try {
      ag::masked_softmax_rows(ag::constant(Matrix::Zero(2, 3)), Mask(3, false));
    } catch (const std::invalid_argument&) {
      return {};
    }
    return "no error";
  });
  rep.check("multi-head attention weights are distributions", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-mha"));
    ParameterSet params;
    MultiHeadAttention mha(params, "mha", 8, 2, rng);
    const auto q = ag::constant(random_matrix(rng, 3, 8));
    const auto kv = ag::constant(random_matrix(rng, 5, 8));
    const Mask mask{true, true, false, true, false};
    const auto r = mha(q, kv, kv, mask);
    for (const auto& w : r.weights)
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        if (std::abs(w.row(i).sum() - 1.0) > 1e-9) return "head row does not sum to one";
        if (w(i, 2) != 0.0 || w(i, 4) != 0.0) return "masked key has nonzero weight";
      }
    return {};
  });
}

void suite_saln(Reporter& rep, std::uint64_t seed) {
  rep.check("unit gain and zero bias reduce to layer norm", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-saln"));
    ParameterSet params;
    Saln saln(params, "saln", 6, 4, rng);
    saln.gain.weight.mutable_value().setZero();
    saln.gain.bias.mutable_value().setOnes();
    saln.shift.weight.mutable_value().setZero();
    saln.shift.bias.mutable_value().setZero();
    const auto h = ag::constant(3.0 * random_matrix(rng, 5, 6));
    const auto style = ag::constant(random_matrix(rng, 1, 4));
    const Matrix got = saln(h, style).value();
    Matrix expected = h.value();
    for (Eigen::Index r = 0; r < expected.rows(); ++r) {
      const double mean = expected.row(r).mean();
      const double var = (expected.row(r).array() - mean).square().mean();
      expected.row(r) = (expected.row(r).array() - mean) / std::sqrt(var + Saln::kEps);
    }
    const double err = (got - expected).cwiseAbs().maxCoeff();
    return err <= 1e-4 ? std::string{} : fmt("max deviation", err);
  });
  rep.check("[1, 3] with gain 2 and bias 0.5 gives [-1.5, 2.5]", [&]() -> std::string {
    Rng rng(seed);
    ParameterSet params;
    Saln saln(params, "saln", 2, 1, rng);
    saln.gain.weight.mutable_value().setZero();
    saln.gain.bias.mutable_value().setConstant(2.0);
    saln.shift.weight.mutable_value().setZero();
    saln.shift.bias.mutable_value().setConstant(0.5);
    Matrix h(1, 2);
    h << 1, 3;
    const Matrix got = saln(ag::constant(h), ag::constant(Matrix::Zero(1, 1))).value();
    const double err = std::max(std::abs(got(0, 0) + 1.5), std::abs(got(0, 1) - 2.5));
    return err <= 1e-3 ? std::string{} : fmt("max deviation", err);
  });
}

std::string gradcheck_verdict(const GradCheckResult& r) {
  if (r.checked == 0) return "no entries checked";
  return r.relative_error < 1e-4 ? std::string{} : fmt("relative error", r.relative_error);
}

std::vector<ag::Var> all_params(const ParameterSet& params) {
  std::vector<ag::Var> out;
  for (const auto& [_, p] : params.entries()) out.push_back(p);
  return out;
}

// One current turn of 2 phonemes / 4 frames with two history turns.
ConversationWindow tiny_window(std::uint64_t seed) {
  Rng rng(stream_seed(seed, "verify-tiny"));
  ConversationWindow w;
  w.history.push_back(synthetic_turn(rng, "g", 0, 3, 5));
  w.history.push_back(synthetic_turn(rng, "g", 1, 2, 3));
  w.current = synthetic_turn(rng, "g", 2, 2, 4);
  return w;
}

void suite_gradients(Reporter& rep, std::uint64_t seed) {
  rep.check("saln", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-grad-saln"));
    ParameterSet params;
    Saln saln(params, "saln", 5, 3, rng);
    const auto h = ag::parameter(random_matrix(rng, 4, 5));
    const auto style = ag::parameter(random_matrix(rng, 1, 3));
    const auto probe = ag::constant(random_matrix(rng, 4, 5));
    auto inputs = all_params(params);
    inputs.push_back(h);
    inputs.push_back(style);
    return gradcheck_verdict(check_gradients([&] { return ag::sum_all(ag::mul(saln(h, style), probe)); }, inputs));
  });
  rep.check("multi_head_attention", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-grad-mha"));
    ParameterSet params;
    MultiHeadAttention mha(params, "mha", 6, 2, rng);
    const auto q = ag::parameter(random_matrix(rng, 3, 6));
    const auto kv = ag::parameter(random_matrix(rng, 4, 6));
    const auto probe = ag::constant(random_matrix(rng, 3, 6));
    const Mask mask{true, false, true, true};
    auto inputs = all_params(params);
    inputs.push_back(q);
    inputs.push_back(kv);
    return gradcheck_verdict(check_gradients(
        [&] { return ag::sum_all(ag::mul(mha(q, kv, kv, mask).output, probe)); }, inputs));
  });
  rep.check("additive_attention_pool", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-grad-pool"));
    ParameterSet params;
    AdditiveAttentionPool pool(params, "pool", 4, 5, 6, rng);
    const auto query = ag::parameter(random_matrix(rng, 1, 4));
    const auto keys = ag::parameter(random_matrix(rng, 3, 5));
    const auto probe = ag::constant(random_matrix(rng, 1, 5));
    auto inputs = all_params(params);
    inputs.push_back(query);
    inputs.push_back(keys);
    return gradcheck_verdict(check_gradients(
        [&] { return ag::sum_all(ag::mul(pool(query, keys, {true, true, true}).output, probe)); }, inputs));
  });
  rep.check("gru_summarize", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-grad-gru"));
    ParameterSet params;
    Gru gru(params, "gru", 4, 5, rng);
    const auto seq = ag::parameter(random_matrix(rng, 3, 4));
    const auto init = ag::parameter(random_matrix(rng, 1, 5));
    const auto probe = ag::constant(random_matrix(rng, 1, 5));
    auto inputs = all_params(params);
    inputs.push_back(seq);
    inputs.push_back(init);
    return gradcheck_verdict(check_gradients(
        [&] { return ag::sum_all(ag::mul(gru(seq, init, {true, true, true}).final_state, probe)); }, inputs));
  });
  rep.check("full model (2 phonemes, 4 frames, M7)", [&]() -> std::string {
    const ModelConfig cfg = ModelConfig::compact();
    Model model(cfg, seed);
    StubFeatures features(cfg.dims, seed);
    const ConversationWindow windows[] = {tiny_window(seed)};
    const auto ablation = AblationConfig::named("M7");
    const Batch batch = make_batch(windows, 0, cfg.memory_capacity, features, needs_for(ablation));
    const TrainConfig train;
    const auto inputs = all_params(model.parameters());
    return gradcheck_verdict(check_gradients(
        [&] { return total_loss(model.forward(batch, ablation, Mode::Train), batch, train).total; }, inputs,
        1e-6, 4, seed));
  });
}

// Two windows where the first is strictly shorter on every padded axis.
std::pair<ConversationWindow, ConversationWindow> padded_pair(std::uint64_t seed) {
  Rng rng(stream_seed(seed, "verify-padding"));
  ConversationWindow a, b;
  a.history.push_back(synthetic_turn(rng, "p", 0, 3, 6));
  a.current = synthetic_turn(rng, "p", 1, 3, 7);
  for (int i = 0; i < 3; ++i) b.history.push_back(synthetic_turn(rng, "q", i, 5, 9));
  b.current = synthetic_turn(rng, "q", 3, 6, 12);
  return {a, b};
}

void perturb_padding(Batch& batch, int b, Rng& rng) {
  const Mask ph = batch.phoneme_row_mask(b);
  for (int j = 0; j < batch.max_phonemes(); ++j) {
    if (ph[static_cast<size_t>(j)]) continue;
    batch.phonemes(b, j) = rng.uniform_int(1, 30);
    batch.durations(b, j) = rng.uniform_int(1, 4);
    batch.pitch(b, j) = rng.normal();
    batch.energy(b, j) = rng.normal();
  }
  const Mask fr = batch.frame_row_mask(b);
  auto& mel = batch.mel[static_cast<size_t>(b)];
  for (int f = 0; f < batch.max_frames(); ++f)
    if (!fr[static_cast<size_t>(f)]) mel.row(f) = random_matrix(rng, 1, mel.cols());
  auto& wf = batch.features[static_cast<size_t>(b)];
  for (size_t i = 0; i < wf.history_mask.size(); ++i) {
    if (wf.history_mask[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    wf.history_text.row(r) = random_matrix(rng, 1, wf.history_text.cols());
    wf.history_acoustic.row(r) = random_matrix(rng, 1, wf.history_acoustic.cols());
  }
  for (MemoryRows* mem : {&wf.text_memory, &wf.acoustic_memory}) {
    for (size_t i = 0; i < mem->mask.size(); ++i) {
      if (mem->mask[i]) continue;
      mem->features.row(static_cast<Eigen::Index>(i)) = random_matrix(rng, 1, mem->features.cols());
      mem->speaker[i] = 1 - mem->speaker[i];
      mem->position[i] = rng.uniform_int(0, 3);
    }
  }
}

void suite_masking(Reporter& rep, std::uint64_t seed) {
  rep.check("padded phoneme, frame, history and memory slots do not affect outputs", [&]() -> std::string {
    const ModelConfig cfg = ModelConfig::compact();
    Model model(cfg, seed);
    StubFeatures features(cfg.dims, seed);
    const auto [a, b] = padded_pair(seed);
    const ConversationWindow windows[] = {a, b};
    const auto ablation = AblationConfig::named("M7");
    const Batch clean = make_batch(windows, 0, cfg.memory_capacity, features, needs_for(ablation));
    Batch noisy = clean;
    Rng rng(stream_seed(seed, "verify-perturb"));
    perturb_padding(noisy, 0, rng);
    const TrainConfig train;
    const auto out_clean = model.forward(clean, ablation, Mode::Train);
    const auto out_noisy = model.forward(noisy, ablation, Mode::Train);
    double diff = 0;
    for (size_t i = 0; i < out_clean.size(); ++i) {
      diff = std::max(diff, (out_clean[i].mel.value() - out_noisy[i].mel.value()).cwiseAbs().maxCoeff());
      diff = std::max(diff, (out_clean[i].predictions.pitch.value() - out_noisy[i].predictions.pitch.value())
                                .cwiseAbs().maxCoeff());
    }
    diff = std::max(diff, std::abs(total_loss(out_clean, clean, train).breakdown.total -
                                   total_loss(out_noisy, noisy, train).breakdown.total));
    const auto inf_clean = model.forward_item(clean, 0, ablation, Mode::Inference).mel.value();
    const auto inf_noisy = model.forward_item(noisy, 0, ablation, Mode::Inference).mel.value();
    if (inf_clean.rows() != inf_noisy.rows()) return "inference length changed";
    diff = std::max(diff, (inf_clean - inf_noisy).cwiseAbs().maxCoeff());
    return diff <= 1e-6 ? std::string{} : fmt("max change", diff);
  });
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("m2ctts-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void suite_cache(Reporter& rep, std::uint64_t seed) {
  rep.check("tensor files round-trip bit-exactly", [&]() -> std::string {
    Rng rng(stream_seed(seed, "verify-tensor"));
    for (int trial = 0; trial < 50; ++trial) {
      Tensor t;
      const int rank = rng.uniform_int(1, 3);
      for (int i = 0; i < rank; ++i) t.shape.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, 5)));
      t.data.resize(t.numel());
      for (auto& v : t.data) v = static_cast<float>(rng.normal());
      const std::string bytes = encode_tensor(t);
      const Tensor back = decode_tensor(bytes);
      if (back.shape != t.shape || back.data != t.data || encode_tensor(back) != bytes)
        return "round trip differs at trial " + std::to_string(trial);
    }
    return {};
  });
  rep.check("embedding cache entries round-trip through disk", [&]() -> std::string {
    TempDir dir("verify-cache");
    const ModelConfig cfg = ModelConfig::compact();
    StubFeatures stub(cfg.dims, seed);
    const auto w = tiny_window(seed);
    for (auto kind : kAllExtractorKinds) {
      const CacheKey key{w.current.dialogue_id, w.current.turn_index, kind};
      const Tensor t = stub.extract(w.current, kind);
      write_cache(dir.path, key, t);
      if (encode_tensor(read_cache(dir.path, key)) != encode_tensor(t))
        return "mismatch for " + key.to_string();
    }
    return {};
  });
  rep.check("checkpoint round-trips and resume reproduces losses", [&]() -> std::string {
    TempDir dir("verify-ckpt");
    RunConfig config;
    config.model = ModelConfig::compact();
    config.train.seed = seed;
    config.train.batch_size = 2;
    StubFeatures features(config.model.dims, seed);
    const auto dialogues = make_toy_dialogues(seed, 2, 3, {.vocab_size = 30, .max_phonemes = 6, .max_frames = 20});
    TrainingSet data(all_windows(dialogues, config.model.memory_capacity), features, config);
    TrainState state = init_train_state(config);
    train(state, data, 2);
    const fs::path path = dir.path / "state.m2ck";
    save_checkpoint(state, path);
    TrainState resumed = load_checkpoint(path, config);
    if (encode_checkpoint(resumed) != encode_checkpoint(state)) return "re-encoded checkpoint differs";
    const auto expected = train(state, data, 3);
    const auto got = train(resumed, data, 3);
    return got == expected ? std::string{} : "resumed losses differ";
  });
}

void suite_ablation(Reporter& rep, std::uint64_t seed) {
  const ModelConfig cfg = ModelConfig::compact();
  const auto w = tiny_window(seed);
  rep.check("M1 output is bit-identical to the context-free backbone", [&]() -> std::string {
    Model full(cfg, seed);
    Model bare(cfg, seed, {.context_modules = false});
    StubFeatures features(cfg.dims, seed);
    const ConversationWindow windows[] = {w};
    const auto m1 = AblationConfig::named("M1");
    const Batch batch = make_batch(windows, 0, cfg.memory_capacity, features, needs_for(m1));
    for (Mode mode : {Mode::Train, Mode::Inference}) {
      const Matrix a = full.forward_item(batch, 0, m1, mode).mel.value();
      const Matrix b = bare.forward_item(batch, 0, m1, mode).mel.value();
      if (a.rows() != b.rows() || a != b) return "outputs differ";
    }
    return {};
  });
  for (const char* name : {"M1", "M2", "M3", "M4", "M5", "M6"}) {
    rep.check(std::string("disabled modules receive zero gradient under ") + name, [&]() -> std::string {
      Model model(cfg, seed);
      StubFeatures features(cfg.dims, seed);
      const auto ablation = AblationConfig::named(name);
      const ConversationWindow windows[] = {w};
      const Batch batch = make_batch(windows, 0, cfg.memory_capacity, features, FeatureNeeds::all());
      model.parameters().zero_grad();
      ag::backward(total_loss(model.forward(batch, ablation, Mode::Train), batch, TrainConfig{}).total);
      const std::pair<const char*, bool> modules[] = {{"tum.", ablation.tum}, {"wum.", ablation.wum},
                                                      {"tpm.", ablation.tpm}, {"wpm.", ablation.wpm},
                                                      {"ppm.", ablation.any_coarse()}};
      for (const auto& [prefix, enabled] : modules) {
        if (enabled) continue;
        for (const auto& p : model.parameters().with_prefix(prefix))
          if (p.grad().size() != 0 && p.grad().cwiseAbs().maxCoeff() != 0.0)
            return std::string("nonzero gradient in ") + prefix;
      }
      return {};
    });
  }
}

using SuiteFn = void (*)(Reporter&, std::uint64_t);
const std::vector<std::pair<std::string, SuiteFn>>& suites() {
  static const std::vector<std::pair<std::string, SuiteFn>> s = {
      {"windowing", suite_windowing}, {"attention", suite_attention}, {"saln", suite_saln},
      {"gradients", suite_gradients}, {"masking", suite_masking},     {"cache", suite_cache},
      {"ablation", suite_ablation}};
  return s;
}

}  // namespace

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, _] : suites()) n.push_back(name);
    return n;
  }();
  return names;
}

std::vector<PropertyResult> run_verify_suite(const std::string& name, std::uint64_t seed) {
  std::vector<PropertyResult> out;
  bool found = false;
  for (const auto& [suite, fn] : suites()) {
    if (name != "all" && name != suite) continue;
    found = true;
    Reporter rep(suite, out);
    fn(rep, seed);
  }
  if (!found) throw std::invalid_argument("unknown verify suite \"" + name + "\"");
  return out;
}

}  // namespace m2ctts
