#include <doctest.h>

#include <fstream>

#include "m2ctts/training.hpp"
#include "support.hpp"

using namespace m2ctts;

namespace {

RunConfig small_run(const std::string& ablation = "M7") {
  RunConfig c;
  c.model = ModelConfig::compact();
  c.model.memory_capacity = 2;
  c.ablation = AblationConfig::named(ablation);
  c.train.batch_size = 2;
  c.train.seed = 21;
  c.train.warmup_steps = 5;
  c.val_fraction = 0;
  return c;
}

std::vector<Dialogue> small_corpus(std::uint64_t seed = 4, int dialogues = 2, int turns = 3) {
  return make_toy_dialogues(seed, dialogues, turns, ToyCorpusOptions{40, 3, 6, 8, 16});
}

// Same batch with extra all-padding phoneme and frame columns.
Batch pad_batch(Batch b, int extra_phonemes, int extra_frames) {
  const auto B = b.phonemes.rows();
  const auto n = b.phonemes.cols() + extra_phonemes;
  const auto t = b.frame_mask.cols() + extra_frames;
  b.phonemes.conservativeResize(B, n);
  b.phoneme_mask.conservativeResize(B, n);
  b.durations.conservativeResize(B, n);
  b.pitch.conservativeResize(B, n);
  b.energy.conservativeResize(B, n);
  b.frame_mask.conservativeResize(B, t);
  for (Eigen::Index j = n - extra_phonemes; j < n; ++j)
    for (Eigen::Index r = 0; r < B; ++r) {
      b.phonemes(r, j) = 0;
      b.phoneme_mask(r, j) = false;
      b.durations(r, j) = 0;
      b.pitch(r, j) = 0;
      b.energy(r, j) = 0;
    }
  for (Eigen::Index j = t - extra_frames; j < t; ++j)
    for (Eigen::Index r = 0; r < B; ++r) b.frame_mask(r, j) = false;
  for (auto& mel : b.mel) mel.conservativeResizeLike(Matrix::Zero(t, kMelChannels));
  return b;
}

bool all_zero_grad(const ag::Var& p) { return p.grad().size() == 0 || p.grad().cwiseAbs().maxCoeff() == 0.0; }

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("learning rate warmup") {
    TrainConfig t;
    t.learning_rate = 1.0;
    t.warmup_steps = 4;
    CHECK(learning_rate_at(t, 1) == 0.25);
    CHECK(learning_rate_at(t, 4) == 1.0);
    CHECK(learning_rate_at(t, 100) == 1.0);
    t.warmup_steps = 0;
    CHECK(learning_rate_at(t, 1) == 1.0);
  }

  TEST_CASE("total loss is zero for perfect predictions") {
    const RunConfig cfg = small_run();
    Model model(cfg.model, 1);
    StubFeatures stub(cfg.model.dims, 0);
    const auto ws = all_windows(small_corpus(), 2);
    const Batch b = make_batch(std::span(ws).subspan(2, 2), 0, 2, stub, FeatureNeeds::all());
    auto outs = model.forward(b, cfg.ablation, Mode::Train);
    for (int i = 0; i < b.size(); ++i) {
      auto& o = outs[static_cast<size_t>(i)];
      const auto n = b.max_phonemes();
      Matrix logdur = Matrix::Zero(n, 1);
      for (int j = 0; j < n; ++j)
        if (b.phoneme_mask(i, j)) logdur(j, 0) = std::log(static_cast<double>(b.durations(i, j)));
      o.mel = ag::constant(b.mel[static_cast<size_t>(i)]);
      o.predictions.pitch = ag::constant(b.pitch.row(i).transpose());
      o.predictions.energy = ag::constant(b.energy.row(i).transpose());
      o.predictions.log_duration = ag::constant(logdur);
      o.prosody = ag::constant(b.features[static_cast<size_t>(i)].current_acoustic);
    }
    const auto loss = total_loss(outs, b, cfg.train);
    CHECK(loss.breakdown.total == 0.0);
    CHECK(loss.breakdown == LossBreakdown{});
  }

  TEST_CASE("total loss matches an explicit masked average") {
    const RunConfig cfg = small_run();
    Model model(cfg.model, 2);
    StubFeatures stub(cfg.model.dims, 0);
    const auto ws = all_windows(small_corpus(), 2);
    const Batch b = make_batch(std::span(ws).subspan(1, 3), 0, 2, stub, FeatureNeeds::all());
    const auto outs = model.forward(b, cfg.ablation, Mode::Train);
    double mel = 0, pitch = 0, frames = 0, phonemes = 0, prosody = 0;
    for (int i = 0; i < b.size(); ++i) {
      const auto& cur = b.windows[static_cast<size_t>(i)].current;
      const auto& o = outs[static_cast<size_t>(i)];
      for (int f = 0; f < cur.num_frames(); ++f)
        for (int k = 0; k < kMelChannels; ++k) mel += std::abs(o.mel.value()(f, k) - (*cur.mel)(f, k));
      for (int j = 0; j < cur.num_phonemes(); ++j) {
        const double d = o.predictions.pitch.value()(j, 0) - cur.pitch[static_cast<size_t>(j)];
        pitch += d * d;
      }
      frames += cur.num_frames();
      phonemes += cur.num_phonemes();
      const RowVector target = b.features[static_cast<size_t>(i)].current_acoustic;
      prosody += (o.prosody->value().row(0) - target).squaredNorm() / static_cast<double>(target.size());
    }
    const auto loss = total_loss(outs, b, cfg.train).breakdown;
    CHECK(loss.mel_l1 == doctest::Approx(mel / (frames * kMelChannels)).epsilon(1e-10));
    CHECK(loss.pitch_mse == doctest::Approx(pitch / phonemes).epsilon(1e-10));
    CHECK(loss.prosody_mse == doctest::Approx(prosody / b.size()).epsilon(1e-10));
    CHECK(loss.total == doctest::Approx(loss.mel_l1 + loss.pitch_mse + loss.energy_mse + loss.logdur_mse +
                                        cfg.train.lambda_prosody * loss.prosody_mse));
  }

  TEST_CASE("extra padding leaves the loss unchanged") {
    const RunConfig cfg = small_run();
    Model model(cfg.model, 3);
    StubFeatures stub(cfg.model.dims, 0);
    const auto ws = all_windows(small_corpus(), 2);
    const Batch b = make_batch(std::span(ws).subspan(0, 3), 0, 2, stub, FeatureNeeds::all());
    const Batch wide = pad_batch(b, b.max_phonemes(), b.max_frames());
    const auto x = total_loss(model.forward(b, cfg.ablation, Mode::Train), b, cfg.train).breakdown;
    const auto y = total_loss(model.forward(wide, cfg.ablation, Mode::Train), wide, cfg.train).breakdown;
    CHECK(std::abs(x.total - y.total) < 1e-9);
    CHECK(std::abs(x.mel_l1 - y.mel_l1) < 1e-9);
  }

  TEST_CASE("M1 has no prosody term and no context gradients") {
    const RunConfig cfg = small_run("M1");
    auto state = init_train_state(cfg);
    StubFeatures stub(cfg.model.dims, 0);
    const TrainingSet data(all_windows(small_corpus(), 2), stub, cfg);
    const auto loss = train_step(state, data.all());
    CHECK(loss.prosody_mse == 0.0);
    for (const auto& [name, p] : state.model->parameters().entries())
      for (const char* prefix : {"tum.", "wum.", "tpm.", "wpm.", "ppm."})
        if (name.rfind(prefix, 0) == 0) CHECK_MESSAGE(all_zero_grad(p), name);
  }

  TEST_CASE("train_step is deterministic and lr 0 keeps parameters") {
    RunConfig cfg = small_run();
    StubFeatures stub(cfg.model.dims, 0);
    const TrainingSet data(all_windows(small_corpus(), 2), stub, cfg);
    const Batch b = data.all();
    auto a = init_train_state(cfg);
    auto c = init_train_state(cfg);
    CHECK(train_step(a, b) == train_step(c, b));
    CHECK(encode_checkpoint(a) == encode_checkpoint(c));

    cfg.train.learning_rate = 0;
    auto frozen = init_train_state(cfg);
    auto reference = init_train_state(cfg);
    train_step(frozen, b);
    train_step(frozen, b);
    const auto& x = frozen.model->parameters().entries();
    const auto& y = reference.model->parameters().entries();
    for (size_t i = 0; i < x.size(); ++i) CHECK(x[i].second.value() == y[i].second.value());
    CHECK(frozen.step == 2);
  }

  TEST_CASE("200 steps on one small batch halve the mel loss") {
    RunConfig cfg = small_run();
    cfg.train.warmup_steps = 10;
    StubFeatures stub(cfg.model.dims, 0);
    const TrainingSet data(all_windows(small_corpus(5, 1, 2), 2), stub, cfg);
    const Batch b = data.all();
    auto state = init_train_state(cfg);
    const double first = train_step(state, b).mel_l1;
    double last = first;
    for (int i = 1; i < 200; ++i) last = train_step(state, b).mel_l1;
    MESSAGE("mel_l1 " << first << " -> " << last);
    CHECK(last <= 0.5 * first);
  }

  TEST_CASE("batch sampling covers every window once per epoch") {
    RunConfig cfg = small_run();
    cfg.train.batch_size = 3;
    auto state = init_train_state(cfg);
    std::vector<int> seen;
    for (int i = 0; i < 3; ++i)
      for (int idx : next_batch_indices(state, 9)) seen.push_back(idx);
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    cfg.train.batch_size = 50;
    auto big = init_train_state(cfg);
    CHECK(next_batch_indices(big, 4).size() == 4);
  }

  TEST_CASE("checkpoint resume reproduces the trajectory") {
    testing::TempDir dir("ckpt");
    const RunConfig cfg = small_run();
    StubFeatures stub(cfg.model.dims, 0);
    const TrainingSet data(all_windows(small_corpus(), 2), stub, cfg);
    auto state = init_train_state(cfg);
    train(state, data, 4);
    save_checkpoint(state, dir.path / "a.m2ck");
    const auto expected = train(state, data, 5);

    auto resumed = load_checkpoint(dir.path / "a.m2ck", cfg);
    CHECK(resumed.step == 4);
    CHECK(train(resumed, data, 5) == expected);
    CHECK(encode_checkpoint(resumed) == encode_checkpoint(state));

    const std::string bytes = read_file_bytes(dir.path / "a.m2ck");
    CHECK(bytes.substr(0, 4) == "M2CK");
    save_checkpoint(load_checkpoint(dir.path / "a.m2ck"), dir.path / "b.m2ck");
    CHECK(read_file_bytes(dir.path / "b.m2ck") == bytes);

    RunConfig other = cfg;
    other.train.learning_rate = 0.1;
    CHECK_THROWS_AS(load_checkpoint(dir.path / "a.m2ck", other), ValidationError);
    RunConfig longer = cfg;
    longer.train.steps = 99;
    CHECK_NOTHROW(load_checkpoint(dir.path / "a.m2ck", longer));

    write_file_bytes(dir.path / "bad.m2ck", "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint(dir.path / "bad.m2ck"), FormatError);
    write_file_bytes(dir.path / "short.m2ck", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir.path / "short.m2ck"), FormatError);
    write_file_bytes(dir.path / "long.m2ck", bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(dir.path / "long.m2ck"), FormatError);
  }

  TEST_CASE("split_dialogues") {
    const auto ds = small_corpus(6, 8, 2);
    auto [train_set, val] = split_dialogues(ds, 0.25);
    CHECK(train_set.size() == 6);
    CHECK(val.size() == 2);
    CHECK(val[0].dialogue_id == ds[6].dialogue_id);
    std::tie(train_set, val) = split_dialogues(ds, 1.0);
    CHECK(train_set.size() == 1);
    std::tie(train_set, val) = split_dialogues(ds, 0.0);
    CHECK(val.empty());
  }

  TEST_CASE("run_ablation") {
    testing::TempDir dir("ablate");
    RunConfig cfg = small_run();
    StubFeatures stub(cfg.model.dims, 0);
    const auto corpus = small_corpus();
    const auto single = run_ablation({"M1"}, corpus, stub, cfg, 2, 5);
    CHECK(single.size() == 1);
    CHECK(single[0].val_on_train);

    const auto rows = run_ablation({"M1", "M7"}, corpus, stub, cfg, 3, 5, dir.path / "metrics.jsonl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].final_loss.prosody_mse == 0.0);
    CHECK(rows[1].final_loss.prosody_mse > 0.0);
    CHECK(rows[1].modules == AblationConfig::named("M7"));
    const auto again = run_ablation({"M1", "M7"}, corpus, stub, cfg, 3, 5, dir.path / "again.jsonl");
    CHECK(again[1].final_loss == rows[1].final_loss);
    CHECK(again[1].val_mel_l1 == rows[1].val_mel_l1);
    CHECK(read_file_bytes(dir.path / "metrics.jsonl") == read_file_bytes(dir.path / "again.jsonl"));

    std::ifstream in(dir.path / "metrics.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("val_mel_l1"));
      CHECK(j.contains("total"));
    }
    CHECK(lines == 2);
    CHECK_THROWS_AS(run_ablation({"M9"}, corpus, stub, cfg, 1, 5), ValidationError);
  }

  TEST_CASE("evaluate_mel_l1 uses real frames only") {
    const RunConfig cfg = small_run("M1");
    Model model(cfg.model, 8);
    StubFeatures stub(cfg.model.dims, 0);
    const TrainingSet data(all_windows(small_corpus(), 2), stub, cfg);
    double sum = 0, count = 0;
    for (const auto& w : data.windows()) {
      const ConversationWindow one[] = {w};
      const Batch b = make_batch(one, 0, 2, stub, needs_for(cfg.ablation));
      const auto out = model.forward_item(b, 0, cfg.ablation, Mode::Train);
      sum += (out.mel.value() - *w.current.mel).cwiseAbs().sum();
      count += w.current.num_frames() * kMelChannels;
    }
    CHECK(evaluate_mel_l1(model, cfg.ablation, data) == doctest::Approx(sum / count));
  }
}
