#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "m2ctts/config.hpp"
#include "m2ctts/corpus.hpp"
#include "m2ctts/fusion.hpp"
#include "m2ctts/model.hpp"
#include "m2ctts/preprocess.hpp"
#include "m2ctts/prosody.hpp"
#include "m2ctts/tensor_file.hpp"
#include "m2ctts/training.hpp"
#include "m2ctts/verify.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace m2ctts;

namespace {

py::object to_py(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

RunConfig make_config(const py::object& config) { return RunConfig::from_json(from_py(config)); }

fs::path manifest_of(const fs::path& corpus) {
  return fs::is_directory(corpus) ? corpus / "manifest.jsonl" : corpus;
}

py::array_t<float> tensor_to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::array_t<float> heads_to_numpy(const std::vector<Matrix>& heads) {
  const py::ssize_t n = heads.empty() ? 0 : heads.front().rows();
  const py::ssize_t m = heads.empty() ? 0 : heads.front().cols();
  py::array_t<float> out({static_cast<py::ssize_t>(heads.size()), n, m});
  float* p = out.mutable_data();
  for (const auto& h : heads)
    for (Eigen::Index i = 0; i < h.size(); ++i) *p++ = static_cast<float>(h.data()[i]);
  return out;
}

py::dict turn_to_py(const Turn& t) {
  py::dict d;
  d["dialogue_id"] = t.dialogue_id;
  d["turn_index"] = t.turn_index;
  d["speaker"] = std::string(1, speaker_char(t.speaker));
  d["text"] = t.text;
  d["phoneme_ids"] = t.phoneme_ids;
  d["durations"] = t.durations;
  d["pitch"] = t.pitch;
  d["energy"] = t.energy;
  d["mel"] = t.mel ? py::cast(Matrix(*t.mel)) : py::none();
  return d;
}

const Dialogue& find_dialogue(const std::vector<Dialogue>& all, const std::string& id) {
  for (const auto& d : all)
    if (d.dialogue_id == id) return d;
  throw ValidationError("unknown dialogue \"" + id + "\"");
}

class Trainer {
 public:
  Trainer(const py::object& config, const std::string& corpus, const std::string& data_dir)
      : Trainer(make_config(config), corpus, data_dir, std::nullopt) {}

  static Trainer load(const fs::path& checkpoint, const std::string& corpus, const std::string& data_dir) {
    TrainState state = load_checkpoint(checkpoint);
    RunConfig cfg = state.config;
    return Trainer(cfg, corpus, data_dir, std::move(state));
  }

  std::vector<py::object> step(int n) {
    std::vector<py::object> out;
    for (const auto& l : train(state_, *data_, n)) out.push_back(to_py(l.to_json()));
    return out;
  }

  void save(const fs::path& path) const { save_checkpoint(state_, path); }

  py::dict synthesize(const std::string& dialogue_id, int turn) const {
    const Dialogue& d = find_dialogue(dialogues_, dialogue_id);
    if (turn < 0 || turn >= static_cast<int>(d.turns.size()))
      throw ValidationError("dialogue " + dialogue_id + " has no turn " + std::to_string(turn));
    const auto w = window(d, turn, config_.model.memory_capacity);
    const auto r = m2ctts::synthesize(*state_.model, config_.ablation, w, *features_, config_.pad_phoneme_id);
    py::dict out;
    out["mel"] = r.mel;
    out["durations"] = r.durations;
    if (config_.ablation.tpm) out["tpm_attention"] = heads_to_numpy(r.tpm_weights);
    if (config_.ablation.wpm) out["wpm_attention"] = heads_to_numpy(r.wpm_weights);
    return out;
  }

  double evaluate() const { return evaluate_mel_l1(*state_.model, config_.ablation, *data_); }

  std::int64_t steps_done() const { return state_.step; }
  py::object config() const { return to_py(config_.to_json()); }
  std::size_t num_windows() const { return data_->size(); }

 private:
  Trainer(RunConfig cfg, const std::string& corpus, const std::string& data_dir, std::optional<TrainState> state)
      : config_(std::move(cfg)) {
    if (!corpus.empty()) config_.corpus = corpus;
    if (!data_dir.empty()) config_.data_dir = data_dir;
    if (config_.corpus.empty()) throw ValidationError("no corpus given");
    dialogues_ = load_manifest(manifest_of(config_.corpus));
    if (!state && !config_.data_dir.empty()) apply_corpus_stats(config_, config_.data_dir);
    features_ = make_feature_provider(config_, config_.data_dir);
    data_ = std::make_unique<TrainingSet>(all_windows(dialogues_, config_.model.memory_capacity), *features_,
                                          config_);
    state_ = state ? std::move(*state) : init_train_state(config_);
    state_.config = config_;
  }

  RunConfig config_;
  std::vector<Dialogue> dialogues_;
  std::unique_ptr<FeatureProvider> features_;
  std::unique_ptr<TrainingSet> data_;
  TrainState state_;
};

}  // namespace

PYBIND11_MODULE(_m2ctts, m) {
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def(
      "gen_toy_corpus",
      [](const fs::path& out_dir, std::uint64_t seed, int dialogues, int turns) {
        return gen_toy_corpus(seed, dialogues, turns, out_dir);
      },
      py::arg("out_dir"), py::arg("seed") = 7, py::arg("dialogues") = 8, py::arg("turns") = 6);

  m.def(
      "load_manifest",
      [](const fs::path& corpus) {
        py::list out;
        for (const auto& d : load_manifest(manifest_of(corpus))) {
          py::list turns;
          for (const auto& t : d.turns) turns.append(turn_to_py(t));
          py::dict row;
          row["dialogue_id"] = d.dialogue_id;
          row["turns"] = turns;
          out.append(row);
        }
        return out;
      },
      py::arg("corpus"));

  m.def(
      "window_indices",
      [](const fs::path& corpus, const std::string& dialogue_id, int turn, int c) {
        const auto dialogues = load_manifest(manifest_of(corpus));
        const Dialogue& d = find_dialogue(dialogues, dialogue_id);
        if (turn < 0 || turn >= static_cast<int>(d.turns.size()))
          throw ValidationError("dialogue " + dialogue_id + " has no turn " + std::to_string(turn));
        const auto w = window(d, turn, c);
        std::vector<int> history;
        for (const auto& t : w.history) history.push_back(t.turn_index);
        return py::make_tuple(history, w.current.turn_index);
      },
      py::arg("corpus"), py::arg("dialogue_id"), py::arg("turn"), py::arg("c"));

  m.def(
      "read_tensor", [](const fs::path& path) { return tensor_to_numpy(read_tensor(path)); }, py::arg("path"));
  m.def(
      "write_tensor",
      [](const fs::path& path, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
        Tensor t;
        for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(static_cast<std::uint32_t>(a.shape(i)));
        t.data.assign(a.data(), a.data() + a.size());
        write_tensor(path, t);
      },
      py::arg("path"), py::arg("array"));

  m.def(
      "default_config",
      [](bool compact) {
        RunConfig c;
        if (compact) c.model = ModelConfig::compact();
        return to_py(c.to_json());
      },
      py::arg("compact") = false);

  m.def(
      "ablation_modules",
      [](const std::string& name) {
        const auto a = AblationConfig::parse(name);
        py::dict d;
        d["name"] = a.name;
        d["tum"] = a.tum;
        d["wum"] = a.wum;
        d["tpm"] = a.tpm;
        d["wpm"] = a.wpm;
        return d;
      },
      py::arg("name"));

  m.def(
      "preprocess",
      [](const fs::path& corpus, const fs::path& out_dir, const py::object& config) {
        RunConfig cfg = make_config(config);
        cfg.corpus = corpus.string();
        cfg.data_dir = out_dir.string();
        const auto r = preprocess(manifest_of(corpus), out_dir, cfg);
        py::dict d;
        d["stats"] = to_py(r.stats.to_json());
        d["written"] = r.written;
        d["unchanged"] = r.unchanged;
        return d;
      },
      py::arg("corpus"), py::arg("out_dir"), py::arg("config") = py::none());

  m.def(
      "prosody_loss",
      [](const RowVector& prediction, const RowVector& target, const std::string& reduction) {
        if (prediction.size() != target.size()) throw ValidationError("prediction and target sizes differ");
        if (reduction != "mean" && reduction != "sum") throw ValidationError("reduction must be mean or sum");
        return prosody_loss(prediction, target, reduction == "sum" ? Reduction::Sum : Reduction::Mean);
      },
      py::arg("prediction"), py::arg("target"), py::arg("reduction") = "mean");

  m.def("sinusoidal_positions", &sinusoidal_positions, py::arg("n"), py::arg("d"));

  m.def(
      "verify",
      [](const std::string& suite, std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_verify_suite(suite, seed)) {
          py::dict d;
          d["suite"] = r.suite;
          d["property"] = r.property;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("suite") = "all", py::arg("seed") = 0);

  m.def(
      "run_ablation",
      [](const std::vector<std::string>& names, const fs::path& corpus, const py::object& config, int steps,
         std::uint64_t seed, const std::string& data_dir, const std::string& metrics_path) {
        RunConfig cfg = make_config(config);
        cfg.corpus = corpus.string();
        if (!data_dir.empty()) {
          cfg.data_dir = data_dir;
          apply_corpus_stats(cfg, data_dir);
        }
        const auto dialogues = load_manifest(manifest_of(corpus));
        auto features = make_feature_provider(cfg, cfg.data_dir);
        py::list out;
        for (const auto& r : run_ablation(names, dialogues, *features, cfg, steps, seed, metrics_path))
          out.append(to_py(r.to_json()));
        return out;
      },
      py::arg("names"), py::arg("corpus"), py::arg("config") = py::none(), py::arg("steps") = 100,
      py::arg("seed") = 0, py::arg("data_dir") = "", py::arg("metrics_path") = "");

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<const py::object&, const std::string&, const std::string&>(), py::arg("config") = py::none(),
           py::arg("corpus") = "", py::arg("data_dir") = "")
      .def_static("load", &Trainer::load, py::arg("checkpoint"), py::arg("corpus") = "",
                  py::arg("data_dir") = "")
      .def("step", &Trainer::step, py::arg("n") = 1)
      .def("save", &Trainer::save, py::arg("path"))
      .def("synthesize", &Trainer::synthesize, py::arg("dialogue_id"), py::arg("turn"))
      .def("evaluate", &Trainer::evaluate)
      .def_property_readonly("steps_done", &Trainer::steps_done)
      .def_property_readonly("config", &Trainer::config)
      .def_property_readonly("num_windows", &Trainer::num_windows);
}
