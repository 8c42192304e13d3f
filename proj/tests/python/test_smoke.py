import numpy as np
import pytest

import m2ctts

SMALL = {
    "d_model": 16, "heads": 2, "encoder_layers": 1, "decoder_layers": 1,
    "ffn_hidden": 32, "ffn_kernel": 3, "style_dim": 16, "variance_hidden": 16,
    "variance_bins": 16, "vocab_size": 40, "text_utterance_dim": 24,
    "acoustic_utterance_dim": 24, "text_sequence_dim": 12, "acoustic_sequence_dim": 12,
    "batch_size": 4, "log_every": 0,
}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    m2ctts.gen_toy_corpus(str(root / "corpus"), seed=7, dialogues=2, turns=4)
    report = m2ctts.preprocess(str(root / "corpus"), str(root / "data"), SMALL)
    assert report["stats"]["turns"] == 8
    return root


def test_tensor_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    m2ctts.write_tensor(str(tmp_path / "a.m2ct"), a)
    b = m2ctts.read_tensor(str(tmp_path / "a.m2ct"))
    assert b.dtype == np.float32
    np.testing.assert_array_equal(a, b)


def test_manifest_and_windows(corpus):
    dialogues = m2ctts.load_manifest(str(corpus / "corpus"))
    assert [d["dialogue_id"] for d in dialogues] == ["d0000", "d0001"]
    turn = dialogues[0]["turns"][1]
    assert turn["mel"].shape == (sum(turn["durations"]), 80)
    assert m2ctts.window_indices(str(corpus / "corpus"), "d0001", 3, 2) == ([1, 2], 3)
    assert m2ctts.window_indices(str(corpus / "corpus"), "d0001", 0, 2) == ([], 0)


def test_numeric_helpers():
    assert m2ctts.prosody_loss([1.0, 2.0], [1.0, 4.0]) == pytest.approx(2.0)
    assert m2ctts.prosody_loss([1.0, 2.0], [1.0, 4.0], "sum") == pytest.approx(4.0)
    pe = m2ctts.sinusoidal_positions(3, 4)
    assert pe.shape == (3, 4)
    np.testing.assert_allclose(pe[1], [np.sin(1), np.cos(1), np.sin(0.01), np.cos(0.01)], atol=1e-12)
    assert m2ctts.ablation_modules("M5") == {"name": "M5", "tum": False, "wum": True, "tpm": False, "wpm": True}
    with pytest.raises(ValueError):
        m2ctts.ablation_modules("M9")


def test_config_validation():
    cfg = m2ctts.default_config()
    assert cfg["ablation"] == "M7"
    with pytest.raises(ValueError, match="learning_rte"):
        m2ctts.Trainer({"learning_rte": 1})


def test_train_save_load_synthesize(corpus, tmp_path):
    t = m2ctts.Trainer(dict(SMALL, ablation="M7"), str(corpus / "corpus"), str(corpus / "data"))
    losses = t.step(3)
    assert len(losses) == 3 and t.steps_done == 3
    assert all(np.isfinite(l["total"]) for l in losses)
    t.save(str(tmp_path / "a.m2ck"))
    u = m2ctts.Trainer.load(str(tmp_path / "a.m2ck"))
    assert u.steps_done == 3
    assert t.step(2) == u.step(2)
    out = t.synthesize("d0001", 3)
    assert out["mel"].shape[1] == 80
    assert out["tpm_attention"].shape[0] == 2
    np.testing.assert_array_equal(out["mel"], u.synthesize("d0001", 3)["mel"])
    assert t.evaluate() > 0
    with pytest.raises(ValueError, match="turn 9"):
        t.synthesize("d0001", 9)


def test_verify_and_ablation(corpus):
    results = m2ctts.verify("windowing")
    assert results and all(r["passed"] for r in results)
    rows = m2ctts.run_ablation(["M1", "M7"], str(corpus / "corpus"), SMALL, steps=2, seed=1,
                               data_dir=str(corpus / "data"))
    assert [r["name"] for r in rows] == ["M1", "M7"]
    assert rows[0]["prosody_mse"] == 0.0
