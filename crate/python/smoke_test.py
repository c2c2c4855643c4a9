#!/usr/bin/env python3
"""Smoke test for the scrauth_py bindings.

Build the extension first, then run this script from the repository root:

    cargo build -p scrauth-py
    python3 python/smoke_test.py

It loads the fresh .so, drives the pipeline end to end on a tiny synthetic
population, and checks the headline invariants.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    """Copies the built cdylib next to a temp dir as an importable module."""
    candidates = [
        REPO / "target" / "release" / "libscrauth_py.so",
        REPO / "target" / "debug" / "libscrauth_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the bindings first: cargo build -p scrauth-py")
    stage = Path(tempfile.mkdtemp(prefix="scrauth_py_"))
    shutil.copy2(built, stage / "scrauth_py.so")
    sys.path.insert(0, str(stage))
    import scrauth_py

    return scrauth_py


def main():
    sp = load_module()

    # 1. Signal generation: pilot (1500) + 10 frames of 2400 samples.
    seq = sp.sensing_sequence(10)
    assert len(seq) == 25500, f"sequence length {len(seq)}"
    assert len(sp.chirp()) == 1200
    assert sp.sample_rate() == 48000
    print(f"signals ok: {len(seq)}-sample sequence at {sp.sample_rate()} Hz")

    # 2. Network architecture: the 30-class model's parameter budget.
    assert sp.cnn_parameter_count(30) == 158526
    summary = sp.cnn_layer_summary(30)
    assert any("dense 128" in line for line in summary)
    print(f"network ok: 158526 parameters, {len(summary)} layers")

    # 3. Synthetic channel + preprocessing: recordings become tensors.
    pop = sp.Population(2, seed=5)
    assert len(pop) == 2 and pop.subject_ids() == ["s00", "s01"]
    recording = pop.render(0, frames=2, seed=1)
    tensors = sp.recording_to_tensor(recording, frames=2)
    shape = sp.TENSOR_SHAPE
    assert shape == (65, 158, 2)
    assert len(tensors) == 1 and len(tensors[0]) == 65 * 158 * 2
    print(f"preprocessing ok: {len(recording)}-sample recording -> {shape} tensor")

    # 4. Train a tiny extractor on both subjects and embed their trials.
    data, labels = [], []
    for subject in range(2):
        for trial in range(5):
            data.append(pop.render_tensor(subject, seed=100 + 10 * subject + trial))
            labels.append(subject)
    extractor, losses = sp.Extractor.train(
        data, labels, epochs=2, batch_size=6, seed=7
    )
    assert extractor.is_trained() and extractor.feature_dim() == sp.FEATURE_DIM
    feats = extractor.extract_batch(data)
    assert all(len(f) == 128 for f in feats)
    print(f"extractor ok: losses {['%.3f' % l for l in losses]}, 128-d features")

    # 5. Checkpoints round-trip through disk.
    with tempfile.TemporaryDirectory() as d:
        ckpt = str(Path(d) / "cnn.ckpt")
        extractor.save(ckpt)
        reloaded = sp.Extractor.load(ckpt)
        assert reloaded.extract(data[0]) == extractor.extract(data[0])
    print("checkpoint ok: save/load reproduces embeddings exactly")

    # 6. One-class verification: enroll subject 0, probe both subjects.
    for kind in ("ocsvm", "lof"):
        model = sp.Enrolled.enroll(feats[:5], kind=kind)
        assert model.kind() == kind
        genuine = [model.score(f) for f in feats[:5]]
        impostor = [model.score(f) for f in feats[5:]]
        accepted, score = model.decide(feats[0])
        assert accepted == (score >= model.threshold())
        with tempfile.TemporaryDirectory() as d:
            path = str(Path(d) / "user.model")
            model.save(path)
            again = sp.Enrolled.load(path)
            # Model files quantize to 32-bit floats, so scores agree only
            # to single precision.
            assert math.isclose(
                again.score(feats[0]), model.score(feats[0]), rel_tol=1e-4, abs_tol=1e-6
            )
        auc, eer = sp.roc_metrics(genuine, impostor)
        bac = sp.balanced_accuracy(genuine, impostor, model.threshold())
        print(f"{kind} ok: auc {auc:.3f}, eer {eer:.3f}, bac {bac:.3f}")

    # 7. Metrics sanity on hand-made scores.
    auc, eer = sp.roc_metrics([1.0, 2.0, 3.0], [-3.0, -2.0, -1.0])
    assert auc == 1.0 and eer == 0.0

    # 8. The full study from a tiny JSON config, reported as JSON.
    report = json.loads(
        sp.run_study(
            json.dumps(
                {
                    "seed": 9,
                    "subjects": 3,
                    "trials_per_subject": 12,
                    "folds": 3,
                    "transfer_subjects": 3,
                    "transfer_trials": 6,
                    "attackers": 2,
                    "attack_trials": 1,
                    "train": {"epochs": 1, "batch_size": 6},
                    "measure_latency": False,
                }
            )
        )
    )
    assert report["subjects"] == 3 and report["cv"]["folds"] == 3
    assert len(report["cv"]["per_user"]) == 3
    assert {row["kind"] for row in report["attacks"]} == {"zero_effort", "mimicry"}
    print(
        "study ok: bac %.3f, auc %.3f over %d users"
        % (
            report["cv"]["bac"]["mean"],
            report["cv"]["auc"]["mean"],
            len(report["cv"]["per_user"]),
        )
    )

    print("smoke test passed")


if __name__ == "__main__":
    main()
