"""Cross-package parity with the trainer's exported weights.

The trainer (separate package under trainer/) consumes a PTCH dataset,
trains the six-layer classifier, and exports CNNW weights plus a JSON
sidecar of reference softmax outputs for held-out patches.  These tests
assert the exported file loads here and the forward passes agree to 1e-4.
They skip when the trainer artifacts have not been generated; nothing else
in the suite depends on them.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from blurfield import formats, predict

ARTIFACTS = Path(__file__).resolve().parents[1] / "trainer" / "artifacts"

pytestmark = pytest.mark.skipif(
    not (ARTIFACTS / "parity.json").exists(),
    reason="trainer artifacts not generated (run the trainer's export first)",
)


@pytest.fixture(scope="module")
def bundle():
    sidecar = json.loads((ARTIFACTS / "parity.json").read_text())
    model = predict.load_model(ARTIFACTS / sidecar["weights"])
    labels, patches = formats.load_patch_dataset(ARTIFACTS / sidecar["dataset"])
    return sidecar, model, labels, patches


def test_weights_load_with_published_shapes(bundle):
    _, model, _, _ = bundle
    tags = [layer.tag for layer in model.layers]
    assert tags == [formats.CONV, formats.MAXPOOL, formats.CONV,
                    formats.MAXPOOL, formats.FC, formats.SOFTMAX]
    assert model.layers[0].dims == (96, 3, 7, 7)
    assert model.layers[2].dims == (256, 96, 5, 5)
    assert model.layers[-1].dims[0] == 73


def test_softmax_parity_within_1e_4(bundle):
    sidecar, model, labels, patches = bundle
    records = sidecar["records"]
    assert len(records) == 100
    worst = 0.0
    for rec in records:
        patch = patches[rec["patch_index"]].astype(np.float64) / 255.0
        probs = predict.cnn_forward(model, patch).probs
        assert labels[rec["patch_index"]] == rec["label"]
        worst = max(worst, float(np.abs(probs - np.asarray(rec["probs"])).max()))
    print(f"[{'PASS' if worst < 1e-4 else 'FAIL'}] trainer-parity: "
          f"max abs softmax diff {worst:.2e} < 1e-4 over 100 patches")
    assert worst < 1e-4


def test_desk_scale_heldout_accuracy(bundle):
    sidecar, _, _, _ = bundle
    top1 = sidecar["heldout_top1"]
    print(f"[{'PASS' if top1 >= 0.5 else 'FAIL'}] trainer-accuracy: "
          f"held-out top-1 {top1:.1%} >= 50% over 73 classes")
    assert top1 >= 0.5


def test_truncated_export_rejected_with_offset(bundle, tmp_path):
    sidecar, _, _, _ = bundle
    raw = (ARTIFACTS / sidecar["weights"]).read_bytes()
    clipped = tmp_path / "clipped.cnnw"
    clipped.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(formats.ModelFormatError, match="byte offset"):
        predict.load_model(clipped)
