"""Train a small JDSI model and watch its maps improve phase by phase.

A reduced cohort (24 training phantoms, 4 epochs) keeps this to a few
minutes on one core; the acceptance run uses 200 phantoms and 30 epochs.
"""
import numpy as np

from jdsi.harness.cohort import CohortConfig, build_manifest, build_split
from jdsi.harness.metrics import psnr, rlne
from jdsi.harness.scenarios import grid_acs, predict_learned, reconstruct, train_model
from jdsi.net import _batch, jdsi_forward, make_config
from jdsi.nn.tensor import no_grad

cohort = CohortConfig(n_train=24, n_test=4, seed=3)
man = build_manifest(cohort)
acs = grid_acs("1d", 24, cohort.dims[1])
train_set = build_split(cohort, "train", "1d", 4, acs, man)
test_set = build_split(cohort, "test", "1d", 4, acs, man)

cfg = make_config("desk", epochs=4, seed=3)
model, hist, secs = train_model(train_set, cfg, val=test_set,
                                log=lambda r: print(f"epoch {r['epoch']}: loss {r['train_loss']:.2f}, "
                                                    f"val RLNE {r['val_rlne']:.4f}"))
print(f"trained in {secs / 60:.1f} min")

xs = predict_learned(model, test_set, "jdsi")
for name, rec in (("zero-filled", [reconstruct(s, "zf") for s in test_set]),
                  ("cg-sense (ACS maps)", [reconstruct(s, "cg-sense", "acs") for s in test_set]),
                  ("jdsi", xs)):
    r = np.mean([rlne(x, s.truth) for x, s in zip(rec, test_set)])
    p = np.mean([psnr(x, s.truth) for x, s in zip(rec, test_set)])
    print(f"{name:20s} RLNE {r:.4f}  PSNR {p:6.2f} dB")

s = test_set[0]
y, om, _, s_ref, _ = _batch([s], model.dtype)
with no_grad():
    _, _, states = jdsi_forward(y, om, model)
fg = np.any(s_ref != 0, axis=1, keepdims=True)  # reference maps vanish off the object
for st in states:
    err = np.linalg.norm((st.S.value - s_ref) * fg) / np.linalg.norm(s_ref)
    print(f"phase {st.k}: map error {err:.4f}, image RLNE {rlne(st.x.value[0], s.truth):.4f}")
