"""Experiment scenarios: calibrated / calibrationless sampling, lesion shift and ACS sweeps.

Each scenario reconstructs a held-out split with the requested methods and
writes a metrics CSV, PGM renderings of the first test sample and, for
learned models, per-phase container dumps.
"""
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..calibration import CalibrationError, acs_lowres_maps
from ..mri import SenseMaps
from ..net import JdsiConfig, JdsiModel, jdsi_forward, make_config, predict, train
from ..net import _batch
from ..nn.tensor import no_grad
from ..numerics import ifft2c, sos
from ..recon import cg_sense, jsense, pfista_sense
from .cohort import CohortConfig, build_manifest, build_split, scale_acs, with_maps
from .container import Record, container_write, load_checkpoint, save_checkpoint
from .metrics import MetricsReport
from .pgm import export_pgm


class ScenarioError(RuntimeError):
    pass


# (mask kind, AF, nominal ACS) per scenario; nominal 1D ACS counts refer to
# 320-wide acquisitions and are rescaled with ``scale_acs``
SCENARIOS = {
    "calib-1d": [("1d", 4, 24), ("1d", 4, 8), ("1d", 8, 24), ("1d", 8, 8)],
    "calib-2d": [("2d", 10, 8)],
    "calibless": [("1d", 4, 0), ("2d", 8, 0)],
    "lesion": [("1d", 4, 24)],
    "acs-sweep": [("1d", 4, 24), ("1d", 4, 16), ("1d", 4, 8), ("1d", 4, 4)],
}

CLASSICAL = ("zf", "cg-sense", "pfista", "jsense")
LEARNED = ("jdsi", "jdsi-frozen:jsense", "jdsi-frozen:acs")


def grid_acs(kind, nominal, width):
    """ACS count actually used on the grid (1D counts are rescaled, 2D blocks are not)."""
    return scale_acs(nominal, width) if kind == "1d" else nominal


# --- maps and classical reconstructions ---------------------------------------------

def estimate_maps(sample, how):
    """(J, H, W) maps for ``sample``: ``gt`` (reference), ``acs`` (low-res ACS) or ``jsense``."""
    if how == "gt":
        return np.asarray(sample.maps_ref)
    if sample.sampling is None:
        raise ScenarioError(f"sample {sample.sample_id} has no sampling-mask record")
    if how == "acs":
        return acs_lowres_maps(sample.y, sample.sampling).data
    if how == "jsense":
        _, S, _ = jsense(sample.y, sample.sampling)
        return S.data
    raise ScenarioError(f"unknown maps source {how!r}")


def frozen_maps(samples, how, workers=1):
    return _map(lambda s: estimate_maps(s, how), samples, workers)


def reconstruct(sample, method, maps="acs", pfista_lambda=1e-3, cg_iters=50):
    """One classical reconstruction (complex image)."""
    if method == "zf":
        return sos(ifft2c(sample.y)).astype(complex)
    if method == "jsense":
        x, _, _ = jsense(sample.y, sample.sampling)
        return x
    S = SenseMaps(estimate_maps(sample, maps))
    if method == "cg-sense":
        return cg_sense(sample.y, S, sample.sampling, max_iters=cg_iters)[0]
    if method == "pfista":
        return pfista_sense(sample.y, S, sample.sampling, reg_lambda=pfista_lambda)[0]
    raise ScenarioError(f"unknown method {method!r}")


def _map(fn, items, workers):
    """``[fn(i) for i in items]``, optionally on a thread pool; order is preserved."""
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --- learned models -----------------------------------------------------------------

def ablation_config(cfg: JdsiConfig):
    """Frozen-maps variant: no map estimation or refinement, maps supplied externally."""
    return replace(cfg, update_maps=False, external_maps=True)


def train_model(train_set, cfg: JdsiConfig, frozen=None, val=None, workers=1, checkpoint_dir=None, log=None):
    """Train JDSI (``frozen=None``) or a frozen-maps ablation seeded with ``jsense``/``acs`` maps.

    Returns (model, history, seconds). The seconds include estimating the
    frozen maps of the training set.
    """
    t0 = time.perf_counter()
    if frozen is not None:
        cfg = ablation_config(cfg)
        train_set = with_maps(train_set, frozen_maps(train_set, frozen, workers))
        if val:
            val = with_maps(val, frozen_maps(val, frozen, workers))
    model, hist = train(train_set, cfg, val=val, checkpoint_dir=checkpoint_dir, log=log)
    return model, hist, time.perf_counter() - t0


def load_model(path, cfg: JdsiConfig):
    if not os.path.exists(path):
        raise ScenarioError(f"missing checkpoint {path}")
    return JdsiModel(cfg, load_checkpoint(path)).eval()


def predict_learned(model, samples, method, workers=1):
    """Eval-mode JDSI outputs; ablations get their frozen maps estimated here."""
    if method != "jdsi":
        samples = with_maps(samples, frozen_maps(samples, method.split(":", 1)[1], workers))
    return [x for x, _ in predict(model, samples)]


def phase_dump(model, sample, path, maps=None):
    """Container with x^(k) and S^(k) for k = 0..K of one sample."""
    y, om, _, _, m = _batch([sample if maps is None else replace(sample, maps=maps)], model.dtype)
    model.eval()
    with no_grad():
        _, _, states = jdsi_forward(y, om, model, m)
    recs = []
    for st in states:
        recs.append(Record("image", f"x{st.k}", st.x.value[0]))
        recs.append(Record("maps", f"S{st.k}", st.S.value[0]))
    container_write(path, recs)
    return path


# --- scenario runner ----------------------------------------------------------------

@dataclass
class ScenarioConfig:
    name: str
    methods: tuple = ("zf", "cg-sense", "pfista", "jsense", "jdsi")
    cohort: CohortConfig = field(default_factory=CohortConfig)
    maps: str = "acs"  # maps for cg-sense / pfista; calibrationless masks fall back to gt
    checkpoints: dict = field(default_factory=dict)  # learned method -> checkpoint path
    jdsi: JdsiConfig = None
    out_dir: str = None
    workers: int = 1
    n_dump: int = 1
    pfista_lambda: float = 1e-3


def run_scenario(cfg: ScenarioConfig, models=None):
    """Evaluate ``cfg.methods`` on the held-out split for every setting of the scenario.

    ``models`` maps learned method names to in-memory models and takes
    precedence over ``cfg.checkpoints``. Returns (MetricsReport, artifacts).
    """
    if cfg.name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {cfg.name!r}; choose from {sorted(SCENARIOS)}")
    unknown = [m for m in cfg.methods if m not in CLASSICAL + LEARNED]
    if unknown:
        raise ScenarioError(f"unknown methods {unknown}")
    cohort = cfg.cohort
    if cfg.name == "lesion" and cohort.test_lesions == 0:
        cohort = replace(cohort, test_lesions=2)
    models = dict(models or {})
    jcfg = cfg.jdsi or make_config("desk", height=cohort.dims[0], width=cohort.dims[1], coils=cohort.coils)
    for m in cfg.methods:
        if m in LEARNED and m not in models:
            path = cfg.checkpoints.get(m)
            if path is None:
                raise ScenarioError(f"method {m} needs a checkpoint")
            models[m] = load_model(path, jcfg if m == "jdsi" else ablation_config(jcfg))

    manifest = build_manifest(cohort)
    report = MetricsReport()
    artifacts = {"csv": None, "pgm": [], "dumps": [], "skipped": []}
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1)
    for kind, af, nominal in SCENARIOS[cfg.name]:
        acs = grid_acs(kind, nominal, cohort.dims[1])
        test = build_split(cohort, "test", kind, af, acs, manifest)
        recons = {}
        for m in cfg.methods:
            if m in LEARNED:
                recons[m] = predict_learned(models[m], test, m, cfg.workers)
                continue
            maps = cfg.maps if acs > 0 else "gt"
            if acs == 0 and m == "jsense":
                artifacts["skipped"].append((m, af, nominal, "no ACS region"))
                continue
            label = f"{m}:{maps}" if m in ("cg-sense", "pfista") else m
            try:
                recons[label] = _map(lambda s: reconstruct(s, m, maps, cfg.pfista_lambda), test, cfg.workers)
            except CalibrationError as e:
                artifacts["skipped"].append((m, af, nominal, str(e)))
        for label, xs in recons.items():
            for s, x in zip(test, xs):
                report.add(cfg.name, label, af, nominal, s.sample_id, x, s.truth)
        if cfg.out_dir:
            _render(cfg, test[0], recons, kind, af, nominal, artifacts)
            for m in (m for m in cfg.methods if m in LEARNED):
                for s in test[:cfg.n_dump]:
                    maps = None if m == "jdsi" else estimate_maps(s, m.split(":", 1)[1])
                    p = os.path.join(cfg.out_dir, f"phases_{m.replace(':', '-')}_{kind}_af{af}_acs{nominal}_{s.sample_id}.jks")
                    artifacts["dumps"].append(phase_dump(models[m], s, p, maps))
    if cfg.out_dir:
        artifacts["csv"] = os.path.join(cfg.out_dir, f"{cfg.name}.csv")
        report.write_csv(artifacts["csv"])
    return report, artifacts


def _render(cfg, sample, recons, kind, af, nominal, artifacts):
    """Magnitude images (own scale) and error maps (shared fixed max) of one sample."""
    tag = f"{kind}_af{af}_acs{nominal}_{sample.sample_id}"
    errs = {m: np.abs(np.abs(xs[0]) - np.abs(sample.truth)) for m, xs in recons.items()}
    vmax = max((float(e.max()) for e in errs.values()), default=0.0)
    p = os.path.join(cfg.out_dir, f"truth_{tag}.pgm")
    export_pgm(sample.truth, p)
    artifacts["pgm"].append(p)
    for m, xs in recons.items():
        safe = m.replace(":", "-")
        p = os.path.join(cfg.out_dir, f"{safe}_{tag}.pgm")
        export_pgm(xs[0], p)
        pe = os.path.join(cfg.out_dir, f"err_{safe}_{tag}.pgm")
        export_pgm(errs[m], pe, scale="fixed-max", vmax=vmax)
        artifacts["pgm"] += [p, pe]


# --- small utilities ----------------------------------------------------------------

def grid_search(fn, grid):
    """Evaluate ``fn(**point)`` over the Cartesian product of ``grid`` (name -> values).

    Returns (best point, best score, table) where lower scores are better
    and ties keep the first point in grid order.
    """
    names = list(grid)
    table = []
    for values in itertools.product(*(grid[n] for n in names)):
        point = dict(zip(names, values))
        table.append((point, float(fn(**point))))
    best = min(table, key=lambda t: t[1])
    return best[0], best[1], table


def fig1_ordering(seed=1, af=6, coils=16, acs=4, iters=500, dims=(64, 64)):
    """CG-SENSE RLNE with reference, JSENSE and ACS low-resolution maps on one phantom.

    Uses many small coils and a long CG run so the reference-map solution is
    nearly exact; returns {"gt": .., "jsense": .., "acs": ..}.
    """
    from ..mri import make_mask_1d
    from .metrics import rlne
    from .phantom import random_spec, synth_sample

    spec = replace(random_spec(seed, dims), coil_width=0.2, coil_radius=1.0, coil_phase=3.0)
    truth, maps, ksp = synth_sample(spec, coils)
    mask = make_mask_1d(dims[1], dims[0], af, acs, seed)
    y = ksp * mask.omega
    out = {}
    for how, S in (("gt", maps), ("acs", acs_lowres_maps(y, mask))):
        out[how] = rlne(cg_sense(y, S, mask, max_iters=iters, tol=1e-10)[0], truth)
    _, Sj, _ = jsense(y, mask)
    out["jsense"] = rlne(cg_sense(y, Sj, mask, max_iters=iters, tol=1e-10)[0], truth)
    return out


def save_model(model, path):
    save_checkpoint(path, model.store)
    return path
