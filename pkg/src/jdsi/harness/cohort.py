"""Seeded phantom cohorts: manifests, masks and ready-to-train samples."""
from dataclasses import dataclass, replace

import numpy as np

from ..mri import make_mask_1d, make_mask_2d
from ..net import Sample
from ..numerics import ifft2c, rng
from .phantom import random_spec, synth_sample

# the ACS counts quoted for 320-wide acquisitions are rescaled to the grid width
REFERENCE_WIDTH = 320


def scale_acs(acs, width, reference=REFERENCE_WIDTH):
    """ACS count for a ``width``-wide grid, keeping the fraction of a 320-wide one."""
    if acs <= 0:
        return 0
    return max(1, int(round(acs * width / reference)))


@dataclass
class CohortConfig:
    n_train: int = 200
    n_test: int = 20
    dims: tuple = (64, 64)
    coils: int = 4
    noise_sigma: float = 0.01
    seed: int = 0
    test_lesions: int = 0
    train_lesions: int = 0


def build_manifest(cfg: CohortConfig):
    """Disjoint train/test phantom seeds drawn from the cohort seed.

    Returns {"train": [(sample_id, phantom_seed)], "test": [...]}.
    """
    n = cfg.n_train + cfg.n_test
    seeds = rng(cfg.seed, "cohort").choice(2**31 - 1, size=n, replace=False)
    train = [(f"tr{i:04d}", int(s)) for i, s in enumerate(seeds[:cfg.n_train])]
    test = [(f"te{i:04d}", int(s)) for i, s in enumerate(seeds[cfg.n_train:])]
    return {"seed": cfg.seed, "train": train, "test": test}


def make_mask(kind, dims, af, acs, seed):
    """``kind`` is "1d" (ACS columns) or "2d" (ACS block); ``acs`` is used as given."""
    H, W = dims
    if kind == "1d":
        return make_mask_1d(W, H, af, acs, seed)
    if kind == "2d":
        return make_mask_2d(W, H, af, acs, seed)
    raise ValueError(f"unknown mask kind {kind!r}")


def make_sample(sample_id, phantom_seed, cfg: CohortConfig, kind="1d", af=4, acs=5, lesions=0):
    """Synthesize one phantom and undersample it with its own seeded mask."""
    spec = random_spec(phantom_seed, cfg.dims, n_lesions=lesions, noise_sigma=cfg.noise_sigma)
    truth, maps, ksp = synth_sample(spec, cfg.coils)
    mask = make_mask(kind, cfg.dims, af, acs, phantom_seed)
    return sample_from_phantom(sample_id, truth, maps.data, ksp, mask)


def build_split(cfg: CohortConfig, split, kind="1d", af=4, acs=5, manifest=None):
    manifest = manifest or build_manifest(cfg)
    les = cfg.test_lesions if split == "test" else cfg.train_lesions
    return [make_sample(sid, ps, cfg, kind, af, acs, les) for sid, ps in manifest[split]]


def with_maps(samples, maps):
    """Copies of ``samples`` carrying external maps (frozen-map ablations)."""
    out = []
    for s, m in zip(samples, maps):
        out.append(replace(s, maps=np.asarray(m)))
    return out


# --- files ------------------------------------------------------------------------

def save_phantom(path, sample_id, truth, maps, ksp, info=None):
    """Fully sampled phantom as a container: k-space, reference maps and truth."""
    from .container import Record, container_write, meta_record

    container_write(path, [
        Record("kspace", "kspace", ksp),
        Record("maps", "maps", maps),
        Record("image", "truth", truth),
        meta_record("sample", dict(info or {}, sample_id=sample_id)),
    ])


def load_phantom(path):
    """(sample_id, truth (H, W), maps (J, H, W), kspace (J, H, W), info)."""
    from .container import container_read, find, read_meta

    recs = container_read(path)
    info = read_meta(recs, "sample")
    ksp = find(recs, "kspace").data[0]
    maps = find(recs, "maps").data[0]
    truth = find(recs, "truth").data[0, 0]
    return info["sample_id"], truth, maps, ksp, info


def save_mask(path, mask):
    from .container import Record, container_write, meta_record

    container_write(path, [
        Record("mask", "omega", mask.omega.astype(np.uint8)),
        meta_record("mask", dict(acs_kind=mask.acs_kind, acs_count=mask.acs_count,
                                 af_nominal=mask.af_nominal, seed=mask.seed)),
    ])


def load_mask(path):
    from ..mri import SamplingMask
    from .container import container_read, find, read_meta

    recs = container_read(path)
    m = read_meta(recs, "mask")
    return SamplingMask(find(recs, "omega").data[0, 0], m["acs_kind"], m["acs_count"], m["af_nominal"], m["seed"])


def sample_from_phantom(sample_id, truth, maps, ksp, mask):
    return Sample(y=ksp * mask.omega, mask=mask.omega, coils=ifft2c(ksp), maps_ref=maps, truth=truth,
                  sample_id=sample_id, sampling=mask)
