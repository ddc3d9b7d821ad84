"""Small shared builders for the network tests and the acceptance run."""
import numpy as np

from jdsi.harness.cohort import sample_from_phantom
from jdsi.harness.phantom import random_spec, synth_sample
from jdsi.mri import make_mask_1d
from jdsi.net import _batch, init_params, jdsi_forward, jdsi_loss, make_config
from jdsi.nn.gradcheck import check_grad


def phantom_sample(seed, size=32, coils=2, af=4, acs=4, noise=0.0):
    truth, maps, ksp = synth_sample(random_spec(seed, (size, size), noise_sigma=noise), coils)
    mask = make_mask_1d(size, size, af, acs, seed)
    return sample_from_phantom(f"s{seed}", truth, maps.data, ksp, mask)


def tiny_config(**kw):
    base = dict(height=32, width=32, coils=2, phases=2, dtype="float64", unet_base_filters=2,
                unet_max_filters=4, d_layers=2, d_filters=3, c_layers=2, c_filters=3, s_layers=2,
                s_filters=3, i_layers=2, i_filters=3, batch=2, epochs=2)
    base.update(kw)
    return make_config("desk", **base)


def generic_point(model, seed=0, scale=0.05):
    """Move every parameter off its structured init (zero convs, lambda = 1e6)
    so that no gradient vanishes identically."""
    g = np.random.default_rng(seed)
    p = model.store.params
    for name, t in p.items():
        t.value = t.value + scale * g.standard_normal(t.shape)
    p["lambda"].value = np.array(2.0)
    p["gamma"].value = np.array(0.8)
    for k in range(1, model.config.phases + 1):
        p[f"rho{k}"].value = np.array(0.05)
    return model


def e2e_gradcheck(seed=0, entries=20, h=1e-7):
    """Relative error of the end-to-end loss gradient (32x32, J=2, K=2, double)
    on ``entries`` sampled parameter entries including gamma, rho_1 and lambda."""
    cfg = tiny_config()
    model = generic_point(init_params(cfg), seed)
    samples = [phantom_sample(seed + 1), phantom_sample(seed + 2)]
    y, om, xr, sr, _ = _batch(samples, np.float64)

    def f():
        xK, SK, _ = jdsi_forward(y, om, model)
        return jdsi_loss(xK, SK, xr, sr)

    p = model.store.params
    scalars = ["gamma", "rho1", "lambda"]
    g = np.random.default_rng(seed)
    others = [n for n in p if n not in scalars and p[n].value.size > 1]
    picks = list(g.choice(others, size=entries - len(scalars), replace=False))
    worst = {}
    for i, n in enumerate(scalars + picks):
        worst[n] = check_grad(f, [p[n]], h=h, max_entries=1, seed=seed + i)
    return max(worst.values()), worst
