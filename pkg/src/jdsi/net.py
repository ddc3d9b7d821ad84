"""The JDSI unrolled network: joint deep sensitivity estimation and image reconstruction.

Per phase k = 1..K the network refines the maps, takes a learned
thresholding step on the image and re-imposes k-space consistency::

    S_k   = SensModule(x_{k-1}, S_{k-1})
    xt_k  = ImageModule(x_{k-1} - gamma * E_{k-1}^H (E_{k-1} x_{k-1} - y))
    x_k   = DC(xt_k, S_k, y, lambda)

``S_0`` and ``x_0`` come from the initialization module (U-Net encoder E,
denoiser D, fusion net C). All maps are SoS-normalized between stages.
"""
import copy
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .nn import ops
from .nn.ops import BNState
from .nn.optim import ParamStore, adam_step, xavier_init
from .nn.tensor import Tensor, abs2, backward, conj, mul, no_grad, reshape, sum_
from .numerics import rng


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; ``store`` holds the last good parameters."""

    def __init__(self, msg, store, history):
        super().__init__(msg)
        self.store = store
        self.history = history


@dataclass
class JdsiConfig:
    phases: int = 5
    coils: int = 4
    height: int = 64
    width: int = 64
    unet_base_filters: int = 32
    unet_max_filters: int = 256
    unet_levels: int = 4
    d_layers: int = 15
    d_filters: int = 64
    c_layers: int = 5
    c_filters: int = 64
    s_layers: int = 5
    s_filters: int = 64
    i_layers: int = 4
    i_filters: int = 32
    epochs: int = 200
    lr: float = 1e-3
    lr_decay: float = 0.99
    batch: int = 2
    alpha1: float = 0.1
    alpha2: float = 0.1
    lambda_init: float = 1e6
    gamma_init: float = 1.0
    rho_init: float = 1e-3
    seed: int = 0
    dtype: str = "float32"
    # ablation switches
    update_maps: bool = True
    external_maps: bool = False
    grad_maps: str = "prev"

    def validate(self):
        counts = [self.phases, self.coils, self.unet_base_filters, self.unet_max_filters, self.d_layers,
                  self.d_filters, self.c_layers, self.c_filters, self.s_layers, self.s_filters,
                  self.i_layers, self.i_filters, self.batch, self.unet_levels]
        if any(c < 1 for c in counts):
            raise ConfigError("all layer, filter and phase counts must be >= 1")
        if self.i_layers < 2:
            raise ConfigError("image module halves need at least 2 layers")
        m = 2**self.unet_levels
        if self.height % m or self.width % m:
            raise ConfigError(f"image dims {self.height}x{self.width} must be divisible by {m}")
        if self.grad_maps not in ("prev", "current"):
            raise ConfigError("grad_maps must be 'prev' or 'current'")
        if self.external_maps and self.update_maps:
            raise ConfigError("external_maps requires update_maps=False")
        return self


PRESETS = {
    "full": {},
    "desk": dict(
        height=64, width=64, coils=4, unet_base_filters=8, unet_max_filters=64, d_layers=7,
        d_filters=8, c_filters=8, s_filters=8, i_filters=8,
    ),
}


def make_config(preset="desk", **overrides):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = JdsiConfig(**PRESETS[preset])
    return replace(cfg, **overrides).validate() if overrides else cfg.validate()


def _coerce(f, text):
    t = f.type if isinstance(f.type, str) else f.type.__name__
    if t == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {f.name}: {text!r}")
    if t == "int":
        return int(float(text)) if "e" in text.lower() else int(text)
    if t == "float":
        return float(text)
    return text


def parse_config_text(text, **overrides):
    """Parse ``key = value`` lines (``#`` comments). ``preset`` selects the base."""
    kv = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    kv.update({k: str(v) for k, v in overrides.items() if v is not None})
    preset = kv.pop("preset", "desk")
    # legacy spellings accepted in config files
    aliases = {"K": "phases", "lambda": "lambda_init", "gamma": "gamma_init", "rho": "rho_init"}
    by_name = {f.name: f for f in fields(JdsiConfig)}
    vals = {}
    for k, v in kv.items():
        k = aliases.get(k, k)
        if k not in by_name:
            raise ConfigError(f"unknown config key {k!r}")
        vals[k] = _coerce(by_name[k], v)
    return make_config(preset, **vals)


def load_config(path, **overrides):
    with open(path) as f:
        return parse_config_text(f.read(), **overrides)


def config_to_text(cfg: JdsiConfig):
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


# --- parameters -------------------------------------------------------------------

@dataclass
class JdsiModel:
    """Config plus parameters; ``mode`` selects batch-norm statistics."""

    config: JdsiConfig
    store: ParamStore
    mode: str = "train"
    _bn: dict = field(default_factory=dict, repr=False)

    @property
    def dtype(self):
        return self.store.dtype

    def bn_state(self, prefix):
        st = self._bn.get(prefix)
        buf = self.store.buffers
        if st is None or st.mean is not buf[prefix + ".mean"]:
            st = BNState(mean=buf[prefix + ".mean"], var=buf[prefix + ".var"])
            self._bn[prefix] = st
        return st

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def clone(self):
        return JdsiModel(self.config, copy.deepcopy(self.store), self.mode)


def _conv_params(store, name, cin, cout, seed, bias, zero=False):
    shape = (cout, cin, 3, 3)
    store.add(name + ".w", np.zeros(shape) if zero else xavier_init(shape, seed, name, store.dtype))
    if bias:
        store.add(name + ".b", np.zeros(cout))


def _cbr_params(store, name, cin, cout, seed):
    _conv_params(store, name, cin, cout, seed, bias=False)
    store.add(name + ".bn.scale", np.ones(cout))
    store.add(name + ".bn.shift", np.zeros(cout))
    store.add_buffer(name + ".bn.mean", np.zeros(cout))
    store.add_buffer(name + ".bn.var", np.ones(cout))


def _plain_params(store, name, cin, width, cout, layers, seed, residual=False):
    """``layers - 1`` conv-BN-ReLU blocks followed by a linear conv.

    The last conv of a residual branch starts at zero so the branch is an
    identity map at initialization.
    """
    c = cin
    for i in range(layers - 1):
        _cbr_params(store, f"{name}.{i}", c, width, seed)
        c = width
    _conv_params(store, f"{name}.{layers - 1}", c, cout, seed, bias=True, zero=residual)


def _unet_widths(cfg):
    return [min(cfg.unet_base_filters * 2**lv, cfg.unet_max_filters) for lv in range(cfg.unet_levels + 1)]


def init_params(cfg: JdsiConfig, seed=None):
    """Xavier-initialized :class:`JdsiModel` for ``cfg``."""
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    store = ParamStore(np.dtype(cfg.dtype))
    J2 = 2 * cfg.coils
    if not cfg.external_maps:
        wd = _unet_widths(cfg)
        c = J2
        for lv in range(cfg.unet_levels):
            _cbr_params(store, f"E.enc{lv}.0", c, wd[lv], seed)
            _cbr_params(store, f"E.enc{lv}.1", wd[lv], wd[lv], seed)
            c = wd[lv]
        _cbr_params(store, "E.mid.0", c, wd[-1], seed)
        _cbr_params(store, "E.mid.1", wd[-1], wd[-1], seed)
        c = wd[-1]
        for lv in reversed(range(cfg.unet_levels)):
            _cbr_params(store, f"E.dec{lv}.up", c, wd[lv], seed)
            _cbr_params(store, f"E.dec{lv}.0", 2 * wd[lv], wd[lv], seed)
            _cbr_params(store, f"E.dec{lv}.1", wd[lv], wd[lv], seed)
            c = wd[lv]
        _conv_params(store, "E.out", c, J2, seed, bias=True, zero=True)
        _plain_params(store, "D", J2, cfg.d_filters, J2, cfg.d_layers, seed, residual=True)
        _plain_params(store, "C", 2 * J2, cfg.c_filters, J2, cfg.c_layers, seed, residual=True)
    if cfg.update_maps:
        _plain_params(store, "S", 2 * J2, cfg.s_filters, J2, cfg.s_layers, seed, residual=True)
    for k in range(1, cfg.phases + 1):
        _plain_params(store, f"I{k}.a", 2, cfg.i_filters, cfg.i_filters, cfg.i_layers, seed)
        _plain_params(store, f"I{k}.b", cfg.i_filters, cfg.i_filters, 2, cfg.i_layers, seed, residual=True)
        store.add(f"rho{k}", cfg.rho_init, nonneg=True)
    store.add("gamma", cfg.gamma_init)
    store.add("lambda", cfg.lambda_init, nonneg=True)
    return JdsiModel(cfg, store)


# --- building blocks -------------------------------------------------------------

def _conv(model, x, name, bias=True):
    p = model.store.params
    return ops.conv3x3(x, p[name + ".w"], p[name + ".b"] if bias else None)


def _cbr(model, x, name):
    p = model.store.params
    x = ops.conv3x3(x, p[name + ".w"])
    x = ops.batchnorm(x, p[name + ".bn.scale"], p[name + ".bn.shift"], model.bn_state(name + ".bn"), model.mode)
    return ops.relu(x)


def _plain(model, x, name, layers):
    for i in range(layers - 1):
        x = _cbr(model, x, f"{name}.{i}")
    return _conv(model, x, f"{name}.{layers - 1}")


def _unet(model, x):
    cfg = model.config
    skips = []
    for lv in range(cfg.unet_levels):
        x = _cbr(model, _cbr(model, x, f"E.enc{lv}.0"), f"E.enc{lv}.1")
        skips.append(x)
        x = ops.maxpool2(x)
    x = _cbr(model, _cbr(model, x, "E.mid.0"), "E.mid.1")
    for lv in reversed(range(cfg.unet_levels)):
        x = _cbr(model, ops.upsample2(x), f"E.dec{lv}.up")
        x = ops.concat_channels(skips[lv], x)
        x = _cbr(model, _cbr(model, x, f"E.dec{lv}.0"), f"E.dec{lv}.1")
    return _conv(model, x, "E.out")


def _image_to_ch(x):
    N, H, W = x.shape
    return ops.complex_to_channels(reshape(x, (N, 1, H, W)))


def _ch_to_image(t):
    N, _, H, W = t.shape
    return reshape(ops.channels_to_complex(t), (N, H, W))


def _expand_image(x):
    N, H, W = x.shape
    return reshape(x, (N, 1, H, W))


def coil_combine(S, coils):
    """sum_j conj(S_j) * coils_j over the coil axis."""
    return sum_(mul(conj(S), coils), axis=1)


def _omega(mask, ndim):
    om = mask.omega if hasattr(mask, "omega") else np.asarray(mask, dtype=bool)
    if om.ndim == 3 and ndim == 4:
        # per-sample masks (N, H, W) broadcast over the coil axis
        return om[:, None]
    return om


# --- modules ----------------------------------------------------------------------

def init_module(x_u, model):
    """(S_0, x_0) from the zero-filled coil images ``x_u`` (N, J, H, W).

    S_E = dSoS(x_u + E(x_u)); S_D = S_E + D(S_E); S_0 = dSoS(S_D + C([S_D, x_u]));
    x_0 = S_0^H x_u.
    """
    cfg = model.config
    x_u = x_u if isinstance(x_u, Tensor) else Tensor(np.asarray(x_u))
    N, J, H, W = x_u.shape
    if H % 2**cfg.unet_levels or W % 2**cfg.unet_levels:
        raise ConfigError(f"image dims {H}x{W} must be divisible by {2**cfg.unet_levels}")
    xu_ch = ops.complex_to_channels(x_u)
    s_e = ops.sos_normalize(ops.channels_to_complex(xu_ch + _unet(model, xu_ch)))
    s_e_ch = ops.complex_to_channels(s_e)
    s_d_ch = s_e_ch + _plain(model, s_e_ch, "D", cfg.d_layers)
    s0_ch = s_d_ch + _plain(model, ops.concat_channels(s_d_ch, xu_ch), "C", cfg.c_layers)
    S0 = ops.sos_normalize(ops.channels_to_complex(s0_ch))
    x0 = coil_combine(S0, x_u)
    return S0, x0


def sens_module(x_prev, S_prev, model):
    """S_k = dSoS(S_prev + CNN([S_prev, S_prev * x_prev]))."""
    s_ch = ops.complex_to_channels(S_prev)
    sx_ch = ops.complex_to_channels(mul(S_prev, _expand_image(x_prev)))
    out = s_ch + _plain(model, ops.concat_channels(s_ch, sx_ch), "S", model.config.s_layers)
    return ops.sos_normalize(ops.channels_to_complex(out))


def data_gradient_step(x_prev, S, y, mask, gamma):
    """x - gamma * S^H F^-1 U^T (U F S x - y)."""
    om = _omega(mask, 4)
    k = ops.fft2c(mul(S, _expand_image(x_prev)))
    resid = mul(k - Tensor(np.asarray(y)), om)
    return x_prev - mul(gamma, coil_combine(S, ops.ifft2c(resid)))


def image_module(x_prev, S_used, y, mask, model, gamma, rho, k):
    """Gradient step followed by a residual conv / soft-threshold / conv block."""
    cfg = model.config
    g = data_gradient_step(x_prev, S_used, y, mask, gamma)
    g_ch = _image_to_ch(g)
    feat = _plain(model, g_ch, f"I{k}.a", cfg.i_layers)
    feat = ops.softthresh(feat, rho)
    return _ch_to_image(g_ch + _plain(model, feat, f"I{k}.b", cfg.i_layers))


def dc_module(x_tilde, S, y, mask, lam):
    """Blend sampled k-space of S * x_tilde toward y, then S^H-combine."""
    om = _omega(mask, 4)
    k = ops.fft2c(mul(S, _expand_image(x_tilde)))
    k = ops.dc_blend(k, np.asarray(y), lam, om)
    return coil_combine(S, ops.ifft2c(k))


@dataclass
class PhaseState:
    k: int
    x: Tensor
    S: Tensor
    x_tilde: Tensor = None


def jdsi_forward(y, mask, model, maps=None):
    """Run all K phases; returns (x_K, S_K, [PhaseState for k = 0..K]).

    ``y`` is (N, J, H, W) measured k-space (zero off the mask); ``mask``
    is (H, W) or per-sample (N, H, W). ``maps`` supplies fixed external
    maps when the config has ``external_maps``.
    """
    cfg = model.config
    p = model.store.params
    y = np.asarray(y)
    if y.ndim == 3:
        y = y[None]
    om = _omega(mask, 4)
    x_u = Tensor(ops._ifft2c(y * om))
    if cfg.external_maps:
        if maps is None:
            raise ConfigError("external_maps config needs maps")
        m = maps.data if hasattr(maps, "data") else np.asarray(maps)
        S = Tensor(m[None] if m.ndim == 3 else m)
        x = coil_combine(S, x_u)
    else:
        S, x = init_module(x_u, model)
    states = [PhaseState(0, x, S)]
    for k in range(1, cfg.phases + 1):
        S_new = sens_module(x, S, model) if cfg.update_maps else S
        S_grad = S if cfg.grad_maps == "prev" else S_new
        xt = image_module(x, S_grad, y, om, model, p["gamma"], p[f"rho{k}"], k)
        x = dc_module(xt, S_new, y, om, p["lambda"])
        S = S_new
        states.append(PhaseState(k, x, S, xt))
    return x, S, states


def jdsi_loss(x_K, S_K, x_ref_coils, S_ref, alpha1=0.1, alpha2=0.1):
    """Batch mean of ||x_ref - S_K x_K||^2 + a1 ||S_ref^H x_ref - x_K||^2 + a2 ||S_ref - S_K||^2.

    The map term runs over the reference foreground only (pixels where any
    reference coil is nonzero). Outside it the predicted maps have unit SoS
    by construction, so those pixels would add a constant with zero gradient.
    """
    x_ref = np.asarray(x_ref_coils)
    s_ref = np.asarray(S_ref)
    if x_ref.ndim == 3:
        x_ref, s_ref = x_ref[None], s_ref[None]
    if x_ref.shape != S_K.shape or s_ref.shape != S_K.shape or x_K.shape != x_ref.shape[:1] + x_ref.shape[2:]:
        raise ops.ShapeError(f"loss shapes: x_K {x_K.shape}, S_K {S_K.shape}, refs {x_ref.shape}/{s_ref.shape}")
    N = x_ref.shape[0]
    coil = sum_(abs2(Tensor(x_ref) - mul(S_K, _expand_image(x_K))))
    combined_ref = np.sum(np.conj(s_ref) * x_ref, axis=1)
    combine = sum_(abs2(Tensor(combined_ref) - x_K))
    fg = np.any(s_ref != 0, axis=1, keepdims=True)
    sens = sum_(abs2(mul(Tensor(s_ref) - S_K, fg)))
    return mul(coil + mul(combine, alpha1) + mul(sens, alpha2), 1.0 / N)


# --- training ---------------------------------------------------------------------

@dataclass
class Sample:
    """One training/evaluation example; ``maps`` holds external maps for ablations."""

    y: np.ndarray
    mask: np.ndarray
    coils: np.ndarray
    maps_ref: np.ndarray
    truth: np.ndarray
    sample_id: str = ""
    maps: np.ndarray = None
    sampling: object = None  # the SamplingMask behind ``mask``, when known


def _batch(samples, dtype):
    cdt = np.result_type(dtype, np.complex64)
    y = np.stack([s.y for s in samples]).astype(cdt)
    om = np.stack([s.mask for s in samples]).astype(bool)
    xr = np.stack([s.coils for s in samples]).astype(cdt)
    sr = np.stack([s.maps_ref for s in samples]).astype(cdt)
    maps = None
    if samples[0].maps is not None:
        maps = np.stack([s.maps for s in samples]).astype(cdt)
    return y, om, xr, sr, maps


def lr_at(cfg, epoch):
    return cfg.lr * cfg.lr_decay**epoch


def predict(model, samples, batch=None):
    """Eval-mode reconstructions; returns a list of (x_K, S_K) numpy pairs."""
    model.eval()
    out = []
    bs = batch or model.config.batch
    with no_grad():
        for i in range(0, len(samples), bs):
            y, om, _, _, maps = _batch(samples[i:i + bs], model.dtype)
            xK, SK, _ = jdsi_forward(y, om, model, maps)
            out.extend(zip(xK.value, SK.value))
    return out


def evaluate_loss(model, samples):
    model.eval()
    total = 0.0
    with no_grad():
        for i in range(0, len(samples), model.config.batch):
            chunk = samples[i:i + model.config.batch]
            y, om, xr, sr, maps = _batch(chunk, model.dtype)
            xK, SK, _ = jdsi_forward(y, om, model, maps)
            total += float(jdsi_loss(xK, SK, xr, sr, model.config.alpha1, model.config.alpha2).value) * len(chunk)
    return total / max(len(samples), 1)


def train(dataset, config: JdsiConfig, val=None, model=None, checkpoint_dir=None, log=None, max_steps=None):
    """Adam training over seeded per-epoch shuffles.

    Returns (model, history). ``history`` holds one dict per epoch with the
    learning rate, mean train loss, validation loss / RLNE / PSNR (when
    ``val`` is given) and wall time.
    """
    from .harness.metrics import psnr, rlne  # metrics live in the harness

    config.validate()
    model = init_params(config) if model is None else model
    history = []
    good = copy.deepcopy(model.store)
    n = len(dataset)
    if n < config.batch:
        raise ConfigError(f"dataset of {n} samples is smaller than the batch size {config.batch}")
    steps = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        model.train()
        lr = lr_at(config, epoch)
        order = rng(config.seed, f"epoch:{epoch}").permutation(n)
        losses = []
        for i in range(0, n - config.batch + 1, config.batch):
            y, om, xr, sr, maps = _batch([dataset[j] for j in order[i:i + config.batch]], model.dtype)
            model.store.zero_grad()
            xK, SK, _ = jdsi_forward(y, om, model, maps)
            loss = jdsi_loss(xK, SK, xr, sr, config.alpha1, config.alpha2)
            lv = float(loss.value)
            if not math.isfinite(lv):
                model.store = good
                history.append(dict(epoch=epoch, lr=lr, train_loss=lv, aborted=True))
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", good, history)
            backward(loss)
            adam_step(model.store, lr)
            losses.append(lv)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        rec = dict(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)), seconds=time.perf_counter() - t0)
        if val:
            rec["val_loss"] = evaluate_loss(model, val)
            preds = predict(model, val)
            rec["val_rlne"] = float(np.mean([rlne(x, s.truth) for (x, _), s in zip(preds, val)]))
            rec["val_psnr"] = float(np.mean([psnr(x, s.truth) for (x, _), s in zip(preds, val)]))
        history.append(rec)
        good = copy.deepcopy(model.store)
        if checkpoint_dir is not None:
            from .harness.container import save_checkpoint

            save_checkpoint(f"{checkpoint_dir}/epoch{epoch:04d}.jks", model.store)
        if log is not None:
            log(rec)
        if max_steps is not None and steps >= max_steps:
            break
    model.eval()
    return model, history
