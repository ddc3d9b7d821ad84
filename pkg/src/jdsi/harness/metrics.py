"""Image quality metrics on magnitude images and their aggregation."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d


class MetricError(ValueError):
    pass


def _mag(a):
    return np.abs(np.asarray(a)).astype(float)


def rlne(x_rec, x_ref):
    """Relative l2 norm error ||x_rec - x_ref|| / ||x_ref|| of magnitudes."""
    rec, ref = _mag(x_rec), _mag(x_ref)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise MetricError("reference image is zero")
    return float(np.linalg.norm(rec - ref) / denom)


def psnr(x_rec, x_ref):
    """10 log10(max|ref|^2 / MSE) in dB; ``inf`` for an exact match."""
    rec, ref = _mag(x_rec), _mag(x_ref)
    mse = float(np.mean((rec - ref) ** 2))
    peak = float(ref.max())
    if peak == 0:
        raise MetricError("reference image is zero")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(x_rec, x_ref, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=None):
    """Mean SSIM over all fully contained 11x11 Gaussian windows.

    Magnitudes are compared unless both inputs are real, in which case the
    signed values are used. ``data_range`` defaults to max|x_ref|.
    """
    if np.iscomplexobj(x_rec) or np.iscomplexobj(x_ref):
        a, b = _mag(x_rec), _mag(x_ref)
    else:
        a, b = np.asarray(x_rec, float), np.asarray(x_ref, float)
    L = float(np.abs(b).max()) if data_range is None else float(data_range)
    if L == 0:
        raise MetricError("reference image is zero")
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    g = gaussian_window(size, sigma)
    h = size // 2

    def filt(z):
        z = correlate1d(correlate1d(z, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return z[h:-h, h:-h] if h else z

    if min(a.shape) < size:
        raise MetricError(f"images must be at least {size}x{size}")
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    """Per-sample metric rows plus mean/std aggregates per (scenario, method, AF, ACS)."""

    rows: list = field(default_factory=list)

    def add(self, scenario, method, af, acs, sample_id, x_rec, x_ref):
        row = dict(
            scenario=scenario, method=method, AF=af, ACS=acs, sample_id=str(sample_id),
            rlne=rlne(x_rec, x_ref), psnr_db=psnr(x_rec, x_ref), ssim=ssim(x_rec, x_ref),
        )
        self.rows.append(row)
        return row

    def groups(self):
        out = {}
        for r in self.rows:
            out.setdefault((r["scenario"], r["method"], r["AF"], r["ACS"]), []).append(r)
        return out

    def aggregate(self):
        """One record per group with ``<metric>_mean`` and ``<metric>_std`` (population std)."""
        agg = []
        for (sc, m, af, acs), rows in sorted(self.groups().items(), key=lambda kv: tuple(map(str, kv[0]))):
            rec = dict(scenario=sc, method=m, AF=af, ACS=acs, sample_id="ALL", n=len(rows))
            for k in ("rlne", "psnr_db", "ssim"):
                v = np.array([r[k] for r in rows], dtype=float)
                rec[k + "_mean"] = float(np.mean(v))
                # identical values (e.g. all-inf PSNR) have zero spread, not inf - inf = nan
                rec[k + "_std"] = 0.0 if np.all(v == v[0]) else float(np.std(v))
            agg.append(rec)
        return agg

    def mean(self, method, metric, **match):
        v = [r[metric] for r in self.rows if r["method"] == method and all(r[k] == val for k, val in match.items())]
        if not v:
            raise KeyError(f"no rows for method {method!r} {match}")
        return float(np.mean(v))

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["scenario"], r["method"], str(r["AF"]), str(r["ACS"]), r["sample_id"]))

    def write_csv(self, path):
        """Per-sample rows (sorted) then one ``sample_id=ALL`` row per group.

        On ALL rows the metric columns hold the mean and ``*_std`` the
        population std; ``n`` is the group size. Infinite PSNR is written
        as ``inf``.
        """
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for r in self.sorted_rows():
                w.writerow([r["scenario"], r["method"], r["AF"], r["ACS"], r["sample_id"],
                            repr(r["rlne"]), repr(r["psnr_db"]), repr(r["ssim"]), "", "", "", ""])
            for a in self.aggregate():
                w.writerow([a["scenario"], a["method"], a["AF"], a["ACS"], "ALL",
                            repr(a["rlne_mean"]), repr(a["psnr_db_mean"]), repr(a["ssim_mean"]),
                            repr(a["rlne_std"]), repr(a["psnr_db_std"]), repr(a["ssim_std"]), a["n"]])


CSV_COLUMNS = ["scenario", "method", "AF", "ACS", "sample_id", "rlne", "psnr_db", "ssim",
               "rlne_std", "psnr_db_std", "ssim_std", "n"]


def read_csv(path):
    """(per-sample MetricsReport, list of ALL rows as dicts) from :meth:`MetricsReport.write_csv`."""
    rep, agg = MetricsReport(), []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            row = dict(scenario=r["scenario"], method=r["method"], AF=_num(r["AF"]), ACS=_num(r["ACS"]),
                       sample_id=r["sample_id"])
            for k in ("rlne", "psnr_db", "ssim"):
                row[k] = float(r[k])
            if r["sample_id"] == "ALL":
                for k in ("rlne", "psnr_db", "ssim"):
                    row[k + "_std"] = float(r[k + "_std"])
                row["n"] = int(r["n"])
                agg.append(row)
            else:
                rep.rows.append(row)
    return rep, agg


def _num(text):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() else v
