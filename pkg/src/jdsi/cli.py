"""Command line entry point: ``jdsi <subcommand> ...``.

Failures exit with status 1 (2 for usage errors) after printing one line
``ERROR {"type": ..., "message": ...}`` to stderr.
"""
import argparse
import json
import os
import sys

import numpy as np


class CliError(RuntimeError):
    pass


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")


def _jdsi_config(args, **extra):
    from .net import load_config, make_config

    over = {k: v for k, v in extra.items() if v is not None}
    if getattr(args, "config", None):
        cfg = load_config(args.config, **over)
    else:
        cfg = make_config(getattr(args, "preset", "desk"), **over)
    return cfg


# --- subcommands --------------------------------------------------------------------

def cmd_synth(args):
    from .harness.cohort import CohortConfig, build_manifest, save_phantom
    from .harness.phantom import random_spec, synth_sample

    cfg = CohortConfig(n_train=args.n_train, n_test=args.n_test, dims=(args.size, args.size), coils=args.coils,
                       noise_sigma=args.noise, seed=args.seed, test_lesions=args.lesions)
    man = build_manifest(cfg)
    os.makedirs(args.out, exist_ok=True)
    for split in ("train", "test"):
        les = cfg.test_lesions if split == "test" else cfg.train_lesions
        for sid, ps in man[split]:
            spec = random_spec(ps, cfg.dims, n_lesions=les, noise_sigma=cfg.noise_sigma)
            truth, maps, ksp = synth_sample(spec, cfg.coils)
            save_phantom(os.path.join(args.out, f"{sid}.jks"), sid, truth, maps.data, ksp,
                         dict(phantom_seed=ps, split=split, noise_sigma=cfg.noise_sigma))
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(man, f, indent=1)
    return dict(out=args.out, train=len(man["train"]), test=len(man["test"]))


def cmd_mask(args):
    from .harness.cohort import make_mask, save_mask

    m = make_mask(args.kind, (args.height, args.width), args.af, args.acs, args.seed)
    save_mask(args.out, m)
    if args.pgm:
        from .harness.pgm import export_pgm

        export_pgm(m.omega.astype(float), args.pgm)
    return dict(out=args.out, sampled=int(m.omega.sum()), af_actual=m.af_actual)


def _learned_model(args, cfg):
    from .harness.container import load_checkpoint
    from .net import JdsiModel

    if not args.checkpoint:
        raise CliError("this method/maps choice needs --checkpoint")
    return JdsiModel(cfg, load_checkpoint(args.checkpoint)).eval()


def cmd_recon(args):
    from .harness.cohort import load_mask, load_phantom, sample_from_phantom
    from .harness.container import Record, container_write, meta_record
    from .harness.scenarios import estimate_maps, reconstruct
    from .net import predict
    from .recon import jsense

    sid, truth, maps_ref, ksp, _ = load_phantom(args.input)
    mask = load_mask(args.mask)
    sample = sample_from_phantom(sid, truth, maps_ref, ksp, mask)
    if args.maps is None:
        args.maps = "learned" if args.method == "jdsi" else "acs"
    J, H, W = ksp.shape
    S = None
    if args.method == "jdsi" or args.maps == "learned":
        cfg = _jdsi_config(args, height=H, width=W, coils=J)
        if args.method == "jdsi" and args.maps != "learned":
            from .harness.scenarios import ablation_config

            cfg = ablation_config(cfg)
            model = _learned_model(args, cfg)
            sample.maps = estimate_maps(sample, args.maps)
        else:
            model = _learned_model(args, cfg)
        x, S = predict(model, [sample])[0]
        if args.method != "jdsi":
            # learned maps feeding a classical solver
            from .mri import SenseMaps
            from .recon import cg_sense, pfista_sense

            Sm = SenseMaps(S)
            if args.method == "cg-sense":
                x = cg_sense(sample.y, Sm, mask, max_iters=args.iters)[0]
            elif args.method == "pfista":
                x = pfista_sense(sample.y, Sm, mask, reg_lambda=args.reg)[0]
            else:
                raise CliError(f"--maps learned is not valid with --method {args.method}")
    elif args.method == "jsense":
        x, Sm, _ = jsense(sample.y, mask)
        S = Sm.data
    else:
        x = reconstruct(sample, args.method, args.maps, args.reg, args.iters)
        if args.method != "zf":
            S = estimate_maps(sample, args.maps)
    recs = [Record("image", "x", np.asarray(x, dtype=complex)),
            meta_record("recon", dict(sample_id=sid, method=args.method, maps=args.maps, seed=args.seed))]
    if S is not None:
        recs.append(Record("maps", "S", np.asarray(S, dtype=complex)))
    container_write(args.out, recs)
    return dict(out=args.out, sample_id=sid, method=args.method)


def cmd_train(args):
    from .harness.cohort import CohortConfig, build_manifest, build_split, scale_acs
    from .harness.scenarios import save_model, train_model
    from .net import config_to_text

    cfg = _jdsi_config(args, seed=args.seed, epochs=args.epochs)
    cohort = CohortConfig(n_train=args.n_train, n_test=args.n_test, dims=(cfg.height, cfg.width),
                          coils=cfg.coils, noise_sigma=args.noise, seed=args.seed)
    acs = scale_acs(args.acs, cfg.width) if args.kind == "1d" else args.acs
    man = build_manifest(cohort)
    tr = build_split(cohort, "train", args.kind, args.af, acs, man)
    va = build_split(cohort, "test", args.kind, args.af, acs, man) if args.n_test else None
    os.makedirs(args.out, exist_ok=True)
    frozen = None if args.frozen == "none" else args.frozen

    def log(rec):
        print(json.dumps(rec), flush=True)

    ckdir = os.path.join(args.out, "epochs") if args.every_epoch else None
    if ckdir:
        os.makedirs(ckdir, exist_ok=True)
    model, hist, secs = train_model(tr, cfg, frozen=frozen, val=va, checkpoint_dir=ckdir, log=log)
    save_model(model, os.path.join(args.out, "model.jks"))
    with open(os.path.join(args.out, "history.json"), "w") as f:
        json.dump(hist, f, indent=1)
    with open(os.path.join(args.out, "config.txt"), "w") as f:
        f.write(config_to_text(model.config))
    return dict(out=args.out, seconds=secs, final=hist[-1] if hist else None)


def cmd_eval(args):
    from .harness.cohort import load_phantom
    from .harness.container import container_read, find, read_meta
    from .harness.metrics import MetricsReport

    if len(args.recon) != len(args.reference):
        raise CliError("give one --reference per --recon")
    rep = MetricsReport()
    for rp, fp in zip(args.recon, args.reference):
        recs = container_read(rp)
        meta = read_meta(recs, "recon")
        sid, truth, _, _, _ = load_phantom(fp)
        rep.add(args.scenario, meta["method"], args.af, args.acs, sid, find(recs, "x").data[0, 0], truth)
    if args.csv:
        rep.write_csv(args.csv)
    return dict(rows=rep.sorted_rows(), aggregate=rep.aggregate())


def cmd_scenario(args):
    from .harness.cohort import CohortConfig
    from .harness.scenarios import ScenarioConfig, run_scenario

    cps = {}
    for item in args.checkpoint or []:
        if "=" not in item:
            raise CliError(f"--checkpoint expects method=path, got {item!r}")
        k, v = item.split("=", 1)
        cps[k] = v
    cohort = CohortConfig(n_train=args.n_train, n_test=args.n_test, dims=(args.size, args.size), coils=args.coils,
                          noise_sigma=args.noise, seed=args.seed)
    jcfg = _jdsi_config(args, height=args.size, width=args.size, coils=args.coils)
    sc = ScenarioConfig(name=args.name, methods=tuple(args.methods.split(",")), cohort=cohort, maps=args.maps,
                        checkpoints=cps, jdsi=jcfg, out_dir=args.out, workers=args.workers)
    rep, art = run_scenario(sc)
    return dict(csv=art["csv"], pgm=len(art["pgm"]), dumps=len(art["dumps"]), skipped=art["skipped"],
                aggregate=rep.aggregate())


def cmd_report(args):
    from .harness.cohort import load_phantom
    from .harness.container import container_read, find
    from .harness.metrics import MetricsReport, read_csv
    from .harness.pgm import export_pgm

    out = {}
    if args.csv:
        rep, agg = read_csv(args.csv)
        out["aggregate"] = MetricsReport(rep.rows).aggregate() if rep.rows else agg
    if args.recon:
        if not args.reference or not args.out:
            raise CliError("PGM emission needs --reference and --out")
        os.makedirs(args.out, exist_ok=True)
        sid, truth, _, _, _ = load_phantom(args.reference)
        imgs = {}
        for rp in args.recon:
            recs = container_read(rp)
            imgs[os.path.splitext(os.path.basename(rp))[0]] = find(recs, "x").data[0, 0]
        errs = {k: np.abs(np.abs(v) - np.abs(truth)) for k, v in imgs.items()}
        vmax = max(float(e.max()) for e in errs.values())
        export_pgm(truth, os.path.join(args.out, f"truth_{sid}.pgm"))
        for k in imgs:
            export_pgm(imgs[k], os.path.join(args.out, f"{k}.pgm"))
            export_pgm(errs[k], os.path.join(args.out, f"err_{k}.pgm"), scale="fixed-max", vmax=vmax)
        rep = MetricsReport()
        for k, v in imgs.items():
            rep.add("report", k, "", "", sid, v, truth)
        rep.write_csv(os.path.join(args.out, "report.csv"))
        out["pgm_dir"] = args.out
        out["error_vmax"] = vmax
    if not out:
        raise CliError("nothing to report: give --csv and/or --recon")
    return out


# --- parser -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print("ERROR " + json.dumps({"type": "UsageError", "message": message}), file=sys.stderr)
        sys.exit(2)


def build_parser():
    ap = _Parser(prog="jdsi", description="Parallel-MRI reconstruction toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a seeded phantom cohort")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--lesions", type=int, default=0, help="lesions per test phantom")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("mask", help="write an undersampling mask")
    _common(p)
    p.add_argument("--kind", choices=["1d", "2d"], default="1d")
    p.add_argument("--af", type=float, default=4)
    p.add_argument("--acs", type=int, default=5, help="ACS columns (1d) or block side (2d), as used on the grid")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="also render the mask as PGM")
    p.set_defaults(fn=cmd_mask)

    p = sub.add_parser("recon", help="reconstruct one phantom file")
    _common(p)
    p.add_argument("--input", required=True, help="phantom container from `synth`")
    p.add_argument("--mask", required=True, help="mask container from `mask`")
    p.add_argument("--method", choices=["zf", "cg-sense", "pfista", "jsense", "jdsi"], required=True)
    p.add_argument("--maps", choices=["gt", "acs", "jsense", "learned"],
                   help="default: learned for jdsi (other choices select a frozen-maps model), acs otherwise")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--preset", default="desk")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--reg", type=float, default=1e-3, help="pFISTA l1 weight")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_recon)

    p = sub.add_parser("train", help="train JDSI or a frozen-maps ablation")
    _common(p)
    p.add_argument("--config")
    p.add_argument("--preset", default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--kind", choices=["1d", "2d"], default="1d")
    p.add_argument("--af", type=float, default=4)
    p.add_argument("--acs", type=int, default=24, help="nominal ACS (1d counts are rescaled to the grid)")
    p.add_argument("--frozen", choices=["none", "jsense", "acs"], default="none")
    p.add_argument("--every-epoch", action="store_true", help="keep a checkpoint per epoch")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics of reconstructions against their phantoms")
    _common(p)
    p.add_argument("--recon", nargs="+", required=True)
    p.add_argument("--reference", nargs="+", required=True)
    p.add_argument("--scenario", default="adhoc")
    p.add_argument("--af", default="")
    p.add_argument("--acs", default="")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("scenario", help="run an experiment scenario")
    _common(p)
    p.add_argument("--name", required=True, choices=["calib-1d", "calib-2d", "calibless", "lesion", "acs-sweep"])
    p.add_argument("--methods", default="zf,cg-sense,pfista,jsense")
    p.add_argument("--maps", choices=["gt", "acs", "jsense"], default="acs")
    p.add_argument("--checkpoint", action="append", help="method=path, repeatable")
    p.add_argument("--config")
    p.add_argument("--preset", default="desk")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("report", help="summarize a CSV and/or render PGMs")
    _common(p)
    p.add_argument("--csv")
    p.add_argument("--recon", nargs="*")
    p.add_argument("--reference")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def _default(o):
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    return str(o)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        result = args.fn(args)
    except Exception as e:  # noqa: BLE001 - reported as a machine-readable line
        print("ERROR " + json.dumps({"type": type(e).__name__, "message": str(e), "command": args.cmd}),
              file=sys.stderr)
        return 1
    print(json.dumps(result, default=_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
