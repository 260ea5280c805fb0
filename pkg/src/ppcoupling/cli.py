"""Batch experiment harness: config parsing, dispatch, deterministic artifacts.

Every artifact is a pure function of the config file bytes and flags: no wall
clock, no ambient randomness, sorted JSON keys, fixed float formatting.  Each
JSON summary embeds the config hash and the library version.  Exit codes:
0 all asserted bounds hold, 1 violations (with a machine-readable list),
2 parse/validation errors, 3 runtime errors (with module provenance).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .chain import (
    ChainModel,
    FiniteMarkovModel,
    GeometricBinaryModel,
    GeometricIntervalModel,
    IIDDiscreteModel,
    IIDUniformModel,
    as_probability,
    eta_mc,
    simulate_paths,
)
from .coupler import coincidence_curve, coincidence_rows
from .errors import DomainError
from .governor import extract_batch, resimulate
from .measure import (
    Density,
    DiscreteSpace,
    IntervalSpace,
    discrete_density,
    interval_density,
    subgraph_measures,
    tv_distance,
)
from .ppp import batch_points_in_window
from .priming import certify
from .race import race_coincidence_exact, race_coincidence_mc, race_lower_bound, race_tv
from .reconstruct import build_schedule, disagreement_experiment, successive_approximation
from .streams import TAG_PPP, derive_keys, fold


class ConfigError(ValueError):
    """Config file failed validation; message carries the offending key."""


# -- config -> objects -------------------------------------------------------------


def build_space(spec: dict):
    kind = spec.get("kind")
    if kind == "discrete":
        return DiscreteSpace(tuple(float(w) for w in spec["weights"]))
    if kind == "interval":
        return IntervalSpace(
            float(spec.get("lo", 0.0)),
            float(spec.get("hi", 1.0)),
            float(spec.get("ref_density", 1.0)),
        )
    raise ConfigError(f"space.kind: unknown kind {kind!r}")


def build_density(space, spec: dict) -> Density:
    kind = spec.get("kind")
    if kind == "weights":
        if not isinstance(space, DiscreteSpace):
            raise ConfigError("densities.*: weight vectors need a discrete space")
        vals = np.asarray(spec["values"], dtype=np.float64)
        return discrete_density(space, vals / (vals @ space.weight_array()))
    if not isinstance(space, IntervalSpace):
        raise ConfigError(f"densities.*: family {kind!r} needs an interval space")
    if kind == "uniform":
        lvl = 1.0 / space.total_measure
        return interval_density(space, lambda x: np.full_like(x, lvl), lvl)
    if kind == "linear":
        a = float(spec.get("lo_value", 0.0))
        b = float(spec.get("hi_value", 1.0))
        if a < 0 or b < 0:
            raise ConfigError("densities.*: linear values must be nonnegative")
        width = space.width
        raw_mass = space.ref_density * (a + b) / 2 * width
        sa, sb = a / raw_mass, b / raw_mass
        return interval_density(
            space,
            lambda x: sa + (sb - sa) * (x - space.lo) / width,
            max(sa, sb),
        )
    if kind == "piecewise-constant":
        bp = [float(v) for v in spec["breakpoints"]]
        vals = np.asarray(spec["values"], dtype=np.float64)
        if len(bp) != len(vals) + 1:
            raise ConfigError("densities.*: need len(breakpoints) == len(values) + 1")
        mass = float(np.sum(np.diff(bp) * vals)) * space.ref_density
        vals = vals / mass
        bp_arr = np.asarray(bp)

        def fn(x, _bp=bp_arr, _v=vals):
            idx = np.clip(np.searchsorted(_bp, x, side="right") - 1, 0, len(_v) - 1)
            return _v[idx]

        return interval_density(space, fn, (tuple(bp), tuple(vals)), breakpoints=bp[1:-1])
    raise ConfigError(f"densities.*: unknown kind {kind!r}")


def build_model(spec: dict) -> ChainModel:
    fam = spec.get("family")
    if fam == "iid-discrete":
        probs = tuple(float(p) for p in spec["probs"])
        weights = tuple(float(w) for w in spec.get("weights", [1.0] * len(probs)))
        return IIDDiscreteModel(DiscreteSpace(weights), probs)
    if fam == "iid-uniform":
        return IIDUniformModel(IntervalSpace(0.0, 1.0, 1.0))
    if fam == "markov":
        rows = np.asarray(spec["rows"], dtype=np.float64)
        order = int(spec.get("order", 1))
        a = rows.shape[-1]
        rows = rows.reshape((a,) * order + (a,))
        weights = tuple(float(w) for w in spec.get("weights", [1.0] * a))
        return FiniteMarkovModel(DiscreteSpace(weights), order, rows)
    if fam == "geometric-binary":
        return GeometricBinaryModel(float(spec["c"]), float(spec["r"]))
    if fam == "geometric-interval":
        return GeometricIntervalModel(float(spec["c"]), float(spec["r"]))
    raise ConfigError(f"model.family: unknown family {fam!r}")


def load_config(path: str | None) -> tuple[dict, str]:
    if path is None:
        return {}, hashlib.sha256(b"").hexdigest()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = p.read_bytes()
    try:
        cfg = yaml.safe_load(raw) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config parse error: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    return cfg, hashlib.sha256(raw).hexdigest()


# -- artifact writers ----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    rows = zip(*(columns[c] for c in names))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def _meta(args, config_hash: str) -> dict:
    return {
        "version": __version__,
        "config_hash": config_hash,
        "seed": args.seed,
        "replicas": args.replicas,
    }


# -- subcommands ---------------------------------------------------------------------


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.asarray([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError as e:
        raise ConfigError(f"vector flag: {e}") from e


def cmd_race(args, cfg, config_hash, out: Path) -> list[str]:
    p = _parse_vector(args.p)
    q = _parse_vector(args.q)
    exact = race_coincidence_exact(p, q)
    est, se = race_coincidence_mc(p, q, args.replicas, args.seed)
    lower = race_lower_bound(p, q)
    violations = []
    if abs(est - exact) > 3 * max(se, 1e-12):
        violations.append("race: Monte Carlo estimate outside 3 standard errors of the exact value")
    if exact < lower - 1e-12:
        violations.append("race: exact coincidence below the (1-d)/(1+d) lower bound")
    write_json(
        out / "race.json",
        {
            "meta": _meta(args, config_hash),
            "p": list(p),
            "q": list(q),
            "exact": exact,
            "mc_estimate": est,
            "stderr": se,
            "tv": race_tv(p, q),
            "paper_lower_bound": lower,
            "violations": violations,
        },
    )
    return violations


def _two_densities(cfg) -> tuple:
    try:
        space = build_space(cfg["space"])
        f = build_density(space, cfg["densities"]["f"])
        g = build_density(space, cfg["densities"]["g"])
    except KeyError as e:
        raise ConfigError(f"config: missing key {e}") from e
    return space, f, g


def cmd_couple(args, cfg, config_hash, out: Path) -> list[str]:
    space, f, g = _two_densities(cfg)
    rows = coincidence_rows(space, args.seed, args.replicas, f, g)
    write_csv(out / "couple.csv", rows)
    rep = coincidence_curve(space, args.seed, args.replicas, f, g)
    violations = []
    if np.any(rows["agree_t"] & ~rows["agree_x"]):
        violations.append("couple: a seed has equal times but different positions")
    if abs(rep.t_rate - rep.exact) > 3 * max(rep.t_stderr, 1e-12):
        violations.append("couple: t-coincidence rate outside 3 stderr of (1-d)/(1+d)")
    x_dis = 1.0 - rep.x_rate
    x_se = math.sqrt(max(x_dis * (1 - x_dis), 1e-300) / rep.n_seeds)
    if x_dis > rep.disagreement_bound + 3 * x_se:
        violations.append("couple: disagreement rate above 2d/(1+d) + 3 stderr")
    write_json(
        out / "couple.json",
        {
            "meta": _meta(args, config_hash),
            "tv": rep.tv,
            "exact_t_coincidence": rep.exact,
            "t_rate": rep.t_rate,
            "x_rate": rep.x_rate,
            "disagreement_bound": rep.disagreement_bound,
            "violations": violations,
        },
    )
    return violations


def cmd_ppp_check(args, cfg, config_hash, out: Path) -> list[str]:
    from scipy import stats

    violations = []
    report: dict = {"meta": _meta(args, config_hash)}

    # counting law: box counts over a fixed window partition on both backends
    for name, space in (
        ("discrete", DiscreteSpace((1.0, 1.0))),
        ("interval", IntervalSpace(0.0, 1.0, 1.0)),
    ):
        keys = derive_keys(fold(TAG_PPP, args.seed), np.arange(args.replicas))
        rep, x, y, t = batch_points_in_window(space, keys, y_max=2.0, t_max=2.0)
        if isinstance(space, DiscreteSpace):
            box_of = (x.astype(np.int64) * 2 + (y >= 1.0)) * 2 + (t >= 1.0)
            n_boxes, mu_box = 8, 1.0
        else:
            box_of = ((x >= 0.5).astype(np.int64) * 2 + (y >= 1.0)) * 2 + (t >= 1.0)
            n_boxes, mu_box = 8, 0.5
        counts = np.zeros((args.replicas, n_boxes), dtype=np.int64)
        np.add.at(counts, (rep, box_of), 1)
        mean = counts.mean(axis=0)
        disp = counts.var(axis=0, ddof=1) / np.maximum(counts.mean(axis=0), 1e-12)
        mean_se = math.sqrt(mu_box / args.replicas)
        mean_ok = bool(np.all(np.abs(mean - mu_box) <= 4 * mean_se))
        # dispersion index of a Poisson sample: (N-1) D ~ chi2(N-1)
        d_lo, d_hi = stats.chi2.ppf([1e-5, 1 - 1e-5], args.replicas - 1) / (args.replicas - 1)
        disp_ok = bool(np.all((disp >= d_lo) & (disp <= d_hi)))
        corr = np.corrcoef(counts.T)
        off = corr[~np.eye(n_boxes, dtype=bool)]
        corr_ok = bool(np.all(np.abs(off) < 4 / math.sqrt(args.replicas)))
        report[name] = {
            "box_means": list(mean),
            "expected_mean": mu_box,
            "dispersion": list(disp),
            "mean_ok": mean_ok,
            "dispersion_ok": disp_ok,
            "independence_ok": corr_ok,
        }
        for label, ok in (("mean", mean_ok), ("dispersion", disp_ok), ("independence", corr_ok)):
            if not ok:
                violations.append(f"ppp-check[{name}]: {label} check failed")

    # coincidence law on canned pairs
    sp_d = DiscreteSpace((1.0, 1.0))
    f_d = discrete_density(sp_d, [0.5, 0.5])
    g_d = discrete_density(sp_d, [0.7, 0.3])
    sp_i = IntervalSpace(0.0, 1.0, 1.0)
    f_i = interval_density(sp_i, lambda x: np.ones_like(x), 1.0)
    g_i = interval_density(sp_i, lambda x: 2.0 * x, ((0.0, 1.0), (2.0,)))
    pairs = [("discrete-pair", sp_d, f_d, g_d), ("interval-pair", sp_i, f_i, g_i)]
    cc = {}
    for label, space, f, g in pairs:
        r = coincidence_curve(space, args.seed + 1, args.replicas, f, g)
        inter, union, _ = subgraph_measures(f, g)
        target = inter / union
        ok = abs(r.t_rate - target) <= 3 * max(r.t_stderr, 1e-12)
        cc[label] = {"t_rate": r.t_rate, "target": target, "ok": ok}
        if not ok:
            violations.append(f"ppp-check[{label}]: coincidence law violated")
    report["coincidence"] = cc
    report["violations"] = violations
    write_json(out / "ppp_check.json", report)
    return violations


def cmd_influence(args, cfg, config_hash, out: Path) -> list[str]:
    if "model" not in cfg:
        raise ConfigError("config: influence needs a model section")
    model = build_model(cfg["model"])
    ns = np.arange(args.max_n + 1)
    delta = np.array([model.delta_exact(n) for n in ns])
    eta_hat = np.empty(len(ns))
    eta_se = np.empty(len(ns))
    for i, n in enumerate(ns):
        eta_hat[i], eta_se[i] = eta_mc(model, int(n), args.replicas, fold(args.seed, int(n)))
    write_csv(
        out / "influence.csv",
        {"n": ns, "delta_exact": delta, "eta_hat": eta_hat, "eta_stderr": eta_se},
    )
    violations = []
    bad = eta_hat > delta + 3 * eta_se + 1e-12
    if bad.any():
        violations.append(f"influence: eta_hat exceeds delta at n={list(ns[bad])}")
    write_json(
        out / "influence.json",
        {"meta": _meta(args, config_hash), "dominance_ok": not bad.any(), "violations": violations},
    )
    return violations


def cmd_govern(args, cfg, config_hash, out: Path) -> list[str]:
    from scipy import stats

    if "model" not in cfg:
        raise ConfigError("config: govern needs a model section")
    model = build_model(cfg["model"])
    path_file = Path(args.path_csv)
    if not path_file.exists():
        raise ConfigError(f"path csv not found: {args.path_csv}")
    with path_file.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "x" not in rows[0]:
        raise ConfigError("path csv needs a column named 'x'")
    vals = [float(r["x"]) for r in rows]
    path = np.asarray(vals, dtype=model.path_dtype())[None, :]

    innov = extract_batch(model, path, args.seed)
    recovered = resimulate(model, innov)
    flags = recovered[0] == path[0]
    ts = np.array([s.replacement.orig_t[0] for s in innov.steps])
    ks = stats.kstest(ts, "expon")
    lag_x = path[0, :-1].astype(np.float64)
    corr = float(np.corrcoef(ts[1:], lag_x)[0, 1]) if len(ts) > 2 and lag_x.std() > 0 else 0.0
    bound = 4 / math.sqrt(len(ts))
    violations = []
    if not flags.all():
        violations.append(f"govern: recursion check failed at {int((~flags).sum())} indices")
    if ks.pvalue <= 1e-4:
        violations.append("govern: first-point times fail the Exp(1) KS test")
    if abs(corr) >= bound:
        violations.append("govern: innovation times correlate with the lagged path")
    write_json(
        out / "govern.json",
        {
            "meta": _meta(args, config_hash),
            "n_steps": len(ts),
            "recursion_all_ok": bool(flags.all()),
            "failing_indices": [int(i) for i in np.flatnonzero(~flags)],
            "exp1_ks_pvalue": float(ks.pvalue),
            "time_vs_lagged_path_corr": corr,
            "corr_bound": bound,
            "violations": violations,
        },
    )
    return violations


def cmd_prime(args, cfg, config_hash, out: Path) -> list[str]:
    from scipy import stats

    if "model" not in cfg:
        raise ConfigError("config: prime needs a model section")
    model = as_probability(build_model(cfg["model"]))
    study = certify(model, args.ell, args.epsilon, args.replicas, args.seed, burn_in=args.burn_in)
    cert = study.certificate
    mism, mism_se, n_h = study.conditional_mismatch()
    violations = []
    per_step = study.per_step_h_rates()
    for k, s in enumerate(cert.steps):
        se = math.sqrt(s.h_probability * (1 - s.h_probability) / study.n_replicas)
        if abs(per_step[k] - s.h_probability) > 3 * se:
            violations.append(f"prime: step {k} event rate outside 3 sigma of 1/(m(n+1))")
    if mism > args.epsilon + 3 * mism_se:
        violations.append("prime: conditional mismatch above epsilon + 3 stderr")
    indep_p = None
    if isinstance(model.space, DiscreteSpace) and args.ell >= 1:
        words = study.z @ (model.space.n_atoms ** np.arange(args.ell)[::-1])
        table = np.zeros((model.space.n_atoms**args.ell, 2), dtype=np.int64)
        np.add.at(table, (words, study.h.astype(np.int64)), 1)
        table = table[table.sum(axis=1) > 0]
        if table.shape[0] > 1 and (table.sum(axis=0) > 0).all():
            indep_p = float(stats.chi2_contingency(table).pvalue)
            if indep_p <= 1e-4:
                violations.append("prime: (Z, H) independence test rejected")
    write_json(
        out / "prime.json",
        {
            "meta": _meta(args, config_hash),
            "ell": args.ell,
            "epsilon": args.epsilon,
            "constants": [{"m": s.m, "n": s.n} for s in cert.steps],
            "h_probability_exact": cert.h_probability_exact,
            "h_rate": study.h_rate,
            "per_step_h_rates": list(per_step),
            "conditional_mismatch": mism,
            "conditional_mismatch_stderr": mism_se,
            "n_h": n_h,
            "zh_independence_pvalue": indep_p,
            "violations": violations,
        },
    )
    return violations


def cmd_reconstruct(args, cfg, config_hash, out: Path) -> list[str]:
    if "model" not in cfg:
        raise ConfigError("config: reconstruct needs a model section")
    model = build_model(cfg["model"])
    violations = []

    dis = disagreement_experiment(
        model,
        epsilon=args.epsilon,
        horizon=args.horizon,
        n_replicas=args.replicas,
        seed=args.seed,
        eta_replicas=max(1000, args.replicas // 5),
    )
    for name, ok in dis.checks().items():
        if not ok:
            violations.append(f"reconstruct: {name} failed")

    sched = build_schedule(model, args.stages, max(1000, args.replicas // 5), fold(args.seed, 1))
    approx = successive_approximation(model, sched, args.replicas, fold(args.seed, 2))
    n_rep = approx.per_replica_hits.shape[1]
    # per (stage, replica): whether the stage primed and recovered X_0
    write_csv(
        out / "reconstruct.csv",
        {
            "stage": np.repeat([s.index for s in sched.stages], n_rep),
            "replica": np.tile(np.arange(n_rep), len(sched.stages)),
            "hit": approx.per_replica_hits.reshape(-1),
        },
    )
    for o in approx.stages:
        if not o.ok:
            violations.append(f"reconstruct: stage {o.stage.index} recovery below 1 - 3 eps")
    write_json(
        out / "reconstruct.json",
        {
            "meta": _meta(args, config_hash),
            "disagreement": {
                "epsilon": dis.epsilon,
                "window": dis.ell,
                "n_h": dis.n_h,
                "rates": list(dis.rates),
                "increments": list(dis.increments),
                "eta_hat": list(dis.eta_hat),
                "checks": dis.checks(),
            },
            "schedule": {
                "window_lengths": sched.window_lengths,
                "repetitions": sched.repetitions,
                "alpha": sched.alpha,
                "stages": [
                    {"k": s.index, "m": s.m, "t_start": s.t_start, "length": s.length}
                    for s in sched.stages
                ],
            },
            "stagewise": [
                {
                    "k": o.stage.index,
                    "h_rate": o.h_rate,
                    "n_h": o.n_h,
                    "recovery_rate": o.recovery_rate,
                    "bound": o.bound,
                    "ok": o.ok,
                }
                for o in approx.stages
            ],
            "theta": list(approx.theta),
            "violations": violations,
        },
    )
    return violations


# -- entry point ----------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppcoupling", description=__doc__)
    ap.add_argument("--seed", type=int, required=True, help="experiment seed (mandatory)")
    ap.add_argument("--replicas", type=int, default=10000)
    ap.add_argument("--out-dir", type=str, default="out")
    ap.add_argument("--config", type=str, default=None, help="YAML experiment config")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("race", help="exponential-race coincidence vs the exact oracle")
    p.add_argument("--p", required=True, help="comma-separated weights")
    p.add_argument("--q", required=True, help="comma-separated weights")

    sub.add_parser("couple", help="per-seed coupling of two configured densities")
    sub.add_parser("ppp-check", help="counting-law and coincidence-law suites")

    p = sub.add_parser("influence", help="influence coefficients of the configured model")
    p.add_argument("--max-n", type=int, default=12)

    p = sub.add_parser("govern", help="extract innovations from an observed path")
    p.add_argument("--path-csv", required=True)

    p = sub.add_parser("prime", help="priming certificate and event statistics")
    p.add_argument("--ell", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--burn-in", type=int, default=40)

    p = sub.add_parser("reconstruct", help="window reconstruction bounds and schedule")
    p.add_argument("--epsilon", type=float, default=0.15)
    p.add_argument("--horizon", type=int, default=8)
    p.add_argument("--stages", type=int, default=4)
    return ap


_COMMANDS = {
    "race": cmd_race,
    "couple": cmd_couple,
    "ppp-check": cmd_ppp_check,
    "influence": cmd_influence,
    "govern": cmd_govern,
    "prime": cmd_prime,
    "reconstruct": cmd_reconstruct,
}


def _provenance(exc: BaseException) -> str:
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        if "ppcoupling" in frame.filename:
            return Path(frame.filename).stem
    return "unknown"


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        cfg, config_hash = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        violations = _COMMANDS[args.command](args, cfg, config_hash, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - map to exit code with provenance
        print(f"runtime error in module '{_provenance(e)}': {e}", file=sys.stderr)
        return 3
    if violations:
        print(json.dumps({"violations": violations}, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
