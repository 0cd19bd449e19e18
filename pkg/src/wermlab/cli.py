"""``wermlab`` command line: one subcommand per experiment unit.

    wermlab <gen|fit|sweep|bernstein|rates|lowerbound|report>
            [--config PATH] [--out DIR] [--seed N] [--threads N]

Configs are JSON objects with top-level keys ``command``, ``dgp``, ``fit``,
``eval``, ``output_dir`` and ``base_seed``; the schema of ``eval`` depends
on the command (see README).  Exit codes: 0 success, 1 invalid input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as D
from . import risk as R
from .dgp import BasisDgpSpec, RegressionDgpSpec, sample, spec_from_json
from .models import ThresholdHypothesis
from .pipeline import DivergenceError, FitConfig, WeightModel, config_digest, two_step
from .rng import derive_seed
from .svg import Series, curve_series, write_svg_curve

COMMANDS = ("gen", "fit", "sweep", "bernstein", "rates", "lowerbound", "report")
TOP_KEYS = {"command", "dgp", "fit", "eval", "output_dir", "base_seed"}
EVAL_KEYS = {
    "gen": {"n"},
    "fit": {"n"},
    "sweep": {"alphas", "seeds", "n_train", "n_val", "n_test", "oracle_selection"},
    "bernstein": {"probes"},
    "rates": {"n_grid", "seeds", "estimator", "functional"},
    "lowerbound": {"n", "trials", "weight_eps", "fail_level"},
    "report": set(),
}
PROBE_KEYS = {"hypothesis_id", "hypothesis", "beta", "shift", "weight", "margin", "scale", "loss",
              "B", "additive_eps", "method", "n_mc", "seed"}


class ConfigError(ValueError):
    pass


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text: str, key: str) -> str:
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def _check_keys(doc: dict, allowed: set, text: str, ctx: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{ctx} must be a JSON object")
    for k in sorted(set(doc) - allowed):
        raise ConfigError(f"{_where(text, k)}unknown key {k!r} in {ctx}")


def load_config(path: str | None, command: str) -> tuple[dict, str]:
    if path is None:
        return {"command": command}, ""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}: malformed JSON ({e.msg})") from None
    _check_keys(doc, TOP_KEYS, text, "config")
    if doc.get("command", command) != command:
        raise ConfigError(f"{_where(text, 'command')}config is for {doc['command']!r}, not {command!r}")
    _check_keys(doc.get("eval", {}), EVAL_KEYS[command], text, "eval")
    return doc, text


def _resolve(doc: dict, text: str, args) -> dict:
    out = dict(doc)
    out["command"] = args.command
    if args.seed is not None:
        out["base_seed"] = args.seed
    if args.out is not None:
        out["output_dir"] = args.out
    if "base_seed" not in out:
        raise ConfigError("base_seed is required (config key or --seed)")
    seed = out["base_seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"{_where(text, 'base_seed')}base_seed must be an integer in [0, 2^64)")
    if "output_dir" not in out:
        raise ConfigError("output_dir is required (config key or --out)")
    return out


def _dgp(doc: dict, text: str):
    if "dgp" not in doc:
        raise ConfigError("config needs a 'dgp' object")
    try:
        return spec_from_json(doc["dgp"])
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"{_where(text, 'dgp')}invalid dgp: {e}") from None


def _fit_cfg(doc: dict, text: str, seed: int) -> FitConfig:
    try:
        cfg = FitConfig.from_json(doc.get("fit", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{_where(text, 'fit')}invalid fit config: {e}") from None
    return replace(cfg, seed=seed)


def _count(ev: dict, key: str, text: str, default=None, minimum: int = 1) -> int:
    v = ev.get(key, default)
    if v is None:
        raise ConfigError(f"eval.{key} is required")
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{_where(text, key)}eval.{key} must be an integer >= {minimum}")
    return v


def _seeds(ev: dict, text: str, default: int) -> list[int]:
    v = ev.get("seeds", default)
    if isinstance(v, int) and not isinstance(v, bool) and v >= 1:
        return list(range(v))
    if isinstance(v, list) and v and all(isinstance(s, int) and s >= 0 for s in v):
        return v
    raise ConfigError(f"{_where(text, 'seeds')}eval.seeds must be a positive count or a list of seeds")


def provenance_line(resolved: dict) -> str:
    doc = {k: v for k, v in resolved.items() if k != "output_dir"}
    return (f"wermlab {__version__} config_digest={config_digest(doc)} "
            f"base_seed={resolved['base_seed']}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ------------------------------------------------------------ commands


def cmd_gen(doc, text, out: Path, prov: str, workers: int) -> None:
    spec = _dgp(doc, text)
    ev = doc.get("eval", {})
    n = _count(ev, "n", text)
    data = sample(spec, n, doc["base_seed"])
    buf = io.StringIO()
    buf.write(f"# {prov}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(data.dim)] + ["y", "latent"])
    for i in range(n):
        lat = "" if data.latent is None else int(data.latent[i])
        w.writerow([repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i])), lat])
    _write(out / "data.csv", buf.getvalue())
    print(f"wrote {n} rows to {out / 'data.csv'}")


def cmd_fit(doc, text, out, prov, workers):
    spec = _dgp(doc, text)
    if isinstance(spec, BasisDgpSpec):
        raise ConfigError("fit runs the two-step MLP pipeline; use the regression or classification DGP")
    ev = doc.get("eval", {})
    seed = doc["base_seed"]
    n = _count(ev, "n", text, 20_000, minimum=2)
    cfg = _fit_cfg(doc, text, derive_seed(seed, 3))
    data = sample(spec, n, derive_seed(seed, 0))
    task = "regression" if isinstance(spec, RegressionDgpSpec) else "classification"
    res = two_step(data, task, cfg)
    body = res.to_json()
    body["provenance"].update({"tool": f"wermlab {__version__}", "line": prov,
                               "dgp": spec.to_json(), "base_seed": seed, "n": n})
    _write(out / "model.json", json.dumps(body, indent=1, sort_keys=True) + "\n")
    fl = body["provenance"]["final_loss"]
    print(f"fit {task}: final losses {fl}")


def cmd_sweep(doc, text, out, prov, workers):
    spec = _dgp(doc, text)
    if isinstance(spec, BasisDgpSpec):
        raise ConfigError("sweep needs the regression or classification DGP")
    ev = doc.get("eval", {})
    alphas = ev.get("alphas", [round(0.1 * i, 1) for i in range(1, 11)])
    if not isinstance(alphas, list) or not alphas or not all(
            isinstance(a, (int, float)) and 0 < a <= 1 for a in alphas):
        raise ConfigError(f"{_where(text, 'alphas')}eval.alphas must be a nonempty list in (0, 1]")
    base = doc["base_seed"]
    seeds = [derive_seed(base, s) for s in _seeds(ev, text, 10)]
    sizes = R.SweepSizes(_count(ev, "n_train", text, 20_000, 2),
                         ev.get("n_val"), ev.get("n_test"))
    cfg = _fit_cfg(doc, text, 0)
    curve = R.sweep(spec, alphas, seeds, cfg, sizes, bool(ev.get("oracle_selection", False)), workers)
    _write(out / "sweep.csv", curve.cells_csv(prov))
    agg = curve.aggregate_csv(prov)
    _write(out / "sweep_agg.csv", agg)
    _render_sweep(out, agg, prov)
    for r in curve.aggregate():
        print(f"alpha={r.alpha:g} erm={R._fmt(r.mean_erm)} werm={R._fmt(r.mean_werm)}")


def _render_sweep(out: Path, agg_text: str, prov: str) -> None:
    rows = R.read_aggregate_csv(agg_text)
    ylab = "selective risk"
    write_svg_curve(curve_series(rows), "coverage alpha", ylab, out / "sweep.svg",
                    title="Selective risk vs coverage", metadata=prov)


def _probe_weight(p: dict, spec):
    kind = p.get("weight", "constant")
    if kind == "constant":
        return None if p.get("scale", 1.0) == 1.0 else WeightModel.constant(p["scale"])
    if kind == "oracle_margin":
        return WeightModel.oracle_margin(spec, margin=p.get("margin", "raw"))
    if kind == "oracle_precision":
        return WeightModel.oracle_precision(spec, scale=p.get("scale", 1.0))
    raise ConfigError(f"unknown probe weight {kind!r}")


def _probe_hypothesis(p: dict, spec):
    kind = p.get("hypothesis", "threshold" if isinstance(spec, BasisDgpSpec) else "shift")
    if kind == "threshold":
        beta = p.get("beta", 0.0)
        return ThresholdHypothesis(np.atleast_1d(np.asarray(beta, dtype=np.float64)))
    if kind == "shift":
        if not isinstance(spec, RegressionDgpSpec):
            raise ConfigError("shift hypotheses need the regression DGP")
        return D.shifted_oracle(spec, float(p.get("shift", 0.0)))
    raise ConfigError(f"unknown probe hypothesis {kind!r}")


def cmd_bernstein(doc, text, out, prov, workers):
    spec = _dgp(doc, text)
    probes = doc.get("eval", {}).get("probes")
    if not isinstance(probes, list) or not probes:
        raise ConfigError(f"{_where(text, 'probes')}eval.probes must be a nonempty list")
    rows = []
    for i, p in enumerate(probes):
        _check_keys(p, PROBE_KEYS, text, f"probe {i}")
        if "B" not in p:
            raise ConfigError(f"probe {i} needs B")
        check = D.BernsteinCheckSpec(B=float(p["B"]), additive_eps=float(p.get("additive_eps", 0.0)))
        loss = p.get("loss", "zero_one" if not isinstance(spec, RegressionDgpSpec) else "squared")
        r = D.bernstein_probe(spec, _probe_hypothesis(p, spec), _probe_weight(p, spec), loss, check,
                              n_mc=int(p.get("n_mc", 10**6)),
                              seed=derive_seed(doc["base_seed"], int(p.get("seed", i))),
                              method=p.get("method", "auto"))
        hid = str(p.get("hypothesis_id", f"h{i}"))
        rows.append(D.bernstein_row(spec.family, hid, r))
        print(f"{hid}: mean={r.mean_hat:.6g} var={r.var_hat:.6g} slack={r.slack:.6g} "
              f"{'pass' if r.passed else 'FAIL'}")
    buf = io.StringIO()
    buf.write(f"# {prov}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(D.BERNSTEIN_HEADER)
    w.writerows(rows)
    _write(out / "bernstein.csv", buf.getvalue())


def cmd_rates(doc, text, out, prov, workers):
    spec = _dgp(doc, text)
    ev = doc.get("eval", {})
    grid = ev.get("n_grid", [250 * 2 ** k for k in range(7)])
    if not isinstance(grid, list) or not all(isinstance(n, int) and n >= 1 for n in grid):
        raise ConfigError(f"{_where(text, 'n_grid')}eval.n_grid must be a list of positive counts")
    base = doc["base_seed"]
    seeds = [derive_seed(base, s) for s in _seeds(ev, text, 50)]
    cfg = _fit_cfg(doc, text, 0) if "fit" in doc else None
    res = D.rate_experiment(spec, grid, seeds, ev.get("estimator", "werm"), cfg,
                            ev.get("functional", "weighted"), workers)
    _write(out / "rates.csv", res.csv(prov))
    _render_rates(out, res.csv(prov), prov)
    for n, m in res.medians.items():
        print(f"n={n} median_risk={m!r}")
    if res.degenerate:
        print(f"slope: degenerate (fewer than 3 nonzero medians; excluded n={list(res.excluded)})")
    else:
        print(f"slope={res.slope!r} intercept={res.intercept!r} excluded={list(res.excluded)}")


def _render_rates(out: Path, rates_text: str, prov: str) -> None:
    lines = [ln for ln in rates_text.splitlines() if not ln.startswith("#")]
    by = {}
    for r in csv.DictReader(lines):
        by.setdefault((r["estimator"], int(r["n"])), []).append(float(r["excess_risk"]))
    series = []
    for est in sorted({k[0] for k in by}):
        pts = []
        for (e, n), v in sorted(by.items()):
            med = float(np.median(v))
            if e == est and med > 0:
                pts.append((math.log10(n), math.log10(med)))
        if pts:
            series.append(Series(est, tuple(pts)))
    if series:
        write_svg_curve(series, "log10 n", "log10 median excess risk", out / "rates.svg",
                        title="Excess risk vs sample size", metadata=prov)


def cmd_lowerbound(doc, text, out, prov, workers):
    spec = _dgp(doc, text)
    if not isinstance(spec, BasisDgpSpec):
        raise ConfigError("lowerbound needs the basis DGP")
    ev = doc.get("eval", {})
    n = _count(ev, "n", text)
    trials = _count(ev, "trials", text, 400, minimum=50)
    eps = float(ev.get("weight_eps", 0.0))
    if eps < 0:
        raise ConfigError(f"{_where(text, 'weight_eps')}eval.weight_eps must be >= 0")
    res = D.lowerbound_experiment(spec, n, trials, eps, doc["base_seed"],
                                  float(ev.get("fail_level", 0.015)), workers)
    _write(out / "lowerbound.csv", res.csv(prov))
    print(f"erm_fail_freq={res.erm_fail_freq!r} mean_err_erm={res.mean_err_erm!r} "
          f"mean_err_werm={res.mean_err_werm!r} sign_test_p={res.sign_test_p!r}")
    print("werm_err_quantiles " + " ".join(f"q{q:g}={v!r}" for q, v in res.werm_err_quantiles.items()))


def cmd_report(doc, text, out, prov, workers):
    done = 0
    for name, render in (("sweep_agg.csv", _render_sweep), ("rates.csv", _render_rates)):
        p = out / name
        if p.exists():
            body = p.read_text(encoding="utf-8")
            first = body.splitlines()[0] if body else ""
            line = first[2:] if first.startswith("# ") else prov
            render(out, body, line)
            done += 1
            print(f"rendered {name}")
    if not done:
        raise ConfigError(f"no CSVs to render in {out}")


HANDLERS = {"gen": cmd_gen, "fit": cmd_fit, "sweep": cmd_sweep, "bernstein": cmd_bernstein,
            "rates": cmd_rates, "lowerbound": cmd_lowerbound, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wermlab", description="weighted ERM experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
    ap.add_argument("--threads", type=int, help="worker processes, 0 = all cores "
                                                "(default: WERMLAB_THREADS or 1)")
    return ap


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        doc, text = load_config(args.config, args.command)
        resolved = _resolve(doc, text, args)
        if args.threads is not None and args.threads < 0:
            raise ConfigError("--threads must be >= 0")
        workers = R.resolve_workers(args.threads)
        out = Path(resolved["output_dir"])
        HANDLERS[args.command](resolved, text, out, provenance_line(resolved), workers)
    except (ConfigError, ValueError, TypeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DivergenceError, OSError, RuntimeError, ArithmeticError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
