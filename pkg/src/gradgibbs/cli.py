"""Experiment runner: ``gradgibbs run``, ``gradgibbs report`` and ``gradgibbs check-constants``.

A config is one JSON object::

    {"experiment": "free-energy",
     "potential": {"kind": "gaussian_gradient", "d": 1, "m": 1, "patch": "forward"},
     "domain": {"eps_list": [0.25, 0.125, 0.0625]},
     "constraint": {"formulations": ["soft_clamp"], "L": [[[0.0]]]},
     "budget": {"sweeps": 4000},
     "seed": 0,
     "output": "runs/fe"}

Each experiment expands into tasks. A task's record line holds everything
derived from config and seed; wall-clock times go to ``timings.jsonl``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .free_energy import (FORMULATIONS, Budget, _subseed, check_subadditivity, check_tightness, clamp_logZ,
                          estimate_W, gaussian_W_limit, logZ_thermo, quasiconvexity_probe)
from .hamiltonian import soft_clamp
from .lattice import AffineMap, Box, build_domain
from .ldp_yg import (MacroField, WTable, blowup_select, dlr_check, exact_window_slope, ldp_check,
                     rate_functional, sample_clamped, slope_check, window_stats)
from .nonconvexity import run_nonconvexity, threshold_M
from .potential import GrowthConstants, PotentialError, PotentialSpec, bound_constants, constant_c

EXPERIMENTS = ("free-energy", "subadditivity", "tightness", "quasiconvexity", "nonconvex", "ldp", "young-gibbs",
               "check-constants")
RECORDS = "records.jsonl"
TIMINGS = "timings.jsonl"


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# --------------------------------------------------------------------------
# config schema


def _require(cfg: dict, key: str, kind, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    val = cfg[key]
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {getattr(kind, '__name__', kind)}")
    return val


def _number_list(val, path: str, positive: bool = True) -> list[float]:
    if not isinstance(val, list) or not val:
        raise ConfigError(path, "expected a non-empty list of numbers")
    out = []
    for k, x in enumerate(val):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{k}]", "expected a finite number")
        if positive and x <= 0:
            raise ConfigError(f"{path}[{k}]", "expected a positive number")
        out.append(float(x))
    return out


def validate_config(cfg) -> dict:
    """Schema check; returns a normalized copy. Raises ConfigError naming the field path."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be an object")
    cfg = json.loads(json.dumps(cfg))
    kind = _require(cfg, "experiment", str, "")
    if kind not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown kind {kind!r}; expected one of {', '.join(EXPERIMENTS)}")
    if kind == "check-constants":
        g = _require(cfg, "growth", dict, "")
        for key in ("p", "m", "c", "C", "r", "R0"):
            if key not in g:
                raise ConfigError(f"growth.{key}", "missing")
        try:
            GrowthConstants(float(g["c"]), float(g["p"]), float(g["C"]), float(g["r"]), int(g["m"]),
                            float(g["R0"])).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError("growth", str(exc)) from exc
        cfg.setdefault("L_norms", [0.0, 1.0])
        _number_list(cfg["L_norms"], "L_norms", positive=False)
        cfg.setdefault("d", 1)
    else:
        pot = _require(cfg, "potential", dict, "")
        try:
            PotentialSpec.from_config(pot)
        except (TypeError, PotentialError) as exc:
            raise ConfigError("potential", str(exc)) from exc
        dom = cfg.setdefault("domain", {})
        if not isinstance(dom, dict):
            raise ConfigError("domain", "expected an object")
        if "eps_list" in dom:
            _number_list(dom["eps_list"], "domain.eps_list")
        if "shape" in dom:
            _number_list(dom["shape"], "domain.shape")
        cons = cfg.setdefault("constraint", {})
        if not isinstance(cons, dict):
            raise ConfigError("constraint", "expected an object")
        _validate_kind(kind, cfg)
    b = cfg.setdefault("budget", {})
    if not isinstance(b, dict):
        raise ConfigError("budget", "expected an object")
    chains = b.pop("chains", 1)
    if not isinstance(chains, int) or chains < 1:
        raise ConfigError("budget.chains", "expected a positive integer")
    try:
        Budget.coerce(b)
    except TypeError as exc:
        raise ConfigError("budget", str(exc)) from exc
    b["chains"] = chains
    seed = cfg.setdefault("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a nonnegative integer")
    if "output" in cfg and not isinstance(cfg["output"], str):
        raise ConfigError("output", "expected a string")
    return cfg


def _validate_kind(kind: str, cfg: dict) -> None:
    cons, dom = cfg["constraint"], cfg["domain"]
    if kind in ("free-energy", "nonconvex", "ldp"):
        if "eps_list" not in dom:
            raise ConfigError("domain.eps_list", "missing")
    if kind == "free-energy":
        forms = cons.setdefault("formulations", ["soft_clamp"])
        if not isinstance(forms, list) or not forms:
            raise ConfigError("constraint.formulations", "expected a non-empty list")
        for k, f in enumerate(forms):
            if f not in FORMULATIONS:
                raise ConfigError(f"constraint.formulations[{k}]", f"unknown formulation {f!r}")
        if any(f in ("lr_neighborhood", "combined") for f in forms):
            _number_list(cons.get("kappa"), "constraint.kappa")
    if kind in ("subadditivity", "tightness", "young-gibbs") and "eps" not in dom:
        raise ConfigError("domain.eps", "missing")
    if kind == "subadditivity":
        splits = cons.get("splits")
        if not isinstance(splits, list) or not splits:
            raise ConfigError("constraint.splits", "expected a list of [axis, cut] pairs")
    if kind == "tightness":
        _number_list(cons.get("K_list"), "constraint.K_list")
    if kind == "ldp":
        _number_list(cons.get("kappa"), "constraint.kappa")
        if not isinstance(cons.get("field"), dict):
            raise ConfigError("constraint.field", "missing")
    if kind == "young-gibbs":
        if not isinstance(cons.get("windows"), list) or not cons["windows"]:
            raise ConfigError("constraint.windows", "expected a list of {center, side}")


def config_hash(cfg: dict, seed: int) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    body["seed"] = int(seed)
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# --------------------------------------------------------------------------
# tasks


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if x is None or isinstance(x, str):
        return x
    if hasattr(x, "to_record"):
        return _jsonable(x.to_record())
    return repr(x)


def _maps(cons: dict, spec: PotentialSpec) -> list[list]:
    Ls = cons.get("L")
    if Ls is None:
        return [np.zeros((spec.m, spec.d)).tolist()]
    arr = [np.asarray(L, float) for L in Ls]
    for k, A in enumerate(arr):
        if A.shape != (spec.m, spec.d):
            raise ConfigError(f"constraint.L[{k}]", f"expected an {spec.m}x{spec.d} matrix")
    return [A.tolist() for A in arr]


def _shape(cfg: dict, d: int) -> Box:
    s = cfg["domain"].get("shape")
    if s is None:
        return Box.unit(d)
    if len(s) != d:
        raise ConfigError("domain.shape", f"expected {d} side lengths")
    return Box((0.0,) * d, tuple(float(x) for x in s))


def _field(fcfg: dict, spec: PotentialSpec) -> MacroField:
    L = AffineMap(np.asarray(fcfg.get("L", np.zeros((spec.m, spec.d))), float))
    kind = fcfg.get("type", "affine")
    if kind == "affine":
        return MacroField.affine(L)
    if kind == "wedge":
        return MacroField.wedge(L, np.asarray(fcfg.get("amplitude", [0.3] * spec.m), float))
    if kind == "hat":
        return MacroField.hat(L, np.asarray(fcfg["amplitude"], float), fcfg["node"], float(fcfg.get("h", 0.5)))
    raise ConfigError("constraint.field.type", f"unknown field type {kind!r}")


def expand_tasks(cfg: dict) -> list[dict]:
    kind = cfg["experiment"]
    cons = cfg.get("constraint", {})
    if kind == "check-constants":
        return [{"L_norm": x} for x in cfg["L_norms"]]
    spec = PotentialSpec.from_config(cfg["potential"])
    Ls = _maps(cons, spec)
    if kind == "free-energy":
        out = []
        for f in cons["formulations"]:
            kappas = cons["kappa"] if f in ("lr_neighborhood", "combined") else [None]
            out += [{"formulation": f, "L": L, "kappa": k} for L in Ls for k in kappas]
        return out
    if kind == "subadditivity":
        return [{"L": L, "split": list(s), "method": cons.get("method", "auto")} for L in Ls for s in cons["splits"]]
    if kind == "tightness":
        return [{"L": L, "method": cons.get("method", "quadrature")} for L in Ls]
    if kind == "quasiconvexity":
        return [{"L": L} for L in Ls]
    if kind == "nonconvex":
        return [{"M": cons.get("M", "auto")}]
    if kind == "ldp":
        return [{"field": cons["field"]}]
    if kind == "young-gibbs":
        return [{"L": L, "boundary": b} for L in Ls for b in cons.get("boundaries", ["soft"])]
    raise ConfigError("experiment", f"no task expansion for {kind!r}")


def _bracket(spec: PotentialSpec, L: AffineMap, per, ses) -> dict:
    bc = bound_constants(spec.growth, L, spec.d)
    lo = [bc["b"] - 3 * s for s in ses]
    hi = [bc["B"] + 3 * s for s in ses]
    ok = all(a <= v <= b for v, a, b in zip(per, lo, hi))
    return {"b": bc["b"], "B": bc["B"], "ok": bool(ok)}


def run_task(cfg: dict, task: dict, seed: int) -> dict:
    """Compute one task. Returns ``{"result", "verdict", "rows"}``; ``rows`` feed the plot CSV."""
    kind = cfg["experiment"]
    budget = Budget.coerce({k: v for k, v in cfg.get("budget", {}).items() if k != "chains"})
    sd = _subseed(seed, json.dumps(task, sort_keys=True))
    if kind == "check-constants":
        g = cfg["growth"]
        gc = GrowthConstants(float(g["c"]), float(g["p"]), float(g["C"]), float(g["r"]), int(g["m"]), float(g["R0"]))
        bc = bound_constants(gc, float(task["L_norm"]), int(cfg["d"]))
        res = {"c_pm": constant_c(gc.p, gc.m), **bc, "L_norm": task["L_norm"]}
        return {"result": res, "verdict": {"finite": all(math.isfinite(v) for v in bc.values())}, "rows": [res]}
    spec = PotentialSpec.from_config(cfg["potential"])
    dom_cfg, cons = cfg["domain"], cfg.get("constraint", {})
    if kind == "free-energy":
        L = AffineMap(task["L"])
        est = estimate_W(spec, L, task["formulation"], dom_cfg["eps_list"], kappa=task["kappa"], budget=budget,
                         seed=sd, min_points=1)
        res = est.to_record()
        # the bounds hold for the limit, not for free-boundary values at finite eps
        verdict = {"bracket": _bracket(spec, L, [est.value], [est.se])["ok"]}
        if spec.kind == "gaussian_gradient":
            exact = gaussian_W_limit(spec.d, spec.m, L)
            res["oracle"] = exact
            comparable = task["formulation"] != "lr_neighborhood" or not np.any(L.A)
            if comparable and len(est.eps_list) >= 3:
                verdict["oracle"] = bool(abs(est.value - exact) <= 3 * est.se)
        rows = [{"formulation": task["formulation"], "kappa": task["kappa"], "L": json.dumps(task["L"]), "eps": e,
                 "value": v, "se": s} for e, v, s in zip(est.eps_list, est.per_eps, est.per_eps_se)]
        rows.append({"formulation": task["formulation"], "kappa": task["kappa"], "L": json.dumps(task["L"]),
                     "eps": 0.0, "value": est.value, "se": est.se})
        return {"result": res, "verdict": verdict, "rows": rows}
    if kind == "subadditivity":
        L = AffineMap(task["L"])
        dom = build_domain(_shape(cfg, spec.d), float(dom_cfg["eps"]), spec.m)
        res = check_subadditivity(spec, L, dom, tuple(task["split"]), task["method"], budget, sd)
        return {"result": res, "verdict": {"slack_nonnegative": res["ok"]},
                "rows": [{"L": json.dumps(task["L"]), "split": json.dumps(task["split"]), "slack": res["slack"],
                          "se": res["se"]}]}
    if kind == "tightness":
        L = AffineMap(task["L"])
        dom = build_domain(_shape(cfg, spec.d), float(dom_cfg["eps"]), spec.m)
        cs = soft_clamp(dom, L, spec.R0)
        z = None
        if task["method"] == "mc":
            z = clamp_logZ(spec, dom, L, budget, _subseed(sd, "Z")) if spec.kind == "gaussian_gradient" else \
                logZ_thermo(spec, dom, cs, budget.path_points, budget.sweeps, _subseed(sd, "Z"),
                            burn_in=budget.burn_in)
        rows = check_tightness(spec, dom, cs, cons["K_list"], task["method"], budget, sd, logZ_set=z)
        return {"result": {"rows": rows}, "verdict": {"bound": all(r["ok"] for r in rows)}, "rows": rows}
    if kind == "quasiconvexity":
        L = AffineMap(task["L"])
        perts = [MacroField.hat(AffineMap.zero(spec.m, spec.d), np.asarray(p["amplitude"], float), p["node"],
                                float(p.get("h", 0.5))) for p in cons.get("perturbations", [])]
        if not perts:
            perts = [MacroField.hat(AffineMap.zero(spec.m, spec.d), np.full(spec.m, 0.25), [1] * spec.d)]
        rows = quasiconvexity_probe(spec, L, perts, budget, sd, dom_cfg.get("eps_list", (0.25, 0.125, 0.0625)))
        return {"result": {"rows": rows}, "verdict": {"jensen_gap": all(r["ok"] for r in rows)}, "rows": rows}
    if kind == "nonconvex":
        base = spec.base()
        M = threshold_M(base) + 10.0 if task["M"] == "auto" else float(task["M"])
        rep = run_nonconvexity(base, M, dom_cfg["eps_list"], budget, sd, with_base=bool(cons.get("with_base", True)))
        verdict = {"symmetry": abs(rep.checks["symmetry"]) <= 3 * rep.checks["symmetry_se"]}
        if M > 0:
            verdict["gap_positive"] = rep.verdict == "nonconvex"
        return {"result": rep.to_record(), "verdict": verdict,
                "rows": [{"M": rep.M, "W_id": rep.W_id, "W_minus_id": rep.W_minus_id, "W_0": rep.W_0,
                          "gap": rep.gap, "gap_se": rep.gap_se}]}
    if kind == "ldp":
        v = _field(task["field"], spec)
        W = WTable.gaussian(spec.d, spec.m) if spec.kind == "gaussian_gradient" else \
            WTable.build(spec, cons["W_axes"], dom_cfg["eps_list"], budget=budget, seed=_subseed(sd, "W"))
        chk = ldp_check(spec, v, cons["kappa"], dom_cfg["eps_list"], W, budget, sd)
        rate = rate_functional(spec, v, W=W)
        res = {**chk, "rate": rate}
        return {"result": res, "verdict": {"squeeze": chk["squeeze"], "rate_nonnegative": rate["I"] >= -3 * rate["se"]},
                "rows": [{**r, "target": chk["target"]} for r in chk["rows"]]}
    if kind == "young-gibbs":
        L = AffineMap(task["L"])
        eps = float(dom_cfg["eps"])
        batch = sample_clamped(spec, L, eps, budget, sd, task["boundary"])
        wins = [(tuple(w["center"]), int(w.get("side", 3))) for w in cons["windows"]]
        stats = window_stats(spec, L, eps, wins, batch=batch)
        slopes = [slope_check(s, L) for s in stats]
        dlr = dlr_check(spec, batch, wins[0][0], wins[0][1], sweeps=int(cons.get("dlr_sweeps", 20)),
                        seed=_subseed(sd, "dlr"))
        res = {"windows": [s.to_record() for s in stats], "slope": slopes, "dlr": dlr}
        if spec.kind == "gaussian_gradient":
            res["exact_slope"] = [exact_window_slope(spec, L, eps, c, s) for c, s in wins]
        verdict = {"slope": all(s["pass"] for s in slopes), "dlr": dlr["ok"]}
        rows = [{"center": json.dumps(list(c)), "residual": s["residual"], "se": s["se"]}
                for (c, _), s in zip(wins, slopes)]
        return {"result": res, "verdict": verdict, "rows": rows}
    raise ConfigError("experiment", f"unknown kind {kind!r}")


def _worker(args):
    cfg, task, seed = args
    t0 = time.perf_counter()
    try:
        out = run_task(cfg, task, seed)
        out["error"] = None
    except Exception as exc:  # reported as a compute-stage diagnostic
        out = {"result": None, "verdict": {}, "rows": [], "error": f"{type(exc).__name__}: {exc}"}
    out["wall_time"] = time.perf_counter() - t0
    return _jsonable(out)


# --------------------------------------------------------------------------
# records


def output_dir(cfg: dict, override: str | None = None) -> Path:
    env = os.environ.get("GRADGIBBS_OUT")
    if override:
        return Path(override)
    if env:
        return Path(env)
    return Path(cfg.get("output", os.path.join("runs", cfg["experiment"])))


def _read_records(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    path.write_text(buf.getvalue())


def run_config(cfg: dict, seed: int | None = None, workers: int | None = None, force: bool = False,
               out: str | None = None, echo=print) -> int:
    """Run every task of a validated config; returns the exit code."""
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    h = config_hash(cfg, seed)
    odir = output_dir(cfg, out)
    odir.mkdir(parents=True, exist_ok=True)
    rec_path = odir / RECORDS
    existing = {(r["config_hash"], r["task_id"]): r for r in _read_records(rec_path)}
    tasks = expand_tasks(cfg)
    todo = [(k, t) for k, t in enumerate(tasks) if force or (h, k) not in existing]
    for k, t in enumerate(tasks):
        if (k, t) not in todo:
            echo(f"task {k}: already recorded, skipped")
    args = [(cfg, t, seed) for _, t in todo]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as ex:
            results = list(ex.map(_worker, args))
    else:
        results = [_worker(a) for a in args]
    # single writer, task order
    failed = []
    with rec_path.open("a") as fh, (odir / TIMINGS).open("a") as th:
        for (k, task), res in zip(todo, results):
            rec = {"config_hash": h, "version": __version__, "experiment": cfg["experiment"], "seed": seed,
                   "task_id": k, "task": _jsonable(task), "result": res["result"], "verdict": res["verdict"],
                   "error": res["error"]}
            fh.write(_dumps(rec) + "\n")
            th.write(_dumps({"config_hash": h, "task_id": k, "wall_time": res["wall_time"]}) + "\n")
            existing[(h, k)] = rec
            ok = res["error"] is None and all(bool(v) for v in res["verdict"].values())
            status = "ok" if ok else ("error" if res["error"] else "FAIL")
            echo(f"task {k} {_jsonable(task)}: {status}" + (f" ({res['error']})" if res["error"] else ""))
            if not ok:
                failed.append(k)
    all_rows = []
    for (k, _), res in zip(todo, results):
        all_rows += [{"task_id": k, **r} for r in res["rows"]]
    _write_csv(odir / f"{cfg['experiment']}_{h[:12]}.csv", all_rows)
    for k in range(len(tasks)):
        rec = existing.get((h, k))
        if rec is not None and (k, tasks[k]) not in todo:
            if rec.get("error") or not all(bool(v) for v in rec.get("verdict", {}).values()):
                failed.append(k)
    if failed:
        echo(f"failing tasks: {sorted(set(failed))}")
        return 1
    return 0


# --------------------------------------------------------------------------
# report


def _kappa_flags(recs: list[dict]) -> list[dict]:
    """W_kappa must not increase with kappa: a larger neighbourhood holds more mass.

    Judged per scale on the shared eps grid (nested sets, same eps) and on the
    limits within three standard errors.
    """
    groups: dict = {}
    for r in recs:
        res = r.get("result") or {}
        if res.get("kappa") is None:
            continue
        key = (res.get("formulation"), json.dumps(res.get("L")))
        groups.setdefault(key, []).append(res)
    out = []
    for (form, L), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda x: float(x["kappa"]))
        mono = True
        for a, b in zip(rs, rs[1:]):
            pa = dict(zip(a["eps_list"], zip(a["per_eps"], a["per_eps_se"])))
            for e, (vb, sb) in zip(b["eps_list"], zip(b["per_eps"], b["per_eps_se"])):
                if e in pa and vb - pa[e][0] > 3 * math.hypot(sb, pa[e][1]) + 1e-12:
                    mono = False
            if float(b["value"]) - float(a["value"]) > 3 * math.hypot(a["se"], b["se"]) + 1e-12:
                mono = False
        out.append({"formulation": form, "L": L, "kappa": [float(x["kappa"]) for x in rs],
                    "W": [float(x["value"]) for x in rs], "monotone": mono})
    return out


def build_report(root: Path) -> tuple[str, dict[str, list[dict]]]:
    files = sorted(root.rglob(RECORDS))
    recs = [r for f in files for r in _read_records(f)]
    if not recs:
        raise FileNotFoundError(f"no records under {root}")
    by_kind: dict[str, list[dict]] = {}
    for r in recs:
        by_kind.setdefault(r["experiment"], []).append(r)
    lines, bundle = [], {}
    for kind in sorted(by_kind):
        rs = by_kind[kind]
        lines.append(f"== {kind} ({len(rs)} records)")
        rows = []
        for r in rs:
            res = r.get("result") or {}
            row = {"config_hash": r["config_hash"][:12], "task_id": r["task_id"],
                   "task": json.dumps(r["task"], sort_keys=True),
                   "verdict": "error" if r.get("error") else
                   ("pass" if all(bool(v) for v in r["verdict"].values()) else "fail")}
            if kind == "free-energy":
                row.update(value=res.get("value"), se=res.get("se"), oracle=res.get("oracle"))
            elif kind == "nonconvex":
                row.update(gap=res.get("gap"), gap_se=res.get("gap_se"), M=res.get("M"))
            elif kind == "ldp":
                row.update(target=res.get("target"), deviation=res.get("deviation"), tolerance=res.get("tolerance"))
            elif kind == "subadditivity":
                row.update(slack=res.get("slack"), se=res.get("se"))
            rows.append(row)
        keys = list(rows[0])
        lines.append("  ".join(keys))
        for row in rows:
            lines.append("  ".join(f"{row[k]:.6g}" if isinstance(row[k], float) else str(row[k]) for k in keys))
        bundle[kind] = rows
        if kind == "free-energy":
            flags = _kappa_flags(rs)
            if flags:
                bundle["kappa-sweep"] = flags
                lines.append("-- W_kappa vs kappa")
                for f in flags:
                    tag = "" if f["monotone"] else "   NON-MONOTONE"
                    lines.append(f"{f['formulation']} L={f['L']}: " +
                                 ", ".join(f"{k:g}:{w:.6g}" for k, w in zip(f["kappa"], f["W"])) + tag)
        lines.append("")
    return "\n".join(lines), bundle


# --------------------------------------------------------------------------
# click


@click.group()
@click.version_option(__version__, prog_name="gradgibbs")
def main():
    """Gradient Gibbs lattice experiments."""


@main.command("run")
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=None, help="Worker processes (default: logical cores).")
@click.option("--force", is_flag=True, help="Recompute tasks already recorded.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
def run_cmd(config, seed, workers, force, out):
    """Run the experiment described by CONFIG."""
    try:
        with open(config) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        click.echo(f"config error: <file>: {config} not found", err=True)
        sys.exit(2)
    except json.JSONDecodeError as exc:
        click.echo(f"config error: <file>: line {exc.lineno} column {exc.colno}: {exc.msg}", err=True)
        sys.exit(2)
    try:
        cfg = validate_config(raw)
        expand_tasks(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    sys.exit(run_config(cfg, seed, workers, force, out, echo=click.echo))


@main.command("report")
@click.argument("records_dir", type=click.Path(file_okay=False))
def report_cmd(records_dir):
    """Summarize every record under RECORDS_DIR and write a CSV bundle to RECORDS_DIR/report."""
    root = Path(records_dir)
    try:
        text, bundle = build_report(root)
    except FileNotFoundError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(text)
    rdir = root / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    for kind, rows in bundle.items():
        _write_csv(rdir / f"{kind}.csv", rows)
    sys.exit(0)


@main.command("check-constants")
@click.option("--p", "p", type=float, default=2.0, show_default=True)
@click.option("--m", "m", type=int, default=1, show_default=True)
@click.option("--c", "c", type=float, default=1.0, show_default=True)
@click.option("--C", "C", type=float, default=2.0, show_default=True)
@click.option("--r", "r", type=float, default=2.0, show_default=True)
@click.option("--R0", "R0", type=float, default=1.0, show_default=True)
@click.option("--L", "L", type=float, default=0.0, show_default=True, help="Norm of the affine map.")
@click.option("--d", "d", type=int, default=1, show_default=True)
def check_constants_cmd(p, m, c, C, r, R0, L, d):
    """Print c(p,m), b, B(L) and D for the given growth constants."""
    g = GrowthConstants(c, p, C, r, m, R0)
    try:
        bc = bound_constants(g, L, d)
    except PotentialError as exc:
        click.echo(f"invalid constants: {exc}", err=True)
        sys.exit(2)
    for name, val in (("c(p,m)", bc["c_pm"]), ("b", bc["b"]), ("B(L)", bc["B"]), ("D", bc["D"])):
        click.echo(f"{name:<8}{val:.12g}")
    sys.exit(0)


if __name__ == "__main__":
    main()
