"""Execute experiment plans: parallel over (cell, seed), reduce in seed order, write CSV/JSON.

Per-seed work is a pure function of (plan, cell, seed), so the bytes of every
output file are independent of the worker count.  The manifest records the
normalized plan and every seed; ``replay`` reruns it and compares digests.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import math
import os
import time
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import RfimError, ValidationError
from ..exact import ModelParams, gibbs_state
from ..ibp import ibp_suite
from ..lattice import build_lattice
from ..observables import (CSV_COLUMNS, Ensemble, Estimate, abs_delta_moment, conditional_gap, delta_moment,
                           gg_residual, gg_terms, jackknife, mean_estimate,
                           overlap_moments, overlap_variance_from_moments, pressure_derivative, self_overlap)
from ..replicas import parse_overlap_function
from .plan import Cell, ExperimentPlan, ObservableSpec, load_plan
from .trend import TrendReport, trend_report, var_fn_scaling

MANIFEST = "manifest.json"
SUMMARY = "summary.json"
MANIFEST_FORMAT = "rfimlab-manifest/1"
LOGZ_OBSERVABLES = ("q-consistency", "var-Fn-scaling", "fkg-scan")


class ExecutionError(RfimError):
    pass


@dataclass
class RunResult:
    out_dir: Path
    rows: dict[str, list[dict]]
    trends: list[TrendReport]
    failures: list[dict]
    outputs: dict[str, str]  # file name -> sha256
    manifest: dict = field(repr=False, default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


# ---------------------------------------------------------------- per-seed work


@functools.lru_cache(maxsize=8)
def _plan_from_text(text: str) -> ExperimentPlan:
    return load_plan(text)


def observable_engine(cell: Cell, name: str) -> str:
    """Engine actually used for one observable on one cell.

    log Z based observables fall back from mcmc to the transfer matrix on chains.
    """
    if name in LOGZ_OBSERVABLES and cell.engine == "mcmc":
        if cell.d == 1:
            return "transfer-matrix"
        raise ValidationError(f"{name} needs log Z and {cell.label} is mcmc with d > 1")
    return cell.engine


def _ensemble(plan: ExperimentPlan, cell: Cell, seed: int, engine: str) -> Ensemble:
    return Ensemble(build_lattice(cell.d, cell.n), ModelParams(cell.beta, cell.h), plan.profile, cell.dist,
                    (seed,), engine, plan.sampler)


def _replicas_needed(plan: ExperimentPlan) -> int:
    m = 1
    for o in plan.observables:
        if o.name == "overlap-variance":
            m = max(m, 4)
        elif o.name == "gg-residual":
            m = max(m, o.get("m") + 1)
    return m


def _seed_records(plan: ExperimentPlan, cell: Cell, seed: int) -> dict:
    """{observable label: per-seed record} or {label: {"error": msg}}."""
    out: dict = {}
    states: dict[str, object] = {}
    samples = None
    reals = []

    def realization(ens):
        if not reals:
            reals.append(ens.realization(seed))
        return reals[0]

    def state(engine):
        if engine not in states:
            states[engine] = gibbs_state(ens.spec, ens.params, real, engine)
        return states[engine]

    for o in plan.observables:
        if o.name == "ibp-suite":
            continue
        try:
            eng = observable_engine(cell, o.name)
            ens = _ensemble(plan, cell, seed, eng)
            real = realization(ens)
            if eng == "mcmc" and samples is None and o.name in ("overlap-variance", "gg-residual",
                                                                "delta-self-averaging"):
                samples = ens.samples(seed, _replicas_needed(plan))
            if o.name == "constant":
                rec = [o.get("value")]
            elif o.name == "overlap-variance":
                src = samples[:, :4] if eng == "mcmc" else state(eng)
                rec = list(overlap_moments(src, real.weights))
            elif o.name == "gg-residual":
                m, f = o.get("m"), parse_overlap_function(str(o.get("f")))
                if eng == "mcmc":
                    rec = list(gg_terms(samples[:, : m + 1], m, f, real.weights))
                else:
                    rec = list(gg_terms(state(eng), m, f))
            elif o.name == "delta-self-averaging":
                if eng == "mcmc":
                    d = samples[:, 0].astype(float) @ real.g / real.g.size
                    rec = {"delta": float(d.mean()), "fd": None, "series": d.tolist()}
                else:
                    dm = delta_moment(state(eng), real)
                    rec = {"delta": dm, "fd": abs(dm - pressure_derivative(ens, seed, o.get("step")))}
            elif o.name == "q-consistency":
                st = state(eng)
                dp = pressure_derivative(ens, seed, o.get("step"))
                cond = conditional_gap(st, cell.dist) if cell.dist.kind in ("rademacher", "gaussian") else None
                rec = [overlap_moments(st)[0], dp, self_overlap(st.weights), cond]
            elif o.name == "fkg-scan":
                st = state(eng)
                mloc = st.site_means
                T = st.pair_means - np.outer(mloc, mloc)
                off = ~np.eye(T.shape[0], dtype=bool)
                rec = [float(T[off].min())]
            elif o.name == "var-Fn-scaling":
                rec = [state(eng).logZ]
            else:  # pragma: no cover - names are validated
                raise ValidationError(f"unknown observable {o.name}")
            out[o.label] = rec
        except Exception as exc:  # graceful degradation: recorded, siblings continue
            out[o.label] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


def _task(args):
    text, cell_index, seed = args
    plan = _plan_from_text(text)
    return _seed_records(plan, plan.cells[cell_index], seed)


def _abs_task(args):
    text, cell_index, seed, center = args
    plan = _plan_from_text(text)
    cell = plan.cells[cell_index]
    try:
        ens = _ensemble(plan, cell, seed, cell.engine)
        return abs_delta_moment(ens.state(seed), ens.realization(seed), center)
    except Exception as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _ibp_task(args):
    mc_samples, seed = args
    return [r.to_dict() for r in ibp_suite(mc_samples=mc_samples, seed=seed)]


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# ---------------------------------------------------------------- reduction


def _csv_row(label: str, cell: Cell | None, profile: str, est: Estimate, count: int) -> dict:
    """``variance`` is count * SE^2: the between-seed variance for plain means."""
    var = count * est.se**2 if math.isfinite(est.se) else float("nan")
    if cell is None:
        return dict(observable=label, n="", d="", beta="", h="", profile=profile, dist="", mean=est.value,
                    variance=var, SE=est.se, seeds=count)
    return dict(observable=label, n=cell.n, d=cell.d, beta=cell.beta, h=cell.h, profile=profile,
                dist=cell.dist.name, mean=est.value, variance=var, SE=est.se, seeds=count)


def _reduce(o: ObservableSpec, cell: Cell, recs: list, profile: str, abs_devs: list | None) -> list[dict]:
    n = len(recs)
    lab = o.label

    def row(suffix, est):
        return _csv_row(lab + suffix, cell, profile, est, n)

    if o.name == "constant":
        v = np.array([r[0] for r in recs])
        return [row("", Estimate(float(v.mean()), float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0))]
    if o.name == "overlap-variance":
        rep = overlap_variance_from_moments(np.array(recs))
        return [row("", rep.nu_variance), row(".thermal", rep.thermal), row(".disorder", rep.disorder),
                row(".nu_r12", rep.nu_r12)]
    if o.name == "gg-residual":
        T = np.array(recs)
        return [row("", gg_residual(T, o.get("m")))]
    if o.name == "delta-self-averaging":
        rows = [row("", mean_estimate(abs_devs)), row(".nu_delta", mean_estimate([r["delta"] for r in recs]))]
        fds = [r["fd"] for r in recs if r["fd"] is not None]
        if fds:
            rows.append(row(".fd_error", Estimate(float(max(fds)), 0.0)))
        return rows
    if o.name == "q-consistency":
        A = np.array([r[:3] for r in recs], dtype=float)
        r12, dp, Q = A[:, 0], A[:, 1], A[:, 2]
        h = cell.h
        gap = mean_estimate(dp - h * (Q - r12))
        rows = []
        if recs[0][3] is not None:
            rows.append(row("", mean_estimate([r[3] for r in recs])))
        else:
            rows.append(row("", gap))
        rows += [row(".gap", gap), row(".gap_unit", mean_estimate(dp - h * (1.0 - r12))),
                 row(".nu_r12", mean_estimate(r12)), row(".self_overlap", mean_estimate(Q))]
        return rows
    if o.name == "fkg-scan":
        v = np.array([r[0] for r in recs])
        return [row("", mean_estimate(v)), row(".min", Estimate(float(v.min()), 0.0))]
    if o.name == "var-Fn-scaling":
        F = np.array([r[0] for r in recs])
        V = cell.n**cell.d
        if np.ptp(F) == 0:
            est = Estimate(0.0, 0.0)
        else:
            D = F - F.mean()
            jk = jackknife(np.column_stack([D, D * D]), lambda c: c[1] - c[0] ** 2)
            est = Estimate(float(np.var(F, ddof=1) / V), jk.se / V)
        return [row("", est), row(".pressure", mean_estimate(F / V))]
    raise ValidationError(f"unknown observable {o.name}")  # pragma: no cover


ABS_TREND_PREFIXES = ("gg-residual", "q-consistency")


def _trend_absolute(label: str) -> bool:
    return label.startswith(ABS_TREND_PREFIXES) and not label.endswith((".nu_r12", ".self_overlap"))


def trends_from_rows(rows: dict[str, list[dict]], factors: dict[str, float] | None = None) -> list[TrendReport]:
    """One TrendReport per (observable row, ladder group) with at least two n values."""
    factors = factors or {}
    out = []
    for obs_file in sorted(rows):
        ladders: dict[tuple, list] = defaultdict(list)
        for r in rows[obs_file]:
            if r["n"] == "" or r["observable"].endswith((".fd_error", ".min")):
                continue
            key = (r["observable"], int(r["d"]), float(r["beta"]), float(r["h"]), r["profile"], r["dist"])
            ladders[key].append((int(r["n"]), float(r["mean"]), float(r["SE"])))
        for key, pts in sorted(ladders.items()):
            if len(pts) < 2:
                continue
            label = key[0]
            group = dict(zip(("d", "beta", "h", "profile", "dist"), key[1:]))
            if label.startswith("var-Fn-scaling") and not label.endswith(".pressure") and len(pts) >= 3:
                out.append(var_fn_scaling(pts, factors.get(label, 4.0), label, group))
            else:
                out.append(trend_report(label, pts, group, _trend_absolute(label)))
    return out


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _sha(data: str) -> str:
    return hashlib.sha256(data.encode()).hexdigest()


def _file_key(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label).strip("_")


def _ensure_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ExecutionError(f"output directory {out_dir} is not writable: {exc}") from exc


def run_plan(plan: ExperimentPlan, out_dir, workers: int = 1) -> RunResult:
    """Execute every cell, write CSV/JSON outputs and the manifest."""
    out_dir = Path(out_dir)
    _ensure_writable(out_dir)
    t0 = time.perf_counter()
    text = json.dumps(plan.to_document(), sort_keys=True)
    cells = plan.cells
    cell_obs = [o for o in plan.observables if o.name != "ibp-suite"]

    tasks = [(text, c.index, s) for c in cells for s in c.seeds] if cell_obs else []
    results = _map(_task, tasks, workers)
    per_cell: dict[int, list[dict]] = defaultdict(list)
    for (_, ci, _), rec in zip(tasks, results):
        per_cell[ci].append(rec)

    failures: list[dict] = []
    good: dict[tuple[int, str], list] = {}
    for c in cells:
        for o in cell_obs:
            recs = [r[o.label] for r in per_cell[c.index]]
            errs = [(s, r["error"]) for s, r in zip(c.seeds, recs) if isinstance(r, dict) and "error" in r]
            if errs:
                failures.append({"cell": c.label, "observable": o.label, "seeds_failed": len(errs),
                                 "first_seed": errs[0][0], "error": errs[0][1]})
                continue
            good[(c.index, o.label)] = recs

    # second pass for <|Delta - nu(Delta)|>
    abs_devs: dict[tuple[int, str], list] = {}
    second = []
    for c in cells:
        for o in cell_obs:
            if o.name != "delta-self-averaging" or (c.index, o.label) not in good:
                continue
            recs = good[(c.index, o.label)]
            center = float(np.mean([r["delta"] for r in recs]))
            if c.engine == "mcmc":
                abs_devs[(c.index, o.label)] = [float(np.mean(np.abs(np.array(r["series"]) - center)))
                                                for r in recs]
            else:
                second += [((c.index, o.label), (text, c.index, s, center)) for s in c.seeds]
    vals = _map(_abs_task, [t for _, t in second], workers)
    for (key, _), v in zip(second, vals):
        abs_devs.setdefault(key, []).append(v)
    for key, v in list(abs_devs.items()):
        bad = [x for x in v if isinstance(x, dict)]
        if bad:
            c = cells[key[0]]
            failures.append({"cell": c.label, "observable": key[1], "seeds_failed": len(bad),
                             "first_seed": None, "error": bad[0]["error"]})
            good.pop(key, None)

    rows: dict[str, list[dict]] = defaultdict(list)
    profile = plan.profile.name
    for o in cell_obs:
        for c in cells:
            if (c.index, o.label) in good:
                rows[o.label] += _reduce(o, c, good[(c.index, o.label)], profile, abs_devs.get((c.index, o.label)))

    ibp_reports = None
    for o in plan.observables:
        if o.name != "ibp-suite":
            continue
        try:
            ibp_reports = _map(_ibp_task, [(o.get("mc_samples"), plan.seed_base)], 1)[0]
        except Exception as exc:
            failures.append({"cell": None, "observable": o.label, "seeds_failed": 0, "first_seed": None,
                             "error": f"{type(exc).__name__}: {exc}"})
            continue
        for r in ibp_reports:
            lab = f"ibp-suite[{'x'.join(r['dists'])}:{r['function']}:{r['method']}]"
            se = (r["se"] or {}).get("residual", 0.0)
            rows[o.label].append(_csv_row(lab, None, "", Estimate(r["residual"], se), 1))

    factors = {o.label: o.get("factor") for o in plan.observables if o.name == "var-Fn-scaling"}
    trends = trends_from_rows(rows, factors)

    outputs: dict[str, str] = {}
    files: dict[str, str] = {}
    if "csv" in plan.formats:
        for label in sorted(rows):
            files[f"{_file_key(label)}.csv"] = csv_text(rows[label])
    if "json" in plan.formats:
        summary = {"plan": plan.name, "version": __version__, "trends": [t.to_dict() for t in trends],
                   "rows": {k: rows[k] for k in sorted(rows)}, "failures": failures}
        if ibp_reports is not None:
            summary["ibp"] = ibp_reports
        files[SUMMARY] = _json_text(summary)
    for name, data in files.items():
        (out_dir / name).write_text(data)
        outputs[name] = _sha(data)

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "plan": plan.to_document(),
        "cells": [{"index": c.index, "label": c.label, "engine": c.engine, "seeds": list(c.seeds)} for c in cells],
        "failures": failures,
        "outputs": outputs,
        "workers": workers,
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
    }
    (out_dir / MANIFEST).write_text(_json_text(manifest))
    return RunResult(out_dir, dict(rows), trends, failures, outputs, manifest)


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    data = json.loads(p.read_text())
    if data.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{p}: not a run manifest")
    return data


@dataclass
class ReplayResult:
    identical: bool
    mismatched: list[str]
    result: RunResult


def replay(manifest_path, out_dir, workers: int = 1) -> ReplayResult:
    """Rerun the recorded plan and compare every output digest."""
    man = read_manifest(manifest_path)
    plan = load_plan(json.dumps(man["plan"]))
    recorded = [list(c["seeds"]) for c in man["cells"]]
    if [list(c.seeds) for c in plan.cells] != recorded:
        raise ValidationError("manifest seeds do not match the recorded plan")
    res = run_plan(plan, out_dir, workers)
    bad = sorted(k for k in set(man["outputs"]) | set(res.outputs) if man["outputs"].get(k) != res.outputs.get(k))
    return ReplayResult(not bad, bad, res)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def format_failure(exc: BaseException) -> str:
    return "".join(traceback.format_exception_only(type(exc), exc)).strip()


def with_engine(plan: ExperimentPlan, engine: str) -> ExperimentPlan:
    """The same plan on another engine, re-validated (capacity checks included)."""
    doc = plan.to_document()
    doc["engine"]["kind"] = engine
    return load_plan(json.dumps(doc))
