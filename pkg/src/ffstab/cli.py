"""Command-line driver: configuration, run manifests and report files.

Configuration files are YAML documents with nested sections (JSON documents
are valid YAML and load the same way). Every subcommand writes
``manifest.json`` first, then its reports, then finalises the manifest.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__, spectral
from .errors import CapacityError, ConfigError, FFStabError
from .lattice import partition
from .models import HamiltonianSpec, build_model, build_perturbation, load_custom

STATUS_PASS, STATUS_ERROR, STATUS_FAIL = 0, 1, 2

SUBCOMMANDS = ("diagnose", "tqo", "localgap", "flow", "bounds", "partition", "sweep", "stability", "demos")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    model: Any = "PaperChain(2)"
    perturbation: dict = field(default_factory=lambda: {"kind": "random", "J": 0.01,
                                                        "decay": {"kind": "exponential", "mu": 1.0},
                                                        "r_max": 1})
    seed: int = 0
    tolerances: dict = field(default_factory=lambda: {"clusterTol": 1e-10, "flowTol": 1e-8, "auditSlack": 1e-9})
    grids: dict = field(default_factory=lambda: {"sGrid": {"start": 0.0, "stop": 1.0, "num": 21}})
    tqo: dict = field(default_factory=lambda: {"u": 0, "r": 1})
    Lstar: int | None = None
    gammaPrime: float | None = None
    stability: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    demos: dict = field(default_factory=dict)
    out: str = "run"
    threads: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TOP = {f.name for f in dataclasses.fields(RunConfig)}


def _merge(base: dict, upd: dict) -> dict:
    out = dict(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON config, apply overrides and validate."""
    doc: dict = {}
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError("config", f"not valid YAML/JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config", "top level must be a mapping")
    merged = RunConfig().to_dict()
    for upd in (doc, overrides or {}):
        pert = upd.get("perturbation")
        # a different perturbation kind starts from an empty directive
        if isinstance(pert, dict) and pert.get("kind", merged["perturbation"].get("kind")) != \
                merged["perturbation"].get("kind"):
            merged["perturbation"] = {}
        merged = _merge(merged, upd)
    unknown = sorted(set(merged) - _TOP)
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration field")
    cfg = RunConfig(**merged)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", "must be an integer in [0, 2^64)")
    for k, v in cfg.tolerances.items():
        if k not in ("clusterTol", "flowTol", "auditSlack"):
            raise ConfigError(f"tolerances.{k}", "unknown tolerance")
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"tolerances.{k}", "must be positive")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ConfigError("threads", "must be a positive integer")
    if cfg.gammaPrime is not None and not cfg.gammaPrime > 0:
        raise ConfigError("gammaPrime", "must be positive")
    grid = s_grid(cfg)
    if not grid or grid[0] < 0 or grid[-1] > 1:
        raise ConfigError("grids.sGrid", "must lie in [0, 1]")
    p = cfg.perturbation
    if not isinstance(p, dict) or "kind" not in p:
        raise ConfigError("perturbation.kind", "missing perturbation kind")
    if "J" in p and (not isinstance(p["J"], (int, float)) or p["J"] < 0):
        raise ConfigError("perturbation.J", "must be non-negative")


def s_grid(cfg: RunConfig) -> list[float]:
    g = cfg.grids.get("sGrid", [0.0, 1.0])
    if isinstance(g, dict):
        try:
            num = int(g.get("num", 21))
            return [round(float(x), 12) for x in np.linspace(float(g.get("start", 0.0)), float(g.get("stop", 1.0)), num)]
        except (TypeError, ValueError):
            raise ConfigError("grids.sGrid", "bad start/stop/num") from None
    try:
        return sorted(float(x) for x in g)
    except (TypeError, ValueError):
        raise ConfigError("grids.sGrid", "must be a list of numbers") from None


def make_model(cfg: RunConfig) -> HamiltonianSpec:
    m = cfg.model
    try:
        return build_model(m)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError("model", str(e)) from None


def make_perturbation(cfg: RunConfig, H: HamiltonianSpec):
    p = dict(cfg.perturbation)
    if p.get("kind") == "none":
        return None
    if p.get("kind") == "custom" and "file" in p:
        return load_custom(p["file"])[1]
    try:
        return build_perturbation(p, H, seed=p.get("seed", cfg.seed))
    except ConfigError:
        raise
    except (KeyError, TypeError) as e:
        raise ConfigError(f"perturbation.{e}", "missing or malformed field") from None


# ---------------------------------------------------------------------------
# output


def fmt(x) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n", encoding="utf-8", newline="")


class Manifest:
    """Run manifest, written before any output and finalised at the end."""

    def __init__(self, out: Path, subcommand: str, cfg: RunConfig):
        self.path = out / "manifest.json"
        self.doc = {"artifact": "ffstab", "version": __version__, "subcommand": subcommand,
                    "config": cfg.to_dict(), "seed": cfg.seed,
                    "started": datetime.now(timezone.utc).isoformat(), "status": "running",
                    "stages": {}, "verdicts": {}, "outputs": {}}
        self.flush()

    def flush(self) -> None:
        self.path.write_text(json.dumps(_clean(self.doc), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def stage(self, name: str, seconds: float) -> None:
        self.doc["stages"][name] = self.doc["stages"].get(name, 0.0) + seconds

    def finish(self, status: str, verdicts: dict, outputs: list[Path]) -> None:
        self.doc["status"] = status
        self.doc["verdicts"] = verdicts
        self.doc["finished"] = datetime.now(timezone.utc).isoformat()
        self.doc["outputs"] = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(outputs)}
        self.flush()


class Run:
    def __init__(self, cfg: RunConfig, out: Path, manifest: Manifest):
        self.cfg, self.out, self.manifest = cfg, out, manifest
        self.files: list[Path] = []
        self.verdicts: dict = {}

    def timed(self, name, fn):
        t = time.perf_counter()
        try:
            return fn()
        finally:
            self.manifest.stage(name, time.perf_counter() - t)

    def csv(self, name, header, rows):
        p = self.out / name
        write_csv(p, header, rows)
        self.files.append(p)

    def json(self, name, doc):
        p = self.out / name
        write_json(p, doc)
        self.files.append(p)


# ---------------------------------------------------------------------------
# subcommands


def _gap_radii(cfg: RunConfig, H) -> list[int]:
    r = cfg.grids.get("radii")
    return [int(x) for x in r] if r else list(range(1, H.lattice.L + 1))


def cmd_diagnose(run: Run) -> None:
    from .spectral import frustration_check, local_gap_profile, lowest_band
    H = make_model(run.cfg)
    fr = run.timed("frustration", lambda: frustration_check(H))
    band = run.timed("spectrum", lambda: lowest_band(H.matrix(), extra=1, seed=run.cfg.seed))
    g = band.ground_degeneracy
    E = band.eigenvalues
    gap = float(E[g] - E[g - 1]) if len(E) > g else math.inf
    lg = run.timed("localgap", lambda: local_gap_profile(H, _gap_radii(run.cfg, H), threads=run.cfg.threads))
    run.csv("localgap.csv", ["u", "r", "gamma"], list(lg.rows()))
    run.json("diagnose.json", {"model": str(H.tag), "E0": float(E[0]), "gap": gap, "degeneracy": g,
                               "frustration": dataclasses.asdict(fr), "gamma_of_r": lg.gamma_of_r,
                               "local_gap_class": lg.fit_class})
    print(f"model = {H.tag}")
    print(f"E0 = {float(E[0]) + 0.0:.12g}")
    print(f"gap = {gap:.12g}")
    print(f"degeneracy = {g}")
    print(f"frustration_free = {fr.passed}")
    run.verdicts["frustration_free"] = fr.passed


def cmd_tqo(run: Run) -> None:
    from .conditions import tqo_profile
    H = make_model(run.cfg)
    t = run.cfg.tqo
    us = t.get("u", 0)
    us = us if isinstance(us, list) else [us]
    rows, summaries = [], []
    for u in us:
        prof = run.timed("tqo", lambda: tqo_profile(H, int(u), int(t.get("r", 1)), run.cfg.Lstar,
                                                    eps=float(t.get("eps", 0.0)), seed=run.cfg.seed,
                                                    threads=run.cfg.threads))
        for x in prof.rows:
            rows.append((prof.u, prof.r, x.ell, x.delta_op, x.delta_state, x.method, x.restarts))
            print(f"u={prof.u} r={prof.r} ell={x.ell} delta0_op={x.delta_op:.6g} delta0_state={x.delta_state:.6g}")
        summaries.append({"u": prof.u, "r": prof.r, "decay_class": prof.decay_class, "passes": prof.passes,
                          "estimator_order": all(x.delta_state <= x.delta_op + 1e-9 for x in prof.rows)})
    run.csv("tqo_profile.csv", ["u", "r", "ell", "delta0_op", "delta0_state", "method", "restarts"], rows)
    run.json("tqo.json", {"model": str(H.tag), "profiles": summaries})
    run.verdicts["local_tqo"] = all(s["passes"] for s in summaries)
    run.verdicts["estimator_order"] = all(s["estimator_order"] for s in summaries)


def cmd_localgap(run: Run) -> None:
    from .stability import local_gap_stage
    H = make_model(run.cfg)
    fam = run.cfg.stability.get("gapFamily")
    prof, summary = run.timed("localgap", lambda: local_gap_stage(H, _gap_radii(run.cfg, H), fam, run.cfg.threads))
    run.csv("localgap.csv", ["u", "r", "gamma"], list(prof.rows()))
    run.json("localgap.json", {"model": str(H.tag), **summary})
    for r, g in prof.gamma_of_r.items():
        print(f"gamma({r}) = {g:.12g}")
    print(f"class = {prof.fit_class}")
    run.verdicts["local_gap"] = summary["passed"]


def cmd_flow(run: Run) -> None:
    from .flow import FilterSpec, spectral_flow, transform_decompose
    from .flow.decompose import anchor_projectors, anchor_split, centred_shells, w_decomposition
    from .flow.filter import filter_properties
    from .qop import DENSE_CAP
    from .rng import stream
    from .spectral import diagonalize, hamiltonian_at

    cfg = run.cfg
    H = make_model(cfg)
    V = make_perturbation(cfg, H)
    grid = s_grid(cfg)
    s_top = grid[-1]
    tol = float(cfg.tolerances.get("flowTol", 1e-8))
    report: dict = {"model": str(H.tag), "s_grid": grid}
    fl = run.timed("flow", lambda: spectral_flow(H, V, grid, tol=tol, seed=cfg.seed))
    report["flow"] = {"max_residual": fl.max_residual, "residuals": fl.residuals,
                      "unitarity": max(fl.unitarity), "step_control": fl.step_control}
    if H.dim <= DENSE_CAP:
        def filt():
            M = hamiltonian_at(H, V, s_top)
            M = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
            data = diagonalize(M, method="dense")
            gap = float(data.eigenvalues[fl.g] - data.eigenvalues[fl.g - 1])
            gp = cfg.gammaPrime if cfg.gammaPrime else gap / 2
            rng = stream(cfg.seed, "cli", "flow", "filter")
            G = rng.standard_normal(M.shape) + 1j * rng.standard_normal(M.shape)
            O = (G + G.conj().T) / 2
            return {"gamma_prime": gp, **filter_properties(O, data, FilterSpec(min(gp, gap)), fl.g)}
        report["filter"] = run.timed("filter", filt)
    tp = run.timed("decompose", lambda: transform_decompose(H, V, s_top, fl))
    report["decomposition"] = {"c": tp.c, "E0_check": tp.E0_check, "commutator": tp.commutator,
                               "reconstruction": tp.reconstruction, "WP0": tp.WP0,
                               "delta_norm": tp.delta_norm, "W_norm": tp.W_norm}
    split = run.timed("split", lambda: anchor_split(tp.X, H))
    rows = []
    first = None
    for u in split.anchors():
        shells, norms = centred_shells(split, u, H, tp.Q0)
        rows.extend((u, r, n) for r, n in sorted(norms.items()))
        if first is None:
            first = (u, shells)
    run.csv("shells.csv", ["u", "r", "norm"], rows)
    if first is not None:
        u, shells = first
        L = H.lattice.L
        P = anchor_projectors(H, u, tp.Q0, L)
        wd = run.timed("w_decomposition", lambda: w_decomposition(shells, P, H.hilbert, L, u))
        report["w_audit"] = {"u": u, **wd.audits, "w": wd.w()}
    run.json("flow_report.json", report)
    v = run.verdicts
    v["flow_residual"] = fl.max_residual <= tol
    v["commutator"] = tp.commutator <= 1e-8
    v["reconstruction"] = tp.reconstruction <= 1e-12
    v["WP0"] = tp.WP0 <= 1e-10
    if "filter" in report:
        f = report["filter"]
        v["filter"] = f["fixes_H"] <= 1e-12 and f["leak"] <= 1e-10 and f["norm_excess"] <= 1e-10
    if "w_audit" in report:
        a = report["w_audit"]
        v["E_family"] = a["E_complete"] <= 1e-10 and a["E_orthogonal"] <= 1e-10
        v["YZ"] = a["annihilation"] <= 1e-10 and a["reconstruction"] <= 1e-10
    for k, val in v.items():
        print(f"{k} = {val}")


def _bound_params(cfg: RunConfig):
    from .flow.bound_functions import BoundParams
    b = cfg.bounds
    names = {"mu": "mu", "a": "a", "vA": "v_a", "CF": "C_F", "psiF": "psi_F", "dphiA": "dphi_a",
             "Fa0": "Fa0", "d": "d", "Ca": "C_a", "Fnorm": "F_norm", "CFa": "C_Fa", "phiA": "phi_a"}
    vals = {v: 1.0 for v in names.values()}
    vals["d"] = 1
    for k, v in b.get("params", {}).items():
        if k not in names:
            raise ConfigError(f"bounds.params.{k}", "unknown bound parameter")
        vals[names[k]] = v
    gp = cfg.gammaPrime if cfg.gammaPrime is not None else 1.0
    try:
        return BoundParams.from_dict({**vals, "gamma_prime": gp})
    except (ValueError, TypeError) as e:
        raise ConfigError("bounds.params", str(e)) from None


def cmd_bounds(run: Run) -> None:
    from .flow.bound_functions import NAMES, bound_functions
    cfg = run.cfg
    b = cfg.bounds
    p = _bound_params(cfg)
    names = b.get("name", "G2")
    names = names if isinstance(names, list) else [names]
    args = b.get("arg", [100.0])
    args = args if isinstance(args, list) else [args]
    rows = []
    ctx = {}
    for name in names:
        if name not in NAMES:
            raise ConfigError("bounds.name", f"unknown function {name!r}; choose from {', '.join(NAMES)}")
        if name == "assemble" and not ctx:
            H = make_model(cfg)
            ctx = {"u": int(b.get("u", 0)), "r": int(b.get("r", 0)), "s": float(b.get("s", 1.0)),
                   "lattice": H.lattice}
        for a in args:
            val = run.timed("bounds", lambda: bound_functions(name, float(a), p, **ctx))
            rows.append((name, float(a), float(val)))
            print(f"{val:.17g}" if len(names) * len(args) == 1 else f"{name}({a}) = {val:.17g}")
    run.csv("bounds.csv", ["name", "arg", "value"], rows)
    tel = b.get("telescoping")
    if tel:
        from .flow.telescoping import telescoping_curve
        from .qop import QOperator
        from .rng import stream
        H = make_model(cfg)
        V = make_perturbation(cfg, H)
        u, r = int(tel.get("u", 0)), int(tel.get("r", 0))
        sites = H.hilbert.active([u]) or H.hilbert.active(range(H.n_sites))[:1]
        rng = stream(cfg.seed, "cli", "telescoping")
        D = H.hilbert.sub_dim(sites)
        G = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
        O = QOperator((G + G.conj().T) / 2, tuple(sites), True)
        trows = run.timed("telescoping", lambda: telescoping_curve(
            O, u, r, [int(x) for x in tel.get("rprime", [0, 1, 2])],
            [float(x) for x in tel.get("t", [0.5, 1.0])], float(tel.get("s", 1.0)), H, V))
        run.csv("telescoping.csv", ["rprime", "t", "delta"], trows)
    run.verdicts["evaluated"] = all(math.isfinite(v) for _, _, v in rows)


def cmd_partition(run: Run) -> None:
    from .stability import partition_smallcase_check
    cfg = run.cfg
    H = make_model(cfg)
    radii = cfg.partition.get("r", [1, 2])
    radii = radii if isinstance(radii, list) else [radii]
    reports = []
    for r in radii:
        sch = partition(int(r), H.lattice)
        rep = run.timed(f"partition_r{r}", lambda: partition_smallcase_check(H, sch, int(r)))
        reports.append(rep.to_dict())
        print(f"r={r} classes={sch.class_count} completeness={rep.completeness:.3g} "
              f"orthogonality={rep.orthogonality:.3g} G_vs_H={rep.g_vs_h_min_eig:.6g} "
              f"coloring={rep.coloring_min_eig:.6g} passed={rep.passed}")
        run.verdicts[f"partition_r{r}"] = rep.passed
    run.json("partition_report.json", {"model": str(H.tag), "reports": reports})


def _sweep_rows(table):
    return [[r.s, *r.energies.tolist(), r.splitting, r.gap] for r in table.rows]


def cmd_sweep(run: Run) -> None:
    from .spectral import gap_sweep
    cfg = run.cfg
    H = make_model(cfg)
    V = make_perturbation(cfg, H)
    g = cfg.grids.get("g")
    table = run.timed("sweep", lambda: gap_sweep(H, V, s_grid(cfg), g=g, seed=cfg.seed, threads=cfg.threads))
    run.csv("gap_sweep.csv", table.header(), _sweep_rows(table))
    run.json("sweep.json", {"model": str(H.tag), "g": table.g, "gamma": table.gamma,
                            "first_below_half": table.first_below_half, "min_gap": table.min_gap(),
                            "warnings": table.warnings})
    print(f"gamma = {table.gamma:.12g}")
    print(f"min_gap = {table.min_gap():.12g}")
    run.verdicts["halfGap"] = table.first_below_half is None


def cmd_stability(run: Run) -> None:
    from .stability import ExperimentConfig, main_theorem_experiment
    cfg = run.cfg
    H = make_model(cfg)
    V = make_perturbation(cfg, H)
    st = cfg.stability
    ec = ExperimentConfig(seed=cfg.seed, s_grid=tuple(s_grid(cfg)), w_s=tuple(st.get("wS", [1.0])),
                          tqo_u=int(cfg.tqo.get("u", 0)), tqo_r=int(cfg.tqo.get("r", 1)), L_star=cfg.Lstar,
                          gap_radii=tuple(cfg.grids["radii"]) if cfg.grids.get("radii") else None,
                          gap_family=tuple(st["gapFamily"]) if st.get("gapFamily") is not None else None,
                          M_max=int(st.get("Mmax", 3)), n_random=int(st.get("nRandom", 1000)),
                          rescale=float(st.get("rescale", 0.5)), max_rounds=int(st.get("maxRounds", 4)),
                          audit_anchors=int(st.get("auditAnchors", 1)),
                          gamma_prime_factor=float(st.get("gammaPrimeFactor", 0.5)),
                          low_cutoff=float(st["lowCutoff"]) if st.get("lowCutoff") is not None else None,
                          threads=cfg.threads)
    timings: dict = {}
    try:
        rep = main_theorem_experiment(H, V, ec, timings)
    finally:
        for k, v in timings.items():
            run.manifest.stage(k, v)
    doc = rep.to_dict()
    run.json("stability_report.json", doc)
    run.csv("gap_sweep.csv", doc["sweep"]["header"], doc["sweep"]["rows"])
    run.csv("localgap.csv", ["u", "r", "gamma"], [tuple(e) for e in doc["local_gap"]["entries"]])
    run.csv("tqo_profile.csv", ["u", "r", "ell", "delta0_op", "delta0_state", "method", "restarts"],
            [(doc["tqo"]["u"], doc["tqo"]["r"], x["ell"], x["delta_op"], x["delta_state"], "operator", "")
             for x in doc["tqo"]["rows"]])
    run.csv("w_table.csv", ["s", "u", "r", "w_u"], [(x["s"], x["u"], x["r"], x["w_u"]) for x in doc["w"]["rows"]])
    run.csv("checkpoints.csv", ["s", "gap", "delta_norm", "delta_small", "gap_floor", "half_gap"],
            [(x["s"], x["gap"], x["delta_norm"], x["delta_small"], x["gap_floor"], x["half_gap"])
             for x in doc["checkpoints"]["rows"]])
    cp = doc["checkpoints"]
    pb = doc["partition_bound"]
    print(f"overall = {rep.overall}")
    print(f"J = {rep.J!r} J0 = {pb['J0']!r} c = {pb['c']!r}")
    print(f"gamma = {rep.gamma!r} min_gap = {cp['min_gap']!r}")
    print(f"DeltaSmall = {cp['DeltaSmall']} gapFloor = {cp['gapFloor']} halfGap = {cp['halfGap']}")
    run.verdicts.update(rep.verdicts)
    run.verdicts["overall_stable"] = rep.overall == "stable"


def cmd_demos(run: Run) -> None:
    from .stability import instability_demos
    cfg = run.cfg
    which = cfg.demos.get("which", ["chain", "pinned-ising", "ising-tqo"])
    which = which if isinstance(which, list) else [which]
    res = run.timed("demos", lambda: instability_demos(which, seed=cfg.seed))
    out = {}
    for name, d in res.items():
        d = dict(d)
        if "sweep" in d:
            t = d.pop("sweep")
            run.csv(f"{name}_gap_sweep.csv", t.header(), _sweep_rows(t))
        out[name] = d
        print(f"{name}: passed = {d['passed']}")
        run.verdicts[name] = d["passed"]
    run.json("demos_report.json", out)


COMMANDS = {"diagnose": cmd_diagnose, "tqo": cmd_tqo, "localgap": cmd_localgap, "flow": cmd_flow,
            "bounds": cmd_bounds, "partition": cmd_partition, "sweep": cmd_sweep,
            "stability": cmd_stability, "demos": cmd_demos}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError("arguments", message)


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ffstab", description="Stability checks for frustration-free lattice Hamiltonians.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML or JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int)
        s.add_argument("--model", help="model tag, e.g. 'ToricCode(3,2)'")
        s.add_argument("--J", type=float, help="perturbation strength")
        s.add_argument("--perturbation", help="perturbation kind (random, field, paper_chain, none)")
        s.add_argument("--mu", type=float, help="decay rate (random exponential) or bound mu")
        s.add_argument("--sGrid", type=_csv_floats, help="comma-separated s values")
        s.add_argument("--radii", type=_csv_ints)
        s.add_argument("--gammaPrime", type=float)
        s.add_argument("--Lstar", type=int)
        s.add_argument("--clusterTol", type=float)
        s.add_argument("--flowTol", type=float)
        s.add_argument("--auditSlack", type=float)
        if name == "tqo" or name == "stability":
            s.add_argument("--u", type=int)
            s.add_argument("--r", type=int)
        if name == "sweep":
            s.add_argument("--g", type=int)
        if name == "bounds":
            s.add_argument("--name", action="append")
            s.add_argument("--arg", type=float, action="append")
            for k in ("a", "vA", "CF", "psiF", "dphiA", "Fa0", "Ca", "Fnorm", "CFa", "phiA"):
                s.add_argument(f"--{k}", type=float)
            s.add_argument("--d", type=int)
        if name == "partition":
            s.add_argument("--r", type=int, action="append")
        if name == "demos":
            s.add_argument("--which", action="append", choices=["chain", "pinned-ising", "ising-tqo"])
    return p


def overrides_from(ns: argparse.Namespace) -> dict:
    o: dict = {}
    if ns.seed is not None:
        o["seed"] = ns.seed
    if ns.out is not None:
        o["out"] = ns.out
    if ns.threads is not None:
        o["threads"] = ns.threads
    if ns.model is not None:
        o["model"] = ns.model
    pert: dict = {}
    if ns.perturbation is not None:
        pert["kind"] = ns.perturbation
    if ns.J is not None:
        pert["J"] = ns.J
    if ns.mu is not None and ns.command != "bounds":
        pert["decay"] = {"kind": "exponential", "mu": ns.mu}
    if pert:
        o["perturbation"] = pert
    grids: dict = {}
    if ns.sGrid is not None:
        grids["sGrid"] = ns.sGrid
    if ns.radii is not None:
        grids["radii"] = ns.radii
    if getattr(ns, "g", None) is not None:
        grids["g"] = ns.g
    if grids:
        o["grids"] = grids
    if ns.gammaPrime is not None:
        o["gammaPrime"] = ns.gammaPrime
    if ns.Lstar is not None:
        o["Lstar"] = ns.Lstar
    tol = {k: getattr(ns, k) for k in ("clusterTol", "flowTol", "auditSlack") if getattr(ns, k) is not None}
    if tol:
        o["tolerances"] = tol
    if ns.command in ("tqo", "stability"):
        t = {k: getattr(ns, k) for k in ("u", "r") if getattr(ns, k) is not None}
        if t:
            o["tqo"] = t
    if ns.command == "bounds":
        b: dict = {}
        if ns.name:
            b["name"] = ns.name
        if ns.arg:
            b["arg"] = ns.arg
        params = {k: getattr(ns, k) for k in ("a", "vA", "CF", "psiF", "dphiA", "Fa0", "Ca", "Fnorm", "CFa",
                                              "phiA", "d") if getattr(ns, k) is not None}
        if ns.mu is not None:
            params["mu"] = ns.mu
        if params:
            b["params"] = params
        if b:
            o["bounds"] = b
    if ns.command == "partition" and ns.r:
        o["partition"] = {"r": ns.r}
    if ns.command == "demos" and ns.which:
        o["demos"] = {"which": ns.which}
    return o


def run(subcommand: str, cfg: RunConfig) -> int:
    """Execute one subcommand; returns the exit status."""
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(out, subcommand, cfg)
    except OSError as e:
        print(f"error: cannot write to {out}: {e}", file=sys.stderr)
        return STATUS_ERROR
    r = Run(cfg, out, manifest)
    if "clusterTol" in cfg.tolerances:
        spectral.CLUSTER_FLOOR = float(cfg.tolerances["clusterTol"])
    try:
        # BLAS stays single-threaded so results do not depend on --threads
        with threadpool_limits(limits=1):
            COMMANDS[subcommand](r)
    except CapacityError as e:
        manifest.finish("error", r.verdicts, r.files)
        print(f"capacity error: {e}", file=sys.stderr)
        return STATUS_ERROR
    except (FFStabError, OSError, ValueError) as e:
        manifest.finish("error", r.verdicts, r.files)
        print(f"error: {e}", file=sys.stderr)
        return STATUS_ERROR
    ok = all(bool(v) for v in r.verdicts.values())
    manifest.finish("pass" if ok else "fail", r.verdicts, r.files)
    return STATUS_PASS if ok else STATUS_FAIL


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = load_config(ns.config, overrides_from(ns))
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return STATUS_ERROR
    return run(ns.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
