"""Batch runner: builds the family, runs experiments, writes CSV/JSON reports and SVG plots."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .families import FAMILIES, build_family

CSV_HEADERS = {
    "verify-cones": ("x", "y", "inv_margin", "exp_ratio"),
    "growth": ("step", "diameter", "factor"),
    "density": ("cell_x", "cell_y", "hit"),
    "critical-set": ("polyline_id", "x", "y"),
    "fixed-points": ("x", "y", "eig1", "eig2", "class"),
}


class SchemaError(ValueError):
    pass


@dataclass
class Outcome:
    status: str  # pass | fail | inconclusive
    header: tuple
    rows: list
    constants: dict = field(default_factory=dict)
    plot: str | None = None  # plot kind for the CSV
    note: str = ""


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    versions: dict
    experiments: list
    output: str

    @property
    def summary(self) -> dict:
        out = {"pass": 0, "fail": 0, "inconclusive": 0}
        for e in self.experiments:
            out[e["status"]] = out.get(e["status"], 0) + 1
        return out

    @property
    def exit_code(self) -> int:
        return 3 if any(e["status"] == "fail" for e in self.experiments) else 0

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": self.versions,
            "summary": self.summary,
            "experiments": self.experiments,
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _atomic_write(path: Path, data: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# experiments


def _exp_seed(seed: int, name: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(name.encode())) % (2**32)


def _density_rows(hits: np.ndarray, side: float):
    res = hits.shape[0]
    h = side / res
    return [((i + 0.5) * h, (j + 0.5) * h, int(hits[i, j])) for i in range(res) for j in range(res)]


def _na(m, name) -> Outcome:
    return Outcome("inconclusive", ("note",), [(f"not applicable to {m.name}",)], note="not applicable")


def ex_build_family(m, opts, rng, kind):
    rows = sorted((k, v) for k, v in m.params.items() if isinstance(v, (int, float, str)) and not isinstance(v, bool))
    consts = {k: v for k, v in rows}
    if m.cone is not None:
        consts.update(a0=m.cone.a0, delta0=m.cone.delta0, cone_slack=m.cone.slack)
    return Outcome("pass", ("key", "value"), rows + [("a0", m.cone.a0), ("delta0", m.cone.delta0)], consts)


def ex_verify_cones(m, opts, rng, kind):
    from .cones import verify_stable_cones, verify_unstable

    lp = m.params["lambda_prime"]
    rep = verify_unstable(m, m.cone_spec, lp, opts["resolution"], opts["global_resolution"])
    consts = {"a0": m.cone.a0, "delta0": m.cone.delta0, "lambda_prime": lp, "inv_margin": rep.inv_margin, "exp_ratio": rep.exp_ratio, "cone_slack": m.cone.slack}
    ok = rep.passed and m.cone.slack >= 0.5
    if hasattr(m, "stable_cone_spec"):
        st = verify_stable_cones(m, m.stable_cone_spec, m.params["mu1"], opts["stable_resolution"])
        consts.update(stable_inv_margin=st.inv_margin, stable_growth=st.exp_ratio, mu1=m.params["mu1"])
        ok &= st.passed
    rows = [tuple(r) for r in rep.samples]
    return Outcome("pass" if ok else "fail", CSV_HEADERS["verify-cones"], rows, consts, "cone-margins")


def ex_critical_set(m, opts, rng, kind):
    from .maps import critical_set, persistence_certificate

    cs = critical_set(m, opts["resolution"])
    cert = persistence_certificate(m)
    rows = [(i, p[0], p[1]) for i, pl in enumerate(cs.polylines) for p in pl]
    consts = {"polylines": len(cs.polylines), "det_min": cs.sign_samples[0], "det_max": cs.sign_samples[1], "det_minus": cert.det_minus, "det_plus": cert.det_plus, "persistence_radius": cert.jacobian_bound}
    ok = not cs.empty and cert.det_minus < 0 < cert.det_plus
    return Outcome("pass" if ok else "fail", CSV_HEADERS["critical-set"], rows, consts, "critical-set")


def ex_annulus(m, opts, rng, kind):
    from .curves import annulus_avoidance_check

    if kind != "expanding":
        return _na(m, "annulus-check")
    rep = annulus_avoidance_check(m, m.params["r"], steps=opts["steps"], samples=opts["samples"], seed=int(rng.integers(2**31)))
    rows = [(i + 1, rep.per_step[i], rep.oracle_radii[i]) for i in range(len(rep.per_step))]
    return Outcome("pass" if rep.passed else "fail", ("step", "min_distance", "oracle_radius"), rows, {"min_clearance": rep.min_clearance, "oracle_ok": rep.oracle_ok})


def _growth_seed(m, kind, rng):
    from .curves import TorusPolyline

    r = m.params["r"]
    w = np.asarray(m.cone_spec.w, float)
    if kind == "expanding":
        ang = rng.uniform(0, 2 * np.pi)
        p = 3.5 * r * np.array([math.cos(ang), math.sin(ang)])
        return TorusPolyline.segment(p - 0.5 * r * w, w, r, m.torus)
    if kind == "saddle":
        p = rng.uniform(0, 1, 2)
        return TorusPolyline.segment(p, w, r, m.torus)
    p = np.array([rng.uniform(0, m.side), rng.uniform(0, m.side)])
    return TorusPolyline.segment(p, w, 0.01, m.torus)


def ex_growth(m, opts, rng, kind):
    from .curves import growth_certify

    lp = opts["lambda_prime"] or m.params["lambda_prime"]
    seed = _growth_seed(m, kind, rng)
    cert = growth_certify(m, seed, lp, opts["steps"])
    rows = cert.rows()
    consts = {"lambda_prime": lp, "first_10r": cert.first_reaching(10 * m.params["r"]) if kind == "expanding" else None, "min_factor": min(cert.factors) if cert.factors else None}
    ok = cert.passed and (kind != "expanding" or consts["first_10r"] is not None)
    return Outcome("pass" if ok else "fail", CSV_HEADERS["growth"], rows, consts, "growth-curve")


def ex_covering(m, opts, rng, kind):
    from .transitivity import covering_exponent

    if kind != "expanding":
        return _na(m, "covering")
    eps = opts["eps"] or m.params["r"] / 4
    c = covering_exponent(m.base, eps, m.side, grid=opts["grid"], sample=opts["sample"], seed=int(rng.integers(2**31)))
    consts = {"eps": eps, "m": c.m, "m_formula": c.m_formula, "radius": c.radius, "delta_cert": c.delta_cert, "robust_delta8": c.robust_delta8, "robust_delta16": c.robust_delta16, "sample_fraction": c.sample_fraction, "disks": c.disk_count}
    rows = sorted(consts.items())
    return Outcome("pass" if c.certified else "fail", ("key", "value"), rows, consts)


def _random_point(m, rng):
    return rng.uniform(0, m.side, 2)


def ex_preorbit(m, opts, rng, kind):
    from .transitivity import preorbit_density

    hits, fracs, incon = None, [], False
    for _ in range(opts["targets"]):
        rep = preorbit_density(m, _random_point(m, rng), opts["depth"], opts["eps"], opts["grid_res"], opts["prune_res"])
        fracs.append(rep.fraction)
        incon |= rep.inconclusive
        hits = rep.hits if hits is None else hits & rep.hits
    status = "pass" if min(fracs) == 1.0 else ("inconclusive" if incon else "fail")
    return Outcome(status, CSV_HEADERS["density"], _density_rows(hits, m.side), {"fractions": fracs, "depth": opts["depth"]}, "orbit-scatter")


def ex_orbit(m, opts, rng, kind):
    from .transitivity import orbit_density

    N = opts["N"]
    rep = orbit_density(m, _random_point(m, rng), N, opts["eps"], opts["grid_res"], jitter=opts["jitter"], seed=int(rng.integers(2**31)))
    status = "pass" if rep.fraction == 1.0 else "inconclusive"
    return Outcome(status, CSV_HEADERS["density"], _density_rows(rep.hits, m.side), {"fraction": rep.fraction, "N": N, "evidence": rep.note}, "orbit-scatter")


def ex_fixed_points(m, opts, rng, kind):
    from .maps import fixed_points

    fps = fixed_points(m, seeds=opts["seeds"])
    rows = []
    for f in fps:
        ev = np.asarray(f.eigenvalues)
        e1, e2 = (float(np.real(v)) if abs(np.imag(v)) < 1e-12 else complex(v) for v in ev)
        rows.append((f.point.x, f.point.y, e1, e2, f.cls))
    return Outcome("pass" if rows else "fail", CSV_HEADERS["fixed-points"], rows, {"count": len(rows)})


def ex_intersection(m, opts, rng, kind):
    from .transitivity import saddle_constants

    if kind != "saddle":
        return _na(m, "intersection-constants")
    ic = saddle_constants(m, samples=opts["samples"], seed=int(rng.integers(2**31)))
    rows = [(i, L, f) for i, (L, f) in enumerate(ic.levels)]
    consts = {"a1": ic.a1, "M_len": ic.M_len, "eps": ic.eps, "validated": ic.validated}
    return Outcome("pass" if ic.validated else ("inconclusive" if ic.infeasible else "fail"), ("level", "length", "failures"), rows, consts)


def ex_transitivity(m, opts, rng, kind):
    from .transitivity import transitivity_experiment

    rows, statuses, n0s = [], [], []
    for i in range(opts["pairs"]):
        c1, c2 = _random_point(m, rng), _random_point(m, rng)
        V1, V2 = (tuple(c1), opts["radius"]), (tuple(c2), opts["radius"])
        res = transitivity_experiment(m, V1, V2, budget=opts["budget"], seed=int(rng.integers(2**31)))
        statuses.append(res.status)
        n0s.append(res.n0)
        w = res.witness.xy if res.witness is not None else (float("nan"), float("nan"))
        rows.append((i, c1[0], c1[1], c2[0], c2[1], res.route, res.n0 if res.n0 is not None else "", w[0], w[1], res.status))
    status = "pass" if all(s == "pass" for s in statuses) else "inconclusive"
    header = ("pair", "v1_x", "v1_y", "v2_x", "v2_y", "route", "n0", "witness_x", "witness_y", "status")
    return Outcome(status, header, rows, {"n0": n0s, "radius": opts["radius"]})


def ex_flatten(m, opts, rng, kind):
    from .singularities import NormalFormMap, classify_critical_point, flatten_fold

    g, cert = flatten_fold(opts["eps"], seed=int(rng.integers(2**31)))
    n = opts["classify_points"]
    fold, cusp = NormalFormMap("fold"), NormalFormMap("cusp")
    xs = rng.uniform(-0.9, 0.9, n)
    fold_ok = all(classify_critical_point(fold, (x, 0.0)).cls == "fold" for x in xs)
    cusp_ok = classify_critical_point(cusp, (0.0, 0.0)).cls == "cusp"
    ts = rng.uniform(0.01, 0.5, n) * rng.choice([-1, 1], n)
    para_ok = all(classify_critical_point(cusp, (3 * t * t, t)).cls == "fold" for t in ts)
    consts = {
        "eps": cert.eps, "delta": cert.delta, "c0_distance": cert.c0_distance, "c1_distance": cert.c1_distance,
        "derivative_bound": cert.derivative_bound, "det_zero_on_ball": cert.det_zero_on_ball,
        "fold_line_folds": fold_ok, "cusp_origin": cusp_ok, "parabola_folds": para_ok,
    }
    ok = cert.passed and fold_ok and cusp_ok and para_ok
    return Outcome("pass" if ok else "fail", ("key", "value"), sorted(consts.items()), consts)


def ex_collapse(m, opts, rng, kind):
    from .singularities import collapse_counterexample

    torus_map = m if kind == "expanding" else None
    g, cert = collapse_counterexample(eps=opts["eps"], torus_map=torus_map, seed=int(rng.integers(2**31)))
    consts = {
        "eps": cert.eps, "delta": cert.delta, "image_diameter": cert.image_diameter, "c1_distance": cert.c1_distance,
        "value_spread": cert.value_spread, "partial_max": cert.partial_max, "transitivity_status": cert.transitivity_status,
    }
    return Outcome("pass" if cert.passed else "fail", ("key", "value"), sorted(consts.items()), consts)


def ex_manifold(m, opts, rng, kind):
    from .transitivity import claim_pullback, manifold_density

    if kind != "nonhyperbolic":
        return _na(m, "manifold-density")
    u = manifold_density(m, "unstable", opts["unstable_iterations"], opts["eps"], opts["grid_res"])
    s = manifold_density(m, "stable", opts["stable_depth"], opts["eps"], opts["grid_res"])
    hits = u.hits & s.hits
    # a short vertical segment just below h(0), pulled back until it reaches the unstable axis y = 0
    h0 = m.params["h0"]
    y_hi = h0 * rng.uniform(0.9, 0.99)
    claim = claim_pullback(m, rng.uniform(-0.5, 0.5), y_hi - 0.01 * h0, y_hi, 200)
    reached = claim[-1].y_lo <= 1e-12
    if u.fraction == 1.0 and s.fraction == 1.0 and reached:
        status = "pass"
    else:
        status = "inconclusive" if (u.inconclusive or s.inconclusive) else "fail"
    return Outcome(status, CSV_HEADERS["density"], _density_rows(hits, m.side), {
        "unstable_fraction": u.fraction, "stable_fraction": s.fraction, "claim_steps": len(claim) - 1,
        "claim_branches": "".join("0" if c.branch == "A0" else "1" for c in claim[1:]), "claim_reached_axis": reached,
    }, "orbit-scatter")


RUNNERS = {
    "build-family": ex_build_family,
    "verify-cones": ex_verify_cones,
    "critical-set": ex_critical_set,
    "annulus-check": ex_annulus,
    "growth": ex_growth,
    "covering": ex_covering,
    "preorbit-density": ex_preorbit,
    "orbit-density": ex_orbit,
    "fixed-points": ex_fixed_points,
    "intersection-constants": ex_intersection,
    "transitivity": ex_transitivity,
    "whitney-flatten": ex_flatten,
    "whitney-collapse": ex_collapse,
    "manifold-density": ex_manifold,
}


def _versions() -> dict:
    import matplotlib
    import mpmath
    import scipy

    from . import __version__

    return {"endolab": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "mpmath": mpmath.__version__, "matplotlib": matplotlib.__version__}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ENDOLAB_THREADS", "1")))
    except ValueError:
        return 1


def run(cfg: ExperimentConfig) -> RunManifest:
    """Run every configured experiment; family invariants are checked before any of them starts."""
    try:
        m = build_family(cfg.family_args())
    except (ValueError, TypeError) as e:
        raise ConfigError(f"family rejected: {e}", field_name="family") from e
    kind = cfg.family_kind
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    def one(idx_item):
        idx, (name, opts) = idx_item
        rng = np.random.default_rng(_exp_seed(cfg.seed, name))
        t0 = time.perf_counter()
        try:
            res = RUNNERS[name](m, opts, rng, kind)
            err = None
        except Exception as e:  # recorded, the batch carries on
            res = Outcome("fail", ("error",), [(f"{type(e).__name__}: {e}",)])
            err = f"{type(e).__name__}: {e}"
        wall = time.perf_counter() - t0
        stem = f"{idx:02d}-{name}"
        csv_path = out / f"{stem}.csv"
        write_csv(csv_path, res.header, res.rows)
        entry = {"name": name, "status": res.status, "csv": csv_path.name, "constants": _jsonable(res.constants), "options": _jsonable(opts), "wall_time": wall}
        if res.note:
            entry["note"] = res.note
        if err:
            entry["error"] = err
        if cfg.plots and res.plot and res.status != "fail":
            svg = plot(csv_path, res.plot, side=m.side)
            entry["svg"] = Path(svg).name
        return entry

    items = list(enumerate(cfg.experiments))
    workers = min(_threads(), max(1, len(items)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            entries = list(ex.map(one, items))
    else:
        entries = [one(it) for it in items]
    man = RunManifest(cfg.hash(), cfg.seed, _versions(), entries, str(out))
    doc = man.to_json()
    doc["config"] = cfg.effective
    doc["family_description"] = FAMILIES.get(cfg.family.get("name", ""), ("", ""))[1]
    _atomic_write(out / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return man


# ---------------------------------------------------------------------------
# plots

PLOT_COLUMNS = {
    "critical-set": ("polyline_id", "x", "y"),
    "cone-margins": ("x", "y", "inv_margin"),
    "orbit-scatter": ("cell_x", "cell_y", "hit"),
    "growth-curve": ("step", "diameter"),
}


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def plot(csv_path, kind: str, out=None, side: float = 1.0) -> str:
    """Deterministic 800x800 SVG next to the CSV (or at `out`)."""
    import matplotlib
    from matplotlib.figure import Figure

    if kind not in PLOT_COLUMNS:
        raise SchemaError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_COLUMNS)}")
    path = Path(csv_path)
    header, rows = _read_csv(path)
    need = PLOT_COLUMNS[kind]
    if rows or header:
        for col in need:
            if col not in header:
                raise SchemaError(f"missing column '{col}' in {path.name}")
    cols = {c: np.array([float(r[header.index(c)]) for r in rows]) for c in need} if rows else {c: np.array([]) for c in need}
    # Figure objects avoid pyplot's global state, so worker threads may plot concurrently
    matplotlib.rcParams["svg.hashsalt"] = "endolab"
    fig = Figure(figsize=(8, 8), dpi=100)
    ax = fig.subplots()
    if kind == "critical-set":
        ids = cols["polyline_id"]
        for k in np.unique(ids):
            sel = ids == k
            ax.plot(cols["x"][sel], cols["y"][sel], lw=1.0)
        _square_limits(ax, cols["x"], cols["y"], side)
        ax.set_aspect("equal")
    elif kind == "cone-margins":
        if len(rows):
            sc = ax.scatter(cols["x"], cols["y"], c=cols["inv_margin"], s=2, cmap="viridis", rasterized=False)
            fig.colorbar(sc, ax=ax, shrink=0.8, label="invariance margin")
        _square_limits(ax, cols["x"], cols["y"], side)
    elif kind == "orbit-scatter":
        hit = cols["hit"] > 0
        ax.scatter(cols["cell_x"][hit], cols["cell_y"][hit], s=4, c="k", marker="s")
        ax.scatter(cols["cell_x"][~hit], cols["cell_y"][~hit], s=4, c="r", marker="x")
        ax.set_xlim(0, side)
        ax.set_ylim(0, side)
        ax.set_aspect("equal")
    else:
        if len(rows):
            ax.step(cols["step"], cols["diameter"], where="post")
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("diameter")
    ax.set_title(f"{path.stem} ({kind})")
    target = Path(out) if out else path.with_name(f"{path.stem}.{kind}.svg")
    fig.savefig(target, format="svg", metadata={"Date": None})
    return str(target)


def _square_limits(ax, x, y, side):
    if len(x) == 0:
        ax.set_xlim(0, side)
        ax.set_ylim(0, side)
        return
    cx, cy = (x.max() + x.min()) / 2, (y.max() + y.min()) / 2
    half = max(x.max() - x.min(), y.max() - y.min()) * 0.55 or side / 2
    ax.set_xlim(cx - half, cx + half)
    ax.set_ylim(cy - half, cy + half)
