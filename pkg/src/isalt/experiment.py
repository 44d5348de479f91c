"""End-to-end pipeline: data generation, inference, evaluation, studies, reports.

Every command reads and writes under the config's output directory and keeps
``manifest.json`` up to date. An artifact is listed only after it has been
written completely, and reading commands verify checksums before use.
"""

import json
import logging
import math
from functools import reduce
from pathlib import Path

import numpy as np

from .basis import BasisFamily
from .config import SchemeSpec
from .datagen import (GenerationConfig, TrajectoryDataset, generate_dataset,
                      generate_long_trajectory, sample_initial_conditions)
from .exceptions import ConfigError, MissingArtifact
from .inference import (InferredScheme, accumulate_normal_equations, convergence_study, infer,
                        plain_scheme, residual_order_study, trajectory_spread)
from .io import _atomic_write, read_dataset, sha256, write_dataset
from .simulate import PlainSsbeScheme, SimConfig, simulate
from .stats import (AcfCurve, Histogram, acf, blowup_scan, burn_in, default_edges,
                    empirical_pdf, tvd, write_csv)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
# a single coarsenable dataset is used when it fits in this many bytes
_SHARED_PASS_BYTES = 2 << 30


class Manifest:
    """Artifact list with checksums, rewritten atomically after every addition."""

    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / MANIFEST
        self.entries = {}
        if self.path.exists():
            with open(self.path) as fh:
                self.entries = json.load(fh).get("artifacts", {})

    def add(self, path, kind, **meta):
        rel = Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        self.entries[rel] = {"kind": kind, "sha256": sha256(path), **meta}
        self.save()
        return rel

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        doc = {"artifacts": dict(sorted(self.entries.items()))}
        _atomic_write(self.path, (json.dumps(doc, indent=2) + "\n").encode())

    def require(self, rel):
        """Path of a listed artifact after checking it exists and is unmodified."""
        entry = self.entries.get(rel)
        if entry is None:
            raise MissingArtifact(f"{rel} is not listed in {self.path}")
        path = self.root / rel
        if not path.exists():
            raise MissingArtifact(f"{path} is listed but missing")
        if sha256(path) != entry["sha256"]:
            raise MissingArtifact(f"{path} does not match its manifest checksum")
        return path

    def of_kind(self, kind):
        return {rel: e for rel, e in self.entries.items() if e["kind"] == kind}


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    return Path(path)


def _dataset_rel(gap):
    return f"data/gap{gap:04d}.bin"


def _scheme_rel(spec, gap):
    return f"schemes/{spec.label}_gap{gap:04d}.json"


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(cfg, n_jobs=None):
    """Long reference trajectory plus one dataset per gap.

    Each gap gets its own seed unless ``shared_path`` is set, in which case
    one pass at the gcd of the gaps is coarsened (same paths, cheaper).
    """
    system = cfg.system
    out = Path(cfg.output)
    (out / "data").mkdir(parents=True, exist_ok=True)
    man = Manifest(out)

    long = generate_long_trajectory(system, cfg.initial_state(), cfg.dt, cfg.long_steps, cfg.seed)
    long_path = write_dataset(long.as_dataset(), out / "data" / "long.bin")
    man.add(long_path, "long-trajectory", steps=cfg.long_steps, dt=cfg.dt)

    burn = int(cfg.burn_in * cfg.long_steps)
    initials = sample_initial_conditions(long, cfg.M, burn, cfg.seed)
    total = cfg.total_steps
    base = reduce(math.gcd, cfg.gaps)
    shared = cfg.shared_path and (
        cfg.M * (total // base + 1) * system.d * 8 <= _SHARED_PASS_BYTES)
    if shared:
        ds = generate_dataset(GenerationConfig(system, cfg.dt, total, base, cfg.M, cfg.seed),
                              initials, n_jobs)
    written = []
    for gap in cfg.gaps:
        if shared:
            d = ds.coarsen(gap // base)
        else:
            d = generate_dataset(GenerationConfig(system, cfg.dt, total, gap, cfg.M,
                                                  gap_seed(cfg.seed, gap)), initials, n_jobs)
        path = write_dataset(d, out / _dataset_rel(gap))
        man.add(path, "dataset", gap=gap, delta=d.delta, M=d.M, N=d.N, seed=d.seed)
        written.append(str(path))
    return {"long_trajectory": str(long_path), "datasets": written, "fine_steps": total}


def gap_seed(seed, gap):
    """Independent dataset seed for one gap, derived from the experiment seed."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(gap),)).generate_state(1)[0])


def load_long(man):
    return read_dataset(man.require("data/long.bin"))


def load_dataset(man, gap):
    return read_dataset(man.require(_dataset_rel(gap)))


# ---------------------------------------------------------------- infer

ESTIMATOR_HEADER = ("scheme", "gap", "delta", "k", "coefficient", "value", "spread", "sigma_eta")


def _coef_names(include_c0):
    return ["c0", "c1", "c2"] if include_c0 else ["c1", "c2"]


def cmd_infer(cfg):
    """Fit every configured family at every gap; write scheme JSON and the estimator table."""
    out = Path(cfg.output)
    man = Manifest(out)
    system = cfg.system
    specs = cfg.schemes
    if not specs:
        logger.warning("no inference families configured; nothing to do")
        return {"schemes": []}
    (out / "schemes").mkdir(parents=True, exist_ok=True)
    rows, written = [], []
    for gap in cfg.gaps:
        rel = _dataset_rel(gap)
        ds = load_dataset(man, gap)
        for spec in specs:
            fam = BasisFamily(spec.family, spec.include_c0, ds.delta, system)
            sch = infer(ds, fam, cfg.svd_cutoff, dataset_id=rel)
            ne = accumulate_normal_equations(ds, fam)
            spread = trajectory_spread(ne, sch.coef, cfg.svd_cutoff)
            path = out / _scheme_rel(spec, gap)
            sch.save(path)
            man.add(path, "scheme", label=spec.label, gap=gap, delta=ds.delta)
            written.append(str(path))
            for k in range(system.d):
                for i, name in enumerate(_coef_names(spec.include_c0)):
                    rows.append([spec.label, gap, repr(ds.delta), k, name,
                                 repr(float(sch.coef[k, i])), repr(float(spread[k, i])),
                                 repr(float(sch.sigma_eta[k]))])
    table = write_csv(out / "estimators.csv", ESTIMATOR_HEADER, rows)
    man.add(table, "estimator-table")
    return {"schemes": written, "table": str(table)}


def load_scheme(man, spec, gap, system=None):
    return InferredScheme.load(man.require(_scheme_rel(spec, gap)), system)


# ---------------------------------------------------------------- simulate

def cmd_simulate(scheme_path, steps, seed, output=None, x0=None, M=None, record_every=1):
    """Simulate a saved scheme and export the paths in the dataset format."""
    scheme_path = Path(scheme_path)
    if not scheme_path.exists():
        raise MissingArtifact(f"{scheme_path} not found")
    scheme = InferredScheme.load(scheme_path)
    x0 = scheme.system.default_x0 if x0 is None else np.asarray(x0, dtype=float)
    res = simulate(SimConfig(scheme, x0, int(steps), int(seed), record_every=record_every, M=M))
    if output is None:
        output = scheme_path.with_name(f"{scheme_path.stem}_sim_seed{seed}.bin")
    path = write_dataset(res.to_dataset(allow_blown=True), output)
    summary = {"scheme": str(scheme_path), "output": str(path), "steps": int(steps),
               "seed": int(seed), "delta": scheme.delta,
               "blown_up": res.blown_up.tolist(), "blowup_step": res.blowup_step.tolist()}
    _write_json(str(path) + ".summary.json", summary)
    return summary


# ---------------------------------------------------------------- evaluate

TVD_HEADER = ("scheme", "gap", "delta", "k", "tvd", "blew_up", "blowup_step")


def reference_statistics(cfg, long):
    """Burned-in reference samples and their per-coordinate edges and histograms."""
    X = long.X[0]
    ref = X[int(cfg.burn_in * (X.shape[0] - 1)):]
    edges = [default_edges(ref[:, k], cfg.bins) for k in range(ref.shape[1])]
    hists = [empirical_pdf(ref[:, k], edges=edges[k], k=k) for k in range(ref.shape[1])]
    return ref, edges, hists


def evaluate_scheme(scheme, x0, steps, seed, edges, ref_hists, max_lag, burn_frac):
    """Simulate one scheme and compare against the reference; blow-up gives TVD = 1."""
    res = simulate(SimConfig(scheme, x0, steps, seed))
    blown = bool(res.blown_up[0])
    d = len(edges)
    if blown:
        return {"blew_up": True, "blowup_step": int(res.blowup_step[0]),
                "tvd": [1.0] * d, "pdf": None, "acf": None}
    path = burn_in(res.paths[0], burn_frac)
    hists = [empirical_pdf(path[:, k], edges=edges[k], k=k) for k in range(d)]
    lag = min(max_lag, (path.shape[0] - 2) // 2)
    curves = [acf(path, lag, k, scheme.delta) for k in range(d)]
    return {"blew_up": False, "blowup_step": None,
            "tvd": [tvd(h, r) for h, r in zip(hists, ref_hists)], "pdf": hists, "acf": curves}


def _write_pdf(path, hists):
    return write_csv(path, Histogram.CSV_HEADER, (row for h in hists for row in h.csv_rows()))


def _write_acf(path, curves):
    return write_csv(path, AcfCurve.CSV_HEADER, (row for c in curves for row in c.csv_rows()))


def cmd_evaluate(cfg):
    """Simulate every inferred scheme and score it against the reference statistics."""
    out = Path(cfg.output)
    man = Manifest(out)
    system = cfg.system
    ev = out / "eval"
    (ev / "pdf").mkdir(parents=True, exist_ok=True)
    (ev / "acf").mkdir(parents=True, exist_ok=True)
    long = load_long(man)
    ref, edges, ref_hists = reference_statistics(cfg, long)
    man.add(_write_pdf(ev / "pdf" / "reference.csv", ref_hists), "pdf", scheme="reference")
    x0 = np.asarray(cfg.initial_state(), dtype=float)
    rows, blow_rows, best = [], [], {}
    for gap in cfg.gaps:
        stride = ref[::gap]
        lag = min(cfg.max_lag, (stride.shape[0] - 2) // 2)
        if lag >= 1:
            curves = [acf(stride, lag, k, gap * cfg.dt) for k in range(system.d)]
            p = _write_acf(ev / "acf" / f"reference_gap{gap:04d}.csv", curves)
            man.add(p, "acf", scheme="reference", gap=gap)
        for spec in cfg.schemes:
            scheme = load_scheme(man, spec, gap, system)
            r = evaluate_scheme(scheme, x0, cfg.sim_steps, cfg.sim_seed, edges, ref_hists,
                                cfg.max_lag, cfg.burn_in)
            for k, v in enumerate(r["tvd"]):
                rows.append([spec.label, gap, repr(scheme.delta), k, repr(float(v)),
                             int(r["blew_up"]), "" if r["blowup_step"] is None
                             else r["blowup_step"]])
            blow_rows.append([spec.label, gap, int(r["blew_up"]),
                              "" if r["blowup_step"] is None else r["blowup_step"], 1])
            if not r["blew_up"]:
                tag = f"{spec.label}_gap{gap:04d}"
                man.add(_write_pdf(ev / "pdf" / f"{tag}.csv", r["pdf"]), "pdf",
                        scheme=spec.label, gap=gap)
                man.add(_write_acf(ev / "acf" / f"{tag}.csv", r["acf"]), "acf",
                        scheme=spec.label, gap=gap)
            score = float(np.mean(r["tvd"]))
            if spec.label not in best or score < best[spec.label][1]:
                best[spec.label] = (gap, score)
    man.add(write_csv(ev / "tvd.csv", TVD_HEADER, rows), "tvd-table")
    man.add(write_csv(ev / "blowup.csv", ("scheme", "gap", "blew_up", "first_blowup_step",
                                          "members_blown"), blow_rows), "blowup-table")
    summary = {"best_gap": {k: {"gap": g, "mean_tvd": s} for k, (g, s) in best.items()},
               "sim_steps": cfg.sim_steps, "seed": cfg.sim_seed}
    man.add(_write_json(ev / "summary.json", summary), "evaluation-summary")
    return summary


# ---------------------------------------------------------------- studies

def synthetic_dataset(scheme, x0, M, N, seed, burn_steps=0):
    """Data drawn from an inferred-form scheme itself (a perfect-model dataset)."""
    res = simulate(SimConfig(scheme, x0, burn_steps + N, seed, M=M))
    if res.any_blown_up:
        raise ConfigError("synthetic model blew up; choose stable coefficients")
    ds = res.to_dataset()
    if burn_steps:
        ds = TrajectoryDataset(ds.X[:, burn_steps:], ds.dB[:, burn_steps:], ds.dt, ds.gap,
                               ds.system_name, ds.seed)
    return ds


def _default_grid(M, N):
    ms = [2 ** i for i in range(int(math.log2(M)) + 1)]
    if len(ms) < 3:
        raise ConfigError("convergence study needs M >= 4 for the default grid")
    return [(m, N) for m in ms]


def _study_convergence(cfg, out, man):
    opts = cfg.study.get("convergence", {})
    system = cfg.system
    reference = None
    syn = opts.get("synthetic")
    if syn is not None:
        spec = SchemeSpec.parse(syn.get("family", "is-em"))
        delta = float(syn["delta"])
        coef = np.tile(np.asarray(syn["coef"], dtype=float), (system.d, 1))
        sig = np.full(system.d, float(syn["sigma_eta"]))
        truth = InferredScheme(spec.family, spec.include_c0, delta, system, coef, sig)
        ds = synthetic_dataset(truth, np.asarray(cfg.initial_state()), int(syn["M"]),
                               int(syn["N"]), int(syn.get("seed", cfg.seed)),
                               int(syn.get("burn_steps", 0)))
        reference = coef
        gap = None
    else:
        spec = SchemeSpec.parse(opts.get("family", "is-rk4"))
        gap = int(opts.get("gap", cfg.gaps[len(cfg.gaps) // 2]))
        ds = load_dataset(man, gap)
    fam = BasisFamily(spec.family, spec.include_c0, ds.delta, system)
    grid = opts.get("grid") or _default_grid(ds.M, ds.N)
    rep = convergence_study(ds, fam, grid, reference, cfg.svd_cutoff,
                            replicate=bool(opts.get("replicate", True)))
    names = _coef_names(spec.include_c0)
    header = ("M", "N", "samples", "total_rel_error") + tuple(
        f"rel_error_{n}_k{k}" for k in range(system.d) for n in names)
    rows = [[m, n, int(s), repr(float(t))] + [repr(float(v)) for v in e.ravel()]
            for (m, n), s, t, e in zip(rep.shapes, rep.sizes, rep.total_error, rep.rel_error)]
    csv_path = write_csv(out / "convergence.csv", header, rows)
    summary = {"scheme": spec.label, "gap": gap, "delta": ds.delta, "slope": rep.slope,
               "reference": rep.reference.tolist(), "synthetic": syn is not None}
    return csv_path, summary


def _study_residual_order(cfg, out, man):
    opts = cfg.study.get("residual_order", {})
    system = cfg.system
    gaps = [int(g) for g in opts.get("gaps", cfg.gaps)]
    datasets = [load_dataset(man, g) for g in gaps]
    rows, slopes = [], {}
    for label in opts.get("families", ["is-rk4", "is-em"]):
        spec = SchemeSpec.parse(label)
        rep = residual_order_study(datasets, spec.family, spec.include_c0, system,
                                   cfg.svd_cutoff)
        slopes[spec.label] = rep.slopes.tolist()
        for ds, delta, sig, coef in zip(sorted(datasets, key=lambda d: d.delta), rep.deltas,
                                        rep.sigma_eta, rep.coefficients):
            for k in range(system.d):
                rows.append([spec.label, ds.gap, repr(float(delta)), k, repr(float(sig[k]))]
                            + [repr(float(c)) for c in coef[k]])
    header = ("scheme", "gap", "delta", "k", "sigma_eta", "coef_0", "coef_1", "coef_2")
    rows = [r + [""] * (len(header) - len(r)) for r in rows]
    csv_path = write_csv(out / "residual_order.csv", header, rows)
    return csv_path, {"slopes": slopes, "gaps": gaps}


def scheme_builder(spec, system, dt, man=None):
    """Callable ``gap -> scheme`` for a plain or inferred scheme label."""
    if spec.plain and spec.family == "ssbe":
        return lambda gap: PlainSsbeScheme(system, gap * dt)
    if spec.plain:
        return lambda gap: plain_scheme(spec.family, False, system, gap * dt)
    return lambda gap: load_scheme(man, spec, gap, system)


def _study_blowup(cfg, out, man):
    opts = cfg.study.get("blowup_scan", {})
    system = cfg.system
    gaps = [int(g) for g in opts.get("gaps", cfg.gaps)]
    specs = [SchemeSpec.parse(s) for s in
             opts.get("schemes", ["plain-rk4", "plain-ssbe", "is-rk4", "is-ssbe"])]
    builders = {s.label: scheme_builder(s, system, cfg.dt, man) for s in specs}
    table = blowup_scan(system, builders, gaps, int(opts.get("steps", 100_000)),
                        int(opts.get("seeds", 10)), np.asarray(cfg.initial_state()),
                        seed=int(opts.get("seed", cfg.sim_seed)))
    csv_path = table.to_csv(out / "blowup_scan.csv")
    summary = {"first_blowup_gap": {lab: table.first_blowup_gap(lab) for lab in table.labels()},
               "gaps": gaps}
    return csv_path, summary


STUDIES = {"convergence": _study_convergence, "residual-order": _study_residual_order,
           "blowup-scan": _study_blowup}


def cmd_study(cfg, kind):
    if kind not in STUDIES:
        raise ConfigError(f"unknown study {kind!r}; choose from {sorted(STUDIES)}")
    out = Path(cfg.output)
    man = Manifest(out)
    sdir = out / "study"
    sdir.mkdir(parents=True, exist_ok=True)
    csv_path, summary = STUDIES[kind](cfg, sdir, man)
    man.add(csv_path, f"study-{kind}")
    js = _write_json(sdir / f"{kind.replace('-', '_')}.json", summary)
    man.add(js, f"study-{kind}-summary")
    return summary


# ---------------------------------------------------------------- report

def cmd_report(cfg):
    """Collect the JSON summaries and table locations into ``report.json``."""
    out = Path(cfg.output)
    man = Manifest(out)
    if not man.entries:
        raise MissingArtifact(f"no manifest under {out}")
    report = {"artifacts": len(man.entries), "tables": {}, "summaries": {}}
    for rel, e in man.entries.items():
        if rel.endswith(".csv") and e["kind"] not in ("pdf", "acf"):
            report["tables"][e["kind"]] = rel
        if rel.endswith(".json") and e["kind"] not in ("scheme", "report"):
            with open(man.require(rel)) as fh:
                report["summaries"][e["kind"]] = json.load(fh)
    path = _write_json(out / "report.json", report)
    man.add(path, "report")
    return report
