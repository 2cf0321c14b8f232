"""
Stage functions behind the command-line interface.

Every stage reads its inputs from and writes its outputs to one directory, so
running the stages one by one gives the same files as :func:`run_pipeline`.

Layout of the output directory::

    snapshots.npz | snapshots.csv   simulate
    simulate.json                   simulate (increment moments)
    generator.npz                   learn
    identified.json, tables.txt     identify
    true/met.csv, true/ep.csv       solve (configured coefficients)
    learned/met.csv, learned/ep.csv solve (identified model)
    metrics.json                    compare
"""
import json
import logging
from pathlib import Path

from .config import ExperimentConfig
from .koopman import GeneratorEstimate, estimate_generator
from .nonlocal_pde import ScalarField, field_error, solve_met_ep, write_svg
from .stoch_sim import SnapshotSet, generate_snapshots, increment_summary
from .sysid import IdentifiedModel, identify as identify_model, render_table

logger = logging.getLogger(__name__)

STAGES = ("simulate", "learn", "identify", "solve", "compare")


class StageError(RuntimeError):
    """An error tagged with the pipeline stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _out(cfg, out):
    path = Path(out if out is not None else cfg.outputs.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path, producer):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing {path}; run `levykoop {producer}` first")
    return path


def snapshot_path(cfg, out):
    return Path(out) / f"snapshots.{cfg.outputs.snapshot_format}"


def simulate(cfg, out=None, threads=1):
    out = _out(cfg, out)
    s = cfg.simulation
    snaps = generate_snapshots(cfg.true_model(), s.domain, s.M, s.dt, s.scheme, s.seed, threads)
    path = snapshot_path(cfg, out)
    snaps.save(path)
    summary = increment_summary(snaps)
    summary.update(M=snaps.M, dt=snaps.dt, seed=s.seed)
    _write_json(out / "simulate.json", summary)
    logger.info("wrote %d snapshot pairs to %s; increment mean %s var %s",
                snaps.M, path, summary["mean"], summary["var"])
    return path


def learn(cfg, out=None):
    out = _out(cfg, out)
    snaps = SnapshotSet.load(_require(snapshot_path(cfg, out), "simulate"))
    d = cfg.dictionary
    est = estimate_generator(snaps, cfg.basis, d.svd_cutoff, d.n_batches)
    path = out / "generator.npz"
    est.save(path)
    logger.info("EDMD with %d basis functions on %d pairs; normal-equation residual %.2e",
                len(cfg.basis), snaps.M, est.residual())
    return path


def identify(cfg, out=None):
    out = _out(cfg, out)
    est = GeneratorEstimate.load(_require(out / "generator.npz", "learn"))
    if est.basis != cfg.basis:
        raise ValueError(f"generator bundle uses dim={est.basis.dim}, degree={est.basis.max_degree}; "
                         f"config asks for dim={cfg.basis.dim}, degree={cfg.basis.max_degree}")
    m, ident = cfg.model, cfg.identification
    levy = m.mode == "levy"
    model = identify_model(est, m.mode, m.alpha if levy else None, m.c, ident.p2,
                           ident.clamp_factor, auto_p2=ident.auto_p2, bounds=cfg.simulation.domain)
    model.save(out / "identified.json")
    table = render_table(model, cfg.true_model(), ident.display_threshold)
    (out / "tables.txt").write_text(table + "\n")
    logger.info("identified model:\n%s", table)
    return out / "identified.json"


def solve(cfg, out=None, which=("true", "learned")):
    out = _out(cfg, out)
    domain, grid = cfg.pde_domain(), cfg.pde_grid()
    written = []
    for name in which:
        model = cfg.true_model() if name == "true" else IdentifiedModel.load(_require(out / "identified.json", "identify"))
        met, ep = solve_met_ep(model, domain, grid)
        target = out / name
        target.mkdir(exist_ok=True)
        for f in (met, ep):
            f.to_csv(target / f"{f.kind}.csv")
            written.append(target / f"{f.kind}.csv")
            if cfg.outputs.svg:
                title = f"{'mean exit time' if f.kind == 'met' else 'escape probability'} ({name})"
                write_svg(target / f"{f.kind}.svg", [f], [name], title)
        logger.info("%s model: solved on %s interior nodes with %s", name, met.n, met.info["solver"])
    if cfg.outputs.svg and domain.dim == 1 and len(which) == 2:
        fields = {n: [_load_field(out / n / f"{k}.csv", cfg) for k in ("met", "ep")] for n in which}
        for k, kind in enumerate(("met", "ep")):
            write_svg(out / f"{kind}.svg", [fields[n][k] for n in which], list(which),
                      "mean exit time" if kind == "met" else "escape probability")
    return written


def _load_field(path, cfg):
    coords, values, kind = ScalarField.read_csv(path)
    return _CsvField(kind, coords, values, cfg.pde_domain())


class _CsvField:
    """Just enough of :class:`ScalarField` for plotting fields read back from CSV."""

    def __init__(self, kind, coords, values, domain):
        self.kind, self.interior_nodes, self.interior_values, self.domain = kind, coords, values, domain


def compare(cfg, out=None):
    out = _out(cfg, out)
    report = {}
    for kind in ("met", "ep"):
        t_xy, t_v, _ = ScalarField.read_csv(_require(out / "true" / f"{kind}.csv", "solve"))
        l_xy, l_v, _ = ScalarField.read_csv(_require(out / "learned" / f"{kind}.csv", "solve"))
        report[kind] = field_error((t_xy, t_v), (l_xy, l_v))
    _write_json(out / "metrics.json", report)
    logger.info("field errors: %s", report)
    return report


def run_pipeline(cfg, out=None, threads=1):
    """simulate, learn, identify, solve (true and learned), compare."""
    out = _out(cfg, out)
    run_stage("simulate", simulate, cfg, out, threads=threads)
    for name, fn in (("learn", learn), ("identify", identify), ("solve", solve), ("compare", compare)):
        result = run_stage(name, fn, cfg, out)
    return result


def run_stage(name, fn, *args, **kwargs):
    """Call a stage function, re-raising failures as :class:`StageError`."""
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        raise StageError(name, str(exc)) from exc


def load_config(path, seed=None):
    cfg = ExperimentConfig.load(path)
    if seed is not None:
        cfg.simulation.seed = int(seed)
    return cfg
