"""Command-line front end.

    rgl trace     --model cigar:1 --v 0.5,0 --tau 0.5 [--jacobi]
    rgl l         --model sphere:2:1 --points "0.5,0;1,0.2" --tau 0.5,1
    rgl rv-curve  --model flat:3 --tau 0.25,0.5,1,2 --out curve.csv
    rgl verify    --models flat:2,sphere:2:1 --out report.json

Every run is described by a RunConfig assembled from defaults, an optional
``--config`` JSON file and the flags, in that order.  ``--dump-config``
prints the resolved config and exits.  Outputs go to ``--out`` (written
through a temporary file and renamed into place) or to stdout.

Exit codes: 0 success, 1 failed checks or a numerical error, 2 bad
configuration or unwritable output.  Errors are reported on stderr as one
JSON object.  ``RGL_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import DEFAULT_SEED
from .errors import ConfigError, IOFailure, RGLError

log = logging.getLogger("rgl")

COMMANDS = ("trace", "l", "rv-curve", "verify")


@dataclass
class RunConfig:
    command: str
    models: list = field(default_factory=lambda: ["flat:2"])
    base: list | None = None
    tau: list = field(default_factory=lambda: [1.0])
    v: list | None = None
    points: list = field(default_factory=list)
    jacobi: bool = False
    oracle: bool = True
    grid_radial: int = 64
    grid_angular: int = 128
    tol_ode: float = 1e-9
    jobs: int = 1
    seed: int = DEFAULT_SEED
    out: str | None = None
    checks: list | None = None
    verify: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "command" not in data:
            raise ConfigError("config needs a command")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        from .flow_models import parse_model
        from .verifier import merge_config

        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.models:
            raise ConfigError("no model given")
        parsed = [parse_model(m) for m in self.models]
        if self.command != "verify" and len(parsed) != 1:
            raise ConfigError(f"{self.command} takes exactly one model")
        try:
            self.tau = [float(t) for t in self.tau]
            self.grid_radial = int(self.grid_radial)
            self.grid_angular = int(self.grid_angular)
            self.tol_ode = float(self.tol_ode)
            self.jobs = int(self.jobs)
            self.seed = int(self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad numeric field: {exc}") from None
        if not self.tau or any(not t > 0 for t in self.tau):
            raise ConfigError("tau values must be positive")
        if self.grid_radial < 4 or self.grid_angular < 4:
            raise ConfigError("grids need at least 4 nodes")
        if not 0 < self.tol_ode < 1e-3:
            raise ConfigError("tol-ode must lie in (0, 1e-3)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        dim = parsed[0].dim
        if self.base is not None:
            self.base = [float(x) for x in self.base]
            if len(self.base) != dim:
                raise ConfigError(f"base point needs {dim} coordinates")
        if self.command == "trace":
            if self.v is None or len(self.v) != dim:
                raise ConfigError(f"trace needs --v with {dim} components")
            self.v = [float(x) for x in self.v]
            if len(self.tau) != 1:
                raise ConfigError("trace takes a single tau")
        if self.command == "l":
            if not self.points:
                raise ConfigError("l needs --points")
            self.points = [[float(x) for x in pt] for pt in self.points]
            if any(len(pt) != dim for pt in self.points):
                raise ConfigError(f"points need {dim} coordinates")
        if self.command == "rv-curve" and np.any(np.diff(self.tau) <= 0):
            raise ConfigError("rv-curve needs an increasing tau grid")
        if self.command == "verify":
            vc = dict(self.verify)
            if self.checks is not None:
                vc["checks"] = list(self.checks)
            merge_config(vc)


# ---------------------------------------------------------------- parsing

def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _points(text: str) -> list:
    return [_floats(chunk) for chunk in text.split(";") if chunk.strip()]


def _names(text: str) -> list:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON RunConfig file; flags override its fields")
    common.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--model", dest="models", type=lambda s: [s.strip()],
                        help="model string, e.g. sphere:2:1")
    common.add_argument("--models", dest="models", type=_names, help="comma-separated models (verify)")
    common.add_argument("--tau", type=_floats, help="tau value or comma-separated tau grid")
    common.add_argument("--base", type=_floats, help="base point p in chart 0")
    common.add_argument("--grid-radial", type=int, dest="grid_radial")
    common.add_argument("--grid-angular", type=int, dest="grid_angular")
    common.add_argument("--tol-ode", type=float, dest="tol_ode")
    common.add_argument("--jobs", type=int, help="numba worker threads")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout when omitted)")

    parser = argparse.ArgumentParser(prog="rgl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("trace", parents=[common], help="shoot one L-geodesic and dump it as CSV")
    p.add_argument("--v", type=_floats, help="initial vector v (chart components)")
    p.add_argument("--jacobi", action="store_true", default=None, help="include the Jacobian column")
    p = sub.add_parser("l", parents=[common], help="solve l over a point grid")
    p.add_argument("--points", type=_points, help='points "x1,y1;x2,y2;..." in chart 0')
    p.add_argument("--no-oracle", dest="oracle", action="store_false", default=None,
                   help="skip the path-oracle comparison column")
    sub.add_parser("rv-curve", parents=[common], help="reduced-volume curve as CSV plus SVG")
    p = sub.add_parser("verify", parents=[common], help="run the check suite, JSON report")
    p.add_argument("--checks", type=_names, help="comma-separated check ids")
    return parser


def resolve_config(argv) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if data.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {data['command']!r}, not {args.command!r}")
    data["command"] = args.command
    skip = {"config", "dump_config", "command"}
    for key, val in vars(args).items():
        if key not in skip and val is not None:
            data[key] = val
    return RunConfig.from_dict(data), args.dump_config


# ---------------------------------------------------------------- output

def write_atomic(path: str | None, text: str):
    """Write ``text`` to ``path`` via a sibling temp file and rename, or to
    stdout when path is None."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="\n") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from None


def _sibling(path: str | None, suffix: str) -> str | None:
    return None if path is None else str(Path(path).with_suffix(suffix))


# ---------------------------------------------------------------- commands

def _base(cfg, model):
    return np.zeros(model.dim) if cfg.base is None else np.asarray(cfg.base)


def cmd_trace(cfg: RunConfig) -> int:
    from .flow_models import parse_model
    from .lgeodesic import shoot

    model = parse_model(cfg.models[0])
    geo = shoot(model, _base(cfg, model), np.asarray(cfg.v), cfg.tau[0], with_jacobi=cfg.jacobi,
                rtol=cfg.tol_ode, atol=1e-3 * cfg.tol_ode)
    write_atomic(cfg.out, geo.to_csv())
    return 0


def cmd_l(cfg: RunConfig) -> int:
    import csv
    import io

    from .errors import CutLocusSuspected
    from .flow_models import canonical_point, metric_at, parse_model
    from .lfunction import l_tau, path_oracle_extrapolated, solve_l

    model = parse_model(cfg.models[0])
    p = _base(cfg, model)
    n = model.dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "tau"] + [f"q{i + 1}" for i in range(n)]
               + ["l", "grad_l_norm2", "l_tau", "branch_count", "method_agreement"])
    kw = dict(seed=cfg.seed, rtol=cfg.tol_ode, atol=1e-3 * cfg.tol_ode)
    for tau in cfg.tau:
        for pt in cfg.points:
            q, qc = canonical_point(model, np.asarray(pt))
            res = solve_l(model, p, q, tau, q_chart=qc, **kw)
            g = metric_at(model, q, tau, qc)[0]
            grad = res.gradient
            lt = l_tau(model, p, q, tau, q_chart=qc, result=res, **kw)
            agree = ""
            if cfg.oracle:
                ref = path_oracle_extrapolated(model, p, q, tau, q_chart=qc, seed=cfg.seed)
                agree = repr(float(abs(ref - res.l_value) / max(abs(res.l_value), 1e-12)))
            if res.branch_gap < 1e-6:
                log.warning("%s", CutLocusSuspected(f"q={pt} tau={tau}: branch gap {res.branch_gap:.3g}"))
            w.writerow([model.name, repr(tau)] + [repr(float(x)) for x in pt]
                       + [repr(float(res.l_value)), repr(float(grad @ g @ grad)), repr(float(lt)),
                          len(res.branches), agree])
    write_atomic(cfg.out, buf.getvalue())
    return 0


def cmd_rv_curve(cfg: RunConfig) -> int:
    from .flow_models import parse_model
    from .plotting import curve_svg
    from .reduced_volume import reduced_volume_curve

    model = parse_model(cfg.models[0])
    curve = reduced_volume_curve(model, _base(cfg, model), cfg.tau, n_radial=cfg.grid_radial,
                                 n_radial_coarse=max(4, (3 * cfg.grid_radial) // 4),
                                 n_angular=cfg.grid_angular, seed=cfg.seed, rtol=cfg.tol_ode,
                                 atol=1e-3 * cfg.tol_ode)
    write_atomic(cfg.out, curve.to_csv())
    if cfg.out is not None:
        write_atomic(_sibling(cfg.out, ".svg"), curve_svg(curve))
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    from .verifier import run_suite

    vc = dict(cfg.verify)
    vc.setdefault("seed", cfg.seed)
    vc.setdefault("grid_radial", cfg.grid_radial)
    vc.setdefault("grid_angular", cfg.grid_angular)
    vc.setdefault("tol_ode", cfg.tol_ode)
    if cfg.base is not None:
        vc.setdefault("base", cfg.base)
    if cfg.checks is not None:
        vc["checks"] = list(cfg.checks)
    report = run_suite(cfg.models, vc)
    write_atomic(cfg.out, report.to_json())
    if cfg.out is not None:
        write_atomic(_sibling(cfg.out, ".csv"), report.to_csv())
    for rec in report.records:
        log.info("%-12s %-26s %s", rec["model"], rec["check_id"], rec["status"])
    return 0 if report.ok else 1


HANDLERS = {"trace": cmd_trace, "l": cmd_l, "rv-curve": cmd_rv_curve, "verify": cmd_verify}


def _diagnostic(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    best = getattr(exc, "best_residual", None)
    if best is not None:
        payload["best_residual"] = float(best)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RGL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.filterwarnings("ignore", module="numba")
    try:
        cfg, dump = resolve_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        return _diagnostic(exc, 2)
    if dump:
        sys.stdout.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return 0
    if cfg.jobs > 1:
        import numba

        numba.set_num_threads(min(cfg.jobs, numba.config.NUMBA_NUM_THREADS))
    try:
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, IOFailure) as exc:
        return _diagnostic(exc, 2)
    except RGLError as exc:
        return _diagnostic(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
