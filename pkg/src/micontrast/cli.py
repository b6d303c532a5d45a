"""Command-line entry point: ``micontrast {estimate, oracle, sweep}``.

Settings are resolved per key in this order: command-line flag, then the
``--config`` file, then (for ``seed`` only) the ``MICONTRAST_SEED``
environment variable, then the built-in default.

Config files hold one ``key = value`` per line; ``#`` starts a comment and
keys are flag names with or without the leading dashes (``-`` and ``_`` are
interchangeable).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import DomainError, SamplerError, ShapeError
from .experiments import (StaircaseConfig, resolve_alpha, run_bias_variance_sweep,
                          run_staircase, run_timing_parity)
from .numerics import RngState
from .objectives import CPC, MLCPC, AlphaSchedule, ObjectiveSpec, alpha_min
from .oracles import (SAMPLERS, BinaryWorld, binary_cpc_oracle, binary_mlcpc_oracle,
                      binary_true_mi, exchangeable_bound, exchangeable_bound_mc,
                      gaussian_true_mi)
from .svg import write_line_plot

SEED_ENV = "MICONTRAST_SEED"

log = logging.getLogger("micontrast")


class UsageError(Exception):
    pass


# value converters ---------------------------------------------------------------

def _int(s: str) -> int:
    return int(s)


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _seed(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("must be a 64-bit unsigned integer")
    return v


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN not allowed")
    return v


def _alpha(s: str) -> float | str:
    s = s.strip()
    return "auto" if s.lower() == "auto" else _float(s)


def _list(conv: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        items = [t.strip() for t in s.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(t) for t in items]
    return parse


def _schedule(s: str) -> tuple[float, float, int]:
    parts = [t.strip() for t in s.split(",")]
    if len(parts) != 3:
        raise ValueError("expected start,end,steps")
    return _float(parts[0]), _float(parts[1]), _pos_int(parts[2])


def _choice(*opts: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in opts:
            raise ValueError(f"choose from {', '.join(opts)}")
        return s
    return parse


def _flag(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _mismatch(s: str) -> float:
    return -math.inf if s.strip().lower() in ("hard", "-inf") else _float(s)


# key -> (converter, default); default None means "required" or "absent"
ESTIMATE_KEYS = {
    "objective": (_choice(CPC, MLCPC), None),
    "alpha": (_alpha, None),
    "alpha_schedule": (_schedule, None),
    "n": (_pos_int, "128"),
    "m": (_pos_int, "128"),
    "d": (_pos_int, "20"),
    "levels": (_list(_float), "2,4,6,8,10"),
    "iters": (_pos_int, "1000"),
    "critic": (_choice("joint", "separable"), "joint"),
    "hidden": (_list(_pos_int), "256,256"),
    "embed_dim": (_pos_int, "32"),
    "lr": (_float, "0.001"),
    "negatives": (_choice("fresh", "shuffle"), "fresh"),
    "seed": (_seed, "0"),
    "out": (str, None),
    "svg": (str, None),
}
ORACLE_KEYS = {
    "p": (_list(_float), None),
    "n": (_list(_pos_int), None),
    "m": (_list(_pos_int), None),
    "alpha": (_list(_alpha), None),
    "d": (_pos_int, "20"),
    "rho": (_list(_float), None),
    "mismatch_logit": (_mismatch, "hard"),
    "match_logit": (_float, "0"),
    "sampler": (_choice(*SAMPLERS), "lognormal"),
    "trials": (_pos_int, "100000"),
    "seed": (_seed, "0"),
    "out": (str, None),
}
SWEEP_KEYS = {
    "p": (_float, "0.5"),
    "n": (_list(_pos_int), None),
    "m": (_list(_pos_int), None),
    "alpha": (_list(_alpha), "auto,1"),
    "objective": (_list(_choice(CPC, MLCPC)), "cpc,mlcpc"),
    "timing": (_flag, "false"),
    "updates": (_pos_int, "200"),
    "critic": (_choice("joint", "separable"), "joint"),
    "d": (_pos_int, "20"),
    "seed": (_seed, "0"),
    "out": (str, None),
    "svg": (str, None),
}
COMMAND_KEYS = {"estimate": ESTIMATE_KEYS, "oracle": ORACLE_KEYS, "sweep": SWEEP_KEYS}


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)
    oracle_kind: str | None = None

    def __getitem__(self, key):
        return self.values[key]


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def resolve_config(command: str, flags: dict[str, str | None], config_path=None,
                   env=None, oracle_kind=None) -> RunConfig:
    """Merge flag values, config-file values, env seed and defaults, then convert."""
    env = os.environ if env is None else env
    keys = COMMAND_KEYS[command]
    file_values = read_config_file(config_path) if config_path else {}
    unknown = set(file_values) - set(keys)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    values, sources = {}, {}
    for key, (conv, default) in keys.items():
        if flags.get(key) is not None:
            raw, src = flags[key], "flag"
        elif key in file_values:
            raw, src = file_values[key], "config"
        elif key == "seed" and env.get(SEED_ENV):
            raw, src = env[SEED_ENV], "env"
        else:
            raw, src = default, "default"
        if raw is None:
            values[key] = None
            continue
        try:
            values[key] = conv(raw)
        except ValueError as e:
            raise UsageError(f"invalid value for {key} ({src}): {raw!r}: {e}") from e
        sources[key] = src
    log.debug("resolved %s config: %s", command,
              ", ".join(f"{k}={values[k]!r} ({s})" for k, s in sources.items()))
    return RunConfig(command, values, sources, oracle_kind)


# output helpers -----------------------------------------------------------------

@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _svg_path(cfg: RunConfig) -> str | None:
    svg = cfg["svg"]
    if svg is None:
        return None
    if svg:
        return svg
    out = cfg["out"]
    if out in (None, "-"):
        raise UsageError("--svg without a path needs --out <file>")
    return str(Path(out).with_suffix(".svg"))


def _try_svg(path, series, **kw) -> None:
    # plotting problems never change CSV content or the exit code
    try:
        write_line_plot(path, series, **kw)
    except (OSError, ValueError) as e:
        log.warning("could not write SVG %s: %s", path, e)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])


# commands -----------------------------------------------------------------------

def _staircase_config(cfg: RunConfig) -> StaircaseConfig:
    if cfg["objective"] is None:
        raise UsageError("missing required setting: --objective {cpc,mlcpc}")
    if cfg["alpha"] is not None and cfg["alpha_schedule"] is not None:
        raise UsageError("--alpha and --alpha-schedule are mutually exclusive")
    schedule = None
    if cfg["alpha_schedule"] is not None:
        schedule = AlphaSchedule(*cfg["alpha_schedule"])
    sc = StaircaseConfig(
        d=cfg["d"], n=cfg["n"], m=cfg["m"], levels=tuple(cfg["levels"]),
        iters_per_level=cfg["iters"], critic=cfg["critic"], hidden=tuple(cfg["hidden"]),
        embed_dim=cfg["embed_dim"], objective=cfg["objective"],
        alpha=1.0 if cfg["alpha"] is None else cfg["alpha"], schedule=schedule,
        lr=cfg["lr"], seed=cfg["seed"], negatives=cfg["negatives"])
    sc.validate()
    return sc


def cmd_estimate(cfg: RunConfig) -> int:
    sc = _staircase_config(cfg)
    svg = _svg_path(cfg)
    for a in sc.alphas_used():
        if not ObjectiveSpec(sc.objective, a).bound_valid(sc.n, sc.m):
            log.warning("alpha=%g is outside the proven lower-bound range for %s at n=%d, m=%d",
                        a, sc.objective, sc.n, sc.m)
    trace = run_staircase(sc)
    with _output(cfg["out"]) as fh:
        trace.to_csv(fh)
    if svg and len(trace):
        _try_svg(svg, [("estimate", trace.iters, trace.estimates),
                       ("smoothed", trace.iters, trace.smoothed),
                       ("true MI", trace.iters, trace.true_mi)],
                 title=f"{sc.objective} estimate (n={sc.n}, m={sc.m})",
                 xlabel="iteration", ylabel="nats")
    if trace.aborted:
        print(f"error: run aborted: {trace.aborted}", file=sys.stderr)
        return 1
    return 0


ORACLE_HEADER = ("n", "m", "alpha", "p", "mean", "variance", "true_mi", "bound_valid")


def cmd_oracle(cfg: RunConfig) -> int:
    kind = cfg.oracle_kind
    if kind == "true-mi":
        if cfg["rho"] is not None:
            rows = []
            for rho in cfg["rho"]:
                rows.append((cfg["d"], rho, gaussian_true_mi(cfg["d"], rho)))
            header = ("d", "rho", "true_mi")
        elif cfg["p"] is not None:
            rows = [(p, binary_true_mi(p)) for p in cfg["p"]]
            header = ("p", "true_mi")
        else:
            raise UsageError("true-mi needs --rho (Gaussian) or --p (binary)")
    elif kind == "exchangeable":
        for key in ("n", "m", "alpha"):
            if cfg[key] is None:
                raise UsageError(f"missing required setting: --{key}")
        cells = []
        for n in cfg["n"]:
            for m in cfg["m"]:
                for a in cfg["alpha"]:
                    alpha = resolve_alpha(a, n, m)
                    bound = exchangeable_bound(m, alpha)
                    cells.append((n, m, alpha, bound))
        rows = []
        for k, (n, m, alpha, bound) in enumerate(cells):
            est, se = exchangeable_bound_mc(RngState(cfg["seed"], k), n, m, alpha,
                                            cfg["sampler"], cfg["trials"])
            rows.append((n, m, alpha, cfg["sampler"], cfg["trials"], est, se, bound))
        header = ("n", "m", "alpha", "sampler", "trials", "estimate", "stderr", "bound")
    else:
        for key in ("p", "n", "alpha") + (("m",) if kind == "binary-mlcpc" else ()):
            if cfg[key] is None:
                raise UsageError(f"missing required setting: --{key}")
        cells = []
        ms = cfg["m"] if kind == "binary-mlcpc" else [None]
        for n in cfg["n"]:
            for m0 in ms:
                m = n if m0 is None else m0
                for a in cfg["alpha"]:
                    alpha = resolve_alpha(a, n, m)
                    for p in cfg["p"]:
                        world = BinaryWorld(p, cfg["match_logit"], cfg["mismatch_logit"])
                        cells.append((n, m, alpha, world))
        rows = []
        for n, m, alpha, world in cells:
            if kind == "binary-cpc":
                st = binary_cpc_oracle(world, n, alpha)
                valid = ObjectiveSpec(CPC, alpha).bound_valid(n, m)
            else:
                st = binary_mlcpc_oracle(world, n, m, alpha)
                valid = ObjectiveSpec(MLCPC, alpha).bound_valid(n, m)
            rows.append((n, m, alpha, world.p, st.mean, st.variance,
                         binary_true_mi(world.p), valid))
        header = ORACLE_HEADER
    with _output(cfg["out"]) as fh:
        _write_rows(fh, header, rows)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg["timing"]:
        n = (cfg["n"] or [128])
        m = (cfg["m"] or n)
        if len(n) != 1 or len(m) != 1:
            raise UsageError("--timing takes a single --n and --m")
        if cfg["updates"] < 50:
            raise UsageError("--updates must be >= 50")
        sc = StaircaseConfig(d=cfg["d"], n=n[0], m=m[0], levels=(2.0,), critic=cfg["critic"],
                             seed=cfg["seed"])
        sc.validate()
        res = run_timing_parity(sc, cfg["updates"])
        rows = [(CPC, res.cpc_ms, res.ratio), (MLCPC, res.mlcpc_ms, res.ratio)]
        with _output(cfg["out"]) as fh:
            _write_rows(fh, ("objective", "ms_per_update", "parity_ratio"), rows)
        return 0

    ns = cfg["n"] or [3, 5, 9, 17]
    ms = cfg["m"] or ns
    if len(ms) != len(ns):
        raise UsageError("--n and --m lists must have the same length")
    if not 0.0 <= cfg["p"] <= 1.0:
        raise UsageError("--p must lie in [0, 1]")
    svg = _svg_path(cfg)
    result = run_bias_variance_sweep(cfg["p"], list(zip(ns, ms)), cfg["alpha"], cfg["objective"])
    for msg in result.skipped:
        print(f"warning: {msg}", file=sys.stderr)
    with _output(cfg["out"]) as fh:
        result.to_csv(fh)
    if svg and result.rows:
        series = []
        for obj in cfg["objective"]:
            for a in cfg["alpha"]:
                pts = [(r.m, r.bias) for r in result.rows if r.objective == obj and
                       math.isclose(r.alpha, resolve_alpha(a, r.n, r.m))]
                if pts:
                    series.append((f"{obj} alpha={a}", [x for x, _ in pts], [y for _, y in pts]))
        _try_svg(svg, series, title=f"bias vs m (p={cfg['p']})", xlabel="m", ylabel="bias (nats)")
    return 0


# argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="micontrast",
                                     description="Contrastive MI estimators: CPC and ML-CPC.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, svg=True):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        if svg:
            p.add_argument("--svg", nargs="?", const="",
                           help="also write an SVG plot (default path: --out with .svg)")

    est = sub.add_parser("estimate", help="train a critic on the Gaussian MI staircase")
    common(est)
    est.add_argument("--objective", help="cpc or mlcpc (required)")
    est.add_argument("--alpha", help="positive weight, or 'auto' for the smallest valid ML-CPC alpha")
    est.add_argument("--alpha-schedule", dest="alpha_schedule", help="start,end,steps")
    for flag in ("n", "m", "d", "levels", "iters", "critic", "hidden", "lr", "negatives"):
        est.add_argument(f"--{flag}")
    est.add_argument("--embed-dim", dest="embed_dim")

    orc = sub.add_parser("oracle", help="exact binary oracles, true MI, exchangeability MC")
    orc.add_argument("kind", choices=("binary-cpc", "binary-mlcpc", "exchangeable", "true-mi"))
    common(orc, svg=False)
    for flag in ("p", "n", "m", "alpha", "d", "rho", "sampler", "trials"):
        orc.add_argument(f"--{flag}")
    orc.add_argument("--mismatch-logit", dest="mismatch_logit",
                     help="critic log-score of mismatched pairs ('hard' = zero weight)")
    orc.add_argument("--match-logit", dest="match_logit")

    swp = sub.add_parser("sweep", help="exact bias/std sweep, or CPC vs ML-CPC timing")
    common(swp)
    for flag in ("p", "n", "m", "alpha", "objective", "updates", "critic", "d"):
        swp.add_argument(f"--{flag}")
    swp.add_argument("--timing", action="store_const", const="true")
    return parser


COMMANDS = {"estimate": cmd_estimate, "oracle": cmd_oracle, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad syntax
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve_config(args.command, flags, args.config,
                             oracle_kind=getattr(args, "kind", None))
        return COMMANDS[args.command](cfg)
    except (UsageError, DomainError, ShapeError) as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (SamplerError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
