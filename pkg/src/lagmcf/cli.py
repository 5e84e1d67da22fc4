"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 numerical abort, 3 I/O or file
format failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    CSVFormatError,
    DiagnosticsSeries,
    SolitonSpec,
    decay_report,
    first_increase,
    preservation_report,
    soliton_residual,
)
from .flow import SCHEMES, BlowupError, FlowState, StepControl, run
from .geometry import hessian_eig_extremes, pinch_threshold
from .grid import TWO_PI, GridSpec, LGFError, hessian, read_lgf, write_lgf
from .initdata import (
    PRESET_NAMES,
    Preset,
    PresetError,
    RescaleError,
    make_preset,
    mollifier_sequence,
    mollify,
    parabolic_rescale,
)

log = logging.getLogger("lagmcf")

EXIT_OK, EXIT_INVALID, EXIT_ABORT, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    """A rejected configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    ndim: int = 1
    npts: list = field(default_factory=lambda: [128])
    extent: list = field(default_factory=lambda: [TWO_PI])
    preset: str = "cosine"
    preset_params: dict = field(default_factory=dict)
    mollify_tau: Optional[float] = None
    sigma: float = 0.5
    scheme: str = "rk2"
    t_end: float = 1.0
    sample_every: int = 10
    eps_pinch: object = 0.0  # a number, or "auto" for the threshold of the initial data
    delta: float = 0.1
    out_field: str = "final.lgf"
    out_csv: str = "diagnostics.csv"

    # nested JSON sections and the flat keys they expand to
    _SECTIONS = {
        "grid": {"ndim": "ndim", "npts": "npts", "extent": "extent"},
        "control": {"sigma": "sigma", "scheme": "scheme", "t_end": "t_end", "sample_every": "sample_every"},
        "output": {"field": "out_field", "csv": "out_csv"},
    }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        flat = {}
        names = {f for f in cls.__dataclass_fields__}
        for key, val in doc.items():
            if key in cls._SECTIONS:
                if not isinstance(val, dict):
                    raise ConfigError(f"{key}: expected an object")
                for sub, v in val.items():
                    if sub not in cls._SECTIONS[key]:
                        raise ConfigError(f"{key}.{sub}: unknown key")
                    flat[cls._SECTIONS[key][sub]] = v
            elif key == "preset" and isinstance(val, dict):
                for sub, v in val.items():
                    if sub == "name":
                        flat["preset"] = v
                    elif sub == "params":
                        flat["preset_params"] = v
                    else:
                        raise ConfigError(f"preset.{sub}: unknown key")
            elif key in names:
                flat[key] = val
            else:
                raise ConfigError(f"{key}: unknown key")
        return cls(**flat)

    def validate(self) -> None:
        if not isinstance(self.ndim, int) or isinstance(self.ndim, bool) or self.ndim not in (1, 2, 3):
            raise ConfigError(f"grid.ndim: must be 1, 2 or 3, got {self.ndim!r}")
        npts = self.npts if isinstance(self.npts, list) else [self.npts] * self.ndim
        if len(npts) == 1:
            npts = npts * self.ndim
        if len(npts) != self.ndim or any(not isinstance(n, int) or n < 8 or n % 2 for n in npts):
            raise ConfigError(f"grid.npts: need {self.ndim} even integers >= 8, got {self.npts!r}")
        self.npts = list(npts)
        extent = self.extent if isinstance(self.extent, list) else [self.extent]
        if len(extent) == 1:
            extent = extent * self.ndim
        if len(extent) != self.ndim or any(not _is_number(L) or not L > 0 for L in extent):
            raise ConfigError(f"grid.extent: need {self.ndim} positive numbers, got {self.extent!r}")
        self.extent = [float(L) for L in extent]
        if self.preset not in PRESET_NAMES:
            raise ConfigError(f"preset.name: expected one of {', '.join(PRESET_NAMES)}, got {self.preset!r}")
        if not isinstance(self.preset_params, dict):
            raise ConfigError("preset.params: expected an object")
        if self.mollify_tau is not None and (not _is_number(self.mollify_tau) or not self.mollify_tau > 0):
            raise ConfigError(f"mollify_tau: must be positive, got {self.mollify_tau!r}")
        if not _is_number(self.sigma) or not 0 < self.sigma <= 1:
            raise ConfigError(f"control.sigma: must lie in (0, 1], got {self.sigma!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"control.scheme: expected one of {', '.join(SCHEMES)}, got {self.scheme!r}")
        if not _is_number(self.t_end) or not (0 <= self.t_end < float("inf")):
            raise ConfigError(f"control.t_end: must be a finite number >= 0, got {self.t_end!r}")
        if not isinstance(self.sample_every, int) or self.sample_every < 1:
            raise ConfigError(f"control.sample_every: must be a positive integer, got {self.sample_every!r}")
        if self.eps_pinch != "auto" and (not _is_number(self.eps_pinch) or not 0 <= self.eps_pinch < 1):
            raise ConfigError(f"eps_pinch: must be \"auto\" or lie in [0, 1), got {self.eps_pinch!r}")
        if not _is_number(self.delta) or not 0 < self.delta < 1:
            raise ConfigError(f"delta: must lie in (0, 1), got {self.delta!r}")
        for name in ("out_field", "out_csv"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                raise ConfigError(f"output.{name[4:]}: must be a nonempty path")

    def grid(self) -> GridSpec:
        return GridSpec.make(tuple(self.npts), tuple(self.extent))

    def control(self) -> StepControl:
        return StepControl(float(self.sigma), self.scheme, float(self.t_end), int(self.sample_every))


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(config: RunConfig) -> int:
    config.validate()
    grid = config.grid()
    try:
        u0 = make_preset(Preset(config.preset, dict(config.preset_params)), grid)
    except PresetError as exc:
        raise ConfigError(f"preset.params: {exc}") from None
    if config.mollify_tau is not None:
        u0 = mollify(u0, float(config.mollify_tau))
    eps = config.eps_pinch
    if eps == "auto":
        lo, hi = hessian_eig_extremes(hessian(u0))
        eps = max(0.0, pinch_threshold(max(-lo, hi)))
    status = EXIT_OK
    try:
        state, series = run(FlowState(u0), config.control(), eps=float(eps))
    except BlowupError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        state, series = exc.state, exc.series
        status = EXIT_ABORT
    write_lgf(config.out_field, state.u)
    series.to_csv(config.out_csv)
    last = series.records[-1] if len(series) else None
    if last is not None:
        print(
            f"t={last.t:.6g} steps={state.step_count} eig=[{last.eig_min:.6g}, {last.eig_max:.6g}] "
            f"sup_H2={last.sup_H2:.6g} eps={float(eps):.6g}"
        )
    return status


def cmd_verify(csv_path, delta: float, eps: Optional[float], tol: float, t_min: float = 0.5, envelope: float = 10.0, rate: float = 1e-8) -> int:
    """Run every check against a diagnostics CSV and print one line per check.

    ``eps`` is informational: ``pinch_min`` was computed by the run that wrote
    the file.
    """
    if not 0 < delta < 1:
        raise ConfigError(f"delta: must lie in (0, 1), got {delta}")
    if tol < 0:
        raise ConfigError(f"tol: must be >= 0, got {tol}")
    series = DiagnosticsSeries.from_csv(Path(csv_path), eps=eps or 0.0)
    if not len(series):
        raise CSVFormatError("no data rows")
    results = []
    pres = preservation_report(series, delta, tol)
    eig_t = pres.first_violation_t if pres.failed_check == "hessian_bound" else None
    results.append(("hessian_bound", eig_t is None, eig_t, f"worst |eig|={pres.worst_eig:.6g} bound={pres.bound:.6g}"))
    # the pinch check is independent of the bound check, so scan it on its own
    pinch = series.column("pinch_min")
    bad = np.nonzero(pinch < -tol)[0]
    pin_t = float(series.column("t")[bad[0]]) if bad.size else None
    results.append(("pinching", pin_t is None, pin_t, f"min pinch={pres.worst_pinch:.6g}" + (f" eps={eps:.6g}" if eps is not None else "")))
    for col in ("osc_theta", "sup_Du"):
        t_bad = first_increase(series, col, rate)
        results.append((f"{col}_nonincreasing", t_bad is None, t_bad, f"rate allowance {rate:g}"))
    t = series.column("t")
    if t[-1] >= t_min:
        dec = decay_report(series, t_min)
        ok = dec.envelope_ok(envelope)
        t_bad = None
        if not ok:
            keep = t >= t_min
            pH, pD = series.column("t_supH2"), series.column("t_supD3u2")
            over = keep & ((pH > envelope * dec.anchor_H2) | (pD > envelope * dec.anchor_D3))
            t_bad = float(t[np.argmax(over)])
        results.append(("decay_envelope", ok, t_bad, f"anchor t={dec.t_anchor:.6g} factor={envelope:g}"))
    else:
        print(f"SKIP decay_envelope: series ends at t={t[-1]:.6g} < t_min={t_min:g}")
    all_ok = True
    for name, ok, t_bad, note in results:
        where = f" at t={t_bad:.6g}" if t_bad is not None else ""
        print(f"{'PASS' if ok else 'FAIL'} {name}{where} ({note})")
        all_ok &= ok
    return EXIT_OK if all_ok else EXIT_INVALID


def cmd_mollify(in_path, out_path=None, tau: Optional[float] = None, k_list=None) -> int:
    if (tau is None) == (k_list is None):
        raise ConfigError("mollify: give exactly one of --tau or --k-list")
    u0 = read_lgf(in_path)
    if tau is not None:
        if not tau > 0:
            raise ConfigError(f"tau: must be positive, got {tau}")
        out = mollify(u0, tau)
        print(f"tau={tau:.17g} sup|u_tau - u|={float(np.max(np.abs(out.values - u0.values))):.6g}")
    else:
        rep = mollifier_sequence(u0, k_list)
        print("k,tau,sup_value_error,sup_gradient_error")
        for k, t, ve, ge in zip(rep.k_list, rep.taus, rep.value_errors, rep.gradient_errors):
            print(f"{k:.17g},{t:.17g},{ve:.17g},{ge:.17g}")
        print(f"gradient errors strictly decreasing: {rep.gradient_strictly_decreasing}")
        out = rep.fields[-1]
    if out_path is not None:
        write_lgf(out_path, out)
    return EXIT_OK


def cmd_soliton(in_path, a, b, c: float, periodic: bool = False) -> int:
    """Residual of the soliton equation for a field read from disk.

    Files hold the full potential, which is periodic only for periodic data,
    so the wrap-around layer is excluded unless ``periodic`` is set.
    """
    u = read_lgf(in_path)
    n = u.grid.ndim
    a = [0.0] * n if a is None else list(a)
    b = [0.0] * n if b is None else list(b)
    if len(a) != n or len(b) != n:
        raise ConfigError(f"a, b: need {n} entries each for a {n}-dimensional field")
    res = soliton_residual(u, SolitonSpec(tuple(a), tuple(b), float(c)), interior=not periodic)
    print(f"residual={res:.17g}")
    return EXIT_OK


def cmd_rescale(paths, times, lam: float, x0, t0: float, out_prefix: str) -> int:
    if len(paths) != len(times):
        raise ConfigError(f"times: got {len(times)} values for {len(paths)} snapshots")
    snaps = [(t, read_lgf(p)) for t, p in zip(times, paths)]
    out = parabolic_rescale(snaps, lam, tuple(int(i) for i in x0), t0)
    for k, (s, f) in enumerate(out):
        path = f"{out_prefix}{k}.lgf"
        write_lgf(path, f)
        print(f"{path} s={s:.17g} sup|u_lam|={float(np.max(np.abs(f.values))):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagmcf", description="Potential-equation simulator for Lagrangian mean curvature flow of graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the flow and write the final field and diagnostics")
    sim.add_argument("--config", help="JSON run configuration; flags override it")
    sim.add_argument("--ndim", type=int)
    sim.add_argument("--npts", type=lambda s: [int(v) for v in s.split(",")])
    sim.add_argument("--extent", type=_floats)
    sim.add_argument("--preset", choices=PRESET_NAMES)
    sim.add_argument("--preset-params", type=json.loads, help="JSON object of preset parameters")
    sim.add_argument("--mollify-tau", type=float)
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--scheme", choices=SCHEMES)
    sim.add_argument("--t-end", type=float)
    sim.add_argument("--sample-every", type=int)
    sim.add_argument("--eps-pinch", type=lambda s: s if s == "auto" else float(s))
    sim.add_argument("--delta", type=float)
    sim.add_argument("--out-field")
    sim.add_argument("--out-csv")

    ver = sub.add_parser("verify", help="check a diagnostics CSV")
    ver.add_argument("csv")
    ver.add_argument("--delta", type=float, default=0.1)
    ver.add_argument("--eps", type=float)
    ver.add_argument("--tol", type=float, default=1e-3)
    ver.add_argument("--t-min", type=float, default=0.5)
    ver.add_argument("--envelope", type=float, default=10.0)
    ver.add_argument("--rate", type=float, default=1e-8)

    mol = sub.add_parser("mollify", help="heat-kernel mollification of a field")
    mol.add_argument("field")
    mol.add_argument("-o", "--output")
    g = mol.add_mutually_exclusive_group(required=True)
    g.add_argument("--tau", type=float)
    g.add_argument("--k-list", type=_floats)

    sol = sub.add_parser("soliton-check", help="residual of the soliton equation")
    sol.add_argument("field")
    sol.add_argument("--a", type=_floats)
    sol.add_argument("--b", type=_floats)
    sol.add_argument("--c", type=float, default=0.0)
    sol.add_argument("--periodic", action="store_true", help="the stored field is periodic; include every point")

    res = sub.add_parser("rescale", help="parabolic rescaling of snapshots")
    res.add_argument("fields", nargs="+")
    res.add_argument("--times", type=_floats, required=True)
    res.add_argument("--lam", type=float, required=True)
    res.add_argument("--x0", type=lambda s: [int(v) for v in s.split(",")], required=True, help="grid index of the base point")
    res.add_argument("--t0", type=float, required=True)
    res.add_argument("-o", "--out-prefix", default="rescaled_")
    return p


_SIM_FLAGS = (
    "ndim", "npts", "extent", "preset", "preset_params", "mollify_tau", "sigma", "scheme",
    "t_end", "sample_every", "eps_pinch", "delta", "out_field", "out_csv",
)


def _load_config(args) -> RunConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from None
    cfg = RunConfig.from_dict(doc)
    for name in _SIM_FLAGS:
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    return cfg


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is a validation failure here
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "simulate":
                return cmd_simulate(_load_config(args))
            if args.command == "verify":
                return cmd_verify(args.csv, args.delta, args.eps, args.tol, args.t_min, args.envelope, args.rate)
            if args.command == "mollify":
                return cmd_mollify(args.field, args.output, args.tau, args.k_list)
            if args.command == "soliton-check":
                return cmd_soliton(args.field, args.a, args.b, args.c, args.periodic)
            if args.command == "rescale":
                return cmd_rescale(args.fields, args.times, args.lam, args.x0, args.t0, args.out_prefix)
    except (OSError, LGFError, CSVFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, PresetError, RescaleError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
