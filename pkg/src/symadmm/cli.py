"""Batch runner: ``symadmm run|validate|certify <config>`` and ``symadmm region``.

Config files are plain ``key = value`` lines. Keys before the first ``[run]``
header are global; each ``[run]`` section adds one parameter row with
``tau``, ``theta`` and optionally ``sigma_tilde``. ``#`` starts a comment.

Example::

    problem = tv
    size = 32
    output = out/tv32

    [run]
    tau = 0.8
    theta = 1.12

Exit codes: 0 success, 1 config error, 2 non-convergence, 3 certificate violation.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admm import AcceptanceError, ConfigurationError, solve
from .oracles import InnerCapExceeded
from .region import (AccelParams, RegionError, region_violations, select_sigma, sigma_tilde_default,
                     theta_upper)

__all__ = ["RunConfig", "RunRow", "ConfigError", "parse_config", "validate_config", "run_config", "main",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_NONCONVERGED", "EXIT_CERTIFICATE"]

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CERTIFICATE = 0, 1, 2, 3


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _size(text):
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) == 1:
        parts = parts * 2
    m, n = (int(p) for p in parts)
    if m < 1 or n < 1:
        raise ValueError("size must be positive")
    return m, n


GLOBAL_KEYS = {
    "problem": str,
    "size": _size,
    "image": str,
    "mu": float,
    "kernel_size": int,
    "kernel_std": float,
    "noise_variance": float,
    "seed": int,
    "beta": float,
    "tol": float,
    "max_outer": int,
    "max_inner": _opt_int,
    "sigma_hat": _opt_float,
    "proximal_system": _bool,
    "monitors": _bool,
    "output": str,
    "workers": int,
    "reference_tol": float,
    "reference_budget": int,
    "reference_beta": _opt_float,
    "qp_n": int,
    "qp_p": int,
    "qp_m": int,
    "qp_g": str,
    "qp_lam": float,
}
RUN_KEYS = {"tau": float, "theta": float, "sigma_tilde": _opt_float}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass
class RunRow:
    tau: float
    theta: float
    sigma_tilde: float | None = None
    line: int = 0


@dataclass
class RunConfig:
    problem: str = "tv"
    size: tuple = (32, 32)
    image: str | None = None
    mu: float = 1e3
    kernel_size: int = 9
    kernel_std: float = 5.0
    noise_variance: float = 1e-4
    seed: int = 0
    beta: float = 1.0
    tol: float = 1e-2
    max_outer: int = 2000
    max_inner: int | None = None
    sigma_hat: float | None = None
    proximal_system: bool = False
    monitors: bool = False
    output: str = "symadmm_out"
    workers: int = 1
    reference_tol: float = 1e-9
    reference_budget: int = 6000
    reference_beta: float | None = None
    qp_n: int = 6
    qp_p: int = 4
    qp_m: int = 4
    qp_g: str = "quadratic"
    qp_lam: float = 0.1
    runs: list = field(default_factory=list)
    path: str = "<string>"
    base_dir: Path = field(default_factory=Path.cwd)
    lines: dict = field(default_factory=dict)

    def where(self, key):
        """``path:line`` of a global key (``path`` alone when it took its default)."""
        return f"{self.path}:{self.lines[key]}" if key in self.lines else self.path

    def sigma_hat_value(self):
        """Explicit ``sigma_hat`` or the per-problem default."""
        if self.sigma_hat is not None:
            return self.sigma_hat
        return 1.0 - 1e-8 if self.problem == "tv" and not self.proximal_system else 0.0

    def image_path(self):
        if self.image is None:
            return None
        p = Path(self.image)
        return p if p.is_absolute() else self.base_dir / p

    def output_dir(self):
        p = Path(self.output)
        return p if p.is_absolute() else self.base_dir / p

    def params(self, row: RunRow) -> AccelParams:
        st = sigma_tilde_default(row.tau, row.theta) if row.sigma_tilde is None else row.sigma_tilde
        return AccelParams(row.tau, row.theta, st, self.sigma_hat_value(), self.beta)


def parse_config(text, path="<string>", base_dir=None) -> RunConfig:
    """Parse config text; raise :class:`ConfigError` with ``path:line: message`` entries."""
    cfg = RunConfig(path=str(path), base_dir=Path(base_dir) if base_dir is not None else Path.cwd())
    diags = []
    row = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if line.startswith("["):
            if line.lower() != "[run]":
                diags.append(f"{where}: unknown section {line}")
                continue
            row = RunRow(math.nan, math.nan, None, lineno)
            cfg.runs.append(row)
            continue
        if "=" not in line:
            diags.append(f"{where}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        table = RUN_KEYS if row is not None else GLOBAL_KEYS
        if key not in table:
            scope = "[run] section" if row is not None else "global section"
            diags.append(f"{where}: unknown key {key!r} in {scope}")
            continue
        try:
            parsed = table[key](value)
        except ValueError as exc:
            diags.append(f"{where}: bad value for {key!r}: {exc}")
            continue
        if row is not None:
            setattr(row, key, parsed)
        else:
            if key in seen:
                diags.append(f"{where}: duplicate key {key!r}")
            seen.add(key)
            cfg.lines[key] = lineno
            setattr(cfg, key, parsed)
    for r in cfg.runs:
        for key in ("tau", "theta"):
            if math.isnan(getattr(r, key)):
                diags.append(f"{path}:{r.line}: [run] section missing {key!r}")
    if diags:
        raise ConfigError(diags)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config ({exc.strerror})"])
    return parse_config(text, path, path.parent)


def validate_config(cfg: RunConfig) -> list:
    """All problems found without running anything; empty when the config is usable."""
    diags = []
    if cfg.problem not in ("tv", "qp"):
        diags.append(f"{cfg.where('problem')}: problem must be 'tv' or 'qp', got {cfg.problem!r}")
    if not cfg.beta > 0:
        diags.append(f"{cfg.where('beta')}: beta must be positive")
    if not cfg.tol > 0:
        diags.append(f"{cfg.where('tol')}: tol must be positive")
    if cfg.max_outer < 1:
        diags.append(f"{cfg.where('max_outer')}: max_outer must be at least 1")
    if cfg.max_inner is not None and cfg.max_inner < 1:
        diags.append(f"{cfg.where('max_inner')}: max_inner must be at least 1")
    if cfg.workers < 1:
        diags.append(f"{cfg.where('workers')}: workers must be at least 1")
    sh = cfg.sigma_hat_value()
    if not 0.0 <= sh < 1.0:
        diags.append(f"{cfg.where('sigma_hat')}: sigma_hat={sh} outside [0, 1)")
    if cfg.problem == "tv":
        if not cfg.mu > 0:
            diags.append(f"{cfg.where('mu')}: mu must be positive")
        if cfg.kernel_size < 1 or cfg.kernel_size % 2 == 0:
            diags.append(f"{cfg.where('kernel_size')}: kernel_size must be odd and positive")
        if not cfg.kernel_std > 0:
            diags.append(f"{cfg.where('kernel_std')}: kernel_std must be positive")
        if not cfg.noise_variance >= 0:
            diags.append(f"{cfg.where('noise_variance')}: noise_variance must be nonnegative")
        img = cfg.image_path()
        if img is not None:
            if not img.is_file():
                diags.append(f"{cfg.where('image')}: image file not found: {img}")
            else:
                try:
                    from .tvapp import read_pgm
                    m, n = read_pgm(img).shape
                    if m < 2 or n < 2:
                        diags.append(f"{cfg.where('image')}: image {img} is {m}x{n}; need at least 2x2")
                except ValueError as exc:
                    diags.append(f"{cfg.where('image')}: {exc}")
    if cfg.problem == "qp":
        if cfg.qp_g not in ("quadratic", "l1"):
            diags.append(f"{cfg.where('qp_g')}: qp_g must be 'quadratic' or 'l1'")
        if min(cfg.qp_n, cfg.qp_p, cfg.qp_m) < 1:
            diags.append(f"{cfg.where('qp_n')}: qp dimensions must be positive")
    for r in cfg.runs:
        lw = f"{cfg.path}:{r.line}"
        if r.sigma_tilde is None:
            try:
                st = sigma_tilde_default(r.tau, r.theta)
            except RegionError as exc:
                bad = region_violations(r.tau, r.theta, 0.0)
                detail = f" and violates {'; '.join(bad)} even with sigma_tilde = 0" if bad else ""
                diags.append(f"{lw}: (tau, theta) = ({r.tau}, {r.theta}): {exc}{detail}; "
                             f"set an admissible sigma_tilde explicitly")
                continue
        else:
            st = r.sigma_tilde
        bad = region_violations(r.tau, r.theta, st)
        if bad:
            diags.append(f"{lw}: (tau, theta, sigma_tilde) = ({r.tau}, {r.theta}, {st}) violates "
                         + "; ".join(bad))
            continue
        if st == 0.0 and sh == 0.0 and cfg.problem == "tv" and not cfg.proximal_system:
            diags.append(f"{lw}: sigma_tilde = sigma_hat = 0 needs proximal_system = true")
    return diags


# --------------------------------------------------------------------------
# execution

def _build(cfg: RunConfig):
    """Problem plus (for tv) the instance used for PSNR and image output."""
    if cfg.problem == "qp":
        from .qp import make_qp
        problem, _ = make_qp(cfg.qp_n, cfg.qp_p, cfg.qp_m, seed=cfg.seed, g=cfg.qp_g, lam=cfg.qp_lam)
        return problem, None
    from .tvapp import TVProblemSpec, assemble_tv_problem, make_instance, read_pgm
    spec = TVProblemSpec(cfg.mu, cfg.kernel_size, cfg.kernel_std, cfg.noise_variance, cfg.seed)
    img = cfg.image_path()
    if img is not None:
        inst = make_instance(0, spec=spec, original=read_pgm(img), name=img.stem)
    else:
        inst = make_instance(cfg.size[0], cfg.size[1], spec=spec)
    return assemble_tv_problem(spec, inst.degraded, cfg.beta, cfg.proximal_system), inst


def _fmt_num(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _row_stem(i, row: RunRow):
    return f"run{i:02d}_tau{row.tau:g}_theta{row.theta:g}"


def _execute(cfg: RunConfig, i: int, certify: bool, reference=None) -> dict:
    """Solve one parameter row and write its artifacts; returns its summary row."""
    from .certify import CertificateMonitor
    row = cfg.runs[i]
    params = cfg.params(row)
    problem, inst = _build(cfg)
    outdir = cfg.output_dir()
    stem = _row_stem(i, row)
    monitors = []
    if certify or cfg.monitors:
        monitors.append(CertificateMonitor(reference=reference, reference_tol=cfg.reference_tol,
                                           reference_budget=cfg.reference_budget,
                                           reference_beta=cfg.reference_beta))
    summary = {"run": i, "tau": params.tau, "theta": params.theta, "sigma_tilde": params.sigma_tilde,
               "sigma_hat": params.sigma_hat, "Out": 0, "Inner": 0, "Time": 0.0, "converged": False,
               "psnr_degraded": math.nan, "psnr_restored": math.nan, "violations": 0, "error": ""}
    try:
        report = solve(problem, params, tol=cfg.tol, max_outer=cfg.max_outer, max_inner=cfg.max_inner,
                       monitors=monitors)
    except (InnerCapExceeded, AcceptanceError) as exc:
        summary["error"] = str(exc)
        return summary
    summary.update(Out=report.outer, Inner=report.inner, Time=report.time, converged=report.converged)
    report.to_csv(outdir / f"{stem}.csv")
    if monitors:
        mon = monitors[0]
        bad = mon.violations()
        summary["violations"] = len(bad)
        with open(outdir / f"{stem}_certificate.txt", "w") as fh:
            for line in mon.warnings:
                fh.write(f"warning: {line}\n")
            fh.write(f"sigma={mon.certs.sigma!r} lambda_M={mon.certs.lambda_M!r} d0={mon.certs.d0!r}\n")
            fh.write(f"C1={mon.certs.C1!r} C2={mon.certs.C2!r} C3={mon.certs.C3!r}\n")
            for line in bad:
                fh.write(line + "\n")
            if not bad:
                fh.write("all certificate checks passed\n")
    if inst is not None:
        from .tvapp import psnr, write_pgm, write_raw
        img = report.state.x_tilde.reshape(inst.shape, order="F")
        summary["psnr_degraded"] = psnr(inst.original, inst.degraded)
        summary["psnr_restored"] = psnr(inst.original, img)
        write_pgm(outdir / f"{stem}_restored.pgm", img)
        write_raw(outdir / f"{stem}_restored.f64", img)
    return summary


SUMMARY_COLUMNS = ["run", "tau", "theta", "sigma_tilde", "sigma_hat", "Out", "Inner", "Time", "converged",
                   "psnr_degraded", "psnr_restored", "violations", "error"]


def _csv_value(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    text = str(v)
    return '"' + text.replace('"', '""') + '"' if ("," in text or '"' in text) else text


def _text_table(rows):
    head = ["tau", "theta", "sigma_tilde", "Out", "Inner", "Time", "conv", "PSNR_in", "PSNR_out"]
    body = []
    for r in rows:
        body.append([f"{r['tau']:g}", f"{r['theta']:g}", f"{r['sigma_tilde']:.3f}", str(r["Out"]),
                     str(r["Inner"]), f"{r['Time']:.2f}", "yes" if r["converged"] else "no",
                     "-" if math.isnan(r["psnr_degraded"]) else f"{r['psnr_degraded']:.2f}",
                     "-" if math.isnan(r["psnr_restored"]) else f"{r['psnr_restored']:.2f}"])
    widths = [max(len(h), *(len(b[j]) for b in body)) if body else len(h) for j, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def run_config(cfg: RunConfig, certify=False, out=None) -> int:
    out = sys.stdout if out is None else out
    diags = validate_config(cfg)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    outdir = cfg.output_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    reference = None
    if cfg.runs and (certify or cfg.monitors):
        from .certify import reference_solution
        problem, _ = _build(cfg)
        beta = cfg.reference_beta if cfg.reference_beta is not None else cfg.beta
        reference = reference_solution(problem, cfg.params(cfg.runs[0]), None, cfg.reference_tol,
                                       cfg.reference_budget, beta)
    if cfg.workers > 1 and len(cfg.runs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_execute, cfg, i, certify, reference) for i in range(len(cfg.runs))]
            rows = [f.result() for f in futures]
    else:
        rows = [_execute(cfg, i, certify, reference) for i in range(len(cfg.runs))]
    with open(outdir / "summary.csv", "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_csv_value(r[c]) for c in SUMMARY_COLUMNS) + "\n")
    table = _text_table(rows)
    (outdir / "summary.txt").write_text(table)
    out.write(table)
    for r in rows:
        if r["error"]:
            print(f"run {r['run']}: {r['error']}", file=sys.stderr)
    if any(r["violations"] for r in rows):
        return EXIT_CERTIFICATE
    if not all(r["converged"] for r in rows):
        return EXIT_NONCONVERGED
    return EXIT_OK


def region_report(tau, theta, sigma_tilde=None, out=None) -> int:
    """Print region membership and the default tolerance; exit 0 when admissible."""
    out = sys.stdout if out is None else out
    st_default = None
    try:
        st_default = sigma_tilde_default(tau, theta)
    except RegionError as exc:
        out.write(f"default sigma_tilde: undefined ({exc})\n")
    else:
        out.write(f"default sigma_tilde: {st_default:.3f} ({st_default!r})\n")
    st = sigma_tilde if sigma_tilde is not None else (st_default if st_default is not None else 0.0)
    bad = region_violations(tau, theta, st)
    out.write(f"theta range for default: ({0.0 - tau:g}, {theta_upper(tau):.6g})\n" if -1 < tau < 1 else "")
    if bad:
        out.write(f"(tau, theta, sigma_tilde) = ({tau}, {theta}, {st}): NOT admissible\n")
        for b in bad:
            out.write(f"  violated: {b}\n")
        return EXIT_CONFIG
    out.write(f"(tau, theta, sigma_tilde) = ({tau}, {theta}, {st}): admissible\n")
    out.write(f"certificate sigma (sigma_hat = 0): {select_sigma(tau, theta, st):.6g}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="symadmm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name, help_ in (("run", "run every parameter row"), ("validate", "check a config without running"),
                        ("certify", "run with the full certificate suite")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
    p = sub.add_parser("region", help="check (tau, theta[, sigma_tilde]) against the admissible region")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--sigma-tilde", type=float, default=None)
    args = parser.parse_args(argv)

    if args.cmd == "region":
        return region_report(args.tau, args.theta, args.sigma_tilde)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "validate":
        diags = validate_config(cfg)
        for d in diags:
            print(d, file=sys.stderr)
        if not diags:
            print(f"{cfg.path}: ok ({len(cfg.runs)} run rows)")
        return EXIT_CONFIG if diags else EXIT_OK
    try:
        return run_config(cfg, certify=args.cmd == "certify")
    except ConfigurationError as exc:
        print(f"{cfg.path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
