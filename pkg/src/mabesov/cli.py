"""``mabesov`` batch front end.

    mabesov <constants|ai-check|reproduce|besov|sio> --config PATH [--seed S] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 property failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import approx_id, besov, calderon, geometry, ma_sio
from .config import ExperimentConfig, load_config
from .errors import AdmissibilityError, ConfigError, MabesovError, ParameterError, StrictConvexityError
from .measure_grid import build_grid, read_grid_function

log = logging.getLogger("mabesov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4
EXACT_TOL = 1e-8


class PropertyFailure(Exception):
    """A verified property failed; maps to exit code 4."""


def write_csv(path: Path, body: str, config_hash: str):
    """Write ``body`` plus the ``# config_hash=`` line atomically (temp file, then rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    text = body + f"# config_hash={config_hash}\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("wrote %s", path)


def _setup(cfg: ExperimentConfig):
    try:
        pot = geometry.make_potential(cfg.potential, cfg.dim, cfg.lower, cfg.upper,
                                      allow_degenerate=cfg.allow_degenerate)
    except (ParameterError, StrictConvexityError) as exc:
        raise ConfigError(str(exc)) from None
    return pot, build_grid(pot, cfg.resolution)


def _stack(cfg, grid, pot):
    return approx_id.build_stack(grid, pot, cfg.k_min, cfg.k_max, seed=cfg.seed)


def _test_function(cfg, stack):
    if cfg.f_path:
        path = cfg.resolve(cfg.f_path)
        try:
            with open(path, encoding="utf-8") as fh:
                return read_grid_function(fh, stack.grid.size).values
        except OSError as exc:
            raise ConfigError(f"cannot read f.path {path}: {exc}") from None
        except ParameterError as exc:
            raise ConfigError(f"f.path {path}: {exc}") from None
    return stack.in_band_noise(np.random.default_rng(cfg.seed))


def _resolve_params(cfg, eps, label):
    out = []
    for spec, p, q in cfg.besov_params:
        a = spec.resolve(eps)
        if not abs(a) < eps / 4:
            raise ConfigError(f"besov.params: alpha = {spec.text()} = {a:.6g} is inadmissible; "
                              f"|alpha| must be below {label}/4 = {eps / 4:.6g} (measured {label} = {eps:.6g})")
        out.append(besov.BesovParams(a, p, q))
    return out


def cmd_constants(cfg: ExperimentConfig):
    pot, grid = _setup(cfg)
    c = geometry.estimate_constants(grid, pot, samples=cfg.samples, seed=cfg.seed)
    body = "constant,value\n" + "".join(
        f"{name},{v}\n" if isinstance(v, int) else f"{name},{float(v)!r}\n" for name, v in c.as_rows())
    write_csv(cfg.output_dir / "constants.csv", body, cfg.hash)
    return c


def cmd_ai_check(cfg: ExperimentConfig):
    pot, grid = _setup(cfg)
    stack = _stack(cfg, grid, pot)
    if cfg.inject_asymmetry:
        # negative control: break the symmetry of one kernel entry
        S = stack.S_matrices[stack.k_max].tolil()
        r, c = stack.S_matrices[stack.k_max].nonzero()
        off = np.flatnonzero(r != c)[0]
        S[r[off], c[off]] += 1e-3
        stack.S_matrices[stack.k_max] = S.tocsr()
    report = approx_id.verify_ai_properties(stack, samples=max(10, cfg.samples // 50), seed=cfg.seed)
    write_csv(cfg.output_dir / "ai_properties.csv", report.to_csv(), cfg.hash)
    bad = [p for p in approx_id.EXACT_PROPERTIES if not report.max_violation(p) <= EXACT_TOL]
    if bad:
        raise PropertyFailure(f"exact properties violated: {', '.join(bad)}")
    return report


def cmd_reproduce(cfg: ExperimentConfig):
    pot, grid = _setup(cfg)
    stack = _stack(cfg, grid, pot)
    f = _test_function(cfg, stack)
    rows = calderon.reproduction_sweep(stack, f, cfg.N)
    if not rows:
        raise ConfigError(f"N: no value in {cfg.N} satisfies 1 <= N <= (k_max - k_min)/2 "
                          f"= {(stack.k_max - stack.k_min) / 2}")
    write_csv(cfg.output_dir / "reproduce.csv", calderon.reproduction_csv(rows), cfg.hash)
    if len(stack.scales) >= 4:
        table = calderon.almost_orthogonality_table(stack)
        write_csv(cfg.output_dir / "orthogonality.csv", table.to_csv(), cfg.hash)
    if not any(rn < 1 for _, _, _, rn in rows):
        raise PropertyFailure("no N in the sweep makes R_N a contraction")
    return rows


def cmd_besov(cfg: ExperimentConfig):
    pot, grid = _setup(cfg)
    stack = _stack(cfg, grid, pot)
    params = _resolve_params(cfg, stack.eps_fit, "eps")
    f = _test_function(cfg, stack)
    decomps = [besov.decompose(stack, f, pr) for pr in params]
    write_csv(cfg.output_dir / "besov.csv", besov.besov_csv(decomps), cfg.hash)
    other = besov.alternate_stack(stack)
    eq = besov.equivalence_experiment(stack, other, params[0], ensemble=cfg.ensemble, seed=cfg.seed)
    write_csv(cfg.output_dir / "equivalence.csv", besov.equivalence_csv(eq), cfg.hash)
    if not np.isfinite(eq.K):
        raise PropertyFailure("norm equivalence constant is not finite")
    return decomps, eq


def _family(cfg, stack):
    lo = -stack.k_max if cfg.i_min is None else cfg.i_min
    hi = -stack.k_min if cfg.i_max is None else cfg.i_max
    irange = list(range(lo, hi + 1))
    signs = None if cfg.signs_seed is None else ma_sio.random_signs(irange, cfg.signs_seed)
    build = ma_sio.build_canonical_family if cfg.family_type == "canonical" else ma_sio.build_two_bump_family
    try:
        return build(stack, signs=signs, i_range=(lo, hi), seed=cfg.seed)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def cmd_sio(cfg: ExperimentConfig):
    pot, grid = _setup(cfg)
    stack = _stack(cfg, grid, pot)
    fam = _family(cfg, stack)
    limit_eps = min(stack.eps_fit, fam.gamma * fam.eps1)
    params = _resolve_params(cfg, limit_eps, "min(eps, gamma*eps1)")
    report = ma_sio.verify_D_conditions(fam, seed=cfg.seed)
    write_csv(cfg.output_dir / "sio_conditions.csv", report.to_csv(), cfg.hash)
    rows = []
    for pr in params:
        for s in cfg.sio_seeds:
            r = ma_sio.besov_bound_experiment(fam, stack, pr, ensemble=cfg.ensemble, seed=s)
            rows.append((pr.alpha, pr.p, pr.q, s, r))
    write_csv(cfg.output_dir / "sio_bounds.csv", ma_sio.bounds_csv(rows), cfg.hash)
    failed = [c for c, ok in report.passed.items() if not ok]
    if failed:
        raise PropertyFailure(f"kernel conditions failed: {', '.join(failed)}")
    return report, rows


COMMANDS = {
    "constants": cmd_constants,
    "ai-check": cmd_ai_check,
    "reproduce": cmd_reproduce,
    "besov": cmd_besov,
    "sio": cmd_sio,
}


def _threads():
    value = os.environ.get("MABESOV_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"MABESOV_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"MABESOV_THREADS must be a positive integer, got {value!r}")
    return n


def build_parser():
    ap = argparse.ArgumentParser(prog="mabesov", description="Section-based Littlewood-Paley experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key=value configuration file")
    ap.add_argument("--seed", type=int, default=None, help="override the configured seed")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        threads = _threads()
        if threads is None:
            COMMANDS[args.command](cfg)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                COMMANDS[args.command](cfg)
    except (ConfigError, AdmissibilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropertyFailure as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (MabesovError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
