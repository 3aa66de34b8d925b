"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Frozen values come from the first calibrated run (1D quadratic potential on
[-4, 4], resolution 512, seed 0).
"""

import math
import shutil

import numpy as np
import pytest

from conftest import quadratic_stack, record
from mabesov import build_grid, build_stack, estimate_constants, kernels, make_potential, verify_ai_properties
from mabesov.approx_id import EXACT_PROPERTIES
from mabesov.besov import (
    BesovParams,
    alternate_stack,
    besov_norm,
    column_norm_check,
    duality_pairing_check,
    equivalence_experiment,
)
from mabesov.calderon import CalderonOperator, almost_orthogonality_table, band_identity, find_N0, reproduction_sweep
from mabesov.cli import main
from mabesov.geometry import section_measure
from mabesov.ma_sio import (
    CASES,
    admissible_limit,
    besov_bound_experiment,
    build_canonical_family,
    mean_shifted_family,
    pointwise_ao_check,
    random_signs,
    verify_D_conditions,
)
from mabesov.calderon import op_norm

INF = math.inf

# canonical family, quadratic potential, resolution 512, seed 0
FROZEN_FAMILY = {
    "c1": 0.38720985946161857,
    "c2": 0.1764149164333394,
    "gamma": 0.9859076176981263,
    "eps1": 0.5103673110690219,
}


def triples(eps):
    return [BesovParams(0, 2, 2), BesovParams(eps / 8, 1, 1), BesovParams(-eps / 8, INF, INF)]


def seed_spread(values):
    values = np.asarray(values, dtype=float)
    return float(values.max() / values.min() - 1)


def test_criterion_01_euclidean_reduction():
    pot = make_potential("quadratic", 1, -4, 4)
    grid = build_grid(pot, 512)
    c = estimate_constants(grid, pot, samples=2000, seed=0)
    h = grid.cell_size
    measure_err = max(abs(section_measure(grid, pot, x, t) - 2 * math.sqrt(2 * t))
                      for x in (-1.0, 0.0, 0.37, 1.5) for t in (0.05, 0.2, 0.5, 1.0))
    ok = (abs(c.a0 / 2 - 1) <= 0.05 and abs(c.theta / 4 - 1) <= 0.10
          and abs(c.doubling / math.sqrt(2) - 1) <= 0.02 and measure_err <= 2 * h)
    record(1, ok, f"a0={c.a0:.4f} theta={c.theta:.4f} doubling={c.doubling:.4f} "
                  f"section error={measure_err / h:.2f} cells")
    assert ok


def test_criterion_02_exact_identities():
    worst = 0.0
    setups = [("quadratic", 1, -4, 4, R) for R in (64, 128, 256, 512, 1024)]
    setups += [("quartic_reg", 1, -2, 2, 512), ("quadratic", 2, -1, 1, 64), ("anisotropic2d", 2, -1, 1, 32)]
    for name, dim, lo, hi, R in setups:
        pot = make_potential(name, dim, lo, hi)
        stack = build_stack(build_grid(pot, R), pot)
        rep = verify_ai_properties(stack, samples=4)
        worst = max([worst] + [rep.max_violation(p) for p in EXACT_PROPERTIES])
        # (D3) for the canonical kernels k_i = D_{-i}, both variables, interior masks
        w, ones = stack.weights, np.ones(stack.grid.size)
        for k in stack.scales:
            mask = stack.grid.interior_mask(k)
            D = stack.D_matrices[k]
            d3 = max(np.abs(kernels.apply(D, w, ones))[mask].max(initial=0.0),
                     np.abs(kernels.apply(D.T, w, ones))[mask].max(initial=0.0))
            worst = max(worst, float(d3))
    ok = worst <= 1e-8
    record(2, ok, f"max exact-identity deviation {worst:.2e} over {len(setups)} grids")
    assert ok


def test_criterion_03_almost_orthogonality(quad512):
    table = almost_orthogonality_table(quad512)
    n_scales = len(quad512.scales)
    fits = {p: table.fits[p] for p in (1.0, 2.0, INF)}
    viol = {p: table.envelope_violations(p) for p in fits}
    ok = n_scales >= 8 and all(e > 0 for e, _ in fits.values()) and all(v <= 0.05 for v in viol.values())
    record(3, ok, f"{n_scales} scales; eps " + " ".join(f"p={p:g}:{fits[p][0]:.3f}" for p in fits)
           + "; violations " + " ".join(f"{v:.1%}" for v in viol.values()))
    assert ok


def test_criterion_04_contraction_and_reproduction(quad512):
    N0 = find_N0(quad512, 5)
    I = band_identity(quad512)
    limit = (quad512.k_max - quad512.k_min) // 2
    rn = [CalderonOperator(N, quad512, I_range=I).rn_norm2 for N in range(1, limit + 1)]
    f = quad512.in_band_noise(np.random.default_rng(0))
    rows = reproduction_sweep(quad512, f, range(1, limit + 1))
    res = [r[1] for r in rows]
    ok = (N0 is not None and N0 <= 5
          and all(b < a for a, b in zip(np.log2(rn), np.log2(rn)[1:]))
          and N0 + 2 <= limit and res[N0 + 1] < 0.05
          and all(b <= a + 1e-6 for a, b in zip(res, res[1:])))
    record(4, ok, f"N0={N0}; rn2={np.round(rn, 4).tolist()}; residuals={np.round(res, 4).tolist()}")
    assert ok


def test_criterion_05_besov_axioms(quad256, quad512):
    rng = np.random.default_rng(11)
    homog = tri = True
    for pr in triples(quad512.eps_fit):
        F = quad512.in_band_noise(rng, count=100)
        G = quad512.in_band_noise(rng, count=100)
        base = besov_norm(quad512, F[:, 0], pr)
        homog &= besov_norm(quad512, 2 * F[:, 0], pr) == 2 * base
        homog &= all(abs(besov_norm(quad512, c * F[:, 0], pr) - abs(c) * base) <= 1e-13 * abs(c) * base
                     for c in (3.0, -0.7, 1e3))
        for s in range(100):
            lhs = besov_norm(quad512, F[:, s] + G[:, s], pr)
            tri &= lhs <= (besov_norm(quad512, F[:, s], pr) + besov_norm(quad512, G[:, s], pr)) * (1 + 1e-12)
    Ks = {}
    for R, stack in ((256, quad256), (512, quad512)):
        other = alternate_stack(stack)
        Ks[R] = [equivalence_experiment(stack, other, pr, ensemble=50).K for pr in triples(stack.eps_fit)]
    drift = max(max(a / b, b / a) for a, b in zip(Ks[256], Ks[512]))
    finite = all(np.isfinite(v) for v in Ks[256] + Ks[512])
    ok = homog and tri and finite and drift <= 2
    record(5, ok, f"homogeneity={homog} triangle={tri}; K(512)={np.round(Ks[512], 4).tolist()} drift={drift:.3f}")
    assert ok


def test_criterion_06_column_norms(quad256, quad512):
    common = [k for k in quad256.scales if k in quad512.scales]
    parts, ok = [], True
    for a, b in zip(triples(quad256.eps_fit), triples(quad512.eps_fit)):
        ra = column_norm_check(quad256, a, scales=common).max_ratio
        rb = column_norm_check(quad512, b, scales=common).max_ratio
        drift = max(ra / rb, rb / ra)
        ok &= bool(np.isfinite(ra) and np.isfinite(rb) and drift <= 2)
        parts.append(f"(p={a.p:g}) {rb:.4f} drift {drift:.3f}")
    record(6, ok, "; ".join(parts))
    assert ok


def test_criterion_07_duality(quad512):
    parts, ok = [], True
    for pr in triples(quad512.eps_fit):
        consts = [duality_pairing_check(quad512, pr, ensemble_size=100, seed=s).constant for s in (0, 1, 2)]
        spread = seed_spread(consts)
        ok &= bool(all(np.isfinite(consts)) and spread < 0.20)
        parts.append(f"(p={pr.p:g}) {max(consts):.4f} spread {spread:.1%}")
    record(7, ok, "; ".join(parts))
    assert ok


def test_criterion_08_D_conditions(family512):
    rep = verify_D_conditions(family512)
    shifted = verify_D_conditions(mean_shifted_family(family512))
    measured = {"c1": rep.c1, "c2": rep.c2, "gamma": rep.gamma, "eps1": rep.eps1}
    frozen_ok = all(measured[k] == pytest.approx(v, rel=1e-6) for k, v in FROZEN_FAMILY.items())
    ok = all(rep.passed.values()) and all(np.isfinite(list(measured.values()))) and not shifted.passed["D3"]
    ok = ok and frozen_ok
    record(8, ok, " ".join(f"{k}={v:.4f}" for k, v in measured.items())
           + f"; control D3 violation {shifted.max_violation('D3'):.3f} flagged={not shifted.passed['D3']}")
    assert ok


def test_criterion_09_besov_boundedness(quad256, quad512, family256, family512):
    results, ok = {}, True
    fams = {256: {"plus": family256}, 512: {"plus": family512}}
    for R, stack in ((256, quad256), (512, quad512)):
        signs = random_signs(range(-stack.k_max, -stack.k_min + 1), 0)
        fams[R]["signed"] = build_canonical_family(stack, signs=signs)
    for R, stack in ((256, quad256), (512, quad512)):
        for name, fam in fams[R].items():
            a = admissible_limit(fam) / 2
            for pr in (BesovParams(0, 2, 2), BesovParams(a, 1, 1), BesovParams(-a, INF, INF)):
                ratios = [besov_bound_experiment(fam, stack, pr, ensemble=50, seed=s) for s in (0, 1, 2)]
                results[(R, name, pr.p)] = ratios
                ok &= bool(all(np.isfinite(ratios)) and seed_spread(ratios) < 0.20)
    drift = max(max(max(results[(512, n, p)]) / max(results[(256, n, p)]),
                    max(results[(256, n, p)]) / max(results[(512, n, p)]))
                for n in ("plus", "signed") for p in (2.0, 1.0, INF))
    ok &= drift <= 2
    h2 = {n: op_norm(quad512.grid, fams[512][n].H, 2) for n in ("plus", "signed")}
    l2 = {n: max(results[(512, n, 2.0)]) for n in h2}
    ok &= all(h2[n] / 4 <= l2[n] <= 4 * h2[n] for n in h2)
    spread = max(seed_spread(v) for v in results.values())
    record(9, ok, f"max ratio {max(max(v) for v in results.values()):.4f}; seed spread {spread:.1%}; "
                  f"refinement drift {drift:.3f}; alpha=0 ratio/op_norm2(H) "
                  + " ".join(f"{n}:{l2[n] / h2[n]:.3f}" for n in h2))
    assert ok


def test_criterion_10_pointwise_decay(family512):
    rep = pointwise_ao_check(family512)
    sampled = all(rep.cases[c]["count"] > 0 for c in CASES)
    ok = rep.decay_exponent > 0 and rep.diagonal_dominates and sampled
    record(10, ok, f"decay {rep.decay_exponent:.3f}; diagonal dominates={rep.diagonal_dominates}; cases "
                   + " ".join(f"{c}:{rep.cases[c]['count']}/{rep.cases[c]['fitted']:.2f}" for c in CASES))
    assert ok


CONFIG = """\
potential.name=quadratic
domain.lower=-4
domain.upper=4
resolution=256
samples=400
ensemble=20
besov.params=0,2,2; 0.125*eps,1,1; -0.125*eps,inf,inf
"""


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(CONFIG)
    outputs = {}
    for run in ("first", "second"):
        out = tmp_path / run
        for cmd in ("constants", "ai-check", "reproduce", "besov", "sio"):
            assert main([cmd, "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0, cmd
        outputs[run] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
    same = outputs["first"] == outputs["second"] and len(outputs["first"]) == 8
    record(11, same, f"{len(outputs['first'])} CSV files byte-identical={same}")
    shutil.rmtree(tmp_path / "first")
    assert same
