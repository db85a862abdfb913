"""Acceptance gate: every criterion runs its shipped config at the stated tolerance.

Thresholds are written out here rather than read back from the configs, so a
loosened config cannot make a criterion pass.
"""
import csv
import io
import math
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES
from fracpme.harness.config import load_config
from fracpme.harness.runner import run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
CRITERIA = {
    1: ("acc01_extension_residual", "extension PDE residual and trace"),
    2: ("acc02_dtn", "DtN multiplier vs Richardson difference"),
    3: ("acc03_energy", "gradient-energy identity"),
    4: ("acc04_truncation_decay", "truncation decay bound and slope"),
    5: ("acc05_norms", "norm equivalence and K-functional quadrature"),
    6: ("acc06_mass", "conservation of mass"),
    7: ("acc07_contraction", "L1-contraction"),
    8: ("acc08_comparison", "comparison principle"),
    9: ("acc09_max_principle", "weak maximum principle"),
    10: ("acc10_exact_heat", "linear exact-solution oracle"),
    11: ("acc11_exact_constant", "constant-datum oracle"),
    12: ("acc12_regularization", "regularisation limit"),
    13: ("acc13_truncated_limit", "truncated-to-full solver limit"),
}
_RUNS = {}


def _run(name, out_dir):
    if name not in _RUNS:
        cfg = load_config(CONFIGS / f"{name}.yaml")
        res = run(cfg, out_dir)
        _RUNS[name] = (cfg, res, res.path.read_bytes())
    return _RUNS[name]


def _rows(name, out_dir, case=None):
    _, _, data = _run(name, out_dir)
    rows = list(csv.DictReader(io.StringIO(data.decode())))
    return [r for r in rows if case is None or r["case"] == case]


def _f(row, key):
    return float(row[key])


def _report(num, ok, detail):
    ACCEPTANCE_LINES.append((num, CRITERIA[num][1], bool(ok), detail))
    print(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {CRITERIA[num][1]}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def test_c01_extension_residual(out_dir):
    rows = _rows("acc01_extension_residual", out_dir)
    radii = sorted({_f(r, "radius") for r in rows})
    res = max(_f(r, "pde_residual") for r in rows)
    trace = max(_f(r, "trace_error") for r in rows)
    ok = radii == [1.0, 2.0] and len(rows) == 40 and res <= 1e-6 and trace <= 1e-14
    _report(1, ok, f"{len(rows)} fields on r={radii}, max residual {res:.3e} <= 1e-6, trace error {trace:.1e} <= 1e-14")


def test_c02_dtn(out_dir):
    rows = _rows("acc02_dtn", out_dir)
    err = max(_f(r, "dtn_error") for r in rows)
    ok = len(rows) == 20 and err <= 1e-6
    _report(2, ok, f"{len(rows)} fields, max coefficient error {err:.3e} <= 1e-6")


def test_c03_energy(out_dir):
    rows = _rows("acc03_energy", out_dir)
    full = max(_f(r, "energy_full_rel") for r in rows)
    trunc = max(_f(r, "energy_truncated_rel") for r in rows)
    ok = full <= 1e-12 and trunc <= 1e-9 and all(r["passed"] == "true" for r in rows)
    _report(3, ok, f"full rel err {full:.2e} <= 1e-12, truncated vs quadrature {trunc:.2e} <= 1e-9")


def test_c04_truncation_decay(out_dir):
    grid = _rows("acc04_truncation_decay", out_dir, "field")
    worst = max(_f(r, "exact_gap") / _f(r, "bound") for r in grid)
    s = _rows("acc04_truncation_decay", out_dir, "summary")[0]
    slope, expected = _f(s, "fitted_slope"), -2 * math.sqrt(_f(s, "eigenvalue"))
    rel = abs(slope - expected) / abs(expected)
    ok = len(grid) == 100 and worst <= 1.0 and rel <= 0.05
    _report(4, ok, f"20x5 grid max exact/bound {worst:.3f} <= 1, slope {slope:.5f} vs {expected:.1f} ({rel:.2%} <= 5%)")


def test_c05_norms(out_dir):
    rows = _rows("acc05_norms", out_dir)
    up = max(_f(r, "hm_over_h12") for r in rows)
    lo = max(_f(r, "h12_over_hm") for r in rows)
    q = max(_f(r, "k_quadrature_rel") for r in rows)
    c_up, c_lo = math.sqrt((2 + math.pi) / math.pi), math.sqrt(math.pi / 2)
    ok = len(rows) == 1000 and up <= c_up and lo <= c_lo and q <= 1e-6
    _report(5, ok, f"1000 fields, max ratios {up:.4f} <= {c_up:.4f} and {lo:.4f} <= {c_lo:.4f}, quadrature rel {q:.1e} <= 1e-6")


def test_c06_mass(out_dir):
    cfg, _, _ = _run("acc06_mass", out_dir)
    rows = _rows("acc06_mass", out_dir)
    drift = max(_f(r, "mass_drift") for r in rows)
    ms = sorted({_f(r, "m") for r in rows})
    laws = sorted({r["law"] for r in rows})
    settings_ok = cfg.solver["dt"] == 1e-3 and cfg.solver["newton_tol"] == 1e-10 and cfg.geometry["modes"] == 64
    ok = ms == [1.0, 2.0, 3.0] and laws == ["constant", "linear"] and settings_ok and drift <= 1e-7
    _report(6, ok, f"m in {ms} on {laws} circles, N=64, dt=1e-3, max |mass(t)-mass(0)| {drift:.2e} <= 1e-7")


def test_c07_contraction(out_dir):
    pairs = _rows("acc07_contraction", out_dir, "pair")
    dts = sorted({_f(r, "dt") for r in pairs}, reverse=True)
    base = [_f(r, "violation") for r in pairs if _f(r, "dt") == dts[0]]
    half = [_f(r, "violation") for r in pairs if _f(r, "dt") == dts[1]]
    ratio_ok = all(h <= 0.6 * b for b, h in zip(base, half))
    ok = dts == [1e-3, 5e-4] and len(base) == 5 and max(base) <= 1e-6 and ratio_ok
    _report(7, ok, f"5 pairs, baseline violation max {max(base):.2e} <= 1e-6, at dt/2 max {max(half):.2e} (<= 0.6x baseline per pair)")


def test_c08_comparison(out_dir):
    rows = _rows("acc08_comparison", out_dir)
    gap = min(_f(r, "min_ordered_gap") for r in rows)
    ok = gap >= -1e-6
    _report(8, ok, f"{len(rows)} ordered pairs, min pointwise u_high - u_low {gap:.3e} >= -1e-6")


def test_c09_max_principle(out_dir):
    rows = _rows("acc09_max_principle", out_dir)
    excess = max(_f(r, "maxprinciple_excess") for r in rows)
    ok = excess <= 1e-8
    _report(9, ok, f"{len(rows)} runs, max sup_t ||u||e^(-lt) - ||u0|| = {excess:.2e} <= 1e-8")


def test_c10_exact_heat(out_dir):
    s = _rows("acc10_exact_heat", out_dir, "summary")[0]
    dts = [_f(r, "dt") for r in _rows("acc10_exact_heat", out_dir, "dt")]
    order, err = _f(s, "observed_order"), _f(s, "finest_error")
    ok = dts == [1e-2, 5e-3, 2.5e-3] and abs(order - 1.0) <= 0.2 and err < 1e-3
    _report(10, ok, f"observed order {order:.4f} in 1.0 +- 0.2, final L2 error at dt=2.5e-3 {err:.3e} < 1e-3")


def test_c11_exact_constant(out_dir):
    rows = _rows("acc11_exact_constant", out_dir)
    err = max(_f(r, "max_error") for r in rows)
    fams = sorted({r["family"] for r in rows})
    ok = fams == ["circle", "sphere"] and err <= 1e-8
    _report(11, ok, f"{len(rows)} runs on {fams}, max error {err:.2e} <= 1e-8")


def test_c12_regularization(out_dir):
    pairs = _rows("acc12_regularization", out_dir, "pair")
    gaps = [_f(r, "l2_time_gap") for r in pairs]
    direct = _f(_rows("acc12_regularization", out_dir, "direct")[0], "l2_time_gap")
    ks = [(_f(r, "k_low"), _f(r, "k_high")) for r in pairs]
    ok = ks == [(10, 30), (30, 100)] and gaps[0] > gaps[1] and direct <= gaps[0]
    _report(12, ok, f"gaps {gaps[0]:.3e} > {gaps[1]:.3e}, gap(k=100, direct) {direct:.3e} <= {gaps[0]:.3e}")


def test_c13_truncated_limit(out_dir):
    rows = _rows("acc13_truncated_limit", out_dir, "R")
    Rs = [_f(r, "R") for r in rows]
    gaps = [_f(r, "l2_time_gap") for r in rows]
    ok = Rs == [1, 2, 4, 8] and all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    _report(13, ok, "gaps " + " > ".join(f"{g:.3e}" for g in gaps) + " over R = 1, 2, 4, 8")


def test_c14_determinism(out_dir, tmp_path):
    differ = []
    for num, (name, _) in CRITERIA.items():
        cfg, _, first = _run(name, out_dir)
        again = run(cfg, tmp_path / name).path.read_bytes()
        if again != first:
            differ.append(name)
    ok = not differ
    detail = "all 13 config CSVs byte-identical on rerun" if ok else f"differ: {', '.join(differ)}"
    ACCEPTANCE_LINES.append((14, "determinism", ok, detail))
    print(f"criterion 14 {'PASS' if ok else 'FAIL'}  determinism: {detail}")
    assert ok, detail
