import math

import numpy as np
import pytest

from oracles import mp_chi2_sf
from srasym.gaussian import (
    GaussianInstance,
    achievability_code_sizes,
    build_partition,
    chi2_sf,
    gaussian_achievability_bound,
    gaussian_mdc,
    gaussian_mdc_trend,
    gaussian_one_shot_converse,
    gaussian_rd,
    gaussian_region,
    partition_preset,
    rate_function,
)
from srasym.normal import q_func

G = GaussianInstance(1.0, 0.25, 0.0625)
INSTANCES = [(1, 0.25, 0.0625), (4, 1, 0.25), (2, 0.5, 0.1)]


def test_rates_and_dispersion():
    ry, rz, jy, jz = gaussian_rd(G)
    assert ry == pytest.approx(0.693147, abs=1e-6)
    assert gaussian_rd(GaussianInstance(1.0, 1.0, 0.5))[0] == 0.0
    # Var[j_Y] for X ~ N(0, 1) by Gauss-Hermite quadrature
    t, w = np.polynomial.hermite_e.hermegauss(40)
    w = w / w.sum()
    vals = jy(t)
    assert float(w @ vals) == pytest.approx(ry, abs=1e-12)
    assert float(w @ (vals - ry) ** 2) == pytest.approx(0.5, abs=1e-12)


def test_rate_function():
    assert rate_function(0.0) == 0.0
    assert rate_function(0.5) == pytest.approx(0.359141, abs=1e-6)
    assert rate_function(1e-3) / 1e-6 == pytest.approx(1.0, rel=1e-2)
    xs = np.linspace(0.01, 2, 50)
    vals = np.array([rate_function(x) for x in xs])
    assert np.all(vals > 0)
    assert np.all(np.diff(vals, 2) > 0)


def test_partition():
    part = partition_preset(1000)
    assert part.xi == pytest.approx(0.1) and part.delta == pytest.approx(0.001)
    assert part.k == math.ceil((math.exp(0.2) - math.exp(-0.2)) * 1000) + 1 == 404
    half = build_partition(0.1, 0.0005)
    assert half.k / part.k == pytest.approx(2.0, rel=0.01)
    rng = np.random.default_rng(0)
    for power in rng.uniform(math.exp(-0.2), math.exp(0.2), 200):
        i = part.index(power)
        assert 1 <= i <= part.k
        assert part.boundaries[i - 1] < power <= part.boundaries[i]


def test_chi2_tail():
    assert chi2_sf(1, 1.0) == pytest.approx(2 * q_func(1.0), abs=1e-12)
    assert chi2_sf(1, 1.0) == pytest.approx(0.317311, abs=1e-6)
    rng = np.random.default_rng(1)
    for n in (1, 5, 50, 1000):
        for t in rng.uniform(0.5, 1.8, 3):
            assert chi2_sf(n, t) == pytest.approx(mp_chi2_sf(n, t), rel=1e-10, abs=1e-300)


def test_chi2_tail_against_monte_carlo():
    rng = np.random.default_rng(2)
    trials = 1_000_000
    for _ in range(10):
        n = int(rng.integers(1, 30))
        t = float(rng.uniform(0.3, 2.0))
        s = rng.chisquare(n, trials) / n
        p = float(np.mean(s > t))
        se = math.sqrt(p * (1 - p) / trials)
        assert abs(p - chi2_sf(n, t)) <= 3 * se + 1e-12


def test_achievability_limits():
    part = partition_preset(500)
    b = gaussian_achievability_bound(G, 500, 1e6, 2e6, part.xi, part.delta)
    assert b.value == pytest.approx(4 * math.exp(-500 * rate_function(part.xi)), rel=1e-12)
    vac = gaussian_achievability_bound(G, 500, -1e4, -1e4, part.xi, part.delta)
    assert vac.vacuous and vac.value == 1.0


def test_achievability_near_prediction():
    n = 2000
    part = partition_preset(n)
    sizes = achievability_code_sizes(G, n, 1.163085, 1.163085, part.xi, part.delta)
    assert abs(gaussian_achievability_bound(G, n, *sizes, part.xi, part.delta).value - 0.05) <= 0.03


def test_achievability_monotone():
    n = 1000
    part = partition_preset(n)
    m1, m2 = achievability_code_sizes(G, n, 1.0, 1.0, part.xi, part.delta)
    base = gaussian_achievability_bound(G, n, m1, m2, part.xi, part.delta).raw
    assert gaussian_achievability_bound(G, n, m1 + 5, m2, part.xi, part.delta).raw <= base
    assert gaussian_achievability_bound(G, n, m1, m2 + 5, part.xi, part.delta).raw <= base
    ry, rz, _, _ = gaussian_rd(G)
    prev = 1.0
    for n in (500, 1000, 2000, 4000):
        part = partition_preset(n)
        cur = gaussian_achievability_bound(G, n, n * (ry + 0.05), n * (rz + 0.05), part.xi, part.delta).raw
        assert cur <= prev
        prev = cur


def test_one_shot_never_exceeds_achievability():
    for n in (200, 1000, 3000):
        part = partition_preset(n)
        for L in (-0.5, 0.0, 1.0, 2.0):
            sizes = achievability_code_sizes(G, n, L, L, part.xi, part.delta)
            g = 0.5 * math.log(n)
            one = gaussian_one_shot_converse(G, n, *sizes, g, g)
            ach = gaussian_achievability_bound(G, n, *sizes, part.xi, part.delta)
            assert one.value <= ach.value + 1e-12


def test_one_shot_matches_chi2_oracle():
    n = 500
    ry, rz, _, _ = gaussian_rd(G)
    g = 0.5 * math.log(n)
    m1, m2 = n * ry + 0.5 * math.sqrt(n), n * rz + 0.7 * math.sqrt(n)
    b = gaussian_one_shot_converse(G, n, m1, m2, g, g)
    t = min(1 + 2 * (m1 + g - n * ry) / n, 1 + 2 * (m2 + g - n * rz) / n)
    assert b.raw == pytest.approx(mp_chi2_sf(n, t) - 2 * math.exp(-g), abs=1e-8)


def test_region_and_mdc_do_not_depend_on_instance():
    regions = [gaussian_region(GaussianInstance(*p), "iii", 0.05) for p in INSTANCES]
    assert regions[0][1] == pytest.approx(1.163085, abs=1e-5)
    for kind, b in regions:
        assert kind == "min" and abs(b - regions[0][1]) <= 1e-12
    assert gaussian_mdc(1, 2, "iii") == 1.0
    assert gaussian_mdc(1.5, 1.5, "iii") == 2.25


def test_irregular_instance_rejected():
    with pytest.raises(ValueError, match="outside the assumed regime"):
        gaussian_region(GaussianInstance(1.0, 1.0, 0.5), "iii", 0.05)


def test_mdc_trend_approaches_limit():
    trend = gaussian_mdc_trend(1.0, 2.0, lambda n: n ** (-1 / 3), [1_000, 10_000, 100_000])
    vals = [e for _, e, _, _ in trend]
    assert vals[0] > vals[1] > vals[2] > 1.0
    assert vals[2] == pytest.approx(1.0, abs=0.05)
