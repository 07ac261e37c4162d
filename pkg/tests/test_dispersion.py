from types import SimpleNamespace

import numpy as np
import pytest

from oracles import hamming_rd, moment_variance, surprisal_variance
from srasym.core import SourceInstance, hamming
from srasym.dispersion import be_remainder, dispersion_curve, dispersion_report, rate_dispersion
from srasym.rd import rd_solve

QUAT = [1 / 3, 1 / 4, 1 / 4, 1 / 6]
BINARY_V = 0.2 * 0.8 * np.log(4.0) ** 2


def corner(inst):
    return rd_solve(inst.px.probs, inst.d1.values, inst.D1).rate


def report(inst):
    return dispersion_report(inst, corner(inst))


@pytest.mark.parametrize("D1, D2", [(0.15, 0.05), (0.1, 0.05), (0.19, 0.01)])
def test_binary_all_ones(D1, D2):
    rep = report(SourceInstance([0.2, 0.8], hamming(2), hamming(2), D1, D2))
    assert BINARY_V == pytest.approx(0.307490, abs=1e-6)
    assert np.allclose(rep.matrix, BINARY_V, atol=1e-8)
    assert rep.rank == 1


def test_binary_matrix_independent_of_levels():
    mats = [report(SourceInstance([0.2, 0.8], hamming(2), hamming(2), a, b)).matrix for a, b in [(0.15, 0.05), (0.1, 0.05), (0.19, 0.01)]]
    assert np.allclose(mats[0], mats[1], atol=1e-10) and np.allclose(mats[0], mats[2], atol=1e-10)


def test_uniform_binary_is_rank_zero():
    rep = report(SourceInstance([0.5, 0.5], hamming(2), hamming(2), 0.2, 0.1))
    assert np.allclose(rep.matrix, 0.0, atol=1e-12)
    assert rep.rank == 0


def test_quaternary_rank_two_and_moments(quaternary):
    rep = report(quaternary)
    assert rep.rank == 2
    assert rep.v_d1 == pytest.approx(moment_variance(QUAT, hamming_rd(QUAT, 0.6)[1]), abs=1e-8)
    assert rep.v_d2 == pytest.approx(moment_variance(QUAT, hamming_rd(QUAT, 0.3)[1]), abs=1e-8)


@pytest.mark.parametrize("D1, rank", [(0.4, 1), (0.5, 1), (0.55, 2), (0.6, 2)])
def test_quaternary_rank_transition(D1, rank):
    assert report(SourceInstance(QUAT, hamming(4), hamming(4), D1, 0.3)).rank == rank


def test_report_invariants(quaternary):
    rep = report(quaternary)
    C = rep.matrix
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    assert C[0, 0] == pytest.approx(rep.v_d1, abs=1e-10)
    assert C[1, 1] == pytest.approx(rep.v_joint, abs=1e-10)
    assert C[0, 1] ** 2 <= rep.v_d1 * rep.v_joint + 1e-12
    # refinable: the joint density is the decoder-two density
    assert rep.v_joint == pytest.approx(rep.v_d2, abs=1e-8)


def test_be_remainder():
    assert be_remainder(SimpleNamespace(t_joint=1.0, v_joint=1.0), 36) == pytest.approx(1.0)
    rep = SimpleNamespace(t_joint=0.3, v_joint=0.7)
    assert be_remainder(rep, 400) == pytest.approx(be_remainder(rep, 100) / 2)
    with pytest.raises(ValueError, match="degenerate dispersion"):
        be_remainder(SimpleNamespace(t_joint=1.0, v_joint=0.0), 10)


def test_be_remainder_quaternary_from_moments(quaternary):
    rep = report(quaternary)
    j = rd_solve(QUAT, hamming(4), 0.3).tilted
    mean = sum(p * v for p, v in zip(QUAT, j))
    t = sum(p * abs(v - mean) ** 3 for p, v in zip(QUAT, j))
    v = moment_variance(QUAT, j)
    assert be_remainder(rep, 1000) == pytest.approx(6 * t / (np.sqrt(1000) * v**1.5), rel=1e-8)


def test_small_level_limit_is_surprisal_variance():
    assert rate_dispersion(QUAT, hamming(4), 1e-4) == pytest.approx(surprisal_variance(QUAT), abs=1e-4)


def test_curve_matches_moment_oracle():
    levels = [0.1, 0.3, 0.5, 0.62, 0.7]
    for D, v in dispersion_curve(QUAT, hamming(4), levels):
        assert v == pytest.approx(moment_variance(QUAT, hamming_rd(QUAT, D)[1]), abs=1e-6)


def test_infeasible_rate_rejected(quaternary):
    with pytest.raises(ValueError, match="infeasible"):
        dispersion_report(quaternary, corner(quaternary) - 0.05)
