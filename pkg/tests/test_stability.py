from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ffstab.errors import DegenerateGapError, EnumerationCapacityError, ScheduleError
from ffstab.lattice import LatticeSpec, partition
from ffstab.models import Decay, build_model, paper_chain, random_perturbation
from ffstab.stability import (ExperimentConfig, chain_demo, ising_tqo_demo, main_theorem_experiment,
                              partition_smallcase_check, pinned_ising_demo, relative_bound_check,
                              schedule_optimizer, structural_constant, unit_ball_volume)


def test_unit_ball_volume():
    assert [unit_ball_volume(d) for d in (1, 2, 3)] == [3, 9, 27]


def test_structural_constant_exact_bookkeeping():
    w = {1: 0.5, 2: 0.25, 3: 0.0}
    gamma = {1: 0.5, 2: 0.25, 3: 0.2}
    rep = structural_constant(w, gamma, [1, 3], d=1, L=3)
    expected = 3 * (1 * 0.5 / 0.5 + 3 * 0.25 / 0.2)
    assert rep.c == pytest.approx(expected, rel=1e-15)
    assert rep.recompute_ok() and rep.rational_ok()
    assert Fraction(rep.J0_exact) == 1 / (3 * Fraction(rep.c_exact))


def test_structural_constant_zero_and_errors():
    rep = structural_constant({1: 0.0, 2: 0.0}, {1: 1.0, 2: 1.0}, [2], 1, 2)
    assert rep.c == 0 and math.isinf(rep.J0) and rep.J0_exact == "inf"
    with pytest.raises(ScheduleError):
        structural_constant({1: 1.0}, {1: 1.0, 2: 1.0}, [1], 1, 2)
    with pytest.raises(ScheduleError):
        structural_constant({1: 1.0}, {1: 1.0, 2: 1.0}, [2, 1, 2], 1, 2)
    with pytest.raises(DegenerateGapError):
        structural_constant({1: 1.0, 2: 1.0}, {1: 0.0, 2: 1.0}, [1, 2], 1, 2)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_schedule_optimizer_matches_exhaustive(data):
    L = data.draw(st.integers(1, 7))
    d = data.draw(st.integers(1, 2))
    M_max = data.draw(st.integers(1, 4))
    w = {r: data.draw(st.sampled_from([0.0, 0.1, 0.5, 1.0, 2.0])) for r in range(1, L + 1)}
    gamma = {r: data.draw(st.sampled_from([0.05, 0.3, 1.0, 2.0])) for r in range(1, L + 1)}
    sched = schedule_optimizer(w, gamma, d, L, M_max)
    best, best_sched = oracles.exhaustive_schedule(w, gamma, d, L, M_max)
    got = structural_constant(w, gamma, sched, d, L)
    assert got.c == pytest.approx(unit_ball_volume(d) * best, rel=1e-12, abs=1e-300)
    assert len(sched) <= M_max and sched[-1] == L
    assert len(sched) <= len(best_sched)


def test_relative_bound_simple():
    H0 = np.diag([0.0, 1.0, 2.0, 3.0])
    W = np.zeros((4, 4))
    W[1:, 1:] = 0.1 * np.eye(3)
    ok = relative_bound_check(W, H0, c=1.0, J=0.1, n_random=50, seed=1)
    assert ok.passed and ok.exact_ratio == pytest.approx(0.1)
    bad = relative_bound_check(W, H0, c=1.0, J=0.05, n_random=50, seed=1)
    assert not bad.passed


def test_partition_check_small():
    H = paper_chain(6)
    rep = partition_smallcase_check(H, partition(1, H.lattice))
    assert rep.passed
    with pytest.raises(EnumerationCapacityError):
        partition_smallcase_check(build_model("IsingChain(16)"), partition(1, LatticeSpec(1, 16)), max_class=1)


def test_demos():
    assert chain_demo(3)["passed"]
    assert ising_tqo_demo()["passed"]
    demo = pinned_ising_demo(10)
    assert demo["passed"] and demo["min_gap"] < 1.0


def test_pipeline_paper_chain_small():
    H = paper_chain(2)
    V = random_perturbation(H, 0.005, Decay("exponential", 1.0), 3, r_max=1)
    rep = main_theorem_experiment(H, V, ExperimentConfig(seed=3, n_random=50))
    d = rep.to_dict()
    # the Neel chain has a size-dependent local gap, so the precondition fails
    assert d["overall"] == "unstable-precondition"
    assert d["verdicts"]["recompute_c"] and d["verdicts"]["rational_J0"]
    assert d["relative_bound"]["violations"] == 0
    assert d["audits"]["flow_residual"] <= 1e-8
    assert len(d["sweep"]["rows"]) >= 21
