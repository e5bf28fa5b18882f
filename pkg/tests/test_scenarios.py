import numpy as np
import pytest

from hypstab.core import CoefficientSet, Scenario, build_grid
from hypstab.dissipativity import check_dissipativity
from hypstab.errors import DissipativityError, WeightError
from hypstab.hamjac import scenario_constant_gradient
from hypstab.scenarios import ControlConfig, make_initial, scenario_custom, validate_scenario
from hypstab.solver import run
from hypstab.weights import WeightField


@pytest.fixture
def sq():
    return build_grid([(0, 1), (0, 1)], [10, 10])


def test_validation_flags_wrong_weights(sq):
    sc = scenario_constant_gradient([1.0, 0.0], sq, 3.0)
    bad = WeightField(np.zeros_like(sc.weights.mu), 3.0)
    sc2 = Scenario(sq, sc.coeffs, bad, sc.partition, sc.dissipation, sc.c_l, sc.initial)
    rep = validate_scenario(sc2)
    assert not rep.weights_ok
    with pytest.raises(WeightError):
        rep.raise_on_failure()


def test_validation_flags_dissipativity(sq):
    sc = scenario_constant_gradient([1.0, 0.0], sq, 1.0)
    sc.dissipation = -np.ones_like(sc.dissipation)
    rep = validate_scenario(sc)
    assert not rep.passed
    with pytest.raises((DissipativityError, WeightError)):
        rep.raise_on_failure()


def test_custom_general_q_fixed_point(sq):
    coeffs = CoefficientSet.from_functions(
        sq,
        lambda x: [[1.0, 0.5 * x[1]], [1.0, -0.5 * (1 - x[1])]],
        lambda x: [[0.0, 1.0], [-1.0, 0.5]],
        lambda x: [0.5, 0.5],
    )
    sc = scenario_custom(coeffs, 0.5, control=ControlConfig("spatial"), T=0.2)
    rep = validate_scenario(sc)
    assert rep.passed
    assert check_dissipativity(coeffs.coupling, sc.weights.exp, sc.dissipation).worst_margin >= -1e-10
    L = run(sc).trace.array("L")
    assert np.all(np.diff(L) <= 0)


def test_custom_with_differing_weights(sq):
    # components see different divergences, so E does not commute with B;
    # tangential flow on x2- keeps all inflow on x1- and the weights smooth
    coeffs = CoefficientSet.from_functions(
        sq,
        lambda x: [[1 + x[0], 0.2 * x[1]], [1.0, 0.4 * x[1]]],
        lambda x: [[0.3, 1.0], [0.2, -0.1]],
        lambda x: [1.2, 0.4],
    )
    sc = scenario_custom(coeffs, 1.0, T=0.1)
    assert not np.allclose(sc.weights.mu[0], sc.weights.mu[1])
    assert validate_scenario(sc).passed


def test_make_initial_variants(sq):
    assert make_initial(sq, 2).n == 2
    w = make_initial(sq, 1, lambda x: x[0] * x[1])
    assert w.values.shape == (1, 10, 10)
    with pytest.raises(Exception):
        make_initial(sq, 3, np.zeros((2, 10, 10)))


def test_kinked_weights_are_caught(sq):
    # inflow through two sides with a zero anchor: the weight has a kink along
    # the corner characteristic and the residual check refuses the scenario
    coeffs = CoefficientSet.from_functions(
        sq, lambda x: [[1 + x[0], 0.2]], lambda x: [[0.0]], lambda x: [1.0]
    )
    sc = scenario_custom(coeffs, 1.0, dissipation_mode="positive-definite", T=0.1)
    with pytest.raises(WeightError):
        validate_scenario(sc).raise_on_failure()
