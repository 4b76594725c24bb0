import numpy as np
import pytest

from pavisco.adjoint import (AdjointSource, AdjointState, adjoint_kernel, adjoint_readout, prepare_adjoint_data,
                             run_adjoint, step_adjoint)
from pavisco.discrete_adjoint import apply_T_star, run_discrete_adjoint
from pavisco.errors import ConfigurationError
from pavisco.forward import TimeSeries, run_forward
from pavisco.state import WaveState

from conftest import factors, random_model, rel


def test_adjoint_data_small_case():
    a, b, c = 1.0, 10.0, 100.0
    dt = 0.5
    out = prepare_adjoint_data(np.array([[a, b, c]]), dt)
    np.testing.assert_allclose(out[0], np.array([c, c + b, b + a, a]) / (2 * dt))


def test_adjoint_data_zero_and_errors():
    assert not prepare_adjoint_data(np.zeros((3, 5)), 1e-7).any()
    with pytest.raises(ConfigurationError):
        prepare_adjoint_data(np.ones((2, 1)), 1.0)
    with pytest.raises(ConfigurationError):
        prepare_adjoint_data(np.ones(4), 1.0)


def test_adjoint_data_mass(rng):
    data = rng.standard_normal((4, 17))
    dt = 3e-7
    out = prepare_adjoint_data(data, dt)
    # every sample is used twice with weight 1/(2 dt)
    np.testing.assert_allclose(dt * out.sum(axis=1), data.sum(axis=1), rtol=1e-12)


def test_zero_step_and_zero_run():
    m = random_model()
    st = step_adjoint(m, AdjointState.zeros(m.grid.shape))
    assert not st.v.any() and not st.s.any()
    assert not run_adjoint(np.zeros((len(m.sensors), m.grid.nt)), m).any()


@pytest.mark.parametrize("shape", [(16, 14), (8, 6, 7)])
@pytest.mark.parametrize("lossy", [True, False])
def test_step_matches_transposed_step(shape, lossy, rng):
    m = random_model(shape=shape, lossy=lossy, pml=2)
    d = len(shape)
    x = WaveState(rng.standard_normal((d, d) + shape), rng.standard_normal((2, len(m.a_s)) + shape))
    av, as_ = factors(m)
    st = AdjointState(x.v / av, x.s * as_)
    step_adjoint(m, st)
    ref = apply_T_star(m, x)
    assert rel(av * st.v, ref.v) < 1e-12
    assert rel(st.s / as_, ref.s) < 1e-12


def test_lossless_has_no_absorption_correction(rng):
    m = random_model(lossy=False)
    k = adjoint_kernel(m)
    assert k.lossless and m.lossless
    lossy = random_model(lossy=True)
    assert not adjoint_kernel(lossy).lossless


@pytest.mark.parametrize("lossy", [True, False])
def test_run_matches_discrete_adjoint(lossy, rng):
    m = random_model(nt=25, lossy=lossy)
    q = rng.standard_normal((len(m.sensors), m.grid.nt))
    assert rel(run_adjoint(q, m), run_discrete_adjoint(q, m)) < 1e-12


def test_dot_test_exact_and_literal(rng):
    m = random_model(nt=25, pml=0)
    p0 = rng.standard_normal(m.grid.shape)
    q = rng.standard_normal((len(m.sensors), m.grid.nt))
    lhs = np.vdot(run_forward(p0, m).data, q)
    # without absorbing layers both readouts coincide
    for exact in (True, False):
        assert np.vdot(p0, run_adjoint(q, m, exact=exact)) == pytest.approx(lhs, rel=1e-12)


def test_linearity_and_time_series_input(rng):
    m = random_model(nt=20)
    q1, q2 = rng.standard_normal((2, len(m.sensors), m.grid.nt))
    lhs = run_adjoint(q1 - 3 * q2, m)
    assert rel(lhs, run_adjoint(q1, m) - 3 * run_adjoint(q2, m)) < 1e-10
    assert np.array_equal(run_adjoint(TimeSeries(q1, m.grid.dt), m), run_adjoint(q1, m))


def test_rejects_wrong_sensor_count():
    m = random_model()
    with pytest.raises(ConfigurationError):
        run_adjoint(np.zeros((len(m.sensors) + 1, m.grid.nt)), m)


def test_readout_literal_differs_only_inside_layer(rng):
    m = random_model(pml=3)
    st = AdjointState(rng.standard_normal((2, 2) + m.grid.shape), rng.standard_normal((2, 6) + m.grid.shape))
    exact = adjoint_readout(m, st, exact=True)
    literal = adjoint_readout(m, st, exact=False)
    # smoothing spreads the difference, so compare before the low-pass
    assert not np.allclose(exact, literal)
    src = AdjointSource(m, np.zeros((len(m.sensors), m.grid.nt + 1)))
    before = st.s.copy()
    src.add_to(st, 0)
    assert np.array_equal(before, st.s)
