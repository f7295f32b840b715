import numpy as np
import pytest
from hypothesis import given, strategies as st

from viscarl.rng import counter_normals, derive_seed
from viscarl.schedules import PiecewiseLinear, triangular_ramp


def test_counter_normals_are_standard():
    z = counter_normals(7, np.arange(200_000), 3)
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)


def test_counter_streams_are_independent_of_call_layout():
    whole = counter_normals(11, np.arange(100), 5)
    parts = np.concatenate([counter_normals(11, np.arange(50), 5),
                            counter_normals(11, np.arange(50, 100), 5)])
    assert np.array_equal(whole, parts)


def test_steps_and_seeds_decorrelate():
    a = counter_normals(1, np.arange(50_000), 0)
    b = counter_normals(1, np.arange(50_000), 1)
    c = counter_normals(2, np.arange(50_000), 0)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.03


def test_derive_seed_distinct():
    assert len({derive_seed(0, i) for i in range(100)}) == 100


def test_schedule_interpolates_and_holds():
    s = PiecewiseLinear((0.0, 1.0, 3.0), (0.0, 2.0, 0.0))
    assert s(0.5) == pytest.approx(1.0)
    assert s(2.0) == pytest.approx(1.0)
    assert s(10.0) == 0.0
    assert s.max() == 2.0 and s.min() == 0.0


def test_step_schedule_switches():
    s = PiecewiseLinear.step(1e-3, 5.0, 0.0)
    assert s(0.999e-3) == 5.0
    assert s(1.001e-3) == 0.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        PiecewiseLinear((1.0, 0.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        PiecewiseLinear((0.0,), (np.nan,))
    with pytest.raises(ValueError):
        PiecewiseLinear((), ())


@given(st.floats(1e-3, 1e3), st.floats(1e-6, 1.0))
def test_triangular_ramp_is_symmetric(peak, duration):
    r = triangular_ramp(peak, duration)
    assert r(duration / 2) == pytest.approx(peak)
    for f in (0.1, 0.3, 0.45):
        assert r(f * duration) == pytest.approx(r((1 - f) * duration), rel=1e-9)
