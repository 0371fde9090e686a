import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from seqop import histories as H


def test_control_times_heat_endpoints(rng):
    t = H.sample_control_times(rng, 17.0, (0.0, 17.0))
    assert t.shape == (6,) and t[0] == 0.0 and t[-1] == 17.0
    assert np.all(np.diff(t) > 0)


def test_control_times_disp_interior_range(rng):
    for _ in range(200):
        t = H.sample_control_times(rng, 1.0, (0.1, 0.9))
        assert np.all((t[1:-1] >= 0.1) & (t[1:-1] <= 0.9))


class _Repeat:
    """Feeds a duplicated interior draw first, then fresh uniforms."""

    def __init__(self):
        self.calls = 0
        self.inner = np.random.default_rng(3)

    def uniform(self, lo, hi, size=None):
        self.calls += 1
        if self.calls == 1:
            return np.array([5.0, 5.0, 8.0, 11.0])
        return self.inner.uniform(lo, hi, size=size)


def test_coincident_draws_are_resampled():
    fake = _Repeat()
    t = H.sample_control_times(fake, 17.0, (0.0, 17.0))
    assert fake.calls >= 2
    assert np.min(np.diff(t)) > 1e-6 * 17.0


@pytest.mark.parametrize("A,B,C,t,expected", [
    (3, 0.3, 0, 0.0, 3.0),
    (8, 0.7, 0.5, 0.0, 8.5),
    (4, 0.5, 0, 3.0, 2.0),
])
def test_flux_at_control(A, B, C, t, expected):
    assert H.flux_at_control(H.FluxParams(A, B, C), t) == pytest.approx(expected, rel=1e-15)


def test_flux_params_validated():
    with pytest.raises(ValueError):
        H.FluxParams(9.0, 0.5, 0.0)


def test_rbf_reproduces_nodes(rng):
    t = H.sample_control_times(rng, 17.0, (0.0, 17.0))
    v = rng.uniform(-3, 8, 6)
    assert np.allclose(H.rbf_interpolate(t, v, t), v, rtol=1e-8, atol=1e-8 * np.abs(v).max())


def test_rbf_constant_at_control_times(rng):
    t = H.sample_control_times(rng, 1.0, (0.1, 0.9))
    out = H.rbf_interpolate(t, np.full(6, 2.5), t)
    assert np.allclose(out, 2.5, rtol=1e-8)


def test_rbf_matches_independent_cholesky_solve(rng):
    h = H.gen_heat_history(rng)
    t, v = h.control.times, h.control.values
    eps = H.default_shape(t)
    K = np.exp(-(eps * (t[:, None] - t[None, :])) ** 2)
    w = scipy.linalg.cho_solve(scipy.linalg.cho_factor(K), v)
    q = H.time_grid(17.0)
    dense = np.exp(-(eps * (q[:, None] - t[None, :])) ** 2) @ w
    assert np.allclose(h.values, dense, rtol=1e-9, atol=1e-9)


def test_rbf_ill_conditioned_names_spacing():
    t = np.array([0.0, 1.0, 1.0 + 1e-7, 5.0, 9.0, 17.0])
    with pytest.raises(H.InterpolationError, match="apart"):
        H.rbf_interpolate(t, np.ones(6), t, shape=H.default_shape(t))


def test_rbf_rejects_bad_shape():
    t = np.linspace(0, 1, 6)
    with pytest.raises(ValueError):
        H.rbf_interpolate(t, np.ones(6), t, shape=0.0)


def test_heat_history_shape_and_bounds():
    rng = np.random.default_rng(0)
    lo, hi = 3 * 18 ** -0.7 - 0.5, 8.5
    assert H.FLUX_MIN == pytest.approx(lo, rel=1e-15)
    for _ in range(1000):
        h = H.gen_heat_history(rng)
        assert h.kind == "flux" and h.horizon == 17.0 and h.values.shape == (101,)
        assert np.all((h.control.values >= lo) & (h.control.values <= hi))


def test_disp_history_contract():
    rng = np.random.default_rng(1)
    for _ in range(300):
        h = H.gen_disp_history(rng)
        assert h.values[0] == 0.0 and h.horizon == 1.0
        assert np.all(np.abs(h.control.values) <= 5.5)
        assert np.all(np.abs(h.values) <= 5.5)
        # interior times from the stated range
        assert np.all((h.control.times[1:-1] >= 0.1) & (h.control.times[1:-1] <= 0.9))


@pytest.mark.parametrize("gen", [H.gen_heat_history, H.gen_disp_history])
def test_generators_bit_reproducible(gen):
    a = gen(np.random.default_rng(99))
    b = gen(np.random.default_rng(99))
    assert a.values.tobytes() == b.values.tobytes()
    assert a.control.times.tobytes() == b.control.times.tobytes()


@given(st.integers(0, 2**32 - 1), st.sampled_from(["heat", "disp"]))
def test_interpolation_condition_property(seed, kind):
    rng = np.random.default_rng(seed)
    h = H.gen_heat_history(rng) if kind == "heat" else H.gen_disp_history(rng)
    cp = h.control
    assert np.all(np.diff(cp.times) > 0)
    back = H.rbf_interpolate(cp.times, cp.values, cp.times)
    assert np.allclose(back, cp.values, rtol=1e-8, atol=1e-8 * max(1.0, np.abs(cp.values).max()))


def test_history_csv_round_trip(tmp_path, rng):
    h = H.gen_disp_history(rng)
    p = tmp_path / "h.csv"
    h.to_csv(p)
    assert p.read_text().splitlines()[0] == "time_s,value"
    back = H.read_history_csv(p, "displacement")
    assert back.values.tobytes() == h.values.tobytes()


def test_history_length_enforced():
    with pytest.raises(ValueError):
        H.LoadHistory("flux", 17.0, np.zeros(100))
    with pytest.raises(ValueError):
        H.LoadHistory("displacement", 1.0, np.ones(101))
