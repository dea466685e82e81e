"""Schedule invariants, forward-process identities, and sampler contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addlab.diffusion import (
    NoiseSchedule,
    SingularTimestepError,
    TimestepSet,
    ancestral_sample,
    build_schedule,
    dump_schedule_csv,
    eps_to_x0,
    forward_diffuse,
    forward_diffuse_batch,
    teacher_ddim_steps,
)
from addlab.nets import DenoiserNetwork, DenoiserSpec


@pytest.fixture(scope="module")
def sched():
    return build_schedule("cosine", 1000, zero_terminal=True)


class TestBuildSchedule:
    def test_zero_terminal_exact(self):
        sc = build_schedule("cosine", 1000, zero_terminal=True)
        assert sc.alpha[1000] == 0.0
        assert sc.sigma[1000] == 1.0

    @pytest.mark.parametrize("kind", ["cosine", "linear"])
    @pytest.mark.parametrize("zero_terminal", [True, False])
    def test_variance_preserving(self, kind, zero_terminal):
        sc = build_schedule(kind, 1000, zero_terminal)
        assert np.abs(sc.alpha**2 + sc.sigma**2 - 1.0).max() < 1e-12

    def test_cosine_first_step_nearly_clean(self):
        sc = build_schedule("cosine", 1000, True)
        assert sc.alpha[1] > 0.99

    def test_alpha_strictly_decreasing(self, sched):
        assert np.all(np.diff(sched.alpha) < 0)

    def test_too_few_steps_rejected(self):
        with pytest.raises(ValueError):
            build_schedule("cosine", 1)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            build_schedule("quadratic", 100)

    def test_zero_terminal_preserves_first_step(self):
        raw = build_schedule("cosine", 1000, zero_terminal=False)
        zt = build_schedule("cosine", 1000, zero_terminal=True)
        assert abs(zt.alpha[1] - raw.alpha[1]) < 1e-15

    @settings(max_examples=20, deadline=None)
    @given(
        kind=st.sampled_from(["cosine", "linear"]),
        T=st.integers(2, 500),
        zt=st.booleans(),
    )
    def test_invariants_property(self, kind, T, zt):
        sc = build_schedule(kind, T, zt)
        assert np.abs(sc.alpha**2 + sc.sigma**2 - 1.0).max() < 1e-12
        assert np.all(np.diff(sc.alpha) < 0)
        if zt:
            assert sc.alpha[T] == 0.0 and sc.sigma[T] == 1.0


class TestForwardDiffuse:
    def test_s_zero_returns_x0(self, sched):
        rng = np.random.default_rng(0)
        x0, eps = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        assert np.array_equal(forward_diffuse(x0, 0, eps, sched), x0)

    def test_terminal_returns_eps_bit_exact(self, sched):
        rng = np.random.default_rng(1)
        x0, eps = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
        assert np.array_equal(forward_diffuse(x0, 1000, eps, sched), eps)
        s = np.full(64, 1000)
        assert np.array_equal(forward_diffuse_batch(x0, s, eps, sched), eps)

    def test_variance_is_preserved_montecarlo(self, sched):
        # unit-variance data stays unit-variance at every tested level
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((10000, 2))
        for s in (1, 250, 500, 750, 999, 1000):
            xs = forward_diffuse(x0, s, rng.standard_normal(x0.shape), sched)
            assert abs(xs.var() - 1.0) < 0.05

    def test_linear_in_x0_and_eps(self, sched):
        rng = np.random.default_rng(3)
        x0, eps = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        lhs = forward_diffuse(2.0 * x0, 400, 3.0 * eps, sched)
        rhs = 2.0 * sched.alpha[400] * x0 + 3.0 * sched.sigma[400] * eps
        assert np.allclose(lhs, rhs, rtol=1e-14)

    def test_shape_mismatch(self, sched):
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros((2, 2)), 5, np.zeros((3, 2)), sched)

    def test_out_of_range_timestep(self, sched):
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros((2, 2)), 1001, np.zeros((2, 2)), sched)


class TestEpsToX0:
    def test_inverts_forward_process(self, sched):
        rng = np.random.default_rng(4)
        x0, eps = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        for s in (1, 123, 500, 999):
            xs = forward_diffuse(x0, s, eps, sched)
            assert np.allclose(eps_to_x0(xs, eps, s, sched), x0, atol=1e-10)

    def test_zero_eps_hat(self, sched):
        x_t = np.ones((2, 2))
        out = eps_to_x0(x_t, np.zeros_like(x_t), 300, sched)
        assert np.allclose(out, x_t / sched.alpha[300])

    def test_singular_terminal_raises(self, sched):
        with pytest.raises(SingularTimestepError):
            eps_to_x0(np.zeros((2, 2)), np.zeros((2, 2)), 1000, sched)


class TestTimestepSet:
    def test_validation(self):
        with pytest.raises(ValueError):
            TimestepSet((250, 500), T=1000)  # max != T
        with pytest.raises(ValueError):
            TimestepSet((500, 250, 1000), T=1000)  # not increasing
        with pytest.raises(ValueError):
            TimestepSet((), T=1000)
        TimestepSet((1000,), T=1000)

    def test_draws_are_uniform(self):
        taus = TimestepSet((250, 500, 750, 1000), T=1000)
        rng = np.random.default_rng(0)
        draws = taus.draw(rng, 100000)
        for tau in taus.taus:
            freq = np.mean(draws == tau)
            assert abs(freq - 0.25) < 0.01


class _PerfectPointMassTeacher:
    """Analytic optimum of denoising on a point mass at c: eps(x,t) = (x - a_t c)/s_t."""

    def __init__(self, c, sched):
        self.c = np.asarray(c)
        self.sched = sched
        self.eval_count = 0

    def predict(self, x, s, labels=None):
        self.eval_count += 1
        s = np.asarray(s)
        a = self.sched.alpha[s][:, None]
        sg = self.sched.sigma[s][:, None]
        return (x - a * self.c[None, :]) / sg


class TestTeacherSteps:
    def test_m1_equals_eps_to_x0(self, sched):
        rng = np.random.default_rng(5)
        spec = DenoiserSpec(data_dim=2, hidden_dim=16, n_hidden=2, time_dim=8)
        net = DenoiserNetwork.init(spec, rng)
        net.params["w2"] = rng.normal(size=net.params["w2"].shape)
        x_t = rng.normal(size=(4, 2))
        t = 600
        out = teacher_ddim_steps(net, x_t, t, 1, None, sched)
        eps_hat = net.predict(x_t, np.full(4, t), None)
        assert np.array_equal(out, eps_to_x0(x_t, eps_hat, t, sched))

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_perfect_teacher_point_mass(self, sched, m):
        c = np.array([0.7, -1.2])
        net = _PerfectPointMassTeacher(c, sched)
        rng = np.random.default_rng(6)
        x_t = rng.normal(size=(8, 2))
        out = teacher_ddim_steps(net, x_t, 800, m, None, sched)
        assert np.allclose(out, np.broadcast_to(c, (8, 2)), atol=1e-10)

    def test_deterministic(self, sched):
        rng = np.random.default_rng(7)
        spec = DenoiserSpec(data_dim=2, hidden_dim=16, n_hidden=2, time_dim=8)
        net = DenoiserNetwork.init(spec, rng)
        x_t = rng.normal(size=(4, 2))
        a = teacher_ddim_steps(net, x_t, 700, 4, None, sched)
        b = teacher_ddim_steps(net, x_t, 700, 4, None, sched)
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))

    def test_too_many_substeps_rejected(self, sched):
        net = _PerfectPointMassTeacher(np.zeros(2), sched)
        with pytest.raises(ValueError):
            teacher_ddim_steps(net, np.zeros((1, 2)), 2, 4, None, sched)


class TestAncestralSample:
    def test_seed_reproducibility(self, sched):
        net = _PerfectPointMassTeacher(np.array([1.0, 0.0]), sched)
        a = ancestral_sample(net, 10, None, sched, seed=3, batch_size=16)
        b = ancestral_sample(net, 10, None, sched, seed=3, batch_size=16)
        assert np.array_equal(a, b)

    def test_point_mass_recovery(self, sched):
        c = np.array([0.5, -0.5])
        net = _PerfectPointMassTeacher(c, sched)
        out = ancestral_sample(net, 25, None, sched, seed=1, batch_size=32)
        assert np.allclose(out, np.broadcast_to(c, (32, 2)), atol=1e-8)

    def test_needs_positive_steps(self, sched):
        net = _PerfectPointMassTeacher(np.zeros(2), sched)
        with pytest.raises(ValueError):
            ancestral_sample(net, 0, None, sched, seed=0)


def test_schedule_csv_dump(tmp_path):
    sc = build_schedule("cosine", 10, True)
    path = tmp_path / "sched.csv"
    dump_schedule_csv(sc, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "s,alpha,sigma"
    assert len(lines) == 12  # header + s in 0..10
    s, alpha, sigma = lines[-1].split(",")
    assert s == "10" and float(alpha) == 0.0 and float(sigma) == 1.0
