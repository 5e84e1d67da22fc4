import numpy as np
import pytest

from lagmcf.analysis import DiagnosticsRecord, diagnostics
from lagmcf.flow import (
    BlowupError,
    FlowState,
    StepControl,
    VectorFlowState,
    angle_field,
    cfl_dt,
    gradient_components,
    potential_step,
    run,
    run_vector,
    vector_step,
)
from lagmcf.geometry import lagrangian_angle
from lagmcf.grid import GridSpec, ScalarField, gradient, hessian
from lagmcf.initdata import Preset, make_preset, mollify


def cosine_1d(npts, amp):
    g = GridSpec.make(npts)
    return ScalarField(g, amp * np.cos(g.axis_coords(0)))


class TestControl:
    def test_cfl_formula(self):
        g = GridSpec.make((32, 16), extent=(1.0, 1.0))
        assert cfl_dt(g, 0.5) == 0.5 * (1 / 32) ** 2 / 4

    @pytest.mark.parametrize(
        "kw",
        [dict(sigma=1.5), dict(sigma=0.0), dict(scheme="rk4"), dict(t_end=-1.0), dict(t_end=np.inf), dict(sample_every=0)],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            StepControl(**kw)

    def test_step_rejects_oversized_dt(self):
        u = cosine_1d(32, 0.1)
        with pytest.raises(ValueError, match="stability"):
            potential_step(FlowState(u), 1.01 * cfl_dt(u.grid))
        with pytest.raises(ValueError):
            potential_step(FlowState(u), 0.0)

    def test_unknown_scheme(self):
        u = cosine_1d(32, 0.1)
        with pytest.raises(ValueError):
            potential_step(FlowState(u), cfl_dt(u.grid, 0.5), "leapfrog")


class TestPotentialStep:
    def test_quadratic_is_stationary(self):
        g = GridSpec.make((16, 16))
        A = np.array([[0.6, 0.2], [0.2, -0.3]])
        state = FlowState(make_preset(Preset("quadratic", {"A": A.tolist()}), g))
        dt = cfl_dt(g, 0.5)
        new = potential_step(state, dt)
        theta = lagrangian_angle(A)
        assert np.max(np.abs(new.u.values - dt * theta)) <= 1e-15
        assert np.max(np.abs(hessian(new.u).values - A)) <= 1e-12
        assert new.t == dt and new.step_count == 1

    def test_zero_is_fixed(self):
        g = GridSpec.make((8, 8, 8))
        state = FlowState(g.zeros())
        for _ in range(5):
            state = potential_step(state, cfl_dt(g, 1.0), "euler")
        assert np.all(state.u.values == 0)

    def test_linear_decay(self):
        eps = 1e-3
        u0 = cosine_1d(256, eps)
        final, _ = run(FlowState(u0), StepControl(0.5, "rk2", 1.0, 10**9))
        x = u0.grid.axis_coords(0)
        assert final.t == 1.0
        assert np.max(np.abs(final.u.values - eps * np.exp(-1.0) * np.cos(x))) <= 1e-6

    def test_blowup_names_index(self):
        g = GridSpec.make((8, 8))
        v = np.zeros(g.shape)
        v[::2, ::2] = 1e308
        v[1::2, 1::2] = -1e308
        with pytest.raises(BlowupError, match=r"blowup/instability.*index \(") as info:
            potential_step(FlowState(ScalarField(g, v)), cfl_dt(g, 0.5))
        assert info.value.index is not None

    @pytest.mark.parametrize("scheme,lo,hi", [("euler", 1.7, 2.3), ("rk2", 3.5, 4.5)])
    def test_time_refinement_order(self, scheme, lo, hi):
        g = GridSpec.make((16, 16))
        x, y = np.moveaxis(g.coords(), -1, 0)
        u0 = ScalarField(g, 0.5 * np.cos(x) + 0.3 * np.sin(x + y))
        out = [run(FlowState(u0), StepControl(s, scheme, 1.0, 10**9))[0].u.values for s in (1.0, 0.5, 0.25, 0.125)]
        d = [np.max(np.abs(a - b)) for a, b in zip(out, out[1:])]
        for coarse, fine in zip(d, d[1:]):
            assert lo <= coarse / fine <= hi

    def test_angle_oscillation_per_step(self):
        g = GridSpec.make((32, 32))
        state = FlowState(make_preset(Preset("product_sine", {"amplitude": 0.8}), g))
        dt = cfl_dt(g, 0.5)
        th = angle_field(state.u)
        osc = th.max() - th.min()
        for _ in range(200):
            state = potential_step(state, dt)
            th = angle_field(state.u)
            new = th.max() - th.min()
            assert new <= osc + 1e-10
            osc = new


class TestVectorFlow:
    def test_constant_unchanged(self):
        g = GridSpec.make((16, 16))
        f = tuple(ScalarField(g, np.full(g.shape, c)) for c in (1.0, -2.0, 0.5))
        new = vector_step(VectorFlowState(f), cfl_dt(g, 0.5))
        assert np.array_equal(new.values(), VectorFlowState(f).values())

    def test_codimension_one_linear_decay(self):
        eps = 1e-3
        g = GridSpec.make(256)
        x = g.axis_coords(0)
        st = VectorFlowState((ScalarField(g, eps * np.sin(x)),))
        st = run_vector(st, cfl_dt(g, 0.5), 1.0)
        assert st.t == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(st.f[0].values - eps * np.exp(-1.0) * np.sin(x))) <= 1e-6

    def test_rejects_quadratic_component(self):
        g = GridSpec.make(8)
        with pytest.raises(ValueError):
            VectorFlowState((ScalarField(g, np.zeros(8), quadratic=[[1.0]]),))

    def test_rejects_mixed_grids(self):
        with pytest.raises(ValueError):
            VectorFlowState((GridSpec.make(8).zeros(), GridSpec.make(16).zeros()))

    def test_tracks_potential_gradient(self):
        amp = 0.1
        g = GridSpec.make(256)
        x = g.axis_coords(0)
        u0 = ScalarField(g, amp * np.cos(x) + 0.2 * amp * np.sin(2 * x))
        dt = cfl_dt(g, 0.5)
        pot = FlowState(u0)
        vec = VectorFlowState(gradient_components(u0))
        worst = 0.0
        for _ in range(int(np.ceil(1.0 / dt))):
            step = min(dt, 1.0 - pot.t)
            pot = potential_step(pot, step)
            vec = vector_step(vec, step)
            worst = max(worst, np.max(np.abs(vec.values() - gradient(pot.u).values)))
        assert pot.t == pytest.approx(1.0, abs=1e-12)
        assert worst <= 1e-6

    def test_gradient_components_of_lift(self):
        g = GridSpec.make((16, 16))
        A = np.array([[1.0, 0.0], [0.0, 2.0]])
        u = ScalarField(g, np.zeros(g.shape), quadratic=A, linear=[0.5, -0.5])
        comps = gradient_components(u)
        vals = np.stack([c.full_values() for c in comps], -1)
        np.testing.assert_allclose(vals, g.coords() @ A.T + [0.5, -0.5], atol=1e-14)


class TestRun:
    def test_zero_horizon(self):
        u = cosine_1d(32, 0.1)
        st, series = run(FlowState(u), StepControl(t_end=0.0))
        assert st.u is u and len(series) == 0

    def test_sampling_and_landing(self):
        u = cosine_1d(32, 0.3)
        st, series = run(FlowState(u), StepControl(0.5, "rk2", 0.5, 7))
        t = series.column("t")
        assert t[0] == 0.0 and t[-1] == 0.5 and st.t == 0.5
        assert np.all(np.diff(t) > 0)

    def test_deterministic(self):
        u = make_preset(Preset("random_bandlimited", {"seed": 3}), GridSpec.make((16, 16)))
        a = run(FlowState(u), StepControl(0.5, "rk2", 0.2, 5))
        b = run(FlowState(u), StepControl(0.5, "rk2", 0.2, 5))
        assert np.array_equal(a[0].u.values, b[0].u.values)
        assert a[1].to_csv() == b[1].to_csv()

    def test_oscillation_alarm_carries_partial_series(self):
        u = cosine_1d(32, 0.3)
        calls = []

        def sampler(state):
            calls.append(state.t)
            rec = diagnostics(state)
            # pretend the angle spread doubles after the first sample
            return DiagnosticsRecord(**{**rec.__dict__, "osc_theta": rec.osc_theta * (1 + len(calls) - 1)})

        with pytest.raises(BlowupError, match="blowup/instability") as info:
            run(FlowState(u), StepControl(0.5, "rk2", 1.0, 3), sampler=sampler)
        assert info.value.series is not None and len(info.value.series) == 2
        assert info.value.series.error
        assert info.value.state.t > 0

    def test_max_principles_sawtooth(self):
        g = GridSpec.make(128)
        u = mollify(make_preset(Preset("sawtooth_c11", {"level": 0.9}), g), 1 / 16)
        _, series = run(FlowState(u), StepControl(0.5, "rk2", 0.5, 20))
        t = series.column("t")
        for col in ("osc_theta", "sup_Du"):
            v = series.column(col)
            assert np.all(np.diff(v) <= 1e-8 * np.diff(t))
