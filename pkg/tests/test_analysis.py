import numpy as np
import pytest
from oracles import soliton_potential

from lagmcf.analysis import (
    CSV_COLUMNS,
    CSVFormatError,
    DiagnosticsRecord,
    DiagnosticsSeries,
    SolitonSpec,
    convergence_check,
    decay_report,
    diagnostics,
    diagnostics_many,
    first_increase,
    preservation_report,
    soliton_residual,
    special_lagrangian_residual,
    worker_count,
)
from lagmcf.flow import FlowState, StepControl, potential_step, run, cfl_dt
from lagmcf.geometry import lagrangian_angle
from lagmcf.grid import GridSpec, ScalarField, gradient
from lagmcf.initdata import Preset, lift_decompose, make_preset


def record(t, **kw):
    base = dict(sup_H2=0.0, sup_D3u2=0.0, eig_min=-0.5, eig_max=0.5, osc_theta=0.1, sup_Du=1.0, pinch_min=0.1)
    base.update(kw)
    return DiagnosticsRecord(t=t, t_supH2=t * base["sup_H2"], t_supD3u2=t * base["sup_D3u2"], **base)


def series_of(*recs):
    s = DiagnosticsSeries()
    for r in recs:
        s.append(r)
    return s


class TestDiagnostics:
    def test_zero_field(self):
        rec = diagnostics(FlowState(GridSpec.make((16, 16)).zeros()), eps=0.3)
        assert rec.sup_H2 == 0 and rec.sup_D3u2 == 0
        assert (rec.eig_min, rec.eig_max) == (0.0, 0.0)
        assert rec.pinch_min == pytest.approx(0.7, abs=1e-15)
        assert rec.osc_theta == 0 and rec.sup_Du == 0

    def test_flat_quadratic(self):
        u = make_preset(Preset("quadratic", {"A": [[0.4, 0.0], [0.0, -0.2]]}), GridSpec.make((16, 16)))
        rec = diagnostics(FlowState(u))
        assert rec.sup_H2 == 0 and rec.osc_theta == 0
        assert rec.eig_min == pytest.approx(-0.2) and rec.eig_max == pytest.approx(0.4)

    def test_one_dimensional_closed_form(self):
        # |H|^2 = eps^2 sin^2 x / (1 + eps^2 cos^2 x)^3 in 1D; its maximum is eps^2 at x = pi/2
        eps = 1e-3
        g = GridSpec.make(256)
        x = g.axis_coords(0)
        rec = diagnostics(FlowState(ScalarField(g, eps * np.cos(x))))
        closed = np.max(eps**2 * np.sin(x) ** 2 / (1 + eps**2 * np.cos(x) ** 2) ** 3)
        assert closed == pytest.approx(eps**2, rel=1e-12)
        assert abs(rec.sup_H2 - closed) <= 1e-8
        assert abs(rec.sup_D3u2 - eps**2) <= 1e-8

    def test_products_use_time(self):
        u = make_preset(Preset("cosine", {"amplitude": 0.2}), GridSpec.make(32))
        rec = diagnostics(FlowState(u, t=2.5))
        assert rec.t_supH2 == 2.5 * rec.sup_H2 and rec.t_supD3u2 == 2.5 * rec.sup_D3u2

    def test_concurrent_matches_serial(self, monkeypatch):
        g = GridSpec.make((32, 32))
        u = make_preset(Preset("random_bandlimited", {"seed": 5}), g)
        states = [FlowState(u)]
        for _ in range(6):
            states.append(potential_step(states[-1], cfl_dt(g, 0.5)))
        serial = [diagnostics(s, 0.1) for s in states]
        for workers in (1, 3, 8):
            assert diagnostics_many(states, 0.1, workers).records == serial
        monkeypatch.setenv("LAGMCF_THREADS", "2")
        assert worker_count() == 2
        assert diagnostics_many(states, 0.1).records == serial

    def test_recompute_reproduces_run(self):
        g = GridSpec.make(64)
        u = make_preset(Preset("cosine", {"amplitude": 0.5}), g)
        final, series = run(FlowState(u), StepControl(0.5, "rk2", 0.05, 10**6))
        assert diagnostics(final) == series.records[-1]

    @pytest.mark.parametrize("raw", ["0", "-1", "many"])
    def test_bad_thread_env(self, monkeypatch, raw):
        monkeypatch.setenv("LAGMCF_THREADS", raw)
        with pytest.raises(ValueError):
            worker_count()


class TestSeries:
    def test_time_must_increase(self):
        s = series_of(record(0.0))
        with pytest.raises(ValueError):
            s.append(record(0.0))

    def test_csv_round_trip(self, tmp_path):
        s = series_of(record(0.0, sup_H2=1 / 3), record(0.1, sup_H2=np.pi), record(0.25, eig_max=1e-300))
        text = s.to_csv(tmp_path / "d.csv")
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        back = DiagnosticsSeries.from_csv(tmp_path / "d.csv")
        assert back.records == s.records

    def test_missing_column(self):
        text = "t,sup_H2\n0,0\n"
        with pytest.raises(CSVFormatError, match="missing"):
            DiagnosticsSeries.from_csv(text)

    def test_malformed_row(self):
        text = series_of(record(0.0)).to_csv() + "1,2,3\n"
        with pytest.raises(CSVFormatError, match="line 3"):
            DiagnosticsSeries.from_csv(text)


class TestPreservation:
    def test_compliant(self):
        rep = preservation_report(series_of(record(0.0), record(1.0, eig_max=0.9005)), 0.1, 1e-3)
        assert rep.passed and rep.failed_check is None
        assert rep.worst_eig == 0.9005 and rep.worst_eig_t == 1.0

    def test_injected_eigenvalue(self):
        rep = preservation_report(series_of(record(0.0), record(0.5, eig_max=0.95), record(1.0)), 0.1, 1e-3)
        assert not rep.passed and rep.failed_check == "hessian_bound" and rep.first_violation_t == 0.5

    def test_injected_pinch(self):
        rep = preservation_report(series_of(record(0.0), record(0.7, pinch_min=-0.01)), 0.1, 1e-3)
        assert not rep.passed and rep.failed_check == "pinching" and rep.first_violation_t == 0.7

    def test_infinite_tolerance(self):
        s = series_of(record(0.0, eig_min=-5.0, pinch_min=-3.0))
        assert preservation_report(s, 0.1, np.inf).passed

    @pytest.mark.parametrize("tol", [1e-4, 1e-3, 0.05, 0.2])
    def test_monotone_in_tolerance(self, tol):
        s = series_of(record(0.0, eig_max=0.93), record(1.0, pinch_min=-0.02))
        if preservation_report(s, 0.1, tol).passed:
            assert preservation_report(s, 0.1, tol * 1.5).passed

    def test_validation(self):
        with pytest.raises(ValueError):
            preservation_report(DiagnosticsSeries(), 0.1, 1e-3)
        with pytest.raises(ValueError):
            preservation_report(series_of(record(0.0)), 1.5, 1e-3)


class TestDecayAndMonotone:
    def test_flat_run(self):
        g = GridSpec.make((16, 16))
        u = make_preset(Preset("quadratic", {"A": [[0.3, 0.1], [0.1, 0.2]]}), g)
        _, series = run(FlowState(u), StepControl(0.5, "rk2", 1.0, 50))
        rep = decay_report(series, 0.5)
        assert rep.max_t_supH2 == 0 and rep.max_t_supD3u2 == 0
        assert rep.final_H2_le_anchor and rep.final_D3_le_anchor

    def test_single_sample(self):
        rep = decay_report(series_of(record(1.0, sup_H2=0.2, sup_D3u2=0.4)), 0.5)
        assert rep.max_t_supH2 == pytest.approx(0.2) and rep.final_H2_le_anchor and rep.envelope_ok()

    def test_growth_detected(self):
        s = series_of(record(0.5, sup_H2=0.1, sup_D3u2=0.1), record(1.0, sup_H2=2.0, sup_D3u2=0.01))
        rep = decay_report(s, 0.5)
        assert not rep.envelope_ok(10) and not rep.final_H2_le_anchor and rep.final_D3_le_anchor

    def test_too_short(self):
        with pytest.raises(ValueError):
            decay_report(series_of(record(0.1)), 0.5)

    def test_first_increase(self):
        s = series_of(record(0.0, osc_theta=1.0), record(1.0, osc_theta=1.0 + 5e-9), record(2.0, osc_theta=1.1))
        assert first_increase(s, "osc_theta", 1e-8) == 2.0
        assert first_increase(s, "sup_Du", 1e-8) is None


class TestResiduals:
    def test_quadratic_special_lagrangian(self):
        A = np.diag([0.3, -0.6])
        u = make_preset(Preset("quadratic", {"A": A.tolist()}), GridSpec.make((16, 16)))
        theta = float(lagrangian_angle(A))
        assert special_lagrangian_residual(u, theta) <= 1e-12
        assert special_lagrangian_residual(u, 0.0) == pytest.approx(abs(np.arctan(0.3) + np.arctan(-0.6)), abs=1e-15)

    def test_cosine_is_not_special_lagrangian(self):
        g = GridSpec.make(256)
        u = ScalarField(g, np.cos(g.axis_coords(0)))
        # the stencil shrinks the Hessian by the factor sinc^2(h/2)
        h = g.spacing[0]
        scale = (np.sin(h / 2) / (h / 2)) ** 2
        assert special_lagrangian_residual(u, 0.0) == pytest.approx(np.arctan(scale), abs=1e-12)
        assert abs(special_lagrangian_residual(u, 0.0) - np.arctan(1.0)) <= 1e-4

    def test_quadratic_static_soliton(self):
        A = np.array([[0.5, 0.2], [0.2, -0.3]])
        u = make_preset(Preset("quadratic", {"A": A.tolist()}), GridSpec.make((16, 16)))
        spec = SolitonSpec((0.0, 0.0), (0.0, 0.0), float(lagrangian_angle(A)))
        assert soliton_residual(u, spec) <= 1e-12

    def test_zero_soliton_is_special_lagrangian_bitwise(self):
        g = GridSpec.make((32, 32))
        u = ScalarField(g, np.random.default_rng(0).standard_normal(g.shape) * 0.01)
        a = soliton_residual(u, SolitonSpec((0.0, 0.0), (0.0, 0.0), 0.0))
        assert a == special_lagrangian_residual(u, 0.0)

    def test_translating_terms(self):
        # u = a.x-linear potential: theta = 0, residual = sup|a.Du - b.x - c|
        g = GridSpec.make(32, extent=2.0, origin=-1.0)
        u = ScalarField(g, np.zeros(32), linear=[0.5])
        spec = SolitonSpec((2.0,), (1.0,), 0.25)
        x = g.axis_coords(0)
        expect = np.max(np.abs(2.0 * 0.5 - x - 0.25))
        assert soliton_residual(u, spec) == pytest.approx(expect, abs=1e-15)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SolitonSpec((1.0,), (1.0, 2.0))
        with pytest.raises(ValueError):
            SolitonSpec((np.nan,), (0.0,))
        u = GridSpec.make((8, 8)).zeros()
        with pytest.raises(ValueError):
            soliton_residual(u, SolitonSpec((0.0,), (0.0,)))

    def test_integrated_soliton_against_quadrature(self):
        """``u'' = tan(x)`` on ``[-1.2, 1.2]`` solves the 1D equation with ``b = 1``."""
        npts, lo, hi = 32768, -1.2, 1.2
        h = (hi - lo) / npts
        x, u = soliton_potential(1.0, 0.0, lo, h, npts)
        # keep only a small remainder in the sampled values; the fitted
        # quadratic and linear parts are carried exactly as backgrounds
        q, lin, c = np.polyfit(x.astype(float), u.astype(float), 2)
        w = (u - np.longdouble(q) * x * x - np.longdouble(lin) * x - np.longdouble(c)).astype(float)
        g = GridSpec((npts,), (h,), (lo,))
        field = ScalarField(g, w, quadratic=[[2 * q]], linear=[lin])
        res = soliton_residual(field, SolitonSpec((0.0,), (1.0,), 0.0), interior=True)
        assert res <= 1e-8


class TestConvergence:
    def test_quadratic_passes(self):
        u = make_preset(Preset("quadratic", {"A": [[1.0, 0.0], [0.0, 1.0]]}), GridSpec.make((16, 16)))
        lift = lift_decompose(gradient(u))
        v = convergence_check(FlowState(u), lift, 1e-10)
        assert v.passed and v.sup_hessian_dev <= 1e-12

    def test_initial_cosine_fails(self):
        u = make_preset(Preset("cosine", {"amplitude": 0.3}), GridSpec.make((32, 32)))
        v = convergence_check(FlowState(u), lift_decompose(gradient(u)), 1e-5)
        assert not v.passed and v.sup_hessian_dev > 0.29
