"""Closed-loop simulation, disturbances, metrics, and integrator tests."""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg

from hinf_autopilot.actuators_sensors import SERVO_RATE_LIMIT
from hinf_autopilot.controller import design_point_t60, synthesize
from hinf_autopilot.simulator import (
    DisturbanceSpec,
    Metrics,
    Noise,
    NonFiniteDerivative,
    NonFiniteState,
    Ramp,
    Scenario,
    SimulationTrace,
    Sine,
    Step,
    SynthesisFailed,
    compute_metrics,
    disturbance_sample,
    rk4_step,
    scenario_paper_lti,
    scenario_paper_ltv,
    simulate,
    write_trace_csv,
)
from hinf_autopilot.vehicle_model import (
    PITCH_COEFFS_T60,
    CoefficientSchedule,
    CommandProfile,
    DynamicCoefficients,
    assemble_pitch_plant,
)

ZERO_PROFILE = CommandProfile(((0.0, 0.0),))


def quiet_scenario(**overrides) -> Scenario:
    """Frozen-plant scenario with zero command and zero disturbance."""
    base = dict(
        design=design_point_t60(),
        profile=ZERO_PROFILE,
        disturbances=DisturbanceSpec(),
        t_span=(60.0, 70.0),
        dt=1e-3,
        feedback_source="true_state",
        plant_mode="lti_frozen",
    )
    base.update(overrides)
    return Scenario(**base)


class TestRk4Step:
    def test_exponential_decay(self):
        out = rk4_step(lambda x, t: -x, np.array([1.0]), 0.0, 0.1)
        # One classical step truncates the Taylor series after dt^4:
        # 1 - 0.1 + 0.005 - 0.1^3/6 + 0.1^4/24 = 0.9048375 exactly; the gap
        # to exp(-0.1) is the dt^5/5! term, 8.33e-8.
        assert out[0] == pytest.approx(0.9048375, abs=1e-12)
        assert abs(out[0] - math.exp(-0.1)) < 1e-7

    def test_zero_derivative(self):
        state = np.array([1.0, -2.0, 3.0])
        out = rk4_step(lambda x, t: np.zeros(3), state, 0.0, 0.5)
        assert np.array_equal(out, state)

    def test_fourth_order_against_matrix_exponential(self):
        rng = np.random.default_rng(13)
        A = rng.normal(size=(3, 3))
        A -= (np.linalg.eigvals(A).real.max() + 1.0) * np.eye(3)
        x0 = rng.normal(size=3)
        horizon = 1.0
        exact = scipy.linalg.expm(A * horizon) @ x0

        def endpoint_error(dt):
            x = x0.copy()
            for k in range(int(round(horizon / dt))):
                x = rk4_step(lambda s, t: A @ s, x, k * dt, dt)
            return np.linalg.norm(x - exact)

        e1, e2 = endpoint_error(0.02), endpoint_error(0.01)
        assert 12.0 <= e1 / e2 <= 20.0

    def test_non_finite_derivative(self):
        with pytest.raises(NonFiniteDerivative):
            rk4_step(lambda x, t: np.array([math.inf]), np.array([1.0]), 0.0, 0.1)

    def test_dt_validation(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x, t: -x, np.array([1.0]), 0.0, -0.1)


class TestDisturbanceSample:
    def test_empty_spec(self):
        assert np.array_equal(disturbance_sample(DisturbanceSpec(), 3.0), [0.0, 0.0])

    def test_step_closed_left_endpoint(self):
        spec = DisturbanceSpec(channel1=(Step(t0=5.0, amplitude=0.1),))
        assert disturbance_sample(spec, 4.9)[0] == 0.0
        assert disturbance_sample(spec, 5.0)[0] == 0.1
        assert disturbance_sample(spec, 6.0)[0] == 0.1

    def test_sine_quarter_period(self):
        spec = DisturbanceSpec(channel2=(Sine(amplitude=0.2, frequency=1.0),))
        assert disturbance_sample(spec, math.pi / 2)[1] == pytest.approx(0.2, rel=1e-12)

    def test_ramp(self):
        spec = DisturbanceSpec(channel1=(Ramp(t0=2.0, slope=0.5),))
        assert disturbance_sample(spec, 1.0)[0] == 0.0
        assert disturbance_sample(spec, 4.0)[0] == pytest.approx(1.0)

    def test_primitives_sum(self):
        spec = DisturbanceSpec(
            channel1=(Step(t0=0.0, amplitude=1.0), Ramp(t0=0.0, slope=1.0))
        )
        assert disturbance_sample(spec, 2.0)[0] == pytest.approx(3.0)

    def test_noise_reproducible_and_held(self):
        spec = DisturbanceSpec(channel1=(Noise(amplitude=0.3, seed=42, hold=0.1),))
        a = disturbance_sample(spec, 0.55)[0]
        b = disturbance_sample(spec, 0.59)[0]  # same hold interval
        c = disturbance_sample(DisturbanceSpec(
            channel1=(Noise(amplitude=0.3, seed=42, hold=0.1),)
        ), 0.55)[0]
        assert a == b == c
        assert abs(a) <= 0.3
        # Prefix stability: querying a later time first must not change it.
        spec2 = DisturbanceSpec(channel1=(Noise(amplitude=0.3, seed=977, hold=0.1),))
        late = disturbance_sample(spec2, 123.4)[0]
        early = disturbance_sample(spec2, 0.55)[0]
        spec3 = DisturbanceSpec(channel1=(Noise(amplitude=0.3, seed=977, hold=0.1),))
        assert disturbance_sample(spec3, 0.55)[0] == early
        assert disturbance_sample(spec3, 123.4)[0] == late


class TestSimulate:
    def test_zero_scenario_identically_zero(self):
        trace, metrics = simulate(quiet_scenario())
        for arr in (trace.x, trace.theta, trace.q, trace.delta, trace.u, trace.w,
                    trace.q_meas):
            assert np.all(arr == 0.0)
        assert metrics == Metrics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_deterministic_bitwise(self):
        scenario = scenario_paper_lti(
            t_span=(60.0, 70.0),
            dt=5e-4,
            disturbances=DisturbanceSpec(
                channel1=(Noise(amplitude=0.05, seed=7, hold=5e-4),),
                channel2=(Step(t0=62.0, amplitude=0.05),),
            ),
        )
        t1, m1 = simulate(scenario)
        t2, m2 = simulate(scenario)
        for a, b in zip(
            (t1.t, t1.x, t1.theta, t1.q, t1.delta, t1.u, t1.w, t1.q_meas),
            (t2.t, t2.x, t2.theta, t2.q, t2.delta, t2.u, t2.w, t2.q_meas),
        ):
            assert np.array_equal(a, b)
        assert m1 == m2

    def test_trace_grid(self):
        trace, _ = simulate(quiet_scenario(t_span=(60.0, 61.0), dt=1e-3))
        assert len(trace.t) == 1001
        steps = np.diff(trace.t)
        assert np.allclose(steps, 1e-3, rtol=0, atol=1e-12)

    def test_rate_limit_respected_even_when_saturating(self):
        # A violent step disturbance drives the deflection command hard.
        scenario = scenario_paper_lti(
            t_span=(60.0, 65.0),
            dt=5e-4,
            disturbances=DisturbanceSpec(channel2=(Step(t0=61.0, amplitude=5.0),)),
        )
        trace, metrics = simulate(scenario)
        rates = np.abs(np.diff(trace.delta)) / scenario.dt
        assert rates.max() <= SERVO_RATE_LIMIT + 1e-12
        assert metrics.servo_saturation_fraction > 0.0

    def test_matches_exact_sampled_closed_loop(self):
        # Pass-through servo (tau = dt, huge limit), true-state feedback,
        # zero forcing, frozen plant: the loop is exactly the sampled linear
        # system x+ = Phi x + Gamma_B u + Gamma_w w with u = -K x held over
        # each step, whose matrix-exponential solution is computed here.
        design = design_point_t60()
        dt = 1e-3
        scenario = quiet_scenario(
            t_span=(60.0, 80.0),
            dt=dt,
            servo_tau=dt,
            servo_rate_limit=1e9,
            disturbances=DisturbanceSpec(channel2=(Step(t0=0.0, amplitude=0.02),)),
        )
        trace, _ = simulate(scenario)

        plant = assemble_pitch_plant(design.coeffs)
        _, gain = synthesize(design)
        aug = np.zeros((6, 6))
        aug[:3, :3] = plant.A
        aug[:3, 3:4] = plant.B
        aug[:3, 4:6] = plant.B_w
        exp_aug = scipy.linalg.expm(aug * dt)
        phi = exp_aug[:3, :3]
        gamma_b = exp_aug[:3, 3]
        gamma_w = exp_aug[:3, 4:6]

        x = np.zeros(3)
        w = np.array([0.0, 0.02])
        n = len(trace.t) - 1
        for _ in range(n):
            u = float(-(gain.K @ x)[0])
            x = phi @ x + gamma_b * u + gamma_w @ w
        scale = max(1.0, float(np.abs(x).max()))
        assert np.abs(trace.x[-1] - x).max() <= 1e-6 * scale

    def test_step_size_robustness(self):
        base = scenario_paper_lti(t_span=(60.0, 90.0))
        halved = scenario_paper_lti(t_span=(60.0, 90.0), dt=base.dt / 2.0)
        _, m1 = simulate(base)
        _, m2 = simulate(halved)
        assert abs(m1.rms_e - m2.rms_e) / m2.rms_e < 0.01

    def test_feedback_source_swap_is_minor(self):
        # Command bandwidth is far below the gyro's 80*pi rad/s.
        a = scenario_paper_lti(t_span=(60.0, 100.0), feedback_source="gyro_rate")
        b = scenario_paper_lti(t_span=(60.0, 100.0), feedback_source="true_state")
        _, ma = simulate(a)
        _, mb = simulate(b)
        assert abs(ma.rms_e - mb.rms_e) / mb.rms_e < 0.05

    def test_constant_command_settles_to_equilibrium(self):
        # Command ends at zero rate, so the forcing freezes and the integral
        # channel pins e to the 3x3 equilibrium oracle's zero.
        profile = CommandProfile(
            ((60.0, 0.0), (62.0, 0.0), (64.0, -0.0015), (70.0, -0.0015), (72.0, 0.0))
        )
        scenario = quiet_scenario(profile=profile, t_span=(60.0, 400.0), dt=1e-3)
        trace, _ = simulate(scenario)
        design = scenario.design
        plant = assemble_pitch_plant(design.coeffs)
        _, gain = synthesize(design)
        closed = plant.A - plant.B @ gain.K
        theta_cmd = float(profile.rate_integral(400.0))
        forcing = np.array([0.0, 0.0, design.coeffs.Z_theta * theta_cmd])
        x_eq = np.linalg.solve(closed, -forcing)
        assert abs(x_eq[1]) < 1e-15 * max(1.0, np.linalg.norm(x_eq))
        # The slowest closed-loop mode (-0.0106 1/s) is still closing at
        # t=400; the error channel is already small and v_z within 10%.
        assert abs(trace.x[-1, 1]) < 1e-5
        assert abs(trace.x[-1, 2] - x_eq[2]) <= 0.1 * abs(x_eq[2])

    def test_divergence_reports_time_and_partial_trace(self):
        # A schedule that walks into violently unstable pitch dynamics with
        # a vanishing control moment defeats the frozen gain.
        wild = DynamicCoefficients(
            Z_v=-0.05, Z_q=600.0, Z_theta=-6.5, Z_delta=-0.001,
            M_v=-0.003, M_q=80.0, M_delta=-0.0001,
        )
        schedule = CoefficientSchedule(((60.0, PITCH_COEFFS_T60), (61.0, wild)))
        scenario = Scenario(
            design=design_point_t60(),
            schedule=schedule,
            profile=ZERO_PROFILE,
            disturbances=DisturbanceSpec(channel2=(Step(t0=60.0, amplitude=0.1),)),
            t_span=(60.0, 120.0),
            dt=1e-3,
            feedback_source="true_state",
            plant_mode="ltv",
        )
        with pytest.raises(NonFiniteState) as excinfo:
            simulate(scenario)
        err = excinfo.value
        assert 60.0 < err.time <= 120.0
        assert isinstance(err.trace, SimulationTrace)
        assert len(err.trace.t) >= 1
        assert np.all(np.isfinite(err.trace.x))

    def test_synthesis_failure_wrapped(self):
        with pytest.raises(SynthesisFailed):
            simulate(quiet_scenario(design=design_point_t60(gamma=1e-6)))

    def test_energy_ratio_bounded_by_level(self):
        scenario = quiet_scenario(
            t_span=(60.0, 90.0),
            dt=5e-4,
            disturbances=DisturbanceSpec(channel2=(Sine(amplitude=0.05, frequency=1.5),)),
        )
        _, metrics = simulate(scenario)
        assert 0.0 < metrics.energy_ratio < 20.0**2

    def test_builtin_scenarios_run(self, shipped_runs):
        for name, (scenario, trace, metrics) in shipped_runs.items():
            assert np.all(np.isfinite(trace.x))
            assert metrics.rms_e > 0.0
            assert trace.t[0] == scenario.t_span[0]
            assert trace.t[-1] == pytest.approx(scenario.t_span[1], abs=1e-9)

    def test_ltv_and_lti_factories_differ(self):
        assert scenario_paper_ltv().plant_mode == "ltv"
        assert scenario_paper_lti().plant_mode == "lti_frozen"
        assert scenario_paper_ltv().design.gamma == 7.8
        assert scenario_paper_lti().design.gamma == 20.0


class TestComputeMetrics:
    @staticmethod
    def synthetic_trace(t, e, w1=None, w2=None, delta=None):
        n = len(t)
        zeros = np.zeros(n)
        x = np.column_stack([zeros, e, zeros])
        return SimulationTrace(
            t=t,
            x=x,
            theta=zeros.copy(),
            q=-np.asarray(e),
            delta=zeros.copy() if delta is None else delta,
            u=zeros.copy(),
            w=np.column_stack(
                [zeros if w1 is None else w1, zeros if w2 is None else w2]
            ),
            q_meas=zeros.copy(),
        )

    def test_all_zero_trace(self):
        t = np.linspace(0.0, 1.0, 101)
        metrics = compute_metrics(self.synthetic_trace(t, np.zeros(101)), ZERO_PROFILE)
        assert metrics == Metrics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_constant_error(self):
        t = np.linspace(0.0, 2.0, 201)
        metrics = compute_metrics(
            self.synthetic_trace(t, np.full(201, 0.01)), ZERO_PROFILE
        )
        assert metrics.rms_e == pytest.approx(0.01, rel=1e-12)
        assert metrics.max_abs_e == pytest.approx(0.01)

    def test_sine_rms_over_integer_periods(self):
        t = np.linspace(0.0, 2.0 * math.pi * 3.0, 60_001)
        metrics = compute_metrics(
            self.synthetic_trace(t, 0.02 * np.sin(t)), ZERO_PROFILE
        )
        assert metrics.rms_e == pytest.approx(0.02 / math.sqrt(2.0), rel=1e-6)

    def test_energy_ratio_of_known_signals(self):
        t = np.linspace(0.0, 10.0, 10_001)
        metrics = compute_metrics(
            self.synthetic_trace(t, np.full_like(t, 0.3), w1=np.full_like(t, 0.6)),
            ZERO_PROFILE,
        )
        assert metrics.energy_ratio == pytest.approx(0.25, rel=1e-9)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        trace, _ = simulate(
            quiet_scenario(
                t_span=(60.0, 60.5),
                dt=1e-3,
                disturbances=DisturbanceSpec(channel2=(Step(t0=60.0, amplitude=0.01),)),
            )
        )
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        header = path.read_text().splitlines()[0]
        assert header == "t,int_e,e,vz,theta_rad,q_rad_s,delta_rad,u_rad,w1,w2,q_meas_rad_s"
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        assert data.shape == (len(trace.t), 11)
        assert np.array_equal(data[:, 0], trace.t)
        assert np.array_equal(data[:, 2], trace.x[:, 1])
        assert np.array_equal(data[:, 6], trace.delta)


class TestScenarioValidation:
    def test_dt_cap(self):
        with pytest.raises(ValueError):
            quiet_scenario(dt=2e-3)

    def test_span_ordering(self):
        with pytest.raises(ValueError):
            quiet_scenario(t_span=(10.0, 5.0))

    def test_enum_fields(self):
        with pytest.raises(ValueError):
            quiet_scenario(feedback_source="estimated")
        with pytest.raises(ValueError):
            quiet_scenario(plant_mode="nonlinear")
