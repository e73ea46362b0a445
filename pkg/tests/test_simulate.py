import math

import numpy as np
import pytest

from gflid.model import STATE_INDEX, find_equilibrium
from gflid.params import ModelParams
from gflid.simulate import (ReferenceSchedule, SimulationDiverged, inputs_at, integrate,
                            run_protocol)

NO_EVENTS = ReferenceSchedule((0.5, 0.0), ())


def test_inputs_at_protocol():
    s = ReferenceSchedule()
    assert tuple(inputs_at(s, 0.25)) == (0.5, 0.0)
    assert inputs_at(s, 0.35)[0] == 0.7
    assert tuple(inputs_at(s, 0.70)) == (0.7, 0.2)


def test_event_exactness():
    s = ReferenceSchedule()
    dt = 2e-5
    assert inputs_at(s, 0.3)[0] == 0.7
    assert inputs_at(s, 0.3 - dt)[0] == 0.5


def test_schedule_validation():
    with pytest.raises(ValueError):
        ReferenceSchedule(events=((0.6, "p_ref", 0.7), (0.3, "q_ref", 0.2)))
    with pytest.raises(ValueError):
        ReferenceSchedule(events=((0.3, "v_ref", 0.7),))
    with pytest.raises(ValueError):
        ReferenceSchedule(events=((-0.1, "p_ref", 0.7),))
    s = ReferenceSchedule()
    assert ReferenceSchedule.from_dict(s.to_dict()) == s


def test_scalar_decay_problem():
    traj = integrate(None, [1.0], NO_EVENTS, 0.1, 1.0, rhs=lambda x, u: [-x[0]])
    assert abs(traj.states[-1, 0] - math.exp(-1)) < 1e-6


def test_rk4_order_on_linear_problem():
    errs = []
    for dt in (0.1, 0.05):
        traj = integrate(None, [1.0, 0.0], NO_EVENTS, dt, 2.0,
                         rhs=lambda x, u: [x[1], -x[0]])
        errs.append(abs(traj.states[-1, 0] - math.cos(2.0)))
    assert 14 < errs[0] / errs[1] < 18


def test_equilibrium_is_fixed_point(params):
    x0 = find_equilibrium(params, (0.5, 0.0))
    traj = integrate(params, x0, NO_EVENTS, 2e-5, 0.01)
    assert np.max(np.abs(traj.states - x0)) < 1e-9


def test_uniform_grid_and_shapes(protocol_traj):
    tr = protocol_traj
    assert np.max(np.abs(np.diff(tr.times) - tr.dt)) < 1e-12
    n = len(tr.times)
    assert tr.states.shape == (n, 15) and tr.inputs.shape == (n, 2) and tr.derivs.shape == (n, 15)
    assert tr.event_steps == [15000, 30000]


def test_event_sample_uses_post_event_inputs(protocol_traj):
    k = protocol_traj.event_steps[0]
    assert protocol_traj.inputs[k, 0] == 0.7 and protocol_traj.inputs[k - 1, 0] == 0.5


def test_determinism(params):
    a = run_protocol(params, t_end=0.02)
    b = run_protocol(params, t_end=0.02)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.derivs, b.derivs)


def test_divergence_reports_step():
    p = ModelParams(kp_pll=1000.0)
    with pytest.raises(SimulationDiverged) as exc:
        run_protocol(p)
    assert exc.value.step > 0 and exc.value.time == pytest.approx(exc.value.step * 2e-5)


def test_settling_windows(protocol_traj):
    t = protocol_traj.times
    pm = protocol_traj.states[:, STATE_INDEX["p_m"]]
    qm = protocol_traj.states[:, STATE_INDEX["q_m"]]
    w1 = (t >= 0.55) & (t <= 0.6)
    w2 = (t >= 0.85)
    assert np.max(np.abs(pm[w1] - 0.7)) < 0.01
    assert np.max(np.abs(qm[w2] - 0.2)) < 0.01
