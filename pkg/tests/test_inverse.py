import json

import numpy as np
import pytest

from idro.ambiguity import SampleSet
from idro.forward import assemble, solve_forward
from idro.inverse import (
    ConfigError,
    EmptyInput,
    ObservationNotRationalizable,
    RecoveryConfig,
    RecoveryReport,
    diagnose,
    recover,
    recover_bisection,
    recover_data_driven,
)
from idro.kkt_milp import KktSystem, recover_kkt_milp, recover_relaxed
from idro.model import CcLinearProgram, Observation
from idro.solver import MixedBinaryLp, Status, solve_mixed_binary

from oracles import t1_closed_form


def t1(d=1.0):
    model = CcLinearProgram(c=[-1.0], A=[[1.0]], h=[10.0], B=[[1.0]], D=[[1.0]], d=[d], gamma=0.1)
    return model, SampleSet([[0.0]], [-1.0], [1.0])


def x_at(eps, model=None, samples=None):
    if model is None:
        model, samples = t1()
    return solve_forward(assemble(model, samples, eps)).x_opt


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.05])
def test_bisection_roundtrip_t1(eps):
    rep = recover_bisection(*t1(), x_at(eps))
    assert rep.epsilon_star == pytest.approx(eps, abs=1e-6)
    assert not rep.failed
    assert rep.binding_at_star


@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_t1_saturates_at_the_robust_solution(eps):
    # x*(eps) = 0 for every eps >= 0.1, so that point is optimal up to epsilon_bar
    assert t1_closed_form(eps) == 0.0
    rep = recover_bisection(*t1(), x_at(eps))
    assert rep.failed and rep.epsilon_star == 100.0


def test_beyond_epsilon_max_fails():
    model, s = t1()
    rep = recover_bisection(model, s, x_at(1.0 + 0.1))
    assert rep.failed and rep.epsilon_star == 100.0
    assert rep.epsilon_max == pytest.approx(1.0)


def test_report_json_and_trace():
    rep = recover_bisection(*t1(), x_at(0.05))
    d = json.loads(rep.to_json())
    assert d["engine"] == "bisection" and d["n_samples"] == 1
    assert rep.trace_is_monotone()
    labels = {v for _, v in rep.trace}
    assert labels <= {"feasible_only", "optimal", "infeasible", "feasible"}


def test_trace_monotone_detects_a_step_back():
    rep = RecoveryReport(0.1, False, "bisection", 3, 100.0, 1.0, 1, 0.1)
    rep.trace = [(0.1, "optimal"), (0.2, "feasible_only"), (0.3, "infeasible")]
    assert not rep.trace_is_monotone()
    rep.trace = [(0.0, "feasible_only"), (0.1, "optimal"), (0.3, "infeasible")]
    assert rep.trace_is_monotone()


def test_not_rationalizable():
    with pytest.raises(ObservationNotRationalizable):
        recover_bisection(*t1(), [2.0])
    with pytest.raises(ObservationNotRationalizable):
        recover_kkt_milp(*t1(), [2.0])


def test_config_errors():
    with pytest.raises(ConfigError):
        recover_bisection(*t1(), [0.5], RecoveryConfig(epsilon_bar=0.5))
    with pytest.raises(ConfigError):
        RecoveryConfig(engine="simplex")
    with pytest.raises(ConfigError):
        RecoveryConfig(bisection_tol=0.0)
    with pytest.raises(ValueError):
        recover_bisection(*t1(), [0.5, 0.5])


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.05])
def test_milp_agrees_with_bisection_t1(eps):
    x0 = x_at(eps)
    a, b = recover_bisection(*t1(), x0), recover_kkt_milp(*t1(), x0)
    assert b.epsilon_star == pytest.approx(eps, abs=1e-5)
    assert abs(a.epsilon_star - b.epsilon_star) <= 1e-5
    assert b.binding_at_star


def test_milp_fails_beyond_epsilon_max():
    rep = recover_kkt_milp(*t1(), x_at(1.1))
    assert rep.failed and rep.epsilon_star == 100.0


def test_both_engines_reported():
    rep = recover(*t1(), x_at(0.05), RecoveryConfig(engine="both"))
    assert set(rep.per_engine) == {"bisection", "milp"}
    assert not any("disagree" in n for n in rep.notes)


def test_all_duals_zero_node_is_infeasible():
    model, s = t1()
    inst = assemble(model, s, 0.0)
    ks = KktSystem(inst, x_at(0.05), RecoveryConfig(), relaxed=False)
    p, _ = ks.build(0.05, 0.05, "fix")
    lo, hi = p.base.lower.copy(), p.base.upper.copy()
    lo[ks.ix.b] = hi[ks.ix.b] = 0.0  # every pair on the zero-multiplier side
    forced = MixedBinaryLp(p.base.replace(lower=lo, upper=hi), p.binary_indices)
    assert solve_mixed_binary(forced).lp.status is Status.INFEASIBLE
    # the free pattern is fine
    assert solve_mixed_binary(p).lp.optimal


def test_milp_size_guard():
    model, s = t1()
    with pytest.raises(ConfigError, match="complementarity pairs"):
        recover_kkt_milp(model, s, x_at(0.05), RecoveryConfig(max_pairs=3))


def test_relaxed_exact_observation():
    x0 = x_at(0.05)
    a = recover_relaxed(*t1(), x0, noise_weight=1e3)
    b = recover_kkt_milp(*t1(), x0)
    assert abs(a.epsilon_star - b.epsilon_star) <= 1e-5
    assert a.total_slack <= 1e-6


@pytest.mark.parametrize("shift", [1e-3, -1e-3])
def test_relaxed_perturbed_observation(shift):
    rep = recover_relaxed(*t1(), x_at(0.05) + shift, noise_weight=1e3)
    assert abs(rep.epsilon_star - 0.05) <= 0.1 * 0.05
    if shift > 0:
        # x0 above the frontier cannot be reconciled without paying slack
        assert rep.total_slack > 0


def test_relaxed_rejects_hopeless_point():
    with pytest.raises(ObservationNotRationalizable):
        recover_relaxed(*t1(), [2.0])


def test_data_driven_constant():
    model, s = t1()
    obs = [Observation(x_at(0.05))] * 3
    final, periods = recover_data_driven(model, [s] * 3, obs)
    assert final.epsilon_star == pytest.approx(0.05, abs=1e-6)
    assert len(periods) == 3 and not final.notes


def test_data_driven_with_a_slack_period():
    model, s = t1()
    loose, _ = t1(d=20.0)  # the chance row no longer binds
    slack_fwd = solve_forward(assemble(loose, s, 0.09))
    assert not slack_fwd.cvar_binding
    final, periods = recover_data_driven(
        [model, loose, model], [s] * 3, [x_at(0.05), slack_fwd.x_opt, x_at(0.05)]
    )
    assert periods[1].epsilon_star > 0.09
    assert final.epsilon_star == pytest.approx(0.05, abs=1e-6)
    assert any("vary" in n for n in final.notes)


def test_data_driven_all_failed():
    model, s = t1()
    final, _ = recover_data_driven(model, [s, s], [x_at(0.2), x_at(0.5)])
    assert final.failed and final.epsilon_star == 100.0


def test_data_driven_input_errors():
    model, s = t1()
    with pytest.raises(EmptyInput):
        recover_data_driven(model, [], [])
    with pytest.raises(ValueError):
        recover_data_driven(model, [s], [x_at(0.0), x_at(0.0)])


def _report(failed, n=100, slack=0.0, gamma=0.05):
    return RecoveryReport(100.0 if failed else 0.01, failed, "bisection", 1, 100.0, 0.4, n, gamma,
                          cvar_slack_at_bar=slack)


def _samples(n):
    return SampleSet(np.zeros((n, 1)), [-1], [1])


def test_diagnose_nominal():
    assert diagnose(_report(False), _samples(100)).labels == ["recovery nominal"]


def test_diagnose_lists_every_candidate():
    labels = diagnose(_report(True, n=10, slack=0.5), _samples(10)).labels
    assert labels == [
        "radius may be at or beyond epsilon_max",
        "chance constraint not binding",
        "samples may lack representativeness",
    ]


def test_diagnose_binding_and_plenty_of_samples():
    labels = diagnose(_report(True, slack=0.0), _samples(100)).labels
    assert labels == ["radius may be at or beyond epsilon_max"]
