import numpy as np
import pytest

from dmslearn.numerics import MlpModel, QuadraticTask, local_step
from dmslearn.secagg import FixedPointCodec, SecAggSession, SharingParams, Transcript, secure_aggregate
from dmslearn.threats import (
    InterceptedTrace,
    PoisonPolicy,
    dlg_compare_topologies,
    dlg_reconstruct,
    infer_gradient,
    poison_broadcast,
    run_poisoning_experiment,
    secure_leakage_probe,
)


def test_poison_constant_mode():
    policy = PoisonPolicy(frozenset({1}), epsilon=0.5, mode="constant")
    w = np.array([1.0, -2.0])
    assert np.array_equal(poison_broadcast(w, policy, 0), w)
    assert np.allclose(poison_broadcast(w, policy, 1), w + 0.5)


def test_poison_scaled_mode():
    policy = PoisonPolicy(frozenset({0}), epsilon=0.1, mode="scaled")
    w = np.array([3.0, 4.0])  # norm 5
    shift = 0.1 * 5.0 / np.sqrt(2.0)
    assert np.allclose(poison_broadcast(w, policy, 0), w + shift)


def test_poison_zero_epsilon_is_noop():
    policy = PoisonPolicy(frozenset({0}), epsilon=0.0)
    w = np.array([1.0])
    assert np.array_equal(poison_broadcast(w, policy, 0), w)


def test_poison_validation():
    with pytest.raises(ValueError):
        PoisonPolicy(frozenset({0}), epsilon=-0.1)
    with pytest.raises(ValueError):
        PoisonPolicy(frozenset({0}), mode="flip")


def test_policy_hook_matches_direct_call():
    policy = PoisonPolicy(frozenset({2}), epsilon=0.3)
    hook = policy.hook()
    w = np.array([0.5, 0.5])
    for agent in range(4):
        assert np.array_equal(hook(agent, w), poison_broadcast(w, policy, agent))


def test_trace_requires_increasing_steps():
    trace = InterceptedTrace(victim=0)
    trace.add(0, np.zeros(2))
    trace.add(1, np.ones(2))
    with pytest.raises(ValueError):
        trace.add(1, np.ones(2))


def test_infer_gradient_exact_on_plain_step():
    task = QuadraticTask(np.diag([2.0, 3.0]), np.array([0.5, -0.5]))
    theta0 = np.array([1.0, 2.0])
    gamma = 0.1
    theta1 = local_step(task, theta0, gamma)
    trace = InterceptedTrace(victim=0)
    trace.add(0, theta0)
    trace.add(1, theta1)
    recovered = infer_gradient(trace, gamma)
    assert np.allclose(recovered, task.gradient(theta0))


def test_infer_gradient_guards():
    trace = InterceptedTrace(victim=0)
    trace.add(0, np.zeros(1))
    with pytest.raises(ValueError):
        infer_gradient(trace, 0.1)  # one snapshot
    trace.add(2, np.ones(1))
    with pytest.raises(ValueError):
        infer_gradient(trace, 0.1)  # steps 0 and 2 straddle a mixing round
    consec = InterceptedTrace(victim=0)
    consec.add(0, np.zeros(1))
    consec.add(1, np.ones(1))
    with pytest.raises(ValueError):
        infer_gradient(consec, 0.0)


def test_dlg_recovers_known_sample():
    rng = np.random.default_rng(0)
    model = MlpModel(2, 3, 1)
    theta = model.init_params(rng)
    true_x = np.array([0.4, 0.7])
    true_y = np.array([0.2])
    _, observed = model.loss_and_gradient(theta, true_x[None, :], true_y[None, :])
    result = dlg_reconstruct(
        model,
        theta,
        observed,
        iters=300,
        rng=rng,
        x_init=true_x + 0.05,
        y_init=true_y - 0.05,
        true_x=true_x,
        true_y=true_y,
    )
    assert result.residual < 1e-4
    assert result.input_mse < 1e-3
    assert np.all(np.diff(result.residual_series) <= 0)


def test_dlg_restarts_never_hurt():
    rng_one = np.random.default_rng(3)
    rng_many = np.random.default_rng(3)
    model = MlpModel(2, 3, 1)
    theta = model.init_params(np.random.default_rng(1))
    x = np.array([0.1, 0.9])
    y = np.array([-0.3])
    _, observed = model.loss_and_gradient(theta, x[None, :], y[None, :])
    single = dlg_reconstruct(model, theta, observed, iters=80, rng=rng_one)
    multi = dlg_reconstruct(model, theta, observed, iters=80, rng=rng_many, restarts=3)
    assert multi.residual <= single.residual


def test_leakage_probe_on_real_transcript():
    codec = FixedPointCodec()
    rng = np.random.default_rng(5)
    transcript = Transcript()
    vectors = [np.array([0.25, -1.5]), np.array([2.0, 0.5]), np.array([1.0, 1.0])]
    session = SecAggSession(
        params=SharingParams(3, 1),
        contributors=(0, 1, 2),
        parties=(7, 8, 9),
        recipients=(0,),
    )
    secure_aggregate(vectors, session, codec, rng, transcript=transcript)
    encoded = [codec.encode_vector(v) for v in vectors]
    assert secure_leakage_probe(transcript, encoded) is True


def test_leakage_probe_flags_planted_value():
    codec = FixedPointCodec()
    vec = np.array([0.25, -1.5])
    encoded = codec.encode_vector(vec)
    leaky = Transcript()
    leaky.log(0, "share", 0, 7, [encoded[0]], 16)
    assert secure_leakage_probe(leaky, [encoded]) is False


def test_compare_topologies_smoke():
    report = dlg_compare_topologies(0, iters=60, restarts=1)
    assert np.isfinite(report.fedavg_input_mse)
    assert np.isfinite(report.dms_input_mse)
    assert report.fedavg_residual >= 0
    assert report.dms_residual >= 0
    assert report.transcript_clean is True
    assert report.inferred_mismatch >= 0


def test_poisoning_experiment_smoke():
    outcome = run_poisoning_experiment([0, 1], rounds=200, tail_rounds=50)
    assert outcome.seeds == [0, 1]
    assert outcome.dms_inflation.shape == (2,)
    assert np.all(outcome.dms_inflation > 0)
    assert np.all(outcome.fedavg_inflation > 0)
    assert np.isfinite(outcome.dms_median)


def test_poisoning_no_malicious_is_exactly_clean():
    outcome = run_poisoning_experiment([4], malicious_count=0, rounds=120, tail_rounds=30)
    assert outcome.dms_inflation[0] == pytest.approx(1.0)
    assert outcome.fedavg_inflation[0] == pytest.approx(1.0)
