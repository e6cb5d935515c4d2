"""Attack injection and measurement: broadcast poisoning, channel
interception with gradient inference, and gradient-matching input
reconstruction.

Everything here treats the training engines as black boxes; attacks hook
in through the broadcast seam or read intercepted weight snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .consensus import (
    AgentState,
    ConvergenceMonitor,
    SecureSetup,
    make_agents,
    run_training,
)
from .numerics import Dataset, MlpModel, MlpTask, NoiseModel, QuadraticTask
from .secagg import FixedPointCodec, Transcript, party_placement, secure_aggregate
from .topology import make_dms_schedule

__all__ = [
    "InterceptedTrace",
    "LeakageReport",
    "PoisonOutcome",
    "PoisonPolicy",
    "ReconstructionResult",
    "dlg_compare_topologies",
    "dlg_reconstruct",
    "infer_gradient",
    "poison_broadcast",
    "run_poisoning_experiment",
    "secure_leakage_probe",
]


@dataclass(frozen=True)
class PoisonPolicy:
    """Which agents lie on the wire and by how much.

    ``constant`` mode adds ``epsilon`` to every coordinate; ``scaled``
    mode adds ``epsilon * ||w|| / sqrt(dim)``, a perturbation whose size
    tracks the weight magnitude.
    """

    malicious_ids: frozenset[int]
    epsilon: float = 0.2
    mode: str = "constant"

    def __post_init__(self) -> None:
        object.__setattr__(self, "malicious_ids", frozenset(self.malicious_ids))
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mode not in ("constant", "scaled"):
            raise ValueError(f"unknown poison mode {self.mode!r}")

    def hook(self):
        """Broadcast hook for the training engines."""

        def apply(agent_id: int, weights: np.ndarray) -> np.ndarray:
            return poison_broadcast(weights, self, agent_id)

        return apply


def poison_broadcast(weights: np.ndarray, policy: PoisonPolicy, agent_id: int) -> np.ndarray:
    """Perturb an outgoing weight vector if the sender is malicious."""
    w = np.asarray(weights, dtype=float)
    if agent_id not in policy.malicious_ids or policy.epsilon == 0.0:
        return w
    if policy.mode == "constant":
        return w + policy.epsilon
    shift = policy.epsilon * float(np.linalg.norm(w)) / np.sqrt(w.size)
    return w + shift


@dataclass
class InterceptedTrace:
    """Weight snapshots of one victim, in interception order.

    ``step`` is the attacker's own monotone counter; two snapshots are
    consecutive when their steps differ by one, meaning the attacker saw
    both ends of a single local update with nothing in between.
    """

    victim: int
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def add(self, step: int, weights: np.ndarray) -> None:
        if self.snapshots and step <= self.snapshots[-1][0]:
            raise ValueError("snapshots must arrive in increasing step order")
        self.snapshots.append((step, np.asarray(weights, dtype=float).copy()))


def infer_gradient(trace: InterceptedTrace, gamma: float) -> np.ndarray:
    """Recover the gradient implied by two consecutive snapshots.

    Exact whenever the victim took one plain gradient step between the
    snapshots; anything mixed in between (consensus averaging) corrupts
    the estimate, which is the point of comparing topologies.
    """
    if gamma == 0:
        raise ValueError("cannot divide out a zero learning rate")
    if len(trace.snapshots) < 2:
        raise ValueError("need two snapshots to difference")
    (s0, w0), (s1, w1) = trace.snapshots[0], trace.snapshots[1]
    if s1 != s0 + 1:
        raise ValueError(f"snapshots {s0} and {s1} are not consecutive")
    return (w0 - w1) / gamma


@dataclass
class ReconstructionResult:
    """Best iterate of a gradient-matching attack."""

    x: np.ndarray
    y: np.ndarray
    residual: float
    residual_series: np.ndarray
    iterations: int
    input_mse: float | None = None


def _gradient_residual(model, theta: np.ndarray, x: np.ndarray, y: np.ndarray, observed: np.ndarray) -> float:
    _, g = model.loss_and_gradient(theta, x[None, :], y[None, :])
    d = g - observed
    return float(d @ d)


def dlg_reconstruct(
    model,
    theta: np.ndarray,
    observed_grad: np.ndarray,
    *,
    iters: int = 500,
    step: float = 0.1,
    rng: np.random.Generator,
    restarts: int = 1,
    fd_step: float = 1e-4,
    x_init: np.ndarray | None = None,
    y_init: np.ndarray | None = None,
    true_x: np.ndarray | None = None,
    true_y: np.ndarray | None = None,
) -> ReconstructionResult:
    """Reconstruct a single training sample from its observed gradient.

    Minimizes the squared mismatch between the model gradient at a dummy
    sample and ``observed_grad`` by finite-difference descent on the dummy
    input and target, with a backtracking line search so the residual
    series never increases. ``model`` needs only a
    ``loss_and_gradient(theta, x, y)`` method. With ``restarts > 1`` the
    attack reruns from fresh random inits and keeps the best residual.
    """
    theta = np.asarray(theta, dtype=float)
    observed = np.asarray(observed_grad, dtype=float)
    in_dim = model.in_dim
    out_dim = model.out_dim

    best: ReconstructionResult | None = None
    for attempt in range(max(1, restarts)):
        if x_init is not None and attempt == 0:
            x = np.asarray(x_init, dtype=float).copy()
            y = np.asarray(y_init, dtype=float).copy() if y_init is not None else rng.uniform(-1, 1, out_dim)
        else:
            x = rng.uniform(0.0, 1.0, in_dim)
            y = rng.uniform(-1.0, 1.0, out_dim)

        z = np.concatenate([x, y])
        residual = _gradient_residual(model, theta, z[:in_dim], z[in_dim:], observed)
        if not np.isfinite(residual):
            raise ValueError("attack residual non-finite at initialization")
        series = [residual]
        trial_step = step
        accepted = 0

        for _ in range(iters):
            if residual == 0.0:
                break
            grad = np.zeros_like(z)
            for j in range(z.size):
                h = fd_step * max(1.0, abs(z[j]))
                zp = z.copy()
                zp[j] += h
                zm = z.copy()
                zm[j] -= h
                rp = _gradient_residual(model, theta, zp[:in_dim], zp[in_dim:], observed)
                rm = _gradient_residual(model, theta, zm[:in_dim], zm[in_dim:], observed)
                grad[j] = (rp - rm) / (2 * h)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-14:
                break
            improved = False
            t = trial_step
            for _ in range(40):
                cand = z - t * grad
                r = _gradient_residual(model, theta, cand[:in_dim], cand[in_dim:], observed)
                if np.isfinite(r) and r < residual:
                    z = cand
                    residual = r
                    trial_step = min(t * 2.0, 1e3)
                    improved = True
                    break
                t *= 0.5
            series.append(residual)
            accepted += 1
            if not improved:
                break

        result = ReconstructionResult(
            x=z[:in_dim].copy(),
            y=z[in_dim:].copy(),
            residual=residual,
            residual_series=np.array(series),
            iterations=accepted,
        )
        if best is None or result.residual < best.residual:
            best = result

    if true_x is not None:
        dx = best.x - np.asarray(true_x, dtype=float)
        best.input_mse = float(np.mean(dx * dx))
    return best


def secure_leakage_probe(transcript: Transcript, encoded_vectors: Sequence[Sequence[int]]) -> bool:
    """True when no individual encoded coordinate appears in any payload.

    Shares and share-sums are uniform field elements, so a hit against a
    contributor's actual encoding would mean the protocol leaked it.
    """
    private = set()
    for vec in encoded_vectors:
        private.update(int(v) for v in vec)
    for value in transcript.payload_values():
        if int(value) in private:
            return False
    return True


@dataclass
class LeakageReport:
    """One seed's interception-plus-reconstruction comparison."""

    fedavg_input_mse: float
    dms_input_mse: float
    fedavg_residual: float
    dms_residual: float
    aggregate_input_mse: float | None
    transcript_clean: bool | None
    inferred_mismatch: float


def dlg_compare_topologies(
    seed: int,
    *,
    agent_count: int = 6,
    hidden_dim: int = 4,
    gamma: float = 0.1,
    iters: int = 500,
    restarts: int = 3,
    with_secure_probe: bool = True,
) -> LeakageReport:
    """Run the interception pipeline against both threat models.

    Server arm: the attacker knows the shared initial weights and sees one
    clean local update, so the inferred gradient is exact. Switching arm:
    per-agent unknown inits, and the victim's two observed broadcasts span
    a consensus mix, so the differenced "gradient" is contaminated. Both
    arms attack the same victim sample with the same attack budget.
    """
    ss = np.random.SeedSequence(seed)
    data_rng, init_rng, attack_rng, mix_rng, secagg_rng = (
        np.random.default_rng(s) for s in ss.spawn(5)
    )

    model = MlpModel(2, hidden_dim, 1)
    samples_x = data_rng.uniform(0.0, 1.0, (agent_count, 2))
    samples_y = data_rng.uniform(0.0, 1.0, (agent_count, 1))
    victim = 0
    true_x = samples_x[victim]
    true_y = samples_y[victim]

    # Server arm: shared init, gradient inferred from one local step.
    theta0 = model.init_params(init_rng)
    _, true_grad = model.loss_and_gradient(theta0, true_x[None, :], true_y[None, :])
    phi = theta0 - gamma * true_grad
    trace = InterceptedTrace(victim)
    trace.add(0, theta0)
    trace.add(1, phi)
    inferred = infer_gradient(trace, gamma)
    fedavg_rec = dlg_reconstruct(
        model,
        theta0,
        inferred,
        iters=iters,
        rng=attack_rng,
        restarts=restarts,
        true_x=true_x,
    )

    # Switching arm: per-agent inits the attacker never sees; broadcasts
    # observed across a mixing step.
    tasks = [
        MlpTask(model, Dataset(samples_x[i : i + 1], samples_y[i : i + 1]))
        for i in range(agent_count)
    ]
    inits = [model.init_params(init_rng) for _ in range(agent_count)]
    agents = make_agents(tasks, inits, gamma)
    schedule = make_dms_schedule(
        agent_count, subset_size=max(3, agent_count - 1), substructure_count=4, rng=mix_rng
    )
    observed: list[np.ndarray] = []

    def on_round(k, ags, metrics):
        observed.append(ags[victim].phi.copy())

    run_training(agents, schedule, strategy="dms", rounds=2, on_round=on_round)
    dms_trace = InterceptedTrace(victim)
    dms_trace.add(0, observed[0])
    dms_trace.add(1, observed[1])
    dms_inferred = infer_gradient(dms_trace, gamma)
    mismatch = float(np.linalg.norm(dms_inferred - true_grad))
    dms_rec = dlg_reconstruct(
        model,
        observed[0],  # best weight guess the attacker has
        dms_inferred,
        iters=iters,
        rng=attack_rng,
        restarts=restarts,
        true_x=true_x,
    )

    aggregate_mse = None
    clean = None
    if with_secure_probe:
        grads = [
            model.loss_and_gradient(theta0, samples_x[i : i + 1], samples_y[i : i + 1])[1]
            for i in range(agent_count)
        ]
        codec = FixedPointCodec()
        session = party_placement("fedavg", agent_count=agent_count, prime=codec.prime)[0]
        transcript = Transcript()
        total = secure_aggregate(
            grads, session, codec, secagg_rng, transcript=transcript, round_index=0
        )
        clean = secure_leakage_probe(transcript, [codec.encode_vector(g) for g in grads])
        agg_rec = dlg_reconstruct(
            model,
            theta0,
            total / agent_count,
            iters=iters,
            rng=attack_rng,
            restarts=restarts,
            true_x=true_x,
        )
        aggregate_mse = agg_rec.input_mse

    return LeakageReport(
        fedavg_input_mse=fedavg_rec.input_mse,
        dms_input_mse=dms_rec.input_mse,
        fedavg_residual=fedavg_rec.residual,
        dms_residual=dms_rec.residual,
        aggregate_input_mse=aggregate_mse,
        transcript_clean=clean,
        inferred_mismatch=mismatch,
    )


@dataclass
class PoisonOutcome:
    """Inflation ratios (poisoned tail error / clean tail error) per seed."""

    seeds: list[int]
    dms_inflation: np.ndarray
    fedavg_inflation: np.ndarray

    @property
    def dms_median(self) -> float:
        return float(np.median(self.dms_inflation))

    @property
    def fedavg_median(self) -> float:
        return float(np.median(self.fedavg_inflation))


def _poison_arm(
    strategy: str,
    seed_children,
    *,
    agent_count: int,
    dim: int,
    gamma: float,
    rounds: int,
    subset_size: int,
    substructure_count: int,
    policy: PoisonPolicy | None,
    noise_bound: float,
    tail_rounds: int,
) -> float:
    """One training run; returns the tail mean of the worst-agent error."""
    init_seed, schedule_seed, noise_seed = seed_children
    init_rng = np.random.default_rng(init_seed)
    noise_rng = np.random.default_rng(noise_seed)
    optimum = np.zeros(dim)
    tasks = [QuadraticTask.from_optimum(np.eye(dim), optimum) for _ in range(agent_count)]
    if strategy == "fedavg":
        shared = init_rng.uniform(-0.5, 0.5, dim)
        inits = [shared.copy() for _ in range(agent_count)]
        schedule = None
    else:
        inits = [init_rng.uniform(-0.5, 0.5, dim) for _ in range(agent_count)]
        schedule = make_dms_schedule(
            agent_count,
            subset_size=subset_size,
            substructure_count=substructure_count,
            rng=np.random.default_rng(schedule_seed),
        )
    agents = make_agents(tasks, inits, gamma)
    monitor = ConvergenceMonitor(optimum)
    run_training(
        agents,
        schedule,
        strategy=strategy,
        rounds=rounds,
        noise=NoiseModel(noise_bound),
        noise_rng=noise_rng,
        broadcast_hook=policy.hook() if policy is not None else None,
        monitor=monitor,
    )
    series = monitor.worst_mse
    return float(series[-tail_rounds:].mean())


def run_poisoning_experiment(
    seeds: Sequence[int],
    *,
    agent_count: int = 30,
    malicious_count: int = 3,
    epsilon: float = 0.2,
    mode: str = "constant",
    dim: int = 2,
    gamma: float = 0.02,
    rounds: int = 1000,
    subset_size: int = 21,
    substructure_count: int = 8,
    noise_bound: float = 0.1,
    tail_rounds: int = 100,
) -> PoisonOutcome:
    """Error inflation of the switching strategy vs the server baseline
    under broadcast poisoning.

    Clean and poisoned arms of each strategy share every random stream, so
    an empty malicious set gives inflation exactly 1. A small gradient
    noise keeps the clean tail error away from round-off, which makes the
    ratio well conditioned. Malicious ids are the first ``malicious_count``
    agents.
    """
    if malicious_count > agent_count:
        raise ValueError("more malicious agents than agents")
    policy = PoisonPolicy(frozenset(range(malicious_count)), epsilon=epsilon, mode=mode)
    dms_ratios = []
    fed_ratios = []
    for seed in seeds:
        children = np.random.SeedSequence(seed).spawn(3)
        common = dict(
            agent_count=agent_count,
            dim=dim,
            gamma=gamma,
            rounds=rounds,
            subset_size=subset_size,
            substructure_count=substructure_count,
            noise_bound=noise_bound,
            tail_rounds=tail_rounds,
        )
        dms_clean = _poison_arm("dms", children, policy=None, **common)
        dms_bad = _poison_arm("dms", children, policy=policy, **common)
        fed_clean = _poison_arm("fedavg", children, policy=None, **common)
        fed_bad = _poison_arm("fedavg", children, policy=policy, **common)
        dms_ratios.append(dms_bad / dms_clean)
        fed_ratios.append(fed_bad / fed_clean)
    return PoisonOutcome(
        seeds=list(seeds),
        dms_inflation=np.array(dms_ratios),
        fedavg_inflation=np.array(fed_ratios),
    )
