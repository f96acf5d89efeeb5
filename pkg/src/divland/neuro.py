"""Fixed-topology 2-8-1 neurocontrollers: NN, RNN and CTRNN.

Inputs are the observed divergence and its rate; the output-neuron
potential is the commanded vertical acceleration in m/s^2 (unclamped here).
Layers are swept in order every step, each layer consuming the potentials
its predecessor produced in the same step.

Update rules per non-input neuron ``i`` (``pre`` is the weighted sum of the
previous layer; hidden activation is ReLU for NN/RNN):

* NN:    ``g_i = relu(pre_i) + theta_i``  (output layer linear)
* RNN:   ``g_i = r_i * g_i + relu(pre_i) + theta_i``
* CTRNN: ``g_i += dt * (-g_i + sum_j w_ij tanh(g_j + theta_j) + I_i) / (dt + tau_i)``

NN and RNN input neurons take the sensor values directly.  CTRNN input
neurons integrate them with their own time constants and carry no bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from divland.errors import DomainError

ARCHS = ("NN", "RNN", "CTRNN")
N_IN, N_HID, N_OUT = 2, 8, 1
N_NEURONS = N_IN + N_HID + N_OUT
WEIGHT_BOUND = 5.0
RECURRENT_BOUND = 1.0
TAU_BOUNDS = (0.005, 5.0)
STEADY_DT = 0.025


@dataclass(frozen=True, eq=False)
class Genome:
    """All evolvable parameters of one controller.

    ``theta`` and ``r`` hold hidden neurons first, then the output neuron.
    ``tau`` covers every neuron: inputs, hidden, output.
    """

    arch: str
    w1: np.ndarray  # (2, 8), input -> hidden
    w2: np.ndarray  # (8, 1), hidden -> output
    theta: np.ndarray  # (9,)
    r: np.ndarray | None = None  # (9,) RNN only
    tau: np.ndarray | None = None  # (11,) CTRNN only

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise DomainError(f"unknown architecture {self.arch!r}")
        shapes = {"w1": (N_IN, N_HID), "w2": (N_HID, N_OUT), "theta": (N_HID + N_OUT,)}
        if self.arch == "RNN":
            shapes["r"] = (N_HID + N_OUT,)
        if self.arch == "CTRNN":
            shapes["tau"] = (N_NEURONS,)
        for name in ("r", "tau"):
            if name not in shapes and getattr(self, name) is not None:
                raise DomainError(f"{self.arch} genome must not carry {name!r} genes")
        for name, shape in shapes.items():
            val = getattr(self, name)
            if val is None:
                raise DomainError(f"{self.arch} genome is missing {name!r}")
            arr = np.array(val, dtype=float)
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_bounds(self)

    def __eq__(self, other):
        if not isinstance(other, Genome) or other.arch != self.arch:
            return NotImplemented
        return all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in zip(self._arrays(), other._arrays())
        )

    def _arrays(self):
        return (self.w1, self.w2, self.theta, self.r, self.tau)

    @property
    def n_genes(self) -> int:
        return sum(a.size for a in self._arrays() if a is not None)

    def to_dict(self) -> dict:
        d = {"arch": self.arch, "w1": self.w1.tolist(), "w2": self.w2.tolist(), "theta": self.theta.tolist()}
        if self.r is not None:
            d["r"] = self.r.tolist()
        if self.tau is not None:
            d["tau"] = self.tau.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Genome":
        unknown = set(d) - {"arch", "w1", "w2", "theta", "r", "tau"}
        if unknown:
            raise DomainError(f"unknown genome fields {sorted(unknown)}")
        try:
            return cls(d["arch"], d["w1"], d["w2"], d["theta"], d.get("r"), d.get("tau"))
        except KeyError as exc:
            raise DomainError(f"genome is missing field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Genome":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"malformed genome file {path}: {exc}") from None

    @classmethod
    def zeros(cls, arch: str, tau: float = 0.1) -> "Genome":
        """Genome whose network outputs 0 for every input."""
        r = np.zeros(N_HID + N_OUT) if arch == "RNN" else None
        t = np.full(N_NEURONS, tau) if arch == "CTRNN" else None
        return cls(arch, np.zeros((N_IN, N_HID)), np.zeros((N_HID, N_OUT)), np.zeros(N_HID + N_OUT), r, t)


def _check_bounds(g: Genome) -> None:
    for name in ("w1", "w2", "theta"):
        if np.any(np.abs(getattr(g, name)) > WEIGHT_BOUND):
            raise DomainError(f"{name} outside [-{WEIGHT_BOUND}, {WEIGHT_BOUND}]")
    if g.r is not None and np.any(np.abs(g.r) > RECURRENT_BOUND):
        raise DomainError(f"r outside [-{RECURRENT_BOUND}, {RECURRENT_BOUND}]")
    if g.tau is not None and np.any((g.tau < TAU_BOUNDS[0]) | (g.tau > TAU_BOUNDS[1])):
        raise DomainError(f"tau outside {TAU_BOUNDS}")


# --------------------------------------------------------------------------
# Gene vectors for variation
# --------------------------------------------------------------------------


def _gene_layout(arch: str):
    """(name, size, lo, hi, log-scaled) for every gene block of ``arch``."""
    lay = [
        ("w1", N_IN * N_HID, -WEIGHT_BOUND, WEIGHT_BOUND, False),
        ("w2", N_HID * N_OUT, -WEIGHT_BOUND, WEIGHT_BOUND, False),
        ("theta", N_HID + N_OUT, -WEIGHT_BOUND, WEIGHT_BOUND, False),
    ]
    if arch == "RNN":
        lay.append(("r", N_HID + N_OUT, -RECURRENT_BOUND, RECURRENT_BOUND, False))
    if arch == "CTRNN":
        lay.append(("tau", N_NEURONS, np.log(TAU_BOUNDS[0]), np.log(TAU_BOUNDS[1]), True))
    return lay


def random_genome(arch: str, rng: np.random.Generator) -> Genome:
    """Weights, biases and recurrent gains ~ U(-1, 1); time constants log-uniform."""
    if arch not in ARCHS:
        raise DomainError(f"unknown architecture {arch!r}")
    parts = {}
    for name, size, lo, hi, is_log in _gene_layout(arch):
        parts[name] = np.exp(rng.uniform(lo, hi, size)) if is_log else rng.uniform(-1.0, 1.0, size)
    return Genome(
        arch,
        parts["w1"].reshape(N_IN, N_HID),
        parts["w2"].reshape(N_HID, N_OUT),
        parts["theta"],
        parts.get("r"),
        np.clip(parts["tau"], *TAU_BOUNDS) if "tau" in parts else None,
    )


def mutate(genome: Genome, rng: np.random.Generator, rate: float = 0.1, scale: float = 0.1) -> Genome:
    """Gaussian per-gene perturbation.

    Each gene mutates with probability ``rate`` by ``N(0, (scale * width)^2)``,
    where ``width`` is the legal range of that gene (log range for ``tau``),
    then is clamped back into range.
    """
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"mutation rate must be in [0, 1], got {rate}")
    parts = {}
    for name, size, lo, hi, is_log in _gene_layout(genome.arch):
        old = getattr(genome, name).reshape(-1)
        hit = rng.random(size) < rate
        step = rng.standard_normal(size) * scale * (hi - lo)
        hit &= step != 0.0
        base = np.log(old) if is_log else old
        new = np.clip(base + step, lo, hi)
        if is_log:
            new = np.clip(np.exp(new), *TAU_BOUNDS)
        parts[name] = np.where(hit, new, old)
    return Genome(
        genome.arch,
        parts["w1"].reshape(N_IN, N_HID),
        parts["w2"].reshape(N_HID, N_OUT),
        parts["theta"],
        parts.get("r"),
        parts.get("tau"),
    )


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------


@dataclass
class NetworkState:
    """Neural potentials of one network, split by layer."""

    inputs: np.ndarray = field(default_factory=lambda: np.zeros(N_IN))
    hidden: np.ndarray = field(default_factory=lambda: np.zeros(N_HID))
    output: float = 0.0


class NetworkPolicy:
    """A batch of same-architecture networks stepped in lock-step.

    Works as a policy for :func:`divland.sim.simulate_batch`: call it with
    arrays of observed divergence and divergence rate.
    """

    def __init__(self, genomes):
        genomes = [genomes] if isinstance(genomes, Genome) else list(genomes)
        if not genomes:
            raise DomainError("empty genome batch")
        arch = genomes[0].arch
        if any(g.arch != arch for g in genomes):
            raise DomainError("all genomes in a batch must share one architecture")
        self.arch = arch
        self.w1 = np.stack([g.w1 for g in genomes])
        self.w2 = np.stack([g.w2[:, 0] for g in genomes])
        th = np.stack([g.theta for g in genomes])
        self.th_h, self.th_o = th[:, :N_HID].copy(), th[:, N_HID].copy()
        if arch == "RNN":
            r = np.stack([g.r for g in genomes])
            self.r_h, self.r_o = r[:, :N_HID].copy(), r[:, N_HID].copy()
        if arch == "CTRNN":
            tau = np.stack([g.tau for g in genomes])
            self.tau_in = tau[:, :N_IN].copy()
            self.tau_h = tau[:, N_IN:N_IN + N_HID].copy()
            self.tau_o = tau[:, -1].copy()
        self.reset(len(genomes))

    def __len__(self):
        return len(self.w1)

    def reset(self, n=None):
        n = len(self) if n is None else n
        if n != len(self):
            raise DomainError(f"policy holds {len(self)} networks, batch has {n}")
        self.g_in = np.zeros((n, N_IN))
        self.g_h = np.zeros((n, N_HID))
        self.g_o = np.zeros(n)

    def subset(self, idx) -> "NetworkPolicy":
        out = NetworkPolicy.__new__(NetworkPolicy)
        for name, val in vars(self).items():
            setattr(out, name, val[idx] if isinstance(val, np.ndarray) else val)
        return out

    def __call__(self, d_obs, dd_obs, dt):
        x0 = np.asarray(d_obs, dtype=float)
        x1 = np.asarray(dd_obs, dtype=float)
        if self.arch == "CTRNN":
            dt = np.asarray(dt, dtype=float)
            dtc = dt[:, None] if dt.ndim else dt
            x = np.stack([x0, x1], axis=1)
            self.g_in = self.g_in + dtc * (x - self.g_in) / (dtc + self.tau_in)
            a = np.tanh(self.g_in)
            pre = self.w1[:, 0, :] * a[:, 0:1] + self.w1[:, 1, :] * a[:, 1:2]
            self.g_h = self.g_h + dtc * (pre - self.g_h) / (dtc + self.tau_h)
            drive = (self.w2 * np.tanh(self.g_h + self.th_h)).sum(axis=1)
            self.g_o = self.g_o + dt * (drive - self.g_o) / (dt + self.tau_o)
            return self.g_o
        self.g_in = np.stack([x0, x1], axis=1)
        pre = self.w1[:, 0, :] * x0[:, None] + self.w1[:, 1, :] * x1[:, None]
        hid = np.maximum(pre, 0.0) + self.th_h
        if self.arch == "RNN":
            hid = self.r_h * self.g_h + hid
        self.g_h = hid
        out = (self.w2 * hid).sum(axis=1) + self.th_o
        if self.arch == "RNN":
            out = self.r_o * self.g_o + out
        self.g_o = out
        return out

    def get_state(self, i: int = 0) -> NetworkState:
        return NetworkState(self.g_in[i].copy(), self.g_h[i].copy(), float(self.g_o[i]))

    def set_state(self, state: NetworkState, i: int = 0) -> None:
        self.g_in[i], self.g_h[i], self.g_o[i] = state.inputs, state.hidden, state.output


def step(genome: Genome, state: NetworkState, inputs, dt: float) -> tuple[float, NetworkState]:
    """Advance one network by ``dt``; returns ``(output, new_state)``."""
    inp = np.asarray(state.inputs, dtype=float)
    hid = np.asarray(state.hidden, dtype=float)
    if inp.shape != (N_IN,) or hid.shape != (N_HID,) or np.ndim(state.output) != 0:
        raise DomainError("network state does not match the 2-8-1 topology")
    x = np.asarray(inputs, dtype=float)
    if x.shape != (N_IN,):
        raise DomainError(f"expected {N_IN} inputs, got shape {x.shape}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    net = NetworkPolicy(genome)
    net.set_state(NetworkState(inp, hid, float(state.output)))
    out = net(x[:1], x[1:], np.array([dt]))
    return float(out[0]), net.get_state()


@dataclass(frozen=True)
class SteadyState:
    value: float
    converged: bool
    steps: int
    state: NetworkState


def steady_state_response(
    genome: Genome, d: float, dd: float, *, tol: float = 1e-6, patience: int = 20, max_steps: int = 10_000
) -> SteadyState:
    """Output after holding the inputs constant until the network settles.

    Settled means no potential moved by ``tol`` or more for ``patience``
    consecutive steps at ``dt = 0.025 s``.  ``steps`` is the step after
    which the network stopped moving.
    """
    res = steady_state_grid(NetworkPolicy(genome), np.array([d]), np.array([dd]), tol=tol,
                            patience=patience, max_steps=max_steps, keep_state=True)
    value, converged, steps, net = res
    return SteadyState(float(value[0]), bool(converged[0]), int(steps[0]), net.get_state())


def steady_state_grid(policy, d, dd, *, dt=STEADY_DT, tol=1e-6, patience=20, max_steps=10_000, keep_state=False):
    """Batched steady-state iteration for one policy per cell of ``d``/``dd``.

    ``policy`` is reset to ``len(d)`` cells.  Returns ``(value, converged,
    steps)`` arrays, plus the policy itself when ``keep_state`` is set.
    Non-convergent cells carry the last output in ``value``.
    """
    n = len(d)
    policy.reset(n)
    if isinstance(policy, NetworkPolicy):
        value, converged, steps = _settle_networks(policy, np.asarray(d, float), np.asarray(dd, float),
                                                   dt, tol, patience, max_steps)
    else:
        value, converged, steps = _settle_generic(policy, d, dd, dt, tol, patience, max_steps)
    if keep_state:
        return value, converged, steps, policy
    return value, converged, steps


def _settle_generic(policy, d, dd, dt, tol, patience, max_steps):
    n = len(d)
    dtv = np.full(n, dt)
    value = np.zeros(n)
    quiet = np.zeros(n, dtype=np.int64)
    settled_at = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    prev = _potentials(policy, n)
    with np.errstate(all="ignore"):
        for k in range(1, max_steps + 1):
            out = np.asarray(policy(d, dd, dtv), dtype=float)
            cur = _potentials(policy, n, out)
            moved = np.max(np.abs(cur - prev), axis=1) >= tol
            moved |= ~np.isfinite(cur).all(axis=1)
            prev = cur
            quiet = np.where(moved, 0, quiet + 1)
            settled_at = np.where(moved, k, settled_at)
            value = np.where(converged, value, out)
            converged |= quiet >= patience
            if converged.all():
                break
    steps = np.where(converged, np.maximum(settled_at, 1), max_steps)
    return value, converged, steps


def _settle_networks(policy: "NetworkPolicy", d, dd, dt, tol, patience, max_steps):
    """Same iteration as the generic loop, stepping only unsettled cells.

    Each network row evolves independently, so dropping settled rows from
    the batch leaves every value bit-identical.  Settled rows keep the state
    they had when they settled, which is where the full loop stops moving
    them by more than ``tol`` anyway; their state is written back to
    ``policy`` at the end.
    """
    n = len(d)
    value = np.zeros(n)
    settled_at = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    sub = policy.subset(active)
    quiet = np.zeros(n, dtype=np.int64)
    prev = _potentials(sub, n)
    dtv = np.full(n, dt)

    def write_back(idx, net):
        policy.g_in[idx], policy.g_h[idx], policy.g_o[idx] = net.g_in, net.g_h, net.g_o

    with np.errstate(all="ignore"):
        for k in range(1, max_steps + 1):
            out = np.asarray(sub(d[active], dd[active], dtv[: len(active)]), dtype=float)
            cur = _potentials(sub, len(active), out)
            moved = np.max(np.abs(cur - prev), axis=1) >= tol
            moved |= ~np.isfinite(cur).all(axis=1)
            prev = cur
            quiet = np.where(moved, 0, quiet + 1)
            settled_at[active] = np.where(moved, k, settled_at[active])
            value[active] = out
            done = quiet >= patience
            if done.any():
                converged[active[done]] = True
                write_back(active[done], sub.subset(np.flatnonzero(done)))
                keep = np.flatnonzero(~done)
                if keep.size == 0:
                    active = keep
                    break
                active, sub, prev, quiet = active[keep], sub.subset(keep), prev[keep], quiet[keep]
    if active.size:
        write_back(active, sub)
    steps = np.where(converged, np.maximum(settled_at, 1), max_steps)
    return value, converged, steps


def _potentials(policy, n, out=None):
    if isinstance(policy, NetworkPolicy):
        return np.column_stack([policy.g_in, policy.g_h, policy.g_o])
    return np.zeros((n, 1)) if out is None else np.asarray(out, dtype=float).reshape(n, 1)
