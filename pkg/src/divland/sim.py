"""Vertical-axis quadrotor plant, divergence sensor model and episode runner.

Sign conventions: altitude ``h`` and velocity ``v`` are positive up, the
thrust acceleration ``T`` is gravity compensated (``T = 0`` hovers) and the
divergence ``D = -2 v / h`` is positive while descending.

Episodes are simulated in batches.  Every per-episode quantity is an array
over the batch and all operations are element-wise, so one episode's
trajectory does not depend on which batch (or worker chunk) it runs in.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from divland.errors import DomainError

G = 9.81
THRUST_MIN = -0.8 * G
THRUST_MAX = 0.5 * G
LANDED_HEIGHT = 0.05
CEILING_HEIGHT = 15.0
TIMEOUT = 30.0
ACTIVATION_DELAY = 1.0
NOISE_BLOCK = 256

REASONS = ("running", "landed", "ceiling", "timeout")
_EPS = 1e-9


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


_TABLE = {
    "delay": (1, 4),
    "jitter": (0.0, 0.2),
    "sigma_w": (0.05, 0.15),
    "sigma_p": (0.0, 0.25),
    "tau_thrust": (0.005, 0.04),
    "freq": (30.0, 50.0),
}


@dataclass(frozen=True)
class ParamRanges:
    """Sampling ranges of the randomized environment (inclusive).

    Ranges may be narrowed but never widened beyond the defaults.
    """

    delay: tuple[int, int] = _TABLE["delay"]
    jitter: tuple[float, float] = _TABLE["jitter"]
    sigma_w: tuple[float, float] = _TABLE["sigma_w"]
    sigma_p: tuple[float, float] = _TABLE["sigma_p"]
    tau_thrust: tuple[float, float] = _TABLE["tau_thrust"]
    freq: tuple[float, float] = _TABLE["freq"]

    def __post_init__(self):
        for name, (tlo, thi) in _TABLE.items():
            lo, hi = getattr(self, name)
            if not (tlo <= lo <= hi <= thi):
                raise DomainError(f"{name} range [{lo}, {hi}] outside allowed [{tlo}, {thi}]")


TABLE_RANGES = ParamRanges()


@dataclass(frozen=True)
class SimParams:
    """One draw of the randomized simulation environment.

    Only physical sanity is enforced here; noiseless or fully-jittered
    settings are legal for analysis.  :meth:`within` checks a sampling range.
    """

    delay: int
    jitter: float
    sigma_w: float
    sigma_p: float
    tau_thrust: float
    freq: float

    def __post_init__(self):
        if int(self.delay) != self.delay or self.delay < 1:
            raise DomainError(f"delay must be a positive integer, got {self.delay}")
        object.__setattr__(self, "delay", int(self.delay))
        if not 0.0 <= self.jitter <= 1.0:
            raise DomainError(f"jitter probability must be in [0, 1], got {self.jitter}")
        if self.sigma_w < 0 or self.sigma_p < 0:
            raise DomainError("noise standard deviations must be non-negative")
        if not self.tau_thrust > 0:
            raise DomainError(f"tau_thrust must be positive, got {self.tau_thrust}")
        if not self.freq > 0:
            raise DomainError(f"freq must be positive, got {self.freq}")

    @property
    def dt(self) -> float:
        return 1.0 / self.freq

    def within(self, ranges: ParamRanges = TABLE_RANGES) -> bool:
        return all(
            getattr(ranges, k)[0] <= getattr(self, k) <= getattr(ranges, k)[1]
            for k in ranges.__dataclass_fields__
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        return cls(**d)

    @classmethod
    def noiseless(cls, delay: int = 1, tau_thrust: float = 0.02, freq: float = 50.0) -> "SimParams":
        return cls(delay=delay, jitter=0.0, sigma_w=0.0, sigma_p=0.0, tau_thrust=tau_thrust, freq=freq)


# Mid-range conditions; the noise levels and thrust lag are the usual
# nominal values of the vehicle model.
NOMINAL_PARAMS = SimParams(delay=2, jitter=0.1, sigma_w=0.1, sigma_p=0.1, tau_thrust=0.02, freq=40.0)


def sample_params(rng: np.random.Generator, ranges: ParamRanges = TABLE_RANGES) -> SimParams:
    """Draw every field uniformly from ``ranges`` (delay uniform over integers)."""
    return SimParams(
        delay=int(rng.integers(ranges.delay[0], ranges.delay[1] + 1)),
        jitter=float(rng.uniform(*ranges.jitter)),
        sigma_w=float(rng.uniform(*ranges.sigma_w)),
        sigma_p=float(rng.uniform(*ranges.sigma_p)),
        tau_thrust=float(rng.uniform(*ranges.tau_thrust)),
        freq=float(rng.uniform(*ranges.freq)),
    )


def make_rng(seed) -> np.random.Generator:
    """Generator for an int seed, a SeedSequence, or a key tuple ``(entropy, *spawn_key)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, tuple):
        seed = np.random.SeedSequence(entropy=seed[0], spawn_key=tuple(seed[1:]))
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# Plant
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VehicleState:
    h: float
    v: float = 0.0
    T: float = 0.0


def true_divergence(state: VehicleState) -> float:
    if not state.h > 0:
        raise DomainError(f"divergence undefined at altitude {state.h}")
    return -2.0 * state.v / state.h


def _integrate(h, v, T, T_sp, dt, tau):
    # First-order thrust lag, clamped, then semi-implicit Euler.
    T_sp = np.clip(T_sp, THRUST_MIN, THRUST_MAX)
    T = np.clip(T + dt * (T_sp - T) / (dt + tau), THRUST_MIN, THRUST_MAX)
    v = v + T * dt
    h = h + v * dt
    return h, v, T


def step_dynamics(state: VehicleState, T_sp: float, dt: float, tau: float) -> VehicleState:
    vals = (state.h, state.v, state.T, T_sp, dt, tau)
    if not all(math.isfinite(x) for x in vals):
        raise DomainError(f"non-finite input to step_dynamics: {vals}")
    if dt <= 0 or tau <= 0:
        raise DomainError("dt and tau must be positive")
    h, v, T = _integrate(*vals)
    return VehicleState(float(h), float(v), float(T))


# --------------------------------------------------------------------------
# Sensor
# --------------------------------------------------------------------------


class SensorChannel:
    """Delayed, noisy, jittery divergence sensor for a batch of episodes.

    Each episode owns a generator; noise is drawn in fixed blocks of
    ``NOISE_BLOCK`` steps so the stream an episode sees is independent of
    batching.  A missed frame republishes the previous observation.
    """

    def __init__(self, delay, jitter, sigma_w, sigma_p, rngs: Sequence[np.random.Generator]):
        n = len(rngs)
        self.delay = np.broadcast_to(np.asarray(delay, dtype=np.int64), (n,)).copy()
        self.jitter = np.broadcast_to(np.asarray(jitter, dtype=float), (n,)).copy()
        self.sigma_w = np.broadcast_to(np.asarray(sigma_w, dtype=float), (n,)).copy()
        self.sigma_p = np.broadcast_to(np.asarray(sigma_p, dtype=float), (n,)).copy()
        self.rngs = list(rngs)
        self._ring = int(self.delay.max()) + 1 if n else 1
        self._hist = np.zeros((self._ring, n))
        self._k = 0
        self.d_obs = np.zeros(n)
        self.dd_obs = np.zeros(n)
        self.since = np.zeros(n)
        self._noise = None

    @classmethod
    def from_params(cls, params: SimParams, rngs) -> "SensorChannel":
        return cls(params.delay, params.jitter, params.sigma_w, params.sigma_p, rngs)

    def _draw_block(self):
        u, zw, zp = [], [], []
        for rng in self.rngs:
            u.append(rng.random(NOISE_BLOCK))
            zw.append(rng.standard_normal(NOISE_BLOCK))
            zp.append(rng.standard_normal(NOISE_BLOCK))
        shape = (NOISE_BLOCK, len(self.rngs))
        self._noise = tuple(
            np.ascontiguousarray(np.array(a).T) if a else np.zeros(shape) for a in (u, zw, zp)
        )

    def observe(self, d_true, dt):
        """Push the true divergence and return ``(D_obs, dD_obs, missed)``."""
        k = self._k
        col = k % NOISE_BLOCK
        if col == 0:
            self._draw_block()
        u, zw, zp = (a[col] for a in self._noise)
        self._hist[k % self._ring] = d_true
        delayed = self._hist[(k - self.delay) % self._ring, np.arange(len(self.delay))]
        d_new = delayed + self.sigma_w * zw + np.abs(delayed) * self.sigma_p * zp
        missed = u < self.jitter
        self.since = self.since + dt
        dd_new = (d_new - self.d_obs) / self.since
        self.d_obs = np.where(missed, self.d_obs, d_new)
        self.dd_obs = np.where(missed, self.dd_obs, dd_new)
        self.since = np.where(missed, self.since, 0.0)
        self._k = k + 1
        return self.d_obs, self.dd_obs, missed

    def subset(self, idx) -> "SensorChannel":
        out = SensorChannel.__new__(SensorChannel)
        for name in ("delay", "jitter", "sigma_w", "sigma_p", "d_obs", "dd_obs", "since"):
            setattr(out, name, getattr(self, name)[idx])
        out.rngs = [self.rngs[i] for i in idx]
        out._ring = self._ring
        out._hist = self._hist[:, idx]
        out._k = self._k
        out._noise = None if self._noise is None else tuple(a[:, idx] for a in self._noise)
        return out


# --------------------------------------------------------------------------
# Controllers
# --------------------------------------------------------------------------


class Policy(Protocol):
    """Batched controller: maps observation arrays to commanded acceleration."""

    def reset(self, n: int) -> None: ...

    def __call__(self, d_obs: np.ndarray, dd_obs: np.ndarray, dt) -> np.ndarray: ...

    def subset(self, idx) -> "Policy": ...


class FunctionPolicy:
    """Stateless policy from a function ``f(D_obs, dD_obs, dt) -> T_sp``."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def reset(self, n):
        self._n = n

    def __call__(self, d_obs, dd_obs, dt):
        return np.broadcast_to(np.asarray(self.fn(d_obs, dd_obs, dt), dtype=float), np.shape(d_obs))

    def subset(self, idx):
        return self


def baseline_controller(d_obs, d_sp, gain):
    """Proportional divergence tracking; observing too little divergence commands descent."""
    return gain * (d_obs - d_sp)


@dataclass(frozen=True)
class BaselinePolicy:
    gain: float
    setpoint: float = 0.5

    def reset(self, n):
        pass

    def __call__(self, d_obs, dd_obs, dt):
        return baseline_controller(d_obs, self.setpoint, self.gain)

    def subset(self, idx):
        return self


C1 = BaselinePolicy(gain=8.0, setpoint=0.5)
C2 = BaselinePolicy(0.5)


def as_policy(controller) -> Policy:
    if hasattr(controller, "subset") and hasattr(controller, "reset"):
        return controller
    if callable(controller):
        return FunctionPolicy(controller)
    raise TypeError(f"not a controller: {controller!r}")


# --------------------------------------------------------------------------
# Episodes
# --------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "h", "v", "T", "T_sp", "D_true", "D_obs", "dD_obs", "missed")


@dataclass
class Trajectory:
    """Per-step log of one episode.

    Row ``k`` holds the state at ``t_k`` and what happened during that step;
    the final row is the terminal state, with the sensor and command columns
    set to NaN.
    """

    data: dict[str, np.ndarray]
    reason: str
    elapsed: float
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key) -> np.ndarray:
        return self.data[key]

    def __len__(self):
        return len(self.data["t"])

    @property
    def final_height(self) -> float:
        return float(self.data["h"][-1])

    @property
    def final_velocity(self) -> float:
        return float(self.data["v"][-1])

    def to_csv(self, path) -> None:
        path = Path(path)
        cols = np.column_stack([self.data[c].astype(float) for c in TRAJECTORY_COLUMNS])
        with path.open("w", newline="") as fh:
            fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            for row in cols:
                *vals, missed = row
                fh.write(",".join(f"{x:.9g}" for x in vals) + f",{int(missed)}\n")
        sidecar = {"reason": self.reason, "elapsed": self.elapsed, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        raw = np.genfromtxt(path, delimiter=",", names=True)
        data = {c: np.asarray(raw[c], dtype=float) for c in TRAJECTORY_COLUMNS}
        data["missed"] = data["missed"].astype(bool)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(data, meta.pop("reason"), meta.pop("elapsed"), meta)


@dataclass(frozen=True)
class FitnessVector:
    time: float
    height: float
    speed: float

    def __iter__(self):
        return iter((self.time, self.height, self.speed))

    def as_array(self) -> np.ndarray:
        return np.array([self.time, self.height, self.speed])


def fitness(traj: Trajectory) -> FitnessVector:
    """Time to land, final height and final speed.

    Height is floored at zero; the last integration step may carry the
    vehicle slightly below the ground.
    """
    if traj.reason not in ("landed", "ceiling", "timeout"):
        raise DomainError("trajectory has not terminated")
    return FitnessVector(traj.elapsed, max(traj.final_height, 0.0), abs(traj.final_velocity))


@dataclass
class BatchOutcome:
    """Terminal state of every episode in a batch."""

    h: np.ndarray
    v: np.ndarray
    T: np.ndarray
    elapsed: np.ndarray
    reason: np.ndarray  # index into REASONS
    steps: np.ndarray
    traces: list | None = None

    def fitness(self) -> np.ndarray:
        """``(n, 3)`` array of time, height (floored at 0) and speed."""
        return np.column_stack([self.elapsed, np.maximum(self.h, 0.0), np.abs(self.v)])


def _as_param_arrays(params, n):
    if isinstance(params, SimParams):
        params = [params] * n
    if len(params) != n:
        raise ValueError("one SimParams per episode required")
    cols = {k: np.array([getattr(p, k) for p in params]) for k in SimParams.__dataclass_fields__}
    cols["delay"] = cols["delay"].astype(np.int64)
    return cols


def _simulate_chunk(policy, h0, p, rngs, record):
    n = len(h0)
    dt = 1.0 / p["freq"]
    ids = np.arange(n)
    h, v, T = h0.astype(float).copy(), np.zeros(n), np.zeros(n)
    tau = p["tau_thrust"].copy()
    sensor = SensorChannel(p["delay"], p["jitter"], p["sigma_w"], p["sigma_p"], rngs)
    policy.reset(n)
    out = BatchOutcome(
        h=np.zeros(n), v=np.zeros(n), T=np.zeros(n), elapsed=np.zeros(n),
        reason=np.zeros(n, dtype=np.int8), steps=np.zeros(n, dtype=np.int64),
    )
    rows = [] if record else None
    k = 0
    with np.errstate(all="ignore"):
        while len(ids):
            t = k * dt
            d_true = -2.0 * v / h
            d_obs, dd_obs, missed = sensor.observe(d_true, dt)
            cmd = np.asarray(policy(d_obs, dd_obs, dt), dtype=float)
            cmd = np.nan_to_num(cmd, nan=0.0, posinf=THRUST_MAX, neginf=THRUST_MIN)
            cmd = np.where(t < ACTIVATION_DELAY - _EPS, 0.0, cmd)
            if record:
                rows.append((ids, t, h, v, T, cmd, d_true, d_obs.copy(), dd_obs.copy(), missed))
            h, v, T = _integrate(h, v, T, cmd, dt, tau)
            k += 1
            landed = h < LANDED_HEIGHT
            ceiling = h > CEILING_HEIGHT
            timeout = k * dt >= TIMEOUT - _EPS
            done = landed | ceiling | timeout
            if done.any():
                reason = np.where(landed, 1, np.where(ceiling, 2, 3))[done]
                fin = ids[done]
                out.h[fin], out.v[fin], out.T[fin] = h[done], v[done], T[done]
                out.elapsed[fin] = k * dt[done]
                out.reason[fin] = reason
                out.steps[fin] = k
                keep = np.flatnonzero(~done)
                ids = ids[keep]
                h, v, T, dt, tau = h[keep], v[keep], T[keep], dt[keep], tau[keep]
                sensor = sensor.subset(keep)
                policy = policy.subset(keep)
    if record:
        out.traces = _split_rows(rows, out, n)
    return out


def _split_rows(rows, out, n):
    per = [[] for _ in range(n)]
    for ids, t, *cols in rows:
        for j, i in enumerate(ids):
            per[i].append([t[j]] + [c[j] for c in cols])
    traces = []
    for i in range(n):
        arr = np.array(per[i], dtype=float).reshape(-1, len(TRAJECTORY_COLUMNS))
        term = [out.elapsed[i], out.h[i], out.v[i], out.T[i], np.nan,
                -2.0 * out.v[i] / out.h[i] if out.h[i] > 0 else np.nan, np.nan, np.nan, 0.0]
        arr = np.vstack([arr, term])
        data = {c: arr[:, j] for j, c in enumerate(TRAJECTORY_COLUMNS)}
        data["missed"] = data["missed"].astype(bool)
        traces.append(data)
    return traces


def simulate_batch(
    policy,
    h0,
    params: SimParams | Sequence[SimParams],
    seeds: Sequence,
    *,
    record: bool = False,
    workers: int = 1,
) -> BatchOutcome:
    """Run one episode per entry of ``h0``.

    ``policy`` is a batched policy sized to ``len(h0)`` (or a stateless
    callable).  ``seeds`` gives each episode's noise stream.  Results are
    identical for any ``workers`` value.
    """
    h0 = np.asarray(h0, dtype=float).reshape(-1)
    n = len(h0)
    if np.any(h0 <= LANDED_HEIGHT) or np.any(h0 >= CEILING_HEIGHT):
        raise DomainError(f"initial altitude must lie in ({LANDED_HEIGHT}, {CEILING_HEIGHT})")
    if len(seeds) != n:
        raise ValueError("one seed per episode required")
    policy = as_policy(policy)
    p = _as_param_arrays(params, n)
    rngs = [make_rng(s) for s in seeds]
    chunks = [c for c in np.array_split(np.arange(n), max(1, min(workers, n))) if len(c)]
    if len(chunks) <= 1:
        return _simulate_chunk(policy, h0, p, rngs, record)

    def run(idx):
        sub = {k: a[idx] for k, a in p.items()}
        return _simulate_chunk(policy.subset(idx), h0[idx], sub, [rngs[i] for i in idx], record)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    out = BatchOutcome(
        *(np.concatenate([getattr(o, f) for o in parts]) for f in ("h", "v", "T", "elapsed", "reason", "steps"))
    )
    if record:
        out.traces = [tr for o in parts for tr in o.traces]
    return out


def run_episode(controller, h0: float, params: SimParams, seed=0) -> Trajectory:
    """Simulate one landing from standstill at ``h0`` and log every step."""
    if not LANDED_HEIGHT < h0 < CEILING_HEIGHT:
        raise DomainError(f"initial altitude {h0} outside ({LANDED_HEIGHT}, {CEILING_HEIGHT})")
    policy = as_policy(controller)
    out = simulate_batch(policy, [h0], params, [seed], record=True)
    meta = {"h0": h0, "params": params.to_dict()}
    if isinstance(seed, (int, tuple)):
        meta["seed"] = seed if isinstance(seed, int) else list(seed)
    return Trajectory(out.traces[0], REASONS[out.reason[0]], float(out.elapsed[0]), meta)
