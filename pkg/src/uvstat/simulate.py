"""Simulation of a one-dimensional Ito semimartingale with jumps.

    X_t = X_0 + b t + int_0^t sigma_s dW_s + sum_{S_p <= t} Z_p

observed on the grid {0, 1/n, ..., floor(nT)/n}.  The volatility is
either constant or itself a continuous Ito semimartingale driven by W
and an independent Brownian motion V (Euler scheme, clamped away from
zero).  Jumps come from a finite-activity compound Poisson process with
exact times, so the path carries all the ground truth the limit
formulas need: jump times/sizes, one-sided spot volatilities, and the
Brownian increment accumulated up to each jump inside its grid interval.

Everything is a deterministic function of (config, n, T, seed): the seed
is expanded into three independent substreams (jumps, W, V) so the
Brownian draws do not depend on how many jumps were placed.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "SimulationError",
    "VolatilityModel",
    "AtomList",
    "Uniform",
    "TruncNormal",
    "JumpModel",
    "ModelConfig",
    "JumpRecord",
    "SamplePath",
    "simulate_path",
    "increments",
    "first_order_increments",
    "jump_neighborhood",
    "JumpNeighborhood",
    "path_to_json",
    "path_from_json",
    "path_to_binary",
    "path_from_binary",
]


class SimulationError(ValueError):
    """Invalid model configuration or simulation failure."""


# ---------------------------------------------------------------------------
# Model configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VolatilityModel:
    """Spot volatility: constant, or a continuous Ito semimartingale.

    For kind="ItoSM" the volatility follows
    sigma_t = sigma0 + int tilde_b ds + int tilde_sigma dW + int tilde_v dV
    on the grid (Euler).  Values are clamped at floor_eps > 0; clamps are
    counted on the path so mixed-regime experiments can exclude clamped
    paths.
    """

    kind: str
    sigma0: float
    tilde_b: float = 0.0
    tilde_sigma: float = 0.0
    tilde_v: float = 0.0
    floor_eps: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("Constant", "ItoSM"):
            raise SimulationError(f"unknown volatility kind {self.kind!r}")
        if not self.sigma0 > 0:
            raise SimulationError(f"sigma0 must be > 0, got {self.sigma0}")
        if not self.floor_eps > 0:
            raise SimulationError(f"floor_eps must be > 0, got {self.floor_eps}")
        if self.kind == "Constant" and (self.tilde_b or self.tilde_sigma or self.tilde_v):
            raise SimulationError("Constant volatility requires tilde_b = tilde_sigma = tilde_v = 0")


@dataclass(frozen=True)
class AtomList:
    """Discrete jump sizes: ((value, prob), ...)."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise SimulationError("AtomList needs at least one atom")
        if any(v == 0.0 for v, _ in atoms):
            raise SimulationError("jump sizes must be nonzero")
        if any(p < 0 for _, p in atoms) or not math.isclose(sum(p for _, p in atoms), 1.0, rel_tol=1e-9):
            raise SimulationError("atom probabilities must be nonnegative and sum to 1")

    def draw(self, gen: np.random.Generator, count: int) -> np.ndarray:
        values = np.array([v for v, _ in self.atoms])
        probs = np.array([p for _, p in self.atoms])
        idx = gen.choice(len(values), size=count, p=probs)
        return values[idx]

    def max_abs_support(self) -> float:
        return max(abs(v) for v, _ in self.atoms)

    def second_moment(self) -> float:
        return sum(p * v * v for v, p in self.atoms)

    def to_dict(self):
        return {"type": "AtomList", "atoms": [[v, p] for v, p in self.atoms]}


@dataclass(frozen=True)
class Uniform:
    """Uniform jump sizes on [a, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise SimulationError(f"Uniform requires a < b, got [{self.a}, {self.b}]")

    def draw(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return gen.uniform(self.a, self.b, size=count)

    def max_abs_support(self) -> float:
        return max(abs(self.a), abs(self.b))

    def second_moment(self) -> float:
        return (self.a ** 2 + self.a * self.b + self.b ** 2) / 3.0

    def to_dict(self):
        return {"type": "Uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class TruncNormal:
    """Normal(mu, s^2) conditioned on |z| >= min_abs (rejection sampling)."""

    mu: float
    s: float
    min_abs: float

    def __post_init__(self):
        if not self.s > 0:
            raise SimulationError(f"TruncNormal scale must be > 0, got {self.s}")
        if not self.min_abs > 0:
            raise SimulationError(f"TruncNormal min_abs must be > 0, got {self.min_abs}")

    def draw(self, gen: np.random.Generator, count: int) -> np.ndarray:
        out = np.empty(count)
        filled = 0
        while filled < count:
            cand = gen.normal(self.mu, self.s, size=max(count - filled, 16))
            keep = cand[np.abs(cand) >= self.min_abs]
            take = min(len(keep), count - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out

    def max_abs_support(self) -> float:
        # unbounded support; the model-level bound comes from max_abs below
        return math.inf

    def second_moment(self) -> float:
        from scipy.integrate import quad
        from scipy.stats import norm

        mass = norm.sf(self.min_abs, self.mu, self.s) + norm.cdf(-self.min_abs, self.mu, self.s)
        val, _ = quad(
            lambda z: z * z * norm.pdf(z, self.mu, self.s),
            -np.inf,
            -self.min_abs,
        )
        val2, _ = quad(
            lambda z: z * z * norm.pdf(z, self.mu, self.s),
            self.min_abs,
            np.inf,
        )
        return (val + val2) / mass

    def to_dict(self):
        return {"type": "TruncNormal", "mu": self.mu, "s": self.s, "min_abs": self.min_abs}


def size_dist_from_dict(d: dict):
    kinds = {"AtomList": AtomList, "Uniform": Uniform, "TruncNormal": TruncNormal}
    kind = d.get("type")
    if kind == "AtomList":
        return AtomList(tuple((v, p) for v, p in d["atoms"]))
    if kind == "Uniform":
        return Uniform(d["a"], d["b"])
    if kind == "TruncNormal":
        return TruncNormal(d["mu"], d["s"], d["min_abs"])
    raise SimulationError(f"unknown size distribution {kind!r}; choose from {sorted(kinds)}")


@dataclass(frozen=True)
class JumpModel:
    """Compound Poisson jumps: rate per unit time plus a size distribution."""

    intensity: float
    size_dist: object
    max_abs: float

    def __post_init__(self):
        if self.intensity < 0:
            raise SimulationError(f"jump intensity must be >= 0, got {self.intensity}")
        if not self.max_abs > 0:
            raise SimulationError(f"max_abs must be > 0, got {self.max_abs}")
        support = self.size_dist.max_abs_support()
        if math.isfinite(support) and support > self.max_abs * (1 + 1e-12):
            raise SimulationError(
                f"size distribution support {support} exceeds max_abs={self.max_abs}"
            )

    def draw_sizes(self, gen: np.random.Generator, count: int) -> np.ndarray:
        sizes = self.size_dist.draw(gen, count)
        return np.clip(sizes, -self.max_abs, self.max_abs)


@dataclass(frozen=True)
class ModelConfig:
    """Full data-generating model, with the localization bound used by checks."""

    drift_b: float
    vol: VolatilityModel
    jumps: JumpModel
    bound_A: float
    reject_bound_excursions: bool = False

    def __post_init__(self):
        if not self.bound_A > 0:
            raise SimulationError(f"bound_A must be > 0, got {self.bound_A}")
        if abs(self.drift_b) > self.bound_A:
            raise SimulationError(f"|drift_b|={abs(self.drift_b)} exceeds bound_A={self.bound_A}")
        if self.vol.sigma0 > self.bound_A:
            raise SimulationError(f"sigma0={self.vol.sigma0} exceeds bound_A={self.bound_A}")
        if self.jumps.max_abs > self.bound_A:
            raise SimulationError(
                f"jump bound max_abs={self.jumps.max_abs} exceeds bound_A={self.bound_A}"
            )


# ---------------------------------------------------------------------------
# Sample paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpRecord:
    """Ground truth for one jump: exact time, size, one-sided volatilities."""

    time: float
    size: float
    sigma_pre: float
    sigma_post: float
    interval_index: int  # 1-based: (i-1)/n < S_p <= i/n


@dataclass(frozen=True)
class SamplePath:
    """A simulated path on the grid, immutable, with exact jump ground truth.

    w_before_jump[p] is W_{S_p} - W_{(i-1)/n} for the interval containing
    jump p (NaN when the jump falls past the last full grid interval);
    together with the drift and the left grid volatility it reconstructs
    the pre-jump state X_{S_p-} exactly as the simulator built it.
    """

    T: float
    n: int
    x_grid: np.ndarray
    sigma_grid: np.ndarray
    w_increments: np.ndarray
    jumps: tuple
    seed: int
    config: ModelConfig
    w_before_jump: np.ndarray
    n_sigma_clamps: int = 0

    def __post_init__(self):
        for arr in (self.x_grid, self.sigma_grid, self.w_increments, self.w_before_jump):
            arr.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return len(self.w_increments)

    @property
    def clamped(self) -> bool:
        return self.n_sigma_clamps > 0

    def jump_sizes(self, t: Optional[float] = None) -> np.ndarray:
        if t is None:
            return np.array([r.size for r in self.jumps])
        return np.array([r.size for r in self.jumps if r.time <= t])

    def jumps_until(self, t: Optional[float] = None) -> tuple:
        if t is None:
            return self.jumps
        return tuple(r for r in self.jumps if r.time <= t)


def _count(n: int, t: float) -> int:
    return int(math.floor(n * t + 1e-12))


def simulate_path(
    cfg: ModelConfig, n: int, T: float, seed: int, clamp_budget: int = 1000
) -> SamplePath:
    """Simulate X on {0, 1/n, ..., floor(nT)/n} with exact jump placement.

    Jump times are uniform on (0, T]; the Brownian increment of an
    interval containing jumps is drawn as the sum of the sub-increments
    between consecutive jump times, so W is known exactly at every jump.
    The X increment over interval i is b/n + sigma_{(i-1)/n} Delta_i W
    plus the sizes of the jumps it contains (Euler with left-frozen
    volatility).
    """
    if n < 1:
        raise SimulationError(f"n must be >= 1, got {n}")
    if not T > 0:
        raise SimulationError(f"T must be > 0, got {T}")
    N = _count(n, T)
    if N < 1:
        raise SimulationError(f"grid {{0, 1/n, ...}} has no step for n={n}, T={T}")

    root = np.random.SeedSequence(seed)
    jump_ss, w_ss, v_ss = root.spawn(3)
    jump_gen = np.random.default_rng(jump_ss)
    w_gen = np.random.default_rng(w_ss)
    v_gen = np.random.default_rng(v_ss)

    # jumps: count, sorted times on (0, T], then sizes in time order
    n_jumps = int(jump_gen.poisson(cfg.jumps.intensity * T)) if cfg.jumps.intensity > 0 else 0
    if n_jumps > 0:
        times = np.sort(T * (1.0 - jump_gen.random(n_jumps)))
        sizes = cfg.jumps.draw_sizes(jump_gen, n_jumps)
    else:
        times = np.zeros(0)
        sizes = np.zeros(0)
    intervals = np.ceil(times * n - 1e-12).astype(int)
    intervals = np.maximum(intervals, 1)

    # Brownian increments, split at jump times inside each interval
    w_inc = np.empty(N)
    w_before = np.full(n_jumps, np.nan)
    jumps_by_interval: dict = {}
    for p, idx in enumerate(intervals):
        if idx <= N:
            jumps_by_interval.setdefault(int(idx), []).append(p)
    for i in range(1, N + 1):
        t_left = (i - 1) / n
        t_right = i / n
        here = jumps_by_interval.get(i, ())
        if not here:
            w_inc[i - 1] = w_gen.normal(0.0, math.sqrt(1.0 / n))
            continue
        cuts = [t_left] + [times[p] for p in here] + [t_right]
        acc = 0.0
        for seg, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
            dt = b - a
            dw = w_gen.normal(0.0, math.sqrt(dt)) if dt > 0 else 0.0
            acc += dw
            if seg < len(here):
                w_before[here[seg]] = acc
        w_inc[i - 1] = acc

    # volatility on the grid (Euler, clamped at floor_eps)
    vol = cfg.vol
    sigma = np.empty(N + 1)
    sigma[0] = vol.sigma0
    n_clamps = 0
    first_clamp = -1
    if vol.kind == "Constant":
        sigma[:] = vol.sigma0
    else:
        v_inc = v_gen.normal(0.0, math.sqrt(1.0 / n), size=N)
        for i in range(N):
            nxt = sigma[i] + vol.tilde_b / n + vol.tilde_sigma * w_inc[i] + vol.tilde_v * v_inc[i]
            if nxt < vol.floor_eps:
                nxt = vol.floor_eps
                n_clamps += 1
                if first_clamp < 0:
                    first_clamp = i + 1
            sigma[i + 1] = nxt
    if n_clamps > clamp_budget:
        raise SimulationError(
            f"volatility clamped {n_clamps} times (> budget {clamp_budget}); "
            f"first offending interval {first_clamp}"
        )

    # spot volatility at jump times: left grid state plus deterministic
    # partial Euler drift step (continuous volatility, so pre = post)
    records = []
    for p in range(n_jumps):
        idx = int(intervals[p])
        left = sigma[min(idx - 1, N)]
        if vol.kind == "ItoSM":
            pre = max(left + vol.tilde_b * (times[p] - (idx - 1) / n), vol.floor_eps)
        else:
            pre = left
        records.append(
            JumpRecord(
                time=float(times[p]),
                size=float(sizes[p]),
                sigma_pre=float(pre),
                sigma_post=float(pre),
                interval_index=idx,
            )
        )

    # X increments and grid values
    inc = cfg.drift_b / n + sigma[:N] * w_inc
    for i, here in jumps_by_interval.items():
        inc[i - 1] += sizes[here].sum()
    x_grid = np.empty(N + 1)
    x_grid[0] = 0.0
    np.cumsum(inc, out=x_grid[1:])

    if cfg.reject_bound_excursions and np.max(np.abs(x_grid)) > cfg.bound_A:
        raise SimulationError(
            f"path exceeded bound_A={cfg.bound_A} (max |X| = {np.max(np.abs(x_grid)):.6g})"
        )

    return SamplePath(
        T=float(T),
        n=int(n),
        x_grid=x_grid,
        sigma_grid=sigma,
        w_increments=w_inc,
        jumps=tuple(records),
        seed=int(seed),
        config=cfg,
        w_before_jump=w_before,
        n_sigma_clamps=n_clamps,
    )


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------


def increments(path: SamplePath, scaled: bool = False, t: Optional[float] = None) -> np.ndarray:
    """Observed increments Delta_i X = X_{i/n} - X_{(i-1)/n}, i = 1..floor(nt).

    With scaled=True the increments are multiplied by sqrt(n).
    """
    if t is None:
        t = path.T
    if not 0 < t <= path.T + 1e-12:
        raise SimulationError(f"t={t} outside (0, T={path.T}]")
    m = min(_count(path.n, t), len(path.x_grid) - 1)
    out = np.diff(path.x_grid[: m + 1])
    if scaled:
        out = math.sqrt(path.n) * out
    return out


def first_order_increments(path: SamplePath, t: Optional[float] = None) -> np.ndarray:
    """First-order approximation sqrt(n) sigma_{(i-1)/n} Delta_i W of the scaled increments."""
    if t is None:
        t = path.T
    if not 0 < t <= path.T + 1e-12:
        raise SimulationError(f"t={t} outside (0, T={path.T}]")
    m = min(_count(path.n, t), path.n_steps)
    return math.sqrt(path.n) * path.sigma_grid[:m] * path.w_increments[:m]


@dataclass(frozen=True)
class JumpNeighborhood:
    """R_-(n,p), R_+(n,p) and R = R_- + R_+ around one jump."""

    r_minus: float
    r_plus: float
    r: float
    shared_interval: bool


def jump_neighborhood(path: SamplePath, p: int) -> JumpNeighborhood:
    """The scaled pre/post-jump displacements inside jump p's grid interval.

    R_- = sqrt(n) (X_{S_p-} - X_{(i-1)/n}), R_+ = sqrt(n) (X_{i/n} - X_{S_p});
    X_{S_p-} is reconstructed exactly from the stored Brownian sub-increment
    and any earlier jumps in the same interval.  A jump sharing its
    interval with another one is flagged (it degrades CLT-quality
    diagnostics only).
    """
    if not 0 <= p < len(path.jumps):
        raise SimulationError(f"jump index {p} outside 0..{len(path.jumps) - 1}")
    rec = path.jumps[p]
    i = rec.interval_index
    if i > path.n_steps:
        raise SimulationError(
            f"jump {p} at time {rec.time} falls past the last full grid interval"
        )
    n = path.n
    sqn = math.sqrt(n)
    delta = rec.time - (i - 1) / n
    sigma_left = path.sigma_grid[i - 1]
    cont = path.config.drift_b * delta + sigma_left * path.w_before_jump[p]
    earlier = 0.0
    shared = False
    for q, other in enumerate(path.jumps):
        if other.interval_index == i and q != p:
            shared = True
            if q < p:
                earlier += other.size
    pre_displacement = cont + earlier
    inc_i = path.x_grid[i] - path.x_grid[i - 1]
    r_minus = sqn * pre_displacement
    r_plus = sqn * (inc_i - pre_displacement - rec.size)
    return JumpNeighborhood(
        r_minus=float(r_minus),
        r_plus=float(r_plus),
        r=float(r_minus + r_plus),
        shared_interval=shared,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _vol_to_dict(v: VolatilityModel) -> dict:
    return {
        "kind": v.kind,
        "sigma0": v.sigma0,
        "tilde_b": v.tilde_b,
        "tilde_sigma": v.tilde_sigma,
        "tilde_v": v.tilde_v,
        "floor_eps": v.floor_eps,
    }


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "drift_b": cfg.drift_b,
        "vol": _vol_to_dict(cfg.vol),
        "jumps": {
            "intensity": cfg.jumps.intensity,
            "size_dist": cfg.jumps.size_dist.to_dict(),
            "max_abs": cfg.jumps.max_abs,
        },
        "bound_A": cfg.bound_A,
        "reject_bound_excursions": cfg.reject_bound_excursions,
    }


def config_from_dict(d: dict) -> ModelConfig:
    vol = VolatilityModel(**d["vol"])
    jm = d["jumps"]
    jumps = JumpModel(
        intensity=jm["intensity"],
        size_dist=size_dist_from_dict(jm["size_dist"]),
        max_abs=jm["max_abs"],
    )
    return ModelConfig(
        drift_b=d["drift_b"],
        vol=vol,
        jumps=jumps,
        bound_A=d["bound_A"],
        reject_bound_excursions=d.get("reject_bound_excursions", False),
    )


def path_to_json(path: SamplePath) -> str:
    doc = {
        "format": "uvstat.sample_path",
        "version": 1,
        "T": path.T,
        "n": path.n,
        "seed": path.seed,
        "n_sigma_clamps": path.n_sigma_clamps,
        "model": config_to_dict(path.config),
        "x_grid": path.x_grid.tolist(),
        "sigma_grid": path.sigma_grid.tolist(),
        "w_increments": path.w_increments.tolist(),
        "w_before_jump": path.w_before_jump.tolist(),
        "jumps": [
            {
                "time": r.time,
                "size": r.size,
                "sigma_pre": r.sigma_pre,
                "sigma_post": r.sigma_post,
                "interval_index": r.interval_index,
            }
            for r in path.jumps
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def path_from_json(text: str) -> SamplePath:
    doc = json.loads(text)
    if doc.get("format") != "uvstat.sample_path":
        raise SimulationError("not a sample path document")
    jumps = tuple(
        JumpRecord(
            time=j["time"],
            size=j["size"],
            sigma_pre=j["sigma_pre"],
            sigma_post=j["sigma_post"],
            interval_index=j["interval_index"],
        )
        for j in doc["jumps"]
    )
    return SamplePath(
        T=doc["T"],
        n=doc["n"],
        x_grid=np.array(doc["x_grid"], dtype=float),
        sigma_grid=np.array(doc["sigma_grid"], dtype=float),
        w_increments=np.array(doc["w_increments"], dtype=float),
        jumps=jumps,
        seed=doc["seed"],
        config=config_from_dict(doc["model"]),
        w_before_jump=np.array(doc["w_before_jump"], dtype=float),
        n_sigma_clamps=doc["n_sigma_clamps"],
    )


_MAGIC = b"UVSTATP1"


def _pack_array(arr: np.ndarray) -> bytes:
    data = np.asarray(arr, dtype="<f8").tobytes()
    return struct.pack("<Q", len(arr)) + data


def _unpack_array(buf: bytes, offset: int):
    (length,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    arr = np.frombuffer(buf, dtype="<f8", count=length, offset=offset).copy()
    return arr, offset + 8 * length


def path_to_binary(path: SamplePath) -> bytes:
    """Compact dump: little-endian float64 arrays with length prefixes.

    The model configuration rides along as a length-prefixed JSON blob so
    the dump stays self-contained.
    """
    cfg_blob = json.dumps(config_to_dict(path.config), sort_keys=True).encode()
    head = _MAGIC + struct.pack(
        "<dqqq", path.T, path.n, path.seed, path.n_sigma_clamps
    )
    body = b"".join(
        [
            struct.pack("<Q", len(cfg_blob)),
            cfg_blob,
            _pack_array(path.x_grid),
            _pack_array(path.sigma_grid),
            _pack_array(path.w_increments),
            _pack_array(path.w_before_jump),
            _pack_array(np.array([r.time for r in path.jumps])),
            _pack_array(np.array([r.size for r in path.jumps])),
            _pack_array(np.array([r.sigma_pre for r in path.jumps])),
            _pack_array(np.array([r.sigma_post for r in path.jumps])),
            _pack_array(np.array([float(r.interval_index) for r in path.jumps])),
        ]
    )
    return head + body


def path_from_binary(buf: bytes) -> SamplePath:
    if buf[: len(_MAGIC)] != _MAGIC:
        raise SimulationError("bad magic in binary path dump")
    offset = len(_MAGIC)
    T, n, seed, clamps = struct.unpack_from("<dqqq", buf, offset)
    offset += struct.calcsize("<dqqq")
    (blob_len,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    cfg = config_from_dict(json.loads(buf[offset : offset + blob_len].decode()))
    offset += blob_len
    x_grid, offset = _unpack_array(buf, offset)
    sigma_grid, offset = _unpack_array(buf, offset)
    w_inc, offset = _unpack_array(buf, offset)
    w_before, offset = _unpack_array(buf, offset)
    times, offset = _unpack_array(buf, offset)
    sizes, offset = _unpack_array(buf, offset)
    pres, offset = _unpack_array(buf, offset)
    posts, offset = _unpack_array(buf, offset)
    idxs, offset = _unpack_array(buf, offset)
    jumps = tuple(
        JumpRecord(time=t, size=s, sigma_pre=a, sigma_post=b, interval_index=int(i))
        for t, s, a, b, i in zip(times, sizes, pres, posts, idxs)
    )
    return SamplePath(
        T=T,
        n=n,
        x_grid=x_grid,
        sigma_grid=sigma_grid,
        w_increments=w_inc,
        jumps=jumps,
        seed=seed,
        config=cfg,
        w_before_jump=w_before,
        n_sigma_clamps=clamps,
    )
