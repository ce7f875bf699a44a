"""Samplers for the Boltzmann distribution of an effective QUBO.

Backends: single-bit-flip Metropolis (mh), path-integral Monte Carlo over
Trotter replicas (sqa), exhaustive enumeration (exact), and an HTTP client
for a remote annealer endpoint (remote).

Every backend is a pure function of (qubo, config): per-read Philox streams
are keyed by (config.seed, a digest of the qubo wire form, read index), so
identical inputs reproduce identical sample sets regardless of execution
order, chunking, or which process runs them.  A remote endpoint configured
with the same seed therefore reproduces a local run bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
import requests
from numba import njit

from .problems import (
    ConstrainedProblem,
    EffectiveQubo,
    constraint_values,
    energies,
    ising_view,
)
from .rng import check_seed, digest64, read_keys, read_stream

__all__ = [
    "SamplerConfig",
    "SampleSet",
    "ExactDistribution",
    "ExpectationEstimate",
    "SamplerError",
    "InvalidScheduleError",
    "RemoteSamplerError",
    "RemoteConnectionError",
    "RemoteTimeoutError",
    "RemoteServerError",
    "RemoteProtocolError",
    "mh_sample",
    "sqa_sample",
    "exact_boltzmann",
    "exact_expectations",
    "estimate_expectations",
    "remote_sample",
    "all_states",
    "qubo_to_wire",
    "qubo_from_wire",
    "canonical_json",
    "qubo_digest",
    "MHSampler",
    "SQASampler",
    "ExactSampler",
    "RemoteSampler",
    "make_sampler",
    "SAMPLER_KINDS",
]

EXACT_MAX_VARS = 20
_CHUNK_DOUBLES = 8_000_000  # bound on pre-generated uniforms held at once


class SamplerError(Exception):
    pass


class InvalidScheduleError(SamplerError):
    """Transverse-field schedule produced a non-finite replica coupling."""


class RemoteSamplerError(SamplerError):
    pass


class RemoteConnectionError(RemoteSamplerError):
    pass


class RemoteTimeoutError(RemoteSamplerError):
    pass


class RemoteServerError(RemoteSamplerError):
    def __init__(self, status: int, message: str):
        super().__init__(f"server returned status {status}: {message}")
        self.status = status
        self.message = message


class RemoteProtocolError(RemoteSamplerError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Shared sampler knobs.

    beta is the inverse temperature (0 is allowed and samples uniformly).
    trotter, gamma_start and gamma_end only matter for the sqa backend;
    the transverse field is swept linearly from gamma_start down to
    gamma_end over the sweeps of each read.
    """

    beta: float
    num_reads: int = 100
    sweeps_per_read: int = 1000
    trotter: int = 4
    gamma_start: float = 10.0
    gamma_end: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        if self.num_reads < 1:
            raise ValueError("num_reads must be positive")
        if self.sweeps_per_read < 1:
            raise ValueError("sweeps_per_read must be positive")
        if self.trotter < 1:
            raise ValueError("trotter must be >= 1")
        if not (self.gamma_start >= self.gamma_end > 0):
            raise ValueError("need gamma_start >= gamma_end > 0")
        check_seed(self.seed)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Weighted multiset of binary configurations with their energies.

    Monte Carlo backends emit integer-valued occurrence weights; the exact
    backend emits Boltzmann probabilities, so weights are stored as positive
    floats and all downstream statistics are weight-normalized.
    """

    samples: np.ndarray
    energies: np.ndarray
    weights: np.ndarray

    def __init__(self, samples: np.ndarray, energies: np.ndarray, weights: np.ndarray):
        S = np.array(samples, dtype=np.uint8)
        E = np.array(energies, dtype=np.float64)
        W = np.array(weights, dtype=np.float64)
        if S.ndim != 2:
            raise ValueError("samples must be a 2-D bit matrix")
        if S.shape[0] == 0:
            raise ValueError("sample set must be nonempty")
        if S.size and S.max() > 1:
            raise ValueError("samples must contain only 0 and 1")
        if E.shape != (S.shape[0],) or W.shape != (S.shape[0],):
            raise ValueError("samples, energies and weights must be parallel")
        if not np.all(np.isfinite(E)):
            raise ValueError("energies must be finite")
        if not (np.all(np.isfinite(W)) and np.all(W > 0)):
            raise ValueError("weights must be finite and positive")
        for a in (S, E, W):
            a.flags.writeable = False
        object.__setattr__(self, "samples", S)
        object.__setattr__(self, "energies", E)
        object.__setattr__(self, "weights", W)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_vars(self) -> int:
        return self.samples.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Boltzmann probabilities over all 2^N states, state index little-endian."""

    probabilities: np.ndarray
    beta: float
    log_partition: float

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64)
        n = p.size.bit_length() - 1
        if p.size != 1 << n or n > EXACT_MAX_VARS:
            raise ValueError(f"probability vector must have length 2^N with N <= {EXACT_MAX_VARS}")
        if abs(float(p.sum()) - 1.0) > 1e-10:
            raise ValueError("probabilities must sum to 1 within 1e-10")
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)

    @property
    def n_vars(self) -> int:
        return self.probabilities.size.bit_length() - 1


@dataclass(frozen=True, eq=False)
class ExpectationEstimate:
    """Per-constraint mean and variance of f_k under a distribution."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=np.float64)
        v = np.array(self.variance, dtype=np.float64)
        if m.shape != v.shape or m.ndim != 1:
            raise ValueError("mean and variance must be parallel vectors")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValueError("estimates must be finite")
        if v.size and v.min() < 0:
            raise ValueError("variance entries must be non-negative")
        for a in (m, v):
            a.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", v)


# -- wire form -----------------------------------------------------------

def qubo_to_wire(q: EffectiveQubo) -> dict:
    return {
        "n_vars": q.n_vars,
        "linear": q.linear.tolist(),
        "quadratic": [[i, j, w] for i, j, w in sorted(q.quadratic)],
        "offset": q.offset,
    }


def qubo_from_wire(d: dict) -> EffectiveQubo:
    try:
        return EffectiveQubo(
            int(d["n_vars"]),
            np.asarray(d["linear"], dtype=np.float64),
            [(int(i), int(j), float(w)) for i, j, w in d.get("quadratic", [])],
            float(d.get("offset", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed qubo payload: {e}") from e


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def qubo_digest(q: EffectiveQubo) -> int:
    return digest64(canonical_json(qubo_to_wire(q)).encode())


# -- kernels --------------------------------------------------------------

@njit(cache=True)
def _mh_kernel(lin, W, beta, x, u):
    """Systematic-scan single-bit-flip Metropolis, one chain per row of x.

    x is (R, N) bits mutated in place; u is (R, S, N) pre-drawn uniforms.
    Flip of bit i is accepted with min(1, exp(-beta * dE)) where dE is the
    exact energy change, maintained through local fields.
    """
    R, N = x.shape
    S = u.shape[1]
    for r in range(R):
        phi = lin.copy()
        for j in range(N):
            if x[r, j]:
                for i in range(N):
                    phi[i] += W[i, j]
        for s in range(S):
            for i in range(N):
                dE = (1.0 - 2.0 * x[r, i]) * phi[i]
                if dE <= 0.0 or u[r, s, i] < np.exp(-beta * dE):
                    d = 1 - 2 * x[r, i]
                    x[r, i] += d
                    for j in range(N):
                        phi[j] += d * W[i, j]


@njit(cache=True)
def _sqa_kernel(h, J, beta, jperp, s, u):
    """Path-integral Monte Carlo over Trotter replicas of the spin model.

    s is (R, tau, N) spins in {-1, +1} mutated in place; u is
    (R, S, tau, N) uniforms; jperp[sweep] is the replica coupling strength.
    Within a replica the classical couplings act scaled by 1/tau; adjacent
    replicas (periodic in the Trotter direction) couple ferromagnetically
    with strength jperp.  A single replica has no Trotter ring, so tau == 1
    reduces to plain Metropolis at beta.
    """
    R, tau, N = s.shape
    S = u.shape[1]
    inv_tau = 1.0 / tau
    for r in range(R):
        phi = np.empty((tau, N))
        for p in range(tau):
            for i in range(N):
                acc = h[i]
                for j in range(N):
                    acc += J[i, j] * s[r, p, j]
                phi[p, i] = acc
        for sw in range(S):
            jp = jperp[sw]
            for p in range(tau):
                pm = p - 1 if p > 0 else tau - 1
                pp = p + 1 if p < tau - 1 else 0
                for i in range(N):
                    si = s[r, p, i]
                    dE = -2.0 * si * inv_tau * phi[p, i]
                    if tau > 1:
                        dE += 2.0 * jp * si * (s[r, pm, i] + s[r, pp, i])
                    if dE <= 0.0 or u[r, sw, p, i] < np.exp(-beta * dE):
                        s[r, p, i] = -si
                        d = -2.0 * si
                        for j in range(N):
                            phi[p, j] += d * J[i, j]


# -- sampling operations ---------------------------------------------------

def mh_sample(q: EffectiveQubo, cfg: SamplerConfig) -> SampleSet:
    """Metropolis sampling: num_reads independent chains, each started from
    a uniform random state and run for sweeps_per_read full sweeps."""
    R, S, N = cfg.num_reads, cfg.sweeps_per_read, q.n_vars
    keys = read_keys(cfg.seed, qubo_digest(q), R)
    W = q.dense_coupling
    out = np.empty((R, N), dtype=np.uint8)
    chunk = max(1, _CHUNK_DOUBLES // max(1, S * N))
    for start in range(0, R, chunk):
        stop = min(R, start + chunk)
        x = np.empty((stop - start, N), dtype=np.int8)
        u = np.empty((stop - start, S, N))
        for r in range(start, stop):
            g = read_stream(keys, r)
            x[r - start] = g.random(N) < 0.5
            u[r - start] = g.random((S, N))
        _mh_kernel(q.linear, W, float(cfg.beta), x, u)
        out[start:stop] = x
    return SampleSet(out, energies(q, out), np.ones(R))


def _jperp_schedule(cfg: SamplerConfig) -> np.ndarray:
    gammas = np.linspace(cfg.gamma_start, cfg.gamma_end, cfg.sweeps_per_read)
    if cfg.trotter == 1:
        return np.zeros_like(gammas)  # no Trotter ring, coupling unused
    if cfg.beta == 0:
        raise InvalidScheduleError("sqa with multiple replicas requires beta > 0")
    with np.errstate(divide="ignore"):
        t = np.tanh(cfg.beta * gammas / cfg.trotter)
        jp = -np.log(t) / (2.0 * cfg.beta)
    if not np.all(np.isfinite(jp)):
        raise InvalidScheduleError(
            f"replica coupling overflow for beta={cfg.beta}, trotter={cfg.trotter}, "
            f"gamma in [{cfg.gamma_end}, {cfg.gamma_start}]"
        )
    return jp


def sqa_sample(q: EffectiveQubo, cfg: SamplerConfig) -> SampleSet:
    """Simulated quantum annealing on the spin form of q.

    Each read anneals trotter coupled replicas while the transverse field
    decays from gamma_start to gamma_end, and contributes every final
    replica configuration as one sample.
    """
    R, S, tau, N = cfg.num_reads, cfg.sweeps_per_read, cfg.trotter, q.n_vars
    jperp = _jperp_schedule(cfg)
    h, J_terms, _ = ising_view(q)
    J = np.zeros((N, N))
    for i, j, w in J_terms:
        J[i, j] = w
        J[j, i] = w
    keys = read_keys(cfg.seed, qubo_digest(q), R)
    out = np.empty((R * tau, N), dtype=np.uint8)
    chunk = max(1, _CHUNK_DOUBLES // max(1, S * tau * N))
    for start in range(0, R, chunk):
        stop = min(R, start + chunk)
        s = np.empty((stop - start, tau, N), dtype=np.int8)
        u = np.empty((stop - start, S, tau, N))
        for r in range(start, stop):
            g = read_stream(keys, r)
            s[r - start] = 2 * (g.random((tau, N)) < 0.5).astype(np.int8) - 1
            u[r - start] = g.random((S, tau, N))
        _sqa_kernel(h, J, float(cfg.beta), jperp, s, u)
        out[start * tau : stop * tau] = ((s + 1) // 2).reshape(-1, N)
    return SampleSet(out, energies(q, out), np.ones(R * tau))


def all_states(n_vars: int) -> np.ndarray:
    """(2^N, N) bit matrix; bit l of row i is (i >> l) & 1."""
    if n_vars > EXACT_MAX_VARS:
        raise ValueError(f"exhaustive enumeration is limited to {EXACT_MAX_VARS} variables")
    idx = np.arange(1 << n_vars, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(n_vars, dtype=np.uint32)) & 1).astype(np.uint8)


def _all_energies(q: EffectiveQubo) -> np.ndarray:
    idx = np.arange(1 << q.n_vars, dtype=np.uint32)
    E = np.full(idx.size, q.offset)
    for l in range(q.n_vars):
        w = q.linear[l]
        if w != 0.0:
            E += w * ((idx >> np.uint32(l)) & 1)
    for i, j, w in q.quadratic:
        E += w * ((idx >> np.uint32(i)) & (idx >> np.uint32(j)) & 1)
    return E


def exact_boltzmann(q: EffectiveQubo, beta: float) -> ExactDistribution:
    """Full-enumeration Boltzmann distribution, normalized in log space."""
    if q.n_vars > EXACT_MAX_VARS:
        raise ValueError(f"exact_boltzmann is limited to {EXACT_MAX_VARS} variables")
    if not (np.isfinite(beta) and beta >= 0):
        raise ValueError("beta must be finite and >= 0")
    a = -beta * _all_energies(q)
    amax = a.max()
    log_z = amax + math.log(np.exp(a - amax).sum())
    return ExactDistribution(np.exp(a - log_z), float(beta), float(log_z))


def exact_expectations(p: ConstrainedProblem, d: ExactDistribution) -> ExpectationEstimate:
    """Exact mean and variance of each constraint function under d."""
    if d.n_vars != p.n_vars:
        raise ValueError(f"distribution is over {d.n_vars} variables, problem has {p.n_vars}")
    idx = np.arange(1 << p.n_vars, dtype=np.uint32)
    mean = np.empty(p.n_constraints)
    var = np.empty(p.n_constraints)
    for k, c in enumerate(p.constraints):
        f = np.zeros(idx.size)
        for l in range(p.n_vars):
            a = c.coeffs[l]
            if a != 0.0:
                f += a * ((idx >> np.uint32(l)) & 1)
        mean[k] = d.probabilities @ f
        var[k] = max(0.0, float(d.probabilities @ ((f - mean[k]) ** 2)))
    return ExpectationEstimate(mean, var)


def estimate_expectations(s: SampleSet, p: ConstrainedProblem) -> ExpectationEstimate:
    """Weight-normalized sample mean and population variance of each f_k."""
    if s.n_vars != p.n_vars:
        raise ValueError(f"samples have {s.n_vars} variables, problem has {p.n_vars}")
    F = constraint_values(p, s.samples)
    w = s.weights / s.total_weight
    mean = w @ F
    var = np.maximum(0.0, w @ ((F - mean) ** 2))
    return ExpectationEstimate(mean, var)


def remote_sample(
    endpoint: str,
    q: EffectiveQubo,
    cfg: SamplerConfig,
    timeout: float = 60.0,
) -> SampleSet:
    """POST the qubo to {endpoint}/v1/sample and parse the reply.

    Energies are recomputed locally; any server-reported energies are
    ignored.  Occurrence counts default to 1 when the server omits them.
    """
    url = endpoint.rstrip("/") + "/v1/sample"
    body = {"qubo": qubo_to_wire(q), "num_reads": cfg.num_reads}
    try:
        resp = requests.post(url, json=body, timeout=timeout)
    except requests.Timeout as e:
        raise RemoteTimeoutError(f"no response from {url} within {timeout}s") from e
    except requests.ConnectionError as e:
        raise RemoteConnectionError(f"cannot reach {url}: {e}") from e
    except requests.RequestException as e:
        raise RemoteSamplerError(f"request to {url} failed: {e}") from e
    if resp.status_code != 200:
        try:
            message = resp.json().get("error", resp.text)
        except ValueError:
            message = resp.text
        raise RemoteServerError(resp.status_code, message)
    try:
        payload = resp.json()
    except ValueError as e:
        raise RemoteProtocolError("response body is not valid JSON") from e
    try:
        samples = np.asarray(payload["samples"], dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != q.n_vars:
            raise ValueError(f"expected samples of width {q.n_vars}")
        if samples.size and not np.isin(samples, (0, 1)).all():
            raise ValueError("samples must be binary")
        occ = payload.get("occurrences")
        if occ is None:
            weights = np.ones(samples.shape[0])
        else:
            weights = np.asarray(occ, dtype=np.float64)
            if weights.shape != (samples.shape[0],) or not np.all(weights == np.round(weights)):
                raise ValueError("occurrences must be integers parallel to samples")
        reported = np.asarray(payload["energies"], dtype=np.float64)
        if reported.shape != (samples.shape[0],):
            raise ValueError("energies must be parallel to samples")
        bits = samples.astype(np.uint8)
        return SampleSet(bits, energies(q, bits), weights)
    except (KeyError, TypeError, ValueError) as e:
        raise RemoteProtocolError(f"malformed sampler response: {e}") from e


# -- sampler objects -------------------------------------------------------

class _ConfiguredSampler:
    kind: str = ""

    def __init__(self, config: SamplerConfig):
        self.config = config

    def sample(self, q: EffectiveQubo) -> SampleSet:
        raise NotImplementedError

    def expectations(self, q: EffectiveQubo, p: ConstrainedProblem) -> tuple[ExpectationEstimate, SampleSet]:
        s = self.sample(q)
        return estimate_expectations(s, p), s

    def with_seed(self, seed: int):
        out = type(self).__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.config = replace(self.config, seed=check_seed(seed))
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.config!r})"


class MHSampler(_ConfiguredSampler):
    kind = "mh"

    def sample(self, q: EffectiveQubo) -> SampleSet:
        return mh_sample(q, self.config)


class SQASampler(_ConfiguredSampler):
    kind = "sqa"

    def sample(self, q: EffectiveQubo) -> SampleSet:
        return sqa_sample(q, self.config)


class ExactSampler(_ConfiguredSampler):
    """Deterministic backend: the "sample set" enumerates every state with
    its Boltzmann probability as weight, so weighted statistics downstream
    are exact expectations and the best sample is the global optimum."""

    kind = "exact"

    def sample(self, q: EffectiveQubo) -> SampleSet:
        d = exact_boltzmann(q, self.config.beta)
        states = all_states(q.n_vars)
        keep = d.probabilities > 0
        return SampleSet(states[keep], _all_energies(q)[keep], d.probabilities[keep])


class RemoteSampler(_ConfiguredSampler):
    kind = "remote"

    def __init__(self, config: SamplerConfig, endpoint: str, timeout: float = 60.0):
        super().__init__(config)
        self.endpoint = endpoint
        self.timeout = float(timeout)

    def sample(self, q: EffectiveQubo) -> SampleSet:
        return remote_sample(self.endpoint, q, self.config, timeout=self.timeout)

    def __repr__(self):
        return f"RemoteSampler({self.endpoint!r}, {self.config!r})"


SAMPLER_KINDS = ("mh", "sqa", "exact", "remote")


def make_sampler(
    kind: str,
    config: SamplerConfig,
    endpoint: str | None = None,
    timeout: float = 60.0,
):
    if kind == "mh":
        return MHSampler(config)
    if kind == "sqa":
        return SQASampler(config)
    if kind == "exact":
        return ExactSampler(config)
    if kind == "remote":
        if not endpoint:
            raise ValueError("remote sampler requires an endpoint")
        return RemoteSampler(config, endpoint, timeout)
    raise ValueError(f"unknown sampler kind {kind!r}; expected one of {SAMPLER_KINDS}")
