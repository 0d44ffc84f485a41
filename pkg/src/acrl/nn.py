"""Small dense networks with hand-written backprop.

Rows are samples. ``Mlp`` is ReLU everywhere except the linear output. The
actor is a tanh-squashed diagonal Gaussian conditioned on the state and the
preference; the critic is a twin pair of 2-output heads (task reward,
violation penalty) with target copies.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Dict, List, Sequence, Tuple

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
LOG2 = np.log(2.0)


class Mlp:
    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        for W, Wn in zip(weights, weights[1:]):
            if W.shape[1] != Wn.shape[0]:
                raise ValueError("inconsistent layer widths")
        self.weights = [np.ascontiguousarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, out_scale: float | None = None) -> "Mlp":
        """Uniform(+-1/sqrt(fan_in)) init; ``out_scale`` rescales the last layer (0 zeroes it)."""
        Ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            Ws.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, fan_out))
        if out_scale is not None:
            Ws[-1] *= out_scale
            bs[-1] *= out_scale
        return cls(Ws, bs)

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = vec[i : i + p.size].reshape(p.shape)
            i += p.size

    def forward(self, x: np.ndarray):
        h = x
        cache = []
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W
            z += b
            cache.append(h)
            if k < last:
                h = np.maximum(z, 0.0)
            else:
                h = z
        return h, cache

    def backward(self, cache, upstream: np.ndarray, need_input_grad: bool = True):
        """Gradients of ``sum(upstream * output)`` w.r.t. params (same order as ``params``) and input."""
        grads: List[np.ndarray] = [None] * (2 * len(self.weights))
        g = upstream
        for k in range(len(self.weights) - 1, -1, -1):
            h_in = cache[k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0 or need_input_grad:
                g = g @ self.weights[k].T
                if k > 0:
                    g *= h_in > 0.0
        return grads, (g if need_input_grad else None)


def mlp_apply(m: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != {m.sizes[0]}")
    out, _ = m.forward(np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def mlp_grad(m: Mlp, x, upstream):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    _, cache = m.forward(np.atleast_2d(x))
    grads, dx = m.backward(cache, np.atleast_2d(np.asarray(upstream, dtype=np.float64)))
    return grads, (dx[0] if single else dx)


def _normalizer(low, high):
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    span = np.where(high > low, high - low, 1.0)
    return low, 2.0 / span


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)**2)`` without cancellation for large |u|."""
    return 2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def squash(u, lo, hi):
    return lo + (hi - lo) * (np.tanh(u) + 1.0) * 0.5


def unsquash(a, lo, hi):
    y = 2.0 * (np.asarray(a, dtype=np.float64) - lo) / (hi - lo) - 1.0
    return np.arctanh(y)


class GaussianPolicy:
    def __init__(self, trunk: Mlp, action_low, action_high, obs_low, obs_high):
        self.trunk = trunk
        self.lo = np.asarray(action_low, dtype=np.float64)
        self.hi = np.asarray(action_high, dtype=np.float64)
        self.obs_low = np.asarray(obs_low, dtype=np.float64)
        self.obs_high = np.asarray(obs_high, dtype=np.float64)
        self._obs_off, self._obs_scale = _normalizer(obs_low, obs_high)
        self.half_span = 0.5 * (self.hi - self.lo)
        self.log_jac_const = float(np.log(self.half_span).sum())
        if trunk.sizes[-1] != 2 * self.action_dim:
            raise ValueError("trunk must emit mean and log-std per action dimension")

    @classmethod
    def init(cls, env, hidden: Sequence[int], rng: np.random.Generator) -> "GaussianPolicy":
        da = env.action_dim
        trunk = Mlp.init([env.state_dim + 2, *hidden, 2 * da], rng, out_scale=0.01)
        return cls(trunk, env.action_low, env.action_high, env.obs_low, env.obs_high)

    @property
    def action_dim(self) -> int:
        return self.lo.shape[0]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.trunk.copy(), self.lo, self.hi, self.obs_low, self.obs_high)

    def inputs(self, states, lams) -> np.ndarray:
        states = np.atleast_2d(states)
        lams = np.broadcast_to(np.atleast_2d(lams), (states.shape[0], 2))
        return np.concatenate([(states - self._obs_off) * self._obs_scale - 1.0, lams], axis=1)

    def head(self, states, lams):
        out, cache = self.trunk.forward(self.inputs(states, lams))
        da = self.action_dim
        raw = out[:, da:]
        return out[:, :da], np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), (cache, raw)

    def distribution(self, state, lam):
        mu, log_std, _ = self.head(state, lam)
        return mu[0], log_std[0]

    def log_prob_from_u(self, u, mu, log_std) -> np.ndarray:
        std = np.exp(log_std)
        eps = (u - mu) / std
        gauss = -0.5 * eps**2 - log_std - HALF_LOG_2PI
        return gauss.sum(axis=-1) - log1m_tanh_sq(u).sum(axis=-1) - self.log_jac_const

    def log_prob(self, state, lam, a) -> np.ndarray:
        mu, log_std, _ = self.head(state, lam)
        u = unsquash(a, self.lo, self.hi)
        return self.log_prob_from_u(u, mu, log_std)

    def sample(self, state, lam, rng: np.random.Generator, n: int | None = None, student_t: float | None = None):
        """Draw actions at one state; returns ``(a, logp)`` (batched when ``n`` is given).

        With ``student_t`` set the noise is Student-t with that many degrees of
        freedom and ``logp`` is not defined (NaN).
        """
        mu, log_std = self.distribution(state, lam)
        k = 1 if n is None else n
        if student_t is None:
            eps = rng.standard_normal((k, mu.shape[0]))
        else:
            eps = rng.standard_t(student_t, (k, mu.shape[0]))
        u = mu + np.exp(log_std) * eps
        a = squash(u, self.lo, self.hi)
        logp = self.log_prob_from_u(u, mu, log_std) if student_t is None else np.full(k, np.nan)
        return (a[0], float(logp[0])) if n is None else (a, logp)

    def rsample(self, states, lams, eps: np.ndarray) -> dict:
        """Reparameterised batch sample; keeps what ``backward`` needs."""
        mu, log_std, (cache, raw) = self.head(states, lams)
        std = np.exp(log_std)
        u = mu + std * eps
        y = np.tanh(u)
        logp = (-0.5 * eps**2 - log_std - HALF_LOG_2PI).sum(axis=1) - log1m_tanh_sq(u).sum(axis=1) - self.log_jac_const
        return {"y": y, "a": self.lo + self.half_span * (y + 1.0), "logp": logp, "eps": eps, "std": std, "raw": raw, "cache": cache}

    def backward(self, ctx: dict, d_y: np.ndarray, d_logp: np.ndarray) -> List[np.ndarray]:
        """Parameter gradients given upstream grads on the squashed unit action ``y`` and on ``logp``."""
        y, eps, std = ctx["y"], ctx["eps"], ctx["std"]
        d_u = d_y * (1.0 - y * y) + d_logp[:, None] * (2.0 * y)
        d_mu = d_u
        d_log_std = d_u * std * eps - d_logp[:, None]
        raw = ctx["raw"]
        d_log_std = np.where((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX), d_log_std, 0.0)
        grads, _ = self.trunk.backward(ctx["cache"], np.concatenate([d_mu, d_log_std], axis=1), need_input_grad=False)
        return grads


class VectorCritic:
    """Twin 2-output critics over ``(state, unit action, preference)`` plus target copies."""

    def __init__(self, q1: Mlp, q2: Mlp, action_low, action_high, obs_low, obs_high):
        self.nets = [q1, q2]
        self.targets = [q1.copy(), q2.copy()]
        self.lo = np.asarray(action_low, dtype=np.float64)
        self.hi = np.asarray(action_high, dtype=np.float64)
        self.obs_low = np.asarray(obs_low, dtype=np.float64)
        self.obs_high = np.asarray(obs_high, dtype=np.float64)
        self._obs_off, self._obs_scale = _normalizer(obs_low, obs_high)
        for q in self.nets:
            if q.sizes[-1] != 2:
                raise ValueError("critic heads must have exactly two outputs")

    @classmethod
    def init(cls, env, hidden: Sequence[int], rng: np.random.Generator, zero_head: bool = False) -> "VectorCritic":
        sizes = [env.state_dim + env.action_dim + 2, *hidden, 2]
        scale = 0.0 if zero_head else None
        q1, q2 = Mlp.init(sizes, rng, scale), Mlp.init(sizes, rng, scale)
        return cls(q1, q2, env.action_low, env.action_high, env.obs_low, env.obs_high)

    def unit_action(self, a) -> np.ndarray:
        return 2.0 * (np.asarray(a, dtype=np.float64) - self.lo) / (self.hi - self.lo) - 1.0

    def inputs(self, states, y, lams) -> np.ndarray:
        states = np.atleast_2d(states)
        lams = np.broadcast_to(np.atleast_2d(lams), (states.shape[0], 2))
        return np.concatenate([(states - self._obs_off) * self._obs_scale - 1.0, np.atleast_2d(y), lams], axis=1)

    def evaluate(self, states, y, lams, target: bool = False) -> np.ndarray:
        """``(2, B, 2)``: both heads' vector values."""
        x = self.inputs(states, y, lams)
        nets = self.targets if target else self.nets
        return np.stack([q.forward(x)[0] for q in nets])


def critic_eval(c: VectorCritic, s, a, lam, twin: bool = False) -> np.ndarray:
    """Vector Q at one (s, a, lam); ``twin=True`` returns both heads as rows."""
    lam = lam.as_array() if hasattr(lam, "as_array") else np.asarray(lam, dtype=np.float64)
    vec = s.vector if hasattr(s, "vector") else s
    q = c.evaluate(np.atleast_2d(vec), c.unit_action(np.atleast_2d(a)), lam)[:, 0, :]
    return q if twin else q[0]


def policy_sample(p: GaussianPolicy, s, lam, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    lam = lam.as_array() if hasattr(lam, "as_array") else lam
    vec = s.vector if hasattr(s, "vector") else s
    return p.sample(vec, lam, rng)


class Adam:
    def __init__(self, params: List[np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        step = self.lr * np.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps * np.sqrt(c2))


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    for t, o in zip(target.params, online.params):
        if t.shape != o.shape:
            raise ValueError("target and online shapes differ")
        t *= 1.0 - tau
        t += tau * o


# ---------------------------------------------------------------------------
# checkpoint: b"ACRLNET\0", u32 version, u32 header length, JSON header,
# then per net: u32 n_layers, u32 sizes[n_layers + 1], float64 W (row-major), b

MAGIC = b"ACRLNET\0"
VERSION = 1


def save_checkpoint(path_or_file, nets: Dict[str, Mlp], meta: dict | None = None) -> None:
    header = json.dumps({"nets": list(nets), "meta": meta or {}}).encode()
    buf = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for net in nets.values():
        sizes = net.sizes
        buf.append(struct.pack(f"<I{len(sizes)}I", len(sizes) - 1, *sizes))
        for W, b in zip(net.weights, net.biases):
            buf.append(W.astype("<f8").tobytes(order="C"))
            buf.append(b.astype("<f8").tobytes())
    data = b"".join(buf)
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def _read(fh: BinaryIO, n: int) -> bytes:
    out = fh.read(n)
    if len(out) != n:
        raise ValueError("truncated checkpoint")
    return out


def load_checkpoint(path_or_file) -> Tuple[Dict[str, Mlp], dict]:
    fh = path_or_file if hasattr(path_or_file, "read") else open(path_or_file, "rb")
    try:
        if _read(fh, len(MAGIC)) != MAGIC:
            raise ValueError("not an acrl checkpoint")
        version, hlen = struct.unpack("<II", _read(fh, 8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(_read(fh, hlen))
        nets = {}
        for name in header["nets"]:
            (n_layers,) = struct.unpack("<I", _read(fh, 4))
            sizes = struct.unpack(f"<{n_layers + 1}I", _read(fh, 4 * (n_layers + 1)))
            Ws, bs = [], []
            for fi, fo in zip(sizes[:-1], sizes[1:]):
                Ws.append(np.frombuffer(_read(fh, 8 * fi * fo), dtype="<f8").reshape(fi, fo).astype(np.float64))
                bs.append(np.frombuffer(_read(fh, 8 * fo), dtype="<f8").astype(np.float64))
            nets[name] = Mlp(Ws, bs)
        return nets, header["meta"]
    finally:
        if fh is not path_or_file:
            fh.close()
