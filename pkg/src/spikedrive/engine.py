"""Discrete-time simulation of converted models.

Trains are arrays with a leading time axis of length T. Neuron outputs are
binary {0,1}; a spike from site s is worth s.theta to whoever consumes it.
Simulation is layer-sequential: each neuron layer is run over its full
tau_d + T ticks before its output train moves on, re-indexed to logical
steps 1..T. Biases enter as full-strength charge at every step, and the
input image is applied as a constant current into the first conv at every
step (direct coding), so over the window every charge totals T times its
ANN-side counterpart.

Residual shortcuts stay analog: they carry theta-weighted spike currents
with no neuron of their own, and the pooled classifier head is evaluated
per step and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convert import KIND_POOL, NeuronSite, SpikingModel
from .errors import ConfigError, ContractError, ShapeError
from .tensor_ops import conv2d, maxpool2d

SpikeTrain = np.ndarray  # leading axis is time


@dataclass
class NeuronState:
    """Membrane state of one delayed integrate-and-fire layer.

    v starts at theta/2 (charge-centered rounding); a run spans
    tau_d + time_window ticks: charge while t <= T, fire while t > tau_d.
    """

    theta: float
    tau_d: int
    time_window: int
    v: np.ndarray

    @classmethod
    def fresh(cls, theta: float, tau_d: int, time_window: int, shape) -> "NeuronState":
        return cls(theta, tau_d, time_window, np.full(shape, theta / 2.0))

    @property
    def ticks(self) -> int:
        return self.tau_d + self.time_window


def dif_run(charges: SpikeTrain, theta: float, tau_d: int) -> SpikeTrain:
    """Run one delayed integrate-and-fire layer over a charge train.

    charges has shape (T, ...). Output spikes use the same shape, re-indexed
    so spike t was emitted at tick t + tau_d. tau_d = 0 is a plain IF layer
    with soft reset. With tau_d = T every element's total spike count equals
    clip(floor(z/theta + 1/2), 0, T) for total charge z.
    """
    charges = np.asarray(charges, dtype=np.float64)
    if charges.ndim < 1 or charges.shape[0] < 1:
        raise ShapeError(f"charge train needs a leading time axis, got shape {charges.shape}")
    if not (theta > 0.0) or not np.isfinite(theta):
        raise ConfigError(f"threshold must be finite and > 0, got {theta}")
    if int(tau_d) != tau_d or tau_d < 0:
        raise ConfigError(f"delay must be an integer >= 0, got {tau_d}")
    t_win = charges.shape[0]
    state = NeuronState.fresh(theta, int(tau_d), t_win, charges.shape[1:])
    out = np.zeros_like(charges)
    for t in range(1, state.ticks + 1):
        if t <= t_win:
            state.v = state.v + charges[t - 1]
        if t > state.tau_d:
            s = (state.v >= theta).astype(np.float64)
            state.v -= theta * s
            out[t - state.tau_d - 1] = s
    return out


def _require_binary(train: np.ndarray, what: str) -> None:
    if not np.all((train == 0.0) | (train == 1.0)):
        raise ContractError(f"{what} must be a binary spike train")


def tdec_maxpool(train: SpikeTrain, window, stride=None) -> SpikeTrain:
    """Max pool a binary train without waiting for the window to close.

    Emits y(t) = MP(sum_<=t x) - MP(sum_<t x); outputs are binary and their
    total equals the max pool of the input spike counts.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 4:
        raise ShapeError(f"expected train of [C,H,W] steps, got shape {train.shape}")
    _require_binary(train, "tdec_maxpool input")
    out = None
    cum = np.zeros_like(train[0])
    prev = None
    for t in range(train.shape[0]):
        cum = cum + train[t]
        m = maxpool2d(cum, window, stride)
        if out is None:
            out = np.zeros((train.shape[0],) + m.shape)
            prev = np.zeros_like(m)
        out[t] = m - prev
        prev = m
    return out


def tdec_matmul(a_train: SpikeTrain, b_train: SpikeTrain) -> SpikeTrain:
    """Temporally decomposed product of two binary trains.

    Component t is A_t @ b(t) + a(t) @ B_t - a(t) @ b(t) with running sums
    A_t, B_t taken through step t; components are nonnegative integers and
    sum to A_T @ B_T exactly.
    """
    a_train = np.asarray(a_train, dtype=np.float64)
    b_train = np.asarray(b_train, dtype=np.float64)
    if a_train.ndim != 3 or b_train.ndim != 3:
        raise ShapeError(
            f"expected trains of matrix steps, got shapes {a_train.shape} / {b_train.shape}"
        )
    if a_train.shape[0] != b_train.shape[0]:
        raise ShapeError(
            f"time windows differ: {a_train.shape[0]} vs {b_train.shape[0]}"
        )
    if a_train.shape[2] != b_train.shape[1]:
        raise ShapeError(f"inner extents differ: {a_train.shape} @ {b_train.shape}")
    _require_binary(a_train, "tdec_matmul left operand")
    _require_binary(b_train, "tdec_matmul right operand")
    t_win = a_train.shape[0]
    out = np.zeros((t_win, a_train.shape[1], b_train.shape[2]))
    a_cum = np.zeros_like(a_train[0])
    b_cum = np.zeros_like(b_train[0])
    for t in range(t_win):
        a, b = a_train[t], b_train[t]
        a_cum = a_cum + a
        b_cum = b_cum + b
        out[t] = a_cum @ b + a @ b_cum - a @ b
    return out


@dataclass
class SpikeStats:
    """Per-site spike accounting for one simulated inference."""

    tau_d: int
    time_window: int
    per_site: dict[str, dict] = field(default_factory=dict)
    layers: int = 0
    phi: dict | None = None     # site -> time-averaged value train (opt-in)
    trains: dict | None = None  # site -> raw spike train (opt-in)

    @property
    def ticks_per_layer(self) -> int:
        return self.tau_d + self.time_window

    @property
    def ticks_accumulated(self) -> int:
        return self.layers * self.ticks_per_layer

    @property
    def total_spikes(self) -> int:
        return sum(s["spikes"] for s in self.per_site.values())

    def to_dict(self) -> dict:
        return {
            "tau_d": self.tau_d,
            "time_window": self.time_window,
            "layers": self.layers,
            "ticks_per_layer": self.ticks_per_layer,
            "ticks_accumulated": self.ticks_accumulated,
            "total_spikes": self.total_spikes,
            "per_site": self.per_site,
        }


class _Sim:
    def __init__(self, sm: SpikingModel, tau_d: int, record_phi: bool, record_trains: bool):
        self.sm = sm
        self.tau_d = tau_d
        self.t_win = sm.time_window
        self.stats = SpikeStats(tau_d, sm.time_window,
                                phi={} if record_phi else None,
                                trains={} if record_trains else None)

    def _book(self, site: NeuronSite, spikes: SpikeTrain) -> SpikeTrain:
        axes = tuple(range(1, spikes.ndim))
        per_step = spikes.sum(axis=axes).astype(np.int64)
        self.stats.per_site[site.name] = {
            "kind": site.kind,
            "neurons": int(np.prod(spikes.shape[1:])),
            "spikes": int(per_step.sum()),
            "per_step": per_step.tolist(),
        }
        if site.kind != KIND_POOL:
            self.stats.layers += 1
        if self.stats.phi is not None:
            self.stats.phi[site.name] = site.theta * spikes.sum(axis=0) / self.t_win
        if self.stats.trains is not None:
            self.stats.trains[site.name] = spikes.copy()
        return spikes

    def neuron(self, site: NeuronSite, charges: SpikeTrain) -> SpikeTrain:
        return self._book(site, dif_run(charges, site.theta_fire, self.tau_d))


def run_snn(sm: SpikingModel, image: np.ndarray, tau_d: int,
            record_phi: bool = False, record_trains: bool = False):
    """Simulate one inference; returns (logits, SpikeStats)."""
    if int(tau_d) != tau_d or tau_d < 0:
        raise ConfigError(f"delay must be an integer >= 0, got {tau_d}")
    cfg = sm.config
    image = np.asarray(image, dtype=np.float64)
    if image.shape != cfg.image:
        raise ShapeError(f"image shape {image.shape} does not match config {cfg.image}")
    sim = _Sim(sm, int(tau_d), record_phi, record_trains)
    t_win = sm.time_window

    # tokenizer: the image drives the first conv as a constant current
    spikes = None
    theta_prev = 0.0
    for st in sm.tokenizer:
        if spikes is None:
            z = conv2d(image, st.conv)
            charges = np.broadcast_to(z, (t_win,) + z.shape)
        else:
            charges = np.stack([conv2d(theta_prev * spikes[t], st.conv)
                                for t in range(t_win)])
        spikes = sim.neuron(st.site, charges)
        if st.pool:
            spikes = sim._book(st.pool_site, tdec_maxpool(spikes, st.pool))
        theta_prev = st.site.theta

    d = cfg.embed_dim
    tokens = spikes.reshape(t_win, d, -1).transpose(0, 2, 1)  # (T, N, D)
    stream = theta_prev * tokens
    heads, dk = cfg.heads, cfg.head_dim
    n_tok = tokens.shape[1]

    def split(train):  # (T, N, D) -> (h, T, N, dk)
        return train.reshape(t_win, n_tok, heads, dk).transpose(2, 0, 1, 3)

    for blk in sm.blocks:
        a = blk.attn
        s_in = sim.neuron(a.site_in, stream)
        cur_in = a.site_in.theta * s_in
        s_q = sim.neuron(a.site_q, np.einsum("tne,ed->tnd", cur_in, a.wq) + a.bq)
        s_k = sim.neuron(a.site_k, np.einsum("tne,ed->tnd", cur_in, a.wk) + a.bk)
        s_v = sim.neuron(a.site_v, np.einsum("tne,ed->tnd", cur_in, a.wv) + a.bv)

        qh, kh, vh = split(s_q), split(s_k), split(s_v)
        w_qk = a.site_q.theta * a.site_k.theta
        score_charge = np.stack(
            [w_qk * tdec_matmul(qh[h], kh[h].transpose(0, 2, 1)) for h in range(heads)],
            axis=1,
        )  # (T, h, N, N)
        s_sc = sim.neuron(a.site_score, score_charge)

        w_sv = a.site_score.theta * a.site_v.theta
        out_heads = [w_sv * tdec_matmul(s_sc[:, h], vh[h]) for h in range(heads)]
        out_charge = np.stack(out_heads, axis=1)  # (T, h, N, dk)
        out_charge = out_charge.transpose(0, 2, 1, 3).reshape(t_win, n_tok, d)
        s_out = sim.neuron(a.site_out, out_charge)

        proj = np.einsum("tne,ed->tnd", a.site_out.theta * s_out, a.wo) + a.bo
        stream = stream + proj

        m = blk.mlp
        s_e = sim.neuron(m.site_in, stream)
        h1 = np.einsum("tne,eh->tnh", m.site_in.theta * s_e, m.w1) + m.b1
        s_f = sim.neuron(m.site_mid, h1)
        h2 = np.einsum("tnh,hd->tnd", m.site_mid.theta * s_f, m.w2) + m.b2
        stream = stream + h2

    pooled = stream.mean(axis=1)  # (T, D)
    logits_steps = pooled @ sm.head.weight + sm.head.bias
    logits = logits_steps.mean(axis=0)
    return logits, sim.stats
