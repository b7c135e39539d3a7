"""The four allocators: FC-DNN, SP-Conv-Att, Dist-Att and Dist-Att-Conv.

Every model maps normalized CSI to a channel head and a power head.
Centralized models emit one channel distribution per pair; distributed
models emit one per DUE and the two users of a pair are reconciled by
summing log-probabilities.

Parameter names carry their location: ``bs.*`` runs at the base station,
``user.*`` and ``due.*`` on the devices. Centralized models run entirely at
the BS.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .dataset import Dataset, NormStats, centralized_batch, compute_stats, flat_batch, normalize, per_user_batch
from .nn import (
    AttentionFuse, BatchNorm, Conv2d, Dense, DimensionGate, Dropout, ParameterStore, ReLU,
    ResidualBlock, Sequential, ShapeMismatch, adam_step, log_softmax, softmax_cross_entropy,
)
from .rates import Allocation

log = logging.getLogger(__name__)

MODEL_KINDS = ("fc-dnn", "sp-conv-att", "dist-att", "dist-att-conv")
CKPT_MAGIC = b"FDD2DCKP"
CKPT_VERSION = 1


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass(frozen=True)
class Hyperparams:
    hidden: int = 256
    blocks: int = 3
    f_b: int = 10
    f_d: int = 32
    lr: float = 1e-4
    batch: int = 1024
    epochs: int = 50
    filters: int = 8
    kernel: int = 2
    stride: int = 1
    pad: int = 0
    dropout: float = 0.2
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("dropout", "seed", "pad"):
                continue
            if not value > 0:
                raise ValueError(f"hyperparameter {f.name} must be positive, got {value}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in names:
                raise ValueError(f"unknown hyperparameter {k!r}")
            out[k] = float(v) if types[k] in ("float", float) else int(v)
        return cls(**out)


@dataclass(frozen=True)
class PredictionHeads:
    channel_logits: np.ndarray  # [N, K], pair level
    power_logits: np.ndarray  # [2N, L]


class Model:
    kind = ""
    distributed = False

    def __init__(self, config: ScenarioConfig, hp: Hyperparams):
        self.config, self.hp = config, hp
        self.store = ParameterStore()
        self._init_rng = np.random.default_rng(np.random.SeedSequence(hp.seed, spawn_key=(0,)))
        self._dropouts: list[Dropout] = []
        self.build()
        self.store.add("norm.mean", np.zeros(config.csi_shape), trainable=False)
        self.store.add("norm.std", np.ones(config.csi_shape), trainable=False)

    # -- construction helpers

    def _dropout(self) -> Dropout:
        d = Dropout(self.hp.dropout, np.random.SeedSequence(self.hp.seed, spawn_key=(1, len(self._dropouts))))
        self._dropouts.append(d)
        return d

    def _blocks(self, prefix, width) -> Sequential:
        blocks = []
        for r in range(self.hp.blocks):
            block = ResidualBlock(self.store, f"{prefix}.block{r}", width, self._init_rng,
                                  dropout=self.hp.dropout, momentum=self.hp.bn_momentum)
            block.drop = self._dropout()
            blocks.append(block)
        return Sequential(*blocks)

    def reseed_dropout(self, seed):
        for i, d in enumerate(self._dropouts):
            d.reseed(np.random.SeedSequence(seed, spawn_key=(1, i)))

    def build(self):
        raise NotImplementedError

    # -- normalization

    @property
    def stats(self) -> NormStats:
        return NormStats(self.store["norm.mean"].copy(), self.store["norm.std"].copy())

    def set_stats(self, stats: NormStats):
        self.store["norm.mean"][...] = stats.mean
        self.store["norm.std"][...] = stats.std

    # -- graph

    def prepare(self, x_norm):
        """Turn a normalized CSI batch [B, K, R, R] into this model's input view."""
        raise NotImplementedError

    def forward(self, inp, training=False):
        raise NotImplementedError

    def backward(self, d_channel, d_power):
        raise NotImplementedError

    def channel_targets(self, label_channel):
        return np.repeat(label_channel, 2, axis=1) if self.distributed else label_channel

    def loss(self, inp, label_channel, label_power, training=True, backward=True):
        """Total cross-entropy over channel and power heads; optionally backpropagates."""
        ch, pw = self.forward(inp, training)
        lc, gc = softmax_cross_entropy(ch, self.channel_targets(label_channel))
        lp, gp = softmax_cross_entropy(pw, label_power)
        if backward:
            self.backward(gc, gp)
        return lc + lp

    def predict(self, x_norm, batch=4096):
        """Pair-level channel logits [B, N, K] and power logits [B, 2N, L]."""
        chs, pws = [], []
        for s in range(0, x_norm.shape[0], batch):
            ch, pw = self.forward(self.prepare(x_norm[s:s + batch]), training=False)
            if self.distributed:
                ch = pair_channel_logits(ch)
            chs.append(ch)
            pws.append(pw)
        return np.concatenate(chs), np.concatenate(pws)

    def predict_csi(self, csi, batch=4096):
        return self.predict(normalize(csi, self.stats), batch)

    def heads(self, csi) -> PredictionHeads:
        ch, pw = self.predict_csi(csi[None])
        return PredictionHeads(ch[0], pw[0])


def pair_channel_logits(user_logits):
    """Sum of the two users' channel log-probabilities, [B, 2N, K] -> [B, N, K]."""
    lp = log_softmax(user_logits)
    return lp[:, 0::2] + lp[:, 1::2]


def decode_batch(channel_logits, power_logits):
    """Argmax decoding; ``np.argmax`` resolves ties to the lowest index."""
    return np.argmax(channel_logits, axis=-1), np.argmax(power_logits, axis=-1)


def decode(heads: PredictionHeads) -> Allocation:
    ch, pw = decode_batch(heads.channel_logits, heads.power_logits)
    return Allocation(ch, pw)


class FCDNN(Model):
    kind = "fc-dnn"

    def build(self):
        c, hp, st = self.config, self.hp, self.store
        n_in = c.K * c.n_nodes ** 2
        self.inp = Dense(st, "bs.fc.in", n_in, hp.hidden, self._init_rng)
        self.trunk = self._blocks("bs.fc", hp.hidden)
        self.head_c = Dense(st, "bs.fc.head_channel", hp.hidden, c.N * c.K, self._init_rng)
        self.head_p = Dense(st, "bs.fc.head_power", hp.hidden, 2 * c.N * c.L, self._init_rng)

    def prepare(self, x_norm):
        return flat_batch(x_norm)

    def forward(self, inp, training=False):
        c = self.config
        B = inp.shape[0]
        h = self.trunk.forward(self.inp.forward(inp, training), training)
        return (self.head_c.forward(h).reshape(B, c.N, c.K),
                self.head_p.forward(h).reshape(B, 2 * c.N, c.L))

    def backward(self, d_channel, d_power):
        B = d_channel.shape[0]
        g = self.head_c.backward(d_channel.reshape(B, -1)) + self.head_p.backward(d_power.reshape(B, -1))
        return self.inp.backward(self.trunk.backward(g))


class SPConvAtt(Model):
    """User-axis and channel-axis convolutions, dimension gate, residual trunk."""

    kind = "sp-conv-att"

    def build(self):
        c, hp, st = self.config, self.hp, self.store
        R, K, F = c.n_nodes, c.K, hp.filters
        kern = (hp.kernel, hp.kernel)
        # transmitters as input channels over a [rx, channel] plane
        self.conv_user = Conv2d(st, "bs.sp.conv_user", R, F, kern, hp.stride, hp.pad, self._init_rng)
        # channels as input channels over a [rx, tx] plane
        self.conv_channel = Conv2d(st, "bs.sp.conv_channel", K, F, kern, hp.stride, hp.pad, self._init_rng)
        self.user_out = self.conv_user.output_shape(R, K)
        self.channel_out = self.conv_channel.output_shape(R, R)
        self.relu_user, self.relu_channel = ReLU(), ReLU()
        n_flat = F * (int(np.prod(self.user_out)) + int(np.prod(self.channel_out)))
        self.dense = Dense(st, "bs.sp.dense", n_flat, hp.hidden, self._init_rng)
        self.gate = DimensionGate(st, "bs.sp.gate", hp.hidden, self._init_rng)
        self.trunk = self._blocks("bs.sp", hp.hidden)
        self.head_c = Dense(st, "bs.sp.head_channel", hp.hidden, c.N * c.K, self._init_rng)
        self.head_p = Dense(st, "bs.sp.head_power", hp.hidden, 2 * c.N * c.L, self._init_rng)

    def prepare(self, x_norm):
        return centralized_batch(x_norm)

    def forward(self, inp, training=False):
        c = self.config
        if inp.ndim != 4 or inp.shape[1:] != c.csi_shape:
            raise ShapeMismatch(f"expected [B, {c.K}, {c.n_nodes}, {c.n_nodes}], got {list(inp.shape)}")
        B = inp.shape[0]
        a = self.relu_user.forward(self.conv_user.forward(inp.transpose(0, 3, 2, 1), training))
        b = self.relu_channel.forward(self.conv_channel.forward(inp, training))
        self._split = a[0].size
        z = np.concatenate([a.reshape(B, -1), b.reshape(B, -1)], axis=1)
        h = self.gate.forward(self.dense.forward(z, training), training)
        h = self.trunk.forward(h, training)
        return (self.head_c.forward(h).reshape(B, c.N, c.K),
                self.head_p.forward(h).reshape(B, 2 * c.N, c.L))

    def backward(self, d_channel, d_power):
        B = d_channel.shape[0]
        F = self.hp.filters
        g = self.head_c.backward(d_channel.reshape(B, -1)) + self.head_p.backward(d_power.reshape(B, -1))
        g = self.dense.backward(self.gate.backward(self.trunk.backward(g)))
        ga = g[:, :self._split].reshape(B, F, *self.user_out)
        gb = g[:, self._split:].reshape(B, F, *self.channel_out)
        dx_user = self.conv_user.backward(self.relu_user.backward(ga)).transpose(0, 3, 2, 1)
        dx_channel = self.conv_channel.backward(self.relu_channel.backward(gb))
        return dx_user + dx_channel


class DistAtt(Model):
    """Local encoders, attention fusion at the BS, per-DUE allocation networks.

    Encoder and DUE networks are shared across users, as every device runs
    the same model; user identity reaches the DUE network through its own
    slice of the BS return message.
    """

    kind = "dist-att"
    distributed = True

    def build(self):
        c, hp, st = self.config, self.hp, self.store
        R, K = c.n_nodes, c.K
        self.encoder = Sequential(
            Dense(st, "user.enc.in", R * K, hp.hidden, self._init_rng, bias=False),
            BatchNorm(st, "user.enc.norm", hp.hidden, momentum=hp.bn_momentum),
            ReLU(),
            self._dropout(),
            Dense(st, "user.enc.out", hp.hidden, hp.f_b, self._init_rng),
        )
        self.attention = AttentionFuse(st, "bs.att", R, hp.f_b, self._init_rng)
        self.build_bs()
        self.due_in = Dense(st, "due.in", R * K + hp.f_d, hp.hidden, self._init_rng)
        self.trunk = self._blocks("due", hp.hidden)
        self.head_c = Dense(st, "due.head_channel", hp.hidden, K, self._init_rng)
        self.head_p = Dense(st, "due.head_power", hp.hidden, c.L, self._init_rng)

    def build_bs(self):
        self.ret = Dense(self.store, "bs.ret", self.hp.f_b, 2 * self.config.N * self.hp.f_d, self._init_rng)

    def bs_forward(self, ub, uatt, training):
        return self.ret.forward(uatt, training)

    def bs_backward(self, g):
        """Return (grad w.r.t. user vectors, grad w.r.t. fused vector)."""
        return None, self.ret.backward(g)

    def prepare(self, x_norm):
        return per_user_batch(x_norm)

    def encode(self, inp, training=False):
        """Per-user feature vectors U_B, [B, 2N+1, F_B]."""
        B, R = inp.shape[:2]
        return self.encoder.forward(inp.reshape(B * R, -1), training).reshape(B, R, self.hp.f_b)

    def forward(self, inp, training=False):
        c, hp = self.config, self.hp
        R, K, n = c.n_nodes, c.K, 2 * c.N
        if inp.ndim != 4 or inp.shape[1:] != (R, R, K):
            raise ShapeMismatch(f"expected [B, {R}, {R}, {K}], got {list(inp.shape)}")
        B = inp.shape[0]
        ub = self.encode(inp, training)
        uatt = self.attention.forward(ub, training)
        ret = self.bs_forward(ub, uatt, training).reshape(B * n, hp.f_d)
        local = inp[:, :n].reshape(B * n, R * K)
        h = self.trunk.forward(self.due_in.forward(np.concatenate([local, ret], axis=1), training), training)
        return (self.head_c.forward(h).reshape(B, n, K),
                self.head_p.forward(h).reshape(B, n, c.L))

    def backward(self, d_channel, d_power):
        c, hp = self.config, self.hp
        R, K, n = c.n_nodes, c.K, 2 * c.N
        B = d_channel.shape[0]
        g = self.head_c.backward(d_channel.reshape(B * n, K)) + self.head_p.backward(d_power.reshape(B * n, c.L))
        g = self.due_in.backward(self.trunk.backward(g))
        d_local = g[:, :R * K].reshape(B, n, R, K)
        g_ub, g_att = self.bs_backward(g[:, R * K:].reshape(B, n * hp.f_d))
        g_att_ub = self.attention.backward(g_att)
        g_ub = g_att_ub if g_ub is None else g_ub + g_att_ub
        dx = self.encoder.backward(g_ub.reshape(B * R, hp.f_b)).reshape(B, R, R, K)
        dx[:, :n] += d_local
        return dx


class DistAttConv(DistAtt):
    """Dist-Att whose BS convolves the stacked [U_B; U_Att] matrix."""

    kind = "dist-att-conv"

    def build_bs(self):
        c, hp, st = self.config, self.hp, self.store
        kern = (hp.kernel, hp.kernel)
        self.bs_conv = Conv2d(st, "bs.conv", 1, hp.filters, kern, hp.stride, hp.pad, self._init_rng)
        self.bs_conv_out = self.bs_conv.output_shape(c.n_nodes + 1, hp.f_b)
        self.bs_relu = ReLU()
        n_flat = hp.filters * int(np.prod(self.bs_conv_out))
        self.ret = Dense(st, "bs.ret", n_flat, 2 * c.N * hp.f_d, self._init_rng)

    def bs_forward(self, ub, uatt, training):
        stack = np.concatenate([ub, uatt[:, None, :]], axis=1)[:, None]  # [B, 1, 2N+2, F_B]
        h = self.bs_relu.forward(self.bs_conv.forward(stack, training))
        return self.ret.forward(h.reshape(h.shape[0], -1), training)

    def bs_backward(self, g):
        B = g.shape[0]
        g = self.ret.backward(g).reshape(B, self.hp.filters, *self.bs_conv_out)
        g_stack = self.bs_conv.backward(self.bs_relu.backward(g))[:, 0]
        return g_stack[:, :-1], g_stack[:, -1]


_KINDS = {cls.kind: cls for cls in (FCDNN, SPConvAtt, DistAtt, DistAttConv)}


def build_model(kind: str, config: ScenarioConfig, hp: Hyperparams | None = None) -> Model:
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    return _KINDS[kind](config, hp or Hyperparams())


def count_parameters(model: Model) -> dict:
    total = model.store.count()
    bs = model.store.count("bs.")
    return {"total": total, "bs": bs, "user": total - bs}


# ---------------------------------------------------------------- training


def accuracy_from_predictions(ch_pred, pw_pred, label_channel, label_power):
    return float(np.mean(ch_pred == label_channel)), float(np.mean(pw_pred == label_power))


def predicted_labels(model: Model, x_norm):
    return decode_batch(*model.predict(x_norm))


def train(kind: str, train_ds: Dataset, dev_ds: Dataset | None, hp: Hyperparams, progress=None):
    """Fit ``kind`` on ``train_ds``; returns (model at best DEV epoch, per-epoch history)."""
    model = build_model(kind, train_ds.config, hp)
    stats = train_ds.stats if train_ds.stats is not None else compute_stats(train_ds.csi)
    model.set_stats(stats)
    X = model.prepare(normalize(train_ds.csi, stats))
    yc = train_ds.label_channel.astype(np.int64)
    yp = train_ds.label_power.astype(np.int64)
    x_dev = normalize(dev_ds.csi, stats) if dev_ds is not None else None
    rng = np.random.default_rng(np.random.SeedSequence(hp.seed, spawn_key=(2,)))
    history = []
    best_score, best_values, best_epoch = -np.inf, None, 0
    S = len(train_ds)
    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(S)
        losses = []
        for bi, start in enumerate(range(0, S, hp.batch)):
            idx = perm[start:start + hp.batch]
            if len(idx) < 2:
                continue
            model.store.zero_grad()
            loss = model.loss(X[idx], yc[idx], yp[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, bi)
            adam_step(model.store, hp.lr)
            losses.append(loss)
        record = {"epoch": epoch, "loss": float(np.mean(losses))}
        if x_dev is not None:
            ch, pw = predicted_labels(model, x_dev)
            dc, dp = accuracy_from_predictions(ch, pw, dev_ds.label_channel, dev_ds.label_power)
            record.update(dev_channel_acc=dc, dev_power_acc=dp)
            score = dc + dp
        else:
            score = float(epoch)
        if score > best_score:
            best_score, best_values, best_epoch = score, model.store.snapshot(), epoch
        history.append(record)
        log.info("%s epoch %d: %s", kind, epoch, record)
        if progress:
            progress(record)
    model.store.restore(best_values)
    model.best_epoch = best_epoch
    return model, history


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(model: Model, meta: dict | None = None) -> bytes:
    header = {
        "kind": model.kind,
        "hyperparams": model.hp.to_dict(),
        "config": model.config.to_dict(),
        **(meta or {}),
    }
    raw = json.dumps(header, sort_keys=True).encode()
    body = CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(raw)) + raw + model.store.to_bytes()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path, meta: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(model, meta))


def load_checkpoint(path) -> tuple[Model, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    buf = path.read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ValueError(f"{path}: checkpoint crc32 mismatch")
    version, n = struct.unpack_from("<HI", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(buf[14:14 + n].decode())
    store = ParameterStore.from_bytes(buf[14 + n:-4])
    config = ScenarioConfig.from_dict(meta["config"])
    model = build_model(meta["kind"], config, Hyperparams.from_dict(meta["hyperparams"]))
    if store.names() != model.store.names():
        raise ValueError(f"{path}: parameter names do not match a {meta['kind']} model")
    for name in store.names():
        model.store.entry(name).value[...] = store[name]
        model.store.entry(name).m[...] = store.entry(name).m
        model.store.entry(name).v[...] = store.entry(name).v
    model.store.step = store.step
    return model, meta
