"""Per-link speed estimator: attention over the link graph for the spatial
embedding, a GRU over the recent network-mean-speed history for the
temporal embedding, and a fully connected head that fuses both into one
value per link.

Three output formats are supported and decoded against the network mean
speed V: "Ratio" (estimate = raw * V), "Diff" (raw + V) and "Speed"
(raw used directly). Ablation switches turn the attention branch into a
plain dense projection and/or drop the recurrent branch, which yields the
DNN / DNN-GRU / GAT baseline family; a partition assignment fills the
sub-region feature column for the "-P" variants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .network import (MinMaxStats, N_FEATURES, RoadNetwork, build_link_graph,
                      extract_features, fit_minmax)
from .nn import Tensor

log = logging.getLogger(__name__)

OUTPUT_TYPES = ("Ratio", "Diff", "Speed")
PAD_VALUE = -1.0
FC_HIDDEN = (384, 256, 128, 64, 32)


@dataclass(frozen=True)
class ModelConfig:
    use_gat: bool = True
    use_gru: bool = True
    use_partition: bool = True
    heads: int = 2
    hidden_dim: int = 128
    fc_hidden: tuple[int, ...] = FC_HIDDEN
    history_len: int = 5
    leaky_slope: float = 0.2
    output_type: str = "Speed"
    seed: int = 0

    @property
    def fc_input_dim(self) -> int:
        # the recurrent branch contributes a full embedding; without it the
        # current normalized mean speed enters as a single extra input
        return self.hidden_dim * 2 if self.use_gru else self.hidden_dim + 1

    @property
    def name(self) -> str:
        base = ("gat" if self.use_gat else "dnn") + ("-gru" if self.use_gru else "")
        return base + ("-p" if self.use_partition else "")


def config_from_name(name: str, **overrides) -> ModelConfig:
    """Parse names like 'gat-gru-p', 'dnn', 'dnn-gru' into a ModelConfig."""
    tokens = name.lower().split("-")
    use_partition = tokens[-1] == "p"
    if use_partition:
        tokens = tokens[:-1]
    if not tokens or tokens[0] not in ("gat", "dnn"):
        raise ValueError(f"unknown model name {name!r}")
    use_gat = tokens[0] == "gat"
    use_gru = len(tokens) > 1 and tokens[1] == "gru"
    if len(tokens) > 2 or (len(tokens) == 2 and tokens[1] != "gru"):
        raise ValueError(f"unknown model name {name!r}")
    return ModelConfig(use_gat=use_gat, use_gru=use_gru,
                       use_partition=use_partition, **overrides)


@dataclass
class Normalization:
    feat: MinMaxStats
    vmean_lo: float
    vmean_hi: float
    target_lo: float
    target_hi: float

    def norm_vmean(self, v: np.ndarray) -> np.ndarray:
        span = self.vmean_hi - self.vmean_lo
        if span <= 0:
            return np.zeros_like(np.asarray(v, dtype=float))
        return (np.asarray(v, dtype=float) - self.vmean_lo) / span

    def norm_target(self, y: np.ndarray) -> np.ndarray:
        span = self.target_hi - self.target_lo
        if span <= 0:
            return np.zeros_like(y)
        return (y - self.target_lo) / span

    def denorm_target(self, y: np.ndarray) -> np.ndarray:
        return y * (self.target_hi - self.target_lo) + self.target_lo


def encode_targets(speeds: np.ndarray, v_mean: float, output_type: str) -> np.ndarray:
    if output_type == "Ratio":
        if v_mean <= 0:
            raise ValueError("network mean speed must be > 0 for Ratio targets")
        return speeds / v_mean
    if output_type == "Diff":
        return speeds - v_mean
    if output_type == "Speed":
        return speeds.copy()
    raise ValueError(f"unknown output type {output_type!r}")


def decode_output(raw: np.ndarray, v_mean: float, output_type: str,
                  vff_kmh: np.ndarray) -> np.ndarray:
    """Map de-normalized raw outputs to km/h, clamped to [0, v_ff]."""
    if output_type == "Ratio":
        speeds = raw * v_mean
    elif output_type == "Diff":
        speeds = raw + v_mean
    elif output_type == "Speed":
        speeds = raw
    else:
        raise ValueError(f"unknown output type {output_type!r}")
    return np.clip(speeds, 0.0, vff_kmh)


def pad_history(vmean_norm: np.ndarray, t: int, history_len: int) -> np.ndarray:
    """History [t - history_len + 1 .. t], front-padded with the sentinel."""
    lo = max(t - history_len + 1, 0)
    window = vmean_norm[lo:t + 1]
    pad = history_len - len(window)
    return np.concatenate([np.full(pad, PAD_VALUE), window])


class LcfModel:
    """Parameter container plus forward pass."""

    def __init__(self, config: ModelConfig, norm: Normalization | None = None):
        self.config = config
        self.norm = norm
        rng = np.random.default_rng(config.seed)
        h = config.hidden_dim
        self._names: list[str] = []
        self.params: dict[str, Tensor] = {}

        def make(name: str, shape, zero=False):
            t = Tensor(np.zeros(shape), requires_grad=True) if zero \
                else nn.glorot(rng, shape)
            self.params[name] = t
            self._names.append(name)
            return t

        if config.use_gat:
            for k in range(config.heads):
                make(f"gat.h{k}.W", (N_FEATURES, h))
                make(f"gat.h{k}.a_src", (h, 1))
                make(f"gat.h{k}.a_dst", (h, 1))
        else:
            make("dnn.W", (N_FEATURES, h))
            make("dnn.b", (1, h), zero=True)
        if config.use_gru:
            for gate in ("z", "r", "c"):
                make(f"gru.W{gate}", (h + 1, h))
                make(f"gru.b{gate}", (1, h), zero=True)
        dims = (config.fc_input_dim,) + config.fc_hidden + (1,)
        for i in range(len(dims) - 1):
            make(f"fc.{i}.W", (dims[i], dims[i + 1]))
            make(f"fc.{i}.b", (1, dims[i + 1]), zero=True)

    def parameters(self) -> list[Tensor]:
        return [self.params[n] for n in self._names]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(n, self.params[n].data) for n in self._names]

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n in self._names:
            self.params[n].data = arrays[n].astype(np.float64).copy()

    # forward pieces -------------------------------------------------------

    def spatial_embed(self, feats: Tensor, adj_mask: np.ndarray) -> Tensor:
        cfg = self.config
        if not cfg.use_gat:
            return nn.relu(nn.add(nn.matmul(feats, self.params["dnn.W"]),
                                  self.params["dnn.b"]))
        neg = nn.constant(np.where(adj_mask, 0.0, -1e30))
        heads = []
        for k in range(cfg.heads):
            wh = nn.matmul(feats, self.params[f"gat.h{k}.W"])
            s_src = nn.matmul(wh, self.params[f"gat.h{k}.a_src"])
            s_dst = nn.matmul(wh, self.params[f"gat.h{k}.a_dst"])
            scores = nn.leaky_relu(nn.add(s_src, nn.transpose(s_dst)),
                                   cfg.leaky_slope)
            att = nn.softmax_rowwise(nn.add(scores, neg))
            heads.append(nn.relu(nn.matmul(att, wh)))
        out = heads[0]
        for extra in heads[1:]:
            out = nn.add(out, extra)
        return nn.scale(out, 1.0 / cfg.heads)

    def attention_matrix(self, feats_norm: np.ndarray, adj_mask: np.ndarray,
                         head: int = 0) -> np.ndarray:
        """Attention coefficients of one head (diagnostics and tests)."""
        feats = nn.constant(feats_norm)
        wh = nn.matmul(feats, self.params[f"gat.h{head}.W"])
        s_src = nn.matmul(wh, self.params[f"gat.h{head}.a_src"])
        s_dst = nn.matmul(wh, self.params[f"gat.h{head}.a_dst"])
        scores = nn.leaky_relu(nn.add(s_src, nn.transpose(s_dst)),
                               self.config.leaky_slope)
        att = nn.softmax_rowwise(nn.add(scores, nn.constant(
            np.where(adj_mask, 0.0, -1e30))))
        return att.data

    def temporal_embed(self, hist_norm: np.ndarray) -> Tensor:
        """GRU over (B, history_len) normalized mean-speed sequences."""
        cfg = self.config
        if hist_norm.shape[1] != cfg.history_len:
            raise ValueError(
                f"history length {hist_norm.shape[1]} != {cfg.history_len}")
        b = hist_norm.shape[0]
        h = nn.constant(np.zeros((b, cfg.hidden_dim)))
        one = nn.constant(np.float64(1.0))
        for t in range(cfg.history_len):
            x_t = nn.constant(hist_norm[:, t:t + 1])
            cat = nn.concat([h, x_t], axis=1)
            z = nn.sigmoid(nn.add(nn.matmul(cat, self.params["gru.Wz"]),
                                  self.params["gru.bz"]))
            r = nn.sigmoid(nn.add(nn.matmul(cat, self.params["gru.Wr"]),
                                  self.params["gru.br"]))
            cat_r = nn.concat([nn.mul(r, h), x_t], axis=1)
            h_cand = nn.tanh(nn.add(nn.matmul(cat_r, self.params["gru.Wc"]),
                                    self.params["gru.bc"]))
            keep = nn.add(one, nn.scale(z, -1.0))
            h = nn.add(nn.mul(keep, h), nn.mul(z, h_cand))
        return h

    def fuse(self, spatial: Tensor, temporal: Tensor, batch: int) -> Tensor:
        n = spatial.data.shape[0]
        x = nn.concat([nn.tile_rows(spatial, batch),
                       nn.repeat_rows(temporal, n)], axis=1)
        n_layers = len(self.config.fc_hidden) + 1
        for i in range(n_layers):
            x = nn.add(nn.matmul(x, self.params[f"fc.{i}.W"]),
                       self.params[f"fc.{i}.b"])
            if i < n_layers - 1:
                x = nn.relu(x)
        return x

    def forward(self, feats_norm: np.ndarray, adj_mask: np.ndarray,
                hist_norm: np.ndarray, vmean_norm: np.ndarray) -> Tensor:
        """Raw normalized outputs, shape (batch * n_links, 1), window-major."""
        spatial = self.spatial_embed(nn.constant(feats_norm), adj_mask)
        batch = hist_norm.shape[0]
        if self.config.use_gru:
            temporal = self.temporal_embed(hist_norm)
        else:
            temporal = nn.constant(np.asarray(vmean_norm, dtype=float).reshape(-1, 1))
        return self.fuse(spatial, temporal, batch)

    # prediction -----------------------------------------------------------

    def predict_windows(self, net: RoadNetwork, partition,
                        vmean_kmh: np.ndarray, windows=None) -> np.ndarray:
        """Decoded per-link speeds (km/h) for the given windows of a
        mean-speed series."""
        if self.norm is None:
            raise ValueError("model has no normalization statistics; train first")
        cfg = self.config
        vmean_kmh = np.asarray(vmean_kmh, dtype=float)
        if windows is None:
            windows = range(len(vmean_kmh))
        windows = list(windows)
        feats = extract_features(net, partition if cfg.use_partition else None)
        feats_norm = self.norm.feat.apply(feats)
        adj = build_link_graph(net).adjacency
        vn = self.norm.norm_vmean(vmean_kmh)
        hist = np.stack([pad_history(vn, t, cfg.history_len) for t in windows])
        raw = self.forward(feats_norm, adj, hist, vn[windows]).data
        raw = raw.reshape(len(windows), net.n_links)
        vff = np.array([lk.vff_kmh for lk in net.links])
        out = np.zeros_like(raw)
        for i, t in enumerate(windows):
            denorm = self.norm.denorm_target(raw[i])
            out[i] = decode_output(denorm, float(vmean_kmh[t]),
                                   cfg.output_type, vff)
        return out

    def predict(self, net: RoadNetwork, partition, vmean_history_kmh,
                t: int) -> np.ndarray:
        """Speeds at window t given the mean-speed series up to t."""
        series = np.asarray(vmean_history_kmh, dtype=float)
        if t >= len(series):
            raise ValueError("t is beyond the given mean-speed history")
        return self.predict_windows(net, partition, series, windows=[t])[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    lr_step: int = 80
    lr_gamma: float = 0.85
    weight_decay: float = 0.01
    epochs: int = 400
    seed: int = 0
    window_stride: int = 1
    batches_per_epoch: int | None = None


@dataclass
class SampleBatch:
    """All training windows of one scenario share features and adjacency."""

    feats_norm: np.ndarray
    adj: np.ndarray
    hist: np.ndarray        # (B, history_len)
    vmean_norm: np.ndarray  # (B,)
    targets: np.ndarray     # (B * n_links, 1) normalized


def _scenario_inputs(net, sc, partition, use_partition):
    sub_net = net.with_bus_lanes(sc.bus_links) if sc.bus_links else net
    feats = extract_features(sub_net, partition if use_partition else None)
    return sub_net, feats


def build_batches(net: RoadNetwork, dataset, partition, split: str,
                  model_cfg: ModelConfig, norm: Normalization,
                  stride: int = 1) -> list[SampleBatch]:
    batches = []
    adj = build_link_graph(net).adjacency
    for sc in dataset.split_scenarios(split):
        record = dataset.records[sc.id]
        _, feats = _scenario_inputs(net, sc, partition, model_cfg.use_partition)
        feats_norm = norm.feat.apply(feats)
        vn = norm.norm_vmean(record.mean_speed)
        windows = list(range(0, record.n_windows, stride))
        hist = np.stack([pad_history(vn, t, model_cfg.history_len)
                         for t in windows])
        target_rows = []
        for t in windows:
            y = encode_targets(record.speeds[t], float(record.mean_speed[t]),
                               model_cfg.output_type)
            target_rows.append(norm.norm_target(y))
        targets = np.concatenate(target_rows).reshape(-1, 1)
        batches.append(SampleBatch(feats_norm, adj, hist,
                                   vn[windows], targets))
    return batches


def fit_normalization(net: RoadNetwork, dataset, partition,
                      model_cfg: ModelConfig) -> Normalization:
    """Min-max statistics frozen on the training split."""
    feat_rows = []
    vmeans = []
    targets = []
    for sc in dataset.split_scenarios("train"):
        record = dataset.records[sc.id]
        _, feats = _scenario_inputs(net, sc, partition, model_cfg.use_partition)
        feat_rows.append(feats)
        vmeans.append(record.mean_speed)
        for t in range(record.n_windows):
            targets.append(encode_targets(record.speeds[t],
                                          float(record.mean_speed[t]),
                                          model_cfg.output_type))
    all_v = np.concatenate(vmeans)
    all_t = np.concatenate(targets)
    return Normalization(
        feat=fit_minmax(np.vstack(feat_rows)),
        vmean_lo=float(all_v.min()), vmean_hi=float(all_v.max()),
        target_lo=float(all_t.min()), target_hi=float(all_t.max()),
    )


def _batch_loss(model: LcfModel, batch: SampleBatch) -> Tensor:
    pred = model.forward(batch.feats_norm, batch.adj, batch.hist,
                         batch.vmean_norm)
    return nn.mse_loss(pred, nn.constant(batch.targets))


def train(net: RoadNetwork, dataset, partition, model_cfg: ModelConfig,
          train_cfg: TrainConfig | None = None,
          ) -> tuple[LcfModel, list[dict[str, float]]]:
    """Minimize MSE on normalized targets with AdamW + staircase LR decay;
    returns the best-validation checkpoint and the loss history."""
    tc = train_cfg or TrainConfig()
    norm = fit_normalization(net, dataset, partition, model_cfg)
    model = LcfModel(replace(model_cfg, seed=tc.seed), norm)
    train_batches = build_batches(net, dataset, partition, "train", model_cfg,
                                  norm, stride=tc.window_stride)
    val_batches = build_batches(net, dataset, partition, "val", model_cfg,
                                norm, stride=tc.window_stride)
    if not train_batches or not val_batches:
        raise ValueError("dataset must provide non-empty train and val splits")

    params = model.parameters()
    opt = nn.AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay)
    rng = np.random.default_rng(tc.seed)
    history: list[dict[str, float]] = []
    best_val = np.inf
    best_state = {n: t.data.copy() for n, t in model.params.items()}

    for epoch in range(tc.epochs):
        opt.lr = nn.steplr(tc.lr, tc.lr_step, tc.lr_gamma, epoch)
        order = rng.permutation(len(train_batches))
        if tc.batches_per_epoch is not None:
            order = order[:tc.batches_per_epoch]
        epoch_loss = 0.0
        for bi in order:
            nn.zero_grads(params)
            loss = _batch_loss(model, train_batches[bi])
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"training diverged at epoch {epoch} (loss={loss.data})")
            nn.backward(loss)
            opt.step()
            epoch_loss += loss.item()
        val_loss = float(np.mean([_batch_loss(model, b).item()
                                  for b in val_batches]))
        history.append({"epoch": epoch, "lr": opt.lr,
                        "train_loss": epoch_loss / max(len(order), 1),
                        "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_state = {n: t.data.copy() for n, t in model.params.items()}

    model.load_state(best_state)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(model: LcfModel, path) -> None:
    cfg, norm = model.config, model.norm
    header = {
        "use_gat": str(int(cfg.use_gat)),
        "use_gru": str(int(cfg.use_gru)),
        "use_partition": str(int(cfg.use_partition)),
        "heads": str(cfg.heads),
        "hidden_dim": str(cfg.hidden_dim),
        "fc_hidden": ",".join(str(d) for d in cfg.fc_hidden),
        "history_len": str(cfg.history_len),
        "leaky_slope": repr(cfg.leaky_slope),
        "output_type": cfg.output_type,
        "seed": str(cfg.seed),
        "feat_lo": ",".join(repr(float(v)) for v in norm.feat.lo),
        "feat_hi": ",".join(repr(float(v)) for v in norm.feat.hi),
        "vmean_lo": repr(norm.vmean_lo),
        "vmean_hi": repr(norm.vmean_hi),
        "target_lo": repr(norm.target_lo),
        "target_hi": repr(norm.target_hi),
    }
    nn.save_arrays(path, header, model.state_arrays())


def load_model(path) -> LcfModel:
    header, arrays = nn.load_arrays(path)
    cfg = ModelConfig(
        use_gat=bool(int(header["use_gat"])),
        use_gru=bool(int(header["use_gru"])),
        use_partition=bool(int(header["use_partition"])),
        heads=int(header["heads"]),
        hidden_dim=int(header["hidden_dim"]),
        fc_hidden=tuple(int(d) for d in header["fc_hidden"].split(",")),
        history_len=int(header["history_len"]),
        leaky_slope=float(header["leaky_slope"]),
        output_type=header["output_type"],
        seed=int(header["seed"]),
    )
    norm = Normalization(
        feat=MinMaxStats(
            lo=np.array([float(v) for v in header["feat_lo"].split(",")]),
            hi=np.array([float(v) for v in header["feat_hi"].split(",")]),
        ),
        vmean_lo=float(header["vmean_lo"]), vmean_hi=float(header["vmean_hi"]),
        target_lo=float(header["target_lo"]), target_hi=float(header["target_hi"]),
    )
    model = LcfModel(cfg, norm)
    model.load_state(arrays)
    return model
