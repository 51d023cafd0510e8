"""Glue between datasets, estimators and the metric protocols.

A *predictor* maps one scenario of a dataset to a (windows x links) speed
field. Anything exposing ``predict_windows(net, partition, mean_speeds)``
plugs in directly (the learned estimators, the linear model, and any
external regressor wrapped to that surface); the MFD baselines read the
record itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .baselines import LinearModel, fit_lr, region_mean_speeds
from .evaluate import (MetricReport, generate_trips, metrics,
                       travel_time_experiment)
from .model import LcfModel, TrainConfig, config_from_name, pad_history, train
from .network import MinMaxStats, RoadNetwork, extract_features, fit_minmax
from .scenarios import Dataset

log = logging.getLogger(__name__)

STANDARD_MODELS = ("MFD", "MFD-P", "LR", "DNN", "DNN-GRU", "GAT", "GAT-GRU",
                   "GAT-GRU-P")
NN_MODEL_NAMES = ("DNN", "DNN-GRU", "GAT", "GAT-GRU", "DNN-P", "DNN-GRU-P",
                  "GAT-P", "GAT-GRU-P")


def scenario_net(net: RoadNetwork, sc) -> RoadNetwork:
    return net.with_bus_lanes(sc.bus_links) if sc.bus_links else net


@dataclass
class LrSpeedEstimator:
    """Least-squares speeds from the 10 link attributes plus the padded
    mean-speed history; mirrors the learned estimators' predict surface."""

    model: LinearModel
    feat_stats: MinMaxStats
    vmean_lo: float
    vmean_hi: float
    use_partition: bool = False
    history_len: int = 5

    def _norm_vmean(self, v):
        span = self.vmean_hi - self.vmean_lo
        v = np.asarray(v, dtype=float)
        if span <= 0:
            return np.zeros_like(v)
        return (v - self.vmean_lo) / span

    def predict_windows(self, net, partition, vmean_kmh, windows=None):
        vmean_kmh = np.asarray(vmean_kmh, dtype=float)
        if windows is None:
            windows = range(len(vmean_kmh))
        feats = self.feat_stats.apply(extract_features(
            net, partition if self.use_partition else None))
        vn = self._norm_vmean(vmean_kmh)
        vff = np.array([lk.vff_kmh for lk in net.links])
        out = []
        for t in windows:
            hist = pad_history(vn, t, self.history_len)
            x = np.hstack([feats, np.tile(hist, (len(feats), 1))])
            out.append(np.clip(self.model.predict(x), 0.0, vff))
        return np.array(out)


def fit_lr_estimator(net: RoadNetwork, dataset: Dataset, partition,
                     use_partition: bool = False,
                     history_len: int = 5) -> LrSpeedEstimator:
    feat_rows, vmeans = [], []
    for sc in dataset.split_scenarios("train"):
        feat_rows.append(extract_features(
            scenario_net(net, sc), partition if use_partition else None))
        vmeans.append(dataset.records[sc.id].mean_speed)
    feat_stats = fit_minmax(np.vstack(feat_rows))
    all_v = np.concatenate(vmeans)
    vlo, vhi = float(all_v.min()), float(all_v.max())
    span = vhi - vlo

    xs, ys = [], []
    for sc in dataset.split_scenarios("train"):
        rec = dataset.records[sc.id]
        feats = feat_stats.apply(extract_features(
            scenario_net(net, sc), partition if use_partition else None))
        vn = (rec.mean_speed - vlo) / span if span > 0 else \
            np.zeros_like(rec.mean_speed)
        for t in range(rec.n_windows):
            hist = pad_history(vn, t, history_len)
            xs.append(np.hstack([feats, np.tile(hist, (len(feats), 1))]))
            ys.append(rec.speeds[t])
    model = fit_lr(np.vstack(xs), np.concatenate(ys))
    return LrSpeedEstimator(model=model, feat_stats=feat_stats, vmean_lo=vlo,
                            vmean_hi=vhi, use_partition=use_partition,
                            history_len=history_len)


def train_variant(net: RoadNetwork, dataset: Dataset, partition, name: str,
                  train_cfg: TrainConfig, **model_overrides,
                  ) -> tuple[LcfModel, list[dict[str, float]]]:
    cfg = config_from_name(name, **model_overrides)
    return train(net, dataset, partition, cfg, train_cfg)


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

def make_predictor(name: str, partition, nn_models: dict[str, LcfModel],
                   lr_model: LrSpeedEstimator | None = None,
                   mfd_p_weighting: str = "accumulation"):
    """Predictor callable (net_sc, record) -> (windows, links) speeds."""
    key = name.upper()
    if key == "TRUTH":
        return lambda net_sc, rec: rec.speeds.copy()
    if key == "MFD":
        return lambda net_sc, rec: np.tile(rec.mean_speed[:, None],
                                           (1, len(rec.link_ids)))
    if key == "MFD-P":
        if partition is None:
            raise ValueError("MFD-P needs a partition")

        def mfd_p(net_sc, rec):
            labels = np.array([partition[lid] for lid in rec.link_ids])
            return np.array([
                region_mean_speeds(rec.speeds[t], rec.accumulation[t], labels,
                                   partition.params.k, mfd_p_weighting)
                for t in range(rec.n_windows)])
        return mfd_p
    if key in ("LR", "LR-P"):
        if lr_model is None:
            raise ValueError("no linear model fitted")
        return lambda net_sc, rec: lr_model.predict_windows(
            net_sc, partition, rec.mean_speed)
    model = nn_models.get(key)
    if model is None:
        raise ValueError(f"no trained model available for {name!r}")
    return lambda net_sc, rec: model.predict_windows(net_sc, partition,
                                                     rec.mean_speed)


# ---------------------------------------------------------------------------
# metric protocols
# ---------------------------------------------------------------------------

def evaluate_speed_split(net: RoadNetwork, dataset: Dataset, partition,
                         model_names, nn_models, lr_model=None,
                         split: str = "test", scenario_class: str = "",
                         ) -> tuple[list[MetricReport], dict[str, np.ndarray]]:
    """Pooled speed-error metrics per model over every (scenario, window,
    link) sample of the split."""
    label = scenario_class or f"{split}-{dataset.demand_level}"
    reports, samples = [], {}
    for name in model_names:
        fn = make_predictor(name, partition, nn_models, lr_model)
        preds, truths = [], []
        for sc in dataset.split_scenarios(split):
            rec = dataset.records[sc.id]
            preds.append(fn(scenario_net(net, sc), rec).ravel())
            truths.append(rec.speeds.ravel())
        pred = np.concatenate(preds)
        truth = np.concatenate(truths)
        reports.append(metrics(pred, truth, model=name, scenario_class=label))
        samples[name] = pred - truth
    return reports, samples


def evaluate_travel_time_split(net: RoadNetwork, dataset: Dataset, partition,
                               model_names, nn_models, lr_model=None,
                               n_trips: int = 1000, seed: int = 0,
                               split: str = "test", scenario_class: str = "",
                               warmup_windows: int | None = None,
                               v_floor_kmh: float = 1.0,
                               ) -> tuple[list[MetricReport], dict[str, np.ndarray]]:
    """Trip-time metrics per model: n_trips spread over the split's
    scenarios, each routed on the model's estimated field at departure."""
    label = scenario_class or f"{split}-{dataset.demand_level}"
    scenarios = dataset.split_scenarios(split)
    if not scenarios:
        raise ValueError(f"split {split!r} is empty")
    per_scenario = max(1, n_trips // len(scenarios))
    trip_sets = {}
    for sc in scenarios:
        rec = dataset.records[sc.id]
        lo = warmup_windows if warmup_windows is not None \
            else max(1, rec.n_windows // 10)
        trip_sets[sc.id] = generate_trips(scenario_net(net, sc), per_scenario,
                                          seed=seed + sc.id,
                                          horizon=(lo, rec.n_windows - 1))
    reports, samples = [], {}
    for name in model_names:
        fn = make_predictor(name, partition, nn_models, lr_model)
        errs = []
        excluded = 0
        for sc in scenarios:
            rec = dataset.records[sc.id]
            sub = scenario_net(net, sc)
            pred = np.maximum(fn(sub, rec), v_floor_kmh)
            result = travel_time_experiment(sub, pred, rec.speeds,
                                            trip_sets[sc.id], rec.window_s,
                                            model=name, scenario_class=label)
            errs.append(result.errors)
            excluded += result.n_no_path
        if excluded:
            log.info("travel-time %s: %d no-path trips excluded", name, excluded)
        err = np.concatenate(errs)
        reports.append(metrics(err, np.zeros_like(err), model=name,
                               scenario_class=label, unit="s"))
        samples[name] = err
    return reports, samples
