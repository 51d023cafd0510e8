"""Command-line pipeline: gen-network, gen-dataset, simulate, partition,
train, evaluate, travel-time, report.

Options resolve in three layers: built-in defaults, then a flat
``key = value`` config file (--config), then explicit flags. Every command
writes only below --out, exits 0 on success, 1 on validation problems and
2 on runtime failures, and is reproducible given the same seed.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness
from .model import TrainConfig, config_from_name, load_model, save_model, train
from .network import (NetworkError, generate_grid_network, load_network,
                      save_network)
from .partition import (PartitionParams, load_partition, partition_network,
                        save_partition)
from .scenarios import (DEMAND_LEVELS, build_dataset, load_dataset, load_od,
                        random_base_od, save_dataset, save_od)
from .simulate import SimConfig, SimulationError, save_record, simulate
from .evaluate import export_report


def log_line(msg: str, **kv) -> None:
    tail = " ".join(f"{k}={v}" for k, v in kv.items())
    print(f"{msg} {tail}".rstrip(), file=sys.stderr)


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise ValidationError(message)


def _bool(v: str) -> bool:
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(v).split(",") if x)


# option registry per command: dest -> (flag, type, default, help)
OPTIONS: dict[str, dict[str, tuple[str, object, object, str]]] = {}


def _register(cmd: str, sub: argparse.ArgumentParser, specs) -> None:
    table = OPTIONS.setdefault(cmd, {})
    sub.add_argument("--config", default=None,
                     help="flat key = value option file; flags override it")
    for flag, typ, default, help_text in specs:
        dest = flag.lstrip("-").replace("-", "_")
        table[dest] = (flag, typ, default, help_text)
        sub.add_argument(flag, dest=dest, default=argparse.SUPPRESS, type=str,
                         help=f"{help_text} (default: {default})")


def _load_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _resolve(cmd: str, args: argparse.Namespace) -> argparse.Namespace:
    table = OPTIONS[cmd]
    file_values = _load_config_file(args.config) if args.config else {}
    for key in file_values:
        if key not in table:
            raise ValidationError(f"unknown config key {key!r} for {cmd}")
    merged = {}
    for dest, (_flag, typ, default, _help) in table.items():
        if hasattr(args, dest):                      # explicit flag
            raw = getattr(args, dest)
        elif dest in file_values:                    # config file
            raw = file_values[dest]
        else:
            merged[dest] = default
            continue
        try:
            merged[dest] = typ(raw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for --{dest.replace('_', '-')}: {exc}")
    return argparse.Namespace(**merged)


def build_parser() -> _Parser:
    parser = _Parser(prog="lcftraffic",
                     description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    sim_opts = [
        ("--step", float, 5.0, "simulation step seconds"),
        ("--window", float, 180.0, "aggregation window seconds"),
        ("--warmup", float, 900.0, "warm-up seconds"),
        ("--peak", float, 6300.0, "constant peak-demand seconds"),
        ("--total", float, 21600.0, "total simulated seconds"),
        ("--saturation-flow", float, 0.5, "saturation flow veh/s/lane"),
        ("--vehicle-length", float, 7.0, "storage spacing m/veh"),
        ("--congestion-threshold", float, 0.95,
         "occupancy fraction that blocks inflow"),
        ("--v-min", float, 1.0, "speed floor km/h"),
        ("--turn-update", float, 180.0, "turn-ratio refresh seconds"),
        ("--turn-smoothing", float, 0.5, "turn-ratio smoothing weight"),
    ]
    train_opts = [
        ("--model", str, "gat-gru-p", "estimator variant (dnn, dnn-gru, gat,"
                                      " gat-gru, plus -p suffix)"),
        ("--lr", float, 0.002, "initial learning rate"),
        ("--lr-step", int, 80, "learning-rate decay step size"),
        ("--lr-gamma", float, 0.85, "learning-rate decay factor"),
        ("--weight-decay", float, 0.01, "decoupled weight decay"),
        ("--epochs", int, 400, "training epochs"),
        ("--heads", int, 2, "attention heads"),
        ("--hidden", int, 128, "spatial/temporal embedding width"),
        ("--fc-dims", _int_list, (384, 256, 128, 64, 32),
         "hidden widths of the estimation head"),
        ("--history", int, 5, "mean-speed history length fed to the GRU"),
        ("--pad-value", float, -1.0, "sentinel for missing history entries"),
        ("--output-type", str, "Speed", "output format: Ratio, Diff or Speed"),
        ("--stride", int, 1, "window subsampling stride for training"),
        ("--batches-per-epoch", int, 0, "cap on batches per epoch (0 = all)"),
    ]
    part_opts = [
        ("--clusters", int, 4, "number of sub-regions (K)"),
        ("--alpha", float, 1.0, "location weight in the clustering space"),
        ("--beta", float, 1.5, "peak-speed weight in the clustering space"),
        ("--t-window", int, 2, "half-width (windows) of the peak interval"),
        ("--t-max", int, 40, "window index of maximum production"),
    ]

    def sub(name, help_text, specs):
        s = subs.add_parser(name, help=help_text)
        _register(name, s, [("--out", str, "out", "output directory"),
                            ("--seed", int, 0, "master seed")] + specs)
        return s

    sub("gen-network", "generate a grid road network", [
        ("--grid", str, "5x5", "grid size ROWSxCOLS"),
        ("--link-length", float, 100.0, "link length meters"),
        ("--lanes", int, 3, "lanes per link"),
        ("--vff", float, 25.0, "free-flow speed km/h"),
        ("--signals", _bool, True, "signalize every junction"),
        ("--cycle", float, 90.0, "signal cycle seconds"),
        ("--green-split", float, 0.5, "green share of the first phase"),
        ("--length-jitter", float, 0.0, "street length variation fraction"),
        ("--jitter-seed", int, 0, "seed for the length variation"),
    ])
    sub("gen-dataset", "simulate a randomized scenario corpus", [
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--od", str, "", "base OD file; generated when omitted"),
        ("--od-pairs", int, 10, "synthesized OD pair count"),
        ("--od-rate", float, 300.0, "synthesized per-pair demand veh/h"),
        ("--scenarios", int, 20, "number of scenarios"),
        ("--demand", str, "medium", "demand level: low, medium or high"),
        ("--bus-lanes", int, 0, "bus-lane links per scenario (0 = auto)"),
        ("--dataset-dir", str, "", "dataset directory (default <out>/dataset)"),
    ] + sim_opts)
    sub("simulate", "run one scenario to a record", [
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--od", str, "", "OD file (required)"),
        ("--scale", float, 1.0, "demand scale factor"),
        ("--record-dir", str, "", "record directory (default <out>/record)"),
    ] + sim_opts)
    sub("partition", "cluster links into sub-regions", [
        ("--dataset-dir", str, "", "dataset directory (default <out>/dataset)"),
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--partition-file", str, "",
         "output file (default <out>/partition.txt)"),
    ] + part_opts + sim_opts[:2])
    sub("train", "train an estimator variant", [
        ("--dataset-dir", str, "", "dataset directory (default <out>/dataset)"),
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--partition-file", str, "",
         "partition file (default <out>/partition.txt)"),
    ] + train_opts + sim_opts[:2])
    sub("evaluate", "per-link speed metrics for the model suite", [
        ("--dataset-dir", str, "", "dataset directory (default <out>/dataset)"),
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--partition-file", str, "",
         "partition file (default <out>/partition.txt)"),
        ("--models", str, ",".join(harness.STANDARD_MODELS),
         "comma-separated model list"),
        ("--split", str, "test", "dataset split to evaluate"),
        ("--scenario-class", str, "", "label for the report rows"),
    ] + train_opts + sim_opts[:2])
    sub("travel-time", "random-trip travel-time experiment", [
        ("--dataset-dir", str, "", "dataset directory (default <out>/dataset)"),
        ("--network", str, "", "network file (default <out>/network.txt)"),
        ("--partition-file", str, "",
         "partition file (default <out>/partition.txt)"),
        ("--models", str, ",".join(harness.STANDARD_MODELS),
         "comma-separated model list"),
        ("--split", str, "test", "dataset split to evaluate"),
        ("--trips", int, 1000, "number of random trips"),
        ("--scenario-class", str, "", "label for the report rows"),
    ] + train_opts + sim_opts[:2])
    sub("report", "merge emitted metric tables", [])
    return parser


# ---------------------------------------------------------------------------
# command helpers
# ---------------------------------------------------------------------------

def _sim_config(o) -> SimConfig:
    return SimConfig(step_s=o.step, window_s=o.window, warmup_s=o.warmup,
                     peak_s=o.peak, total_s=o.total,
                     saturation_flow=o.saturation_flow,
                     vehicle_length=o.vehicle_length,
                     congestion_threshold=o.congestion_threshold,
                     v_min_kmh=o.v_min, turn_update_s=o.turn_update,
                     turn_smoothing=o.turn_smoothing)


def _default(path: str, out: str, name: str) -> str:
    return path if path else os.path.join(out, name)


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise ValidationError(f"{what} not found: {path}")
    return path


def _window_cfg(o) -> SimConfig:
    return SimConfig(step_s=o.step, window_s=o.window)


def _train_cfg(o) -> TrainConfig:
    return TrainConfig(lr=o.lr, lr_step=o.lr_step, lr_gamma=o.lr_gamma,
                       weight_decay=o.weight_decay, epochs=o.epochs,
                       seed=o.seed, window_stride=o.stride,
                       batches_per_epoch=o.batches_per_epoch or None)


def _model_overrides(o) -> dict:
    return dict(heads=o.heads, hidden_dim=o.hidden, fc_hidden=o.fc_dims,
                history_len=o.history, output_type=o.output_type)


def _load_stack(o):
    net = load_network(_require(_default(o.network, o.out, "network.txt"),
                                "network file"))
    ds_dir = _require(_default(o.dataset_dir, o.out, "dataset"),
                      "dataset directory")
    dataset = load_dataset(ds_dir, cfg=_window_cfg(o))  # manifest wins
    part = load_partition(_require(
        _default(o.partition_file, o.out, "partition.txt"), "partition file"))
    return net, dataset, part


def _obtain_models(o, net, dataset, part, names) -> dict:
    """Load cached checkpoints, training (and caching) any missing variant."""
    models = {}
    os.makedirs(os.path.join(o.out, "models"), exist_ok=True)
    for name in names:
        key = name.upper()
        if key not in harness.NN_MODEL_NAMES:
            continue
        path = os.path.join(o.out, "models", f"{key.lower()}.ckpt")
        if os.path.exists(path):
            models[key] = load_model(path)
            log_line("loaded checkpoint", model=key.lower(), path=path)
        else:
            log_line("training missing variant", model=key.lower())
            model, history = harness.train_variant(
                net, dataset, part, key.lower(), _train_cfg(o),
                **_model_overrides(o))
            save_model(model, path)
            _write_history(history, os.path.join(
                o.out, "models", f"{key.lower()}_history.csv"))
            models[key] = model
    return models


def _write_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,lr,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{int(row['epoch'])},{row['lr']!r},"
                     f"{row['train_loss']!r},{row['val_loss']!r}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_network(o) -> int:
    try:
        rows, cols = (int(v) for v in o.grid.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--grid expects ROWSxCOLS, got {o.grid!r}")
    net = generate_grid_network(rows, cols, o.link_length, o.lanes,
                                vff_kmh=o.vff, with_signals=o.signals,
                                cycle_s=o.cycle, green_split=o.green_split,
                                length_jitter=o.length_jitter,
                                jitter_seed=o.jitter_seed)
    os.makedirs(o.out, exist_ok=True)
    path = os.path.join(o.out, "network.txt")
    save_network(net, path)
    log_line("network written", path=path, links=net.n_links,
             junctions=len(net.junctions))
    return 0


def cmd_gen_dataset(o) -> int:
    net = load_network(_require(_default(o.network, o.out, "network.txt"),
                                "network file"))
    cfg = _sim_config(o)
    if o.demand not in DEMAND_LEVELS:
        raise ValidationError(f"--demand must be one of {sorted(DEMAND_LEVELS)}")
    if o.od:
        base = load_od(_require(o.od, "OD file"))
    else:
        base = random_base_od(net, o.od_pairs, o.od_rate, seed=o.seed)
    os.makedirs(o.out, exist_ok=True)
    save_od(base, os.path.join(o.out, "od.txt"))
    ds = build_dataset(net, base, n=o.scenarios, master_seed=o.seed, cfg=cfg,
                       scale=DEMAND_LEVELS[o.demand],
                       bus_lane_count=o.bus_lanes or None,
                       demand_level=o.demand)
    ds_dir = _default(o.dataset_dir, o.out, "dataset")
    save_dataset(ds, ds_dir)
    log_line("dataset written", dir=ds_dir, scenarios=len(ds.scenarios),
             train=len(ds.splits["train"]), val=len(ds.splits["val"]),
             test=len(ds.splits["test"]), demand=o.demand)
    return 0


def cmd_simulate(o) -> int:
    from .scenarios import Scenario
    net = load_network(_require(_default(o.network, o.out, "network.txt"),
                                "network file"))
    if not o.od:
        raise ValidationError("simulate needs --od")
    od = load_od(_require(o.od, "OD file"))
    sc = Scenario(id=0, od=od, scale=o.scale, bus_links=(), seed=o.seed)
    record = simulate(net, sc, _sim_config(o))
    rec_dir = _default(o.record_dir, o.out, "record")
    save_record(record, rec_dir)
    log_line("record written", dir=rec_dir, windows=record.n_windows,
             completed=float(record.completed.sum()))
    return 0


def cmd_partition(o) -> int:
    net = load_network(_require(_default(o.network, o.out, "network.txt"),
                                "network file"))
    ds_dir = _require(_default(o.dataset_dir, o.out, "dataset"),
                      "dataset directory")
    dataset = load_dataset(ds_dir, cfg=_window_cfg(o))
    first_train = dataset.splits["train"][0]
    record = dataset.records[first_train]
    params = PartitionParams(k=o.clusters, alpha=o.alpha, beta=o.beta,
                             t_window=o.t_window, t_max=o.t_max, seed=o.seed)
    part = partition_network(net, record, params)
    path = _default(o.partition_file, o.out, "partition.txt")
    save_partition(part, path)
    log_line("partition written", path=path, k=o.clusters,
             sizes=",".join(str(s) for s in part.region_sizes()),
             source_scenario=first_train)
    return 0


def cmd_train(o) -> int:
    net, dataset, part = _load_stack(o)
    name = o.model.lower()
    cfg = config_from_name(name, **_model_overrides(o))
    model, history = train(net, dataset, part, cfg, _train_cfg(o))
    os.makedirs(os.path.join(o.out, "models"), exist_ok=True)
    path = os.path.join(o.out, "models", f"{name}.ckpt")
    save_model(model, path)
    _write_history(history, os.path.join(o.out, "models", f"{name}_history.csv"))
    log_line("model written", model=name, path=path,
             best_val=min(h["val_loss"] for h in history),
             epochs=len(history))
    return 0


def _parse_models(o) -> list[str]:
    names = [m.strip().upper() for m in o.models.split(",") if m.strip()]
    for name in names:
        if name not in ("TRUTH",) + harness.STANDARD_MODELS \
                and name not in harness.NN_MODEL_NAMES and name != "LR-P":
            raise ValidationError(f"unknown model {name!r}")
    return names


def cmd_evaluate(o) -> int:
    net, dataset, part = _load_stack(o)
    names = _parse_models(o)
    models = _obtain_models(o, net, dataset, part, names)
    lr_model = harness.fit_lr_estimator(net, dataset, part) \
        if any(n in ("LR", "LR-P") for n in names) else None
    reports, samples = harness.evaluate_speed_split(
        net, dataset, part, names, models, lr_model, split=o.split,
        scenario_class=o.scenario_class)
    out_dir = os.path.join(o.out, "reports", "speed")
    export_report(reports, out_dir, samples)
    for rep in reports:
        log_line("speed metrics", model=rep.model, split=o.split,
                 mae=round(rep.mae, 4), rmse=round(rep.rmse, 4))
    return 0


def cmd_travel_time(o) -> int:
    net, dataset, part = _load_stack(o)
    names = _parse_models(o)
    models = _obtain_models(o, net, dataset, part, names)
    lr_model = harness.fit_lr_estimator(net, dataset, part) \
        if any(n in ("LR", "LR-P") for n in names) else None
    reports, samples = harness.evaluate_travel_time_split(
        net, dataset, part, names, models, lr_model, n_trips=o.trips,
        seed=o.seed, split=o.split, scenario_class=o.scenario_class)
    out_dir = os.path.join(o.out, "reports", "travel_time")
    export_report(reports, out_dir, samples)
    for rep in reports:
        log_line("trip-time metrics", model=rep.model, split=o.split,
                 mae_s=round(rep.mae, 2), rmse_s=round(rep.rmse, 2))
    return 0


def cmd_report(o) -> int:
    reports_dir = os.path.join(o.out, "reports")
    sections = []
    for section in ("speed", "travel_time"):
        table = os.path.join(reports_dir, section, "report_table.csv")
        if os.path.exists(table):
            sections.append((section, table))
    if not sections:
        raise ValidationError(f"no report tables under {reports_dir}")
    merged = os.path.join(reports_dir, "report_table.csv")
    os.makedirs(reports_dir, exist_ok=True)
    with open(merged, "w") as out_fh:
        out_fh.write("section,model,scenario_class,metric,value\n")
        for section, table in sections:
            with open(table) as fh:
                next(fh)
                for line in fh:
                    out_fh.write(f"{section},{line}")
    log_line("report written", path=merged,
             sections=",".join(s for s, _ in sections))
    return 0


COMMANDS = {
    "gen-network": cmd_gen_network,
    "gen-dataset": cmd_gen_dataset,
    "simulate": cmd_simulate,
    "partition": cmd_partition,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "travel-time": cmd_travel_time,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = _resolve(args.command, args)
        return COMMANDS[args.command](opts)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NetworkError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
