"""Command-line sweeps producing CSV artifacts.

Every CSV starts with a ``# version:`` line and a ``# config:`` line holding
the resolved arguments (output directory excluded), followed by sorted rows.
Exit codes: 0 success, 2 invalid arguments, 3 range-membership failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from gossipdp import __version__
from gossipdp import accountant as acc
from gossipdp import graph as gr
from gossipdp import mixing as mx
from gossipdp import sensitivity as sens
from gossipdp import simulator as sim
from gossipdp.config import parse_key_value
from gossipdp.errors import GossipDPError, RangeError

log = logging.getLogger("gossipdp")

EXIT_USAGE = 2
EXIT_RANGE = 3

_EXCLUDED_FROM_CONFIG = {"out", "config", "func"}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _horizons(text: str) -> list[int]:
    Ts = _int_list(text)
    if not Ts:
        raise argparse.ArgumentTypeError("empty T list")
    if min(Ts) < 1 or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise argparse.ArgumentTypeError(f"T list must be positive and strictly increasing, got {text!r}")
    return Ts


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _probability(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"p must lie in [0, 1], got {text}")
    return p


def _add_graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--p", type=_probability, default=0.2)
    p.add_argument("--edges", metavar="FILE", help="SNAP edge list; overrides --n/--p")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", choices=["max-degree", "neighborhood-average"], default="max-degree")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", metavar="DIR")
    p.add_argument("--config", metavar="FILE", help="key=value defaults; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gossipdp", description="Network DP accounting for gossip averaging.")
    parser.add_argument("--version", action="version", version=f"gossipdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph-gen", help="write an edge list CSV")
    _add_graph_args(g)
    _add_common(g)
    g.set_defaults(func=cmd_graph_gen)

    s = sub.add_parser("sens-sweep", help="squared sensitivity against T")
    _add_graph_args(s)
    s.add_argument("--model", choices=[v.value for v in sens.Variant], default=sens.Variant.NON_ADAPTIVE_SS.value)
    s.add_argument("--T-list", dest="T_list", type=_horizons, default=_horizons("10,20,50,100"))
    s.add_argument("--correction", type=_on_off, default=True, metavar="{on,off}")
    s.add_argument("--target", type=int)
    s.add_argument("--observer", type=int)
    s.add_argument("--colluders", type=_int_list)
    _add_common(s)
    s.set_defaults(func=cmd_sens_sweep)

    a = sub.add_parser("adaptive-compare", help="mean pairwise epsilon against T")
    _add_graph_args(a)
    a.add_argument("--T-list", dest="T_list", type=_horizons, default=_horizons("5,10,20,40,80"))
    a.add_argument("--sigma", type=float, default=10.0)
    a.add_argument("--delta", type=float, default=acc.DEFAULT_DELTA)
    _add_common(a)
    a.set_defaults(func=cmd_adaptive_compare)

    e = sub.add_parser("pairwise-eps", help="epsilon for every ordered node pair")
    _add_graph_args(e)
    e.add_argument("--model", choices=[v.value for v in sens.Variant], default=sens.Variant.NO_SS.value)
    e.add_argument("--T-list", dest="T_list", type=_horizons, default=_horizons("20"))
    e.add_argument("--sigma", type=float, default=10.0)
    e.add_argument("--delta", type=float, default=acc.DEFAULT_DELTA)
    e.add_argument("--correction", type=_on_off, default=True, metavar="{on,off}")
    _add_common(e)
    e.set_defaults(func=cmd_pairwise_eps)

    t = sub.add_parser("train", help="DP-GossipAvg and DP-FedAvg at matched mean epsilon")
    _add_graph_args(t)
    t.set_defaults(weights="neighborhood-average")
    t.add_argument("--rounds", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.5)
    t.add_argument("--lr-grid", dest="lr_grid", type=_int_list, help="tune over 10^(-i/2) for these i")
    t.add_argument("--clip", type=float, default=1.0)
    t.add_argument("--sigma", type=float, default=5.0)
    t.add_argument("--delta", type=float, default=acc.DEFAULT_DELTA)
    t.add_argument("--records-per-node", dest="records_per_node", type=int, default=20)
    t.add_argument("--dims", type=int, default=10)
    t.add_argument("--classes", type=int, default=4)
    t.add_argument("--idx-images", dest="idx_images", metavar="FILE")
    t.add_argument("--idx-labels", dest="idx_labels", metavar="FILE")
    _add_common(t)
    t.set_defaults(func=cmd_train)
    return parser


def _config_line(args: argparse.Namespace) -> str:
    items = []
    for key in sorted(vars(args)):
        if key in _EXCLUDED_FROM_CONFIG:
            continue
        value = getattr(args, key)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        items.append(f"{key}={value}")
    return "# config: " + " ".join(items)


def _write_csv(args: argparse.Namespace, name: str, header: Sequence[str], rows: Sequence[str]) -> Path:
    """``rows`` must already be in their canonical order."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text("\n".join([f"# version: gossipdp {__version__}", _config_line(args), *header, *rows]) + "\n")
    return path


def _load_graph(args: argparse.Namespace) -> gr.Graph:
    if args.edges:
        try:
            text = Path(args.edges).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {args.edges}: {exc}") from None
        g = gr.from_edge_list(text)
    else:
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        g = gr.erdos_renyi(args.n, args.p, args.seed)
    if not g.is_connected():
        log.warning("graph with %d nodes is disconnected; sensitivities are still well defined", g.n)
    return g


def _weights(args: argparse.Namespace, g: gr.Graph) -> mx.GossipMatrix:
    if args.weights == "max-degree":
        return mx.max_degree_weights(g)
    return mx.neighborhood_average_weights(g)


def cmd_graph_gen(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    rows = [f"{i},{j}" for i, j in sorted(g.edges())]
    _write_csv(args, "graph.csv", [f"# nodes: {g.n}", "i,j"], rows)
    return 0


def _node(value: int | None, n: int, flag: str) -> int | None:
    if value is not None and not 0 <= value < n:
        raise UsageError(f"{flag} {value} out of range for n={n}")
    return value


def _sweep_pairs(args: argparse.Namespace, g: gr.Graph) -> list[tuple[int, int | None]]:
    """(target, observer) pairs: the requested one, else one neighbor and one non-neighbor of a seeded target."""
    n = g.n
    target = _node(args.target, n, "--target")
    observer = _node(args.observer, n, "--observer")
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 7]))
    if target is None:
        target = int(rng.integers(n))
    if observer is not None or args.model == sens.Variant.COLLUDING.value:
        return [(target, observer)]
    pairs = []
    neigh = g.neighbors(target)
    far = [k for k in range(n) if k != target and not g.has_edge(target, k)]
    for pool in (neigh, far):
        if pool:
            pairs.append((target, int(pool[rng.integers(len(pool))])))
    if args.model != sens.Variant.NON_ADAPTIVE_SS.value:
        pairs.append((target, None))
    if not pairs:
        raise UsageError("graph has a single node; no observer available")
    return pairs


def cmd_sens_sweep(args: argparse.Namespace) -> int:
    g = _load_graph(args)
    W = _weights(args, g)
    colluders = tuple(args.colluders) if args.colluders else None
    if args.model == sens.Variant.COLLUDING.value:
        if not colluders:
            raise UsageError("--colluders is required for the colluding model")
        for c in colluders:
            _node(c, g.n, "--colluders entry")
    rows = []
    pairs = set()
    for j, i in _sweep_pairs(args, g):
        model = sens.ThreatModel(args.model, j, observer=i, colluders=colluders, correction=args.correction)
        for r in sens.sensitivity_sweep(model, W, args.T_list):
            if colluders:
                who = ";".join(map(str, colluders))
            else:
                who = "" if r.observer is None else str(r.observer)
                if r.observer is not None:
                    pairs.add((r.observer, j, "adjacent" if g.has_edge(j, r.observer) else "non-adjacent"))
            key = (r.T, -1 if r.observer is None else r.observer, j)
            rows.append((key, f"{args.model},{g.n},{r.T},{who},{j},{r.delta_sq!r},"
                              f"{r.delta_sq / r.T!r},{r.rank},{r.residual!r}"))
    header = ["# pairs: " + " ".join(f"{i}-{j}:{kind}" for i, j, kind in sorted(pairs)),
              "model,n,T,i,j,delta_sq,delta_sq_over_T,rank,residual"]
    _write_csv(args, "sens_sweep.csv", header, [line for _, line in sorted(rows)])
    return 0


def cmd_adaptive_compare(args: argparse.Namespace) -> int:
    if not args.sigma > 0 or not 0 < args.delta < 1:
        raise UsageError("--sigma must be positive and --delta in (0, 1)")
    g = _load_graph(args)
    W = _weights(args, g)
    series = {
        "no_ss": sens.pairwise_sweep(sens.Variant.NO_SS, W, args.T_list, correction=True),
        "adaptive_ss": sens.pairwise_sweep(sens.Variant.ADAPTIVE_SS, W, args.T_list, correction=True),
        "no_ss_uncorrected": sens.pairwise_sweep(sens.Variant.NO_SS, W, args.T_list, correction=False),
        "adaptive_ss_uncorrected": sens.pairwise_sweep(sens.Variant.ADAPTIVE_SS, W, args.T_list, correction=False),
    }
    rows = []
    for T in args.T_list:
        vals = [acc.mean_epsilon(series[k][T], args.sigma, args.delta) for k in series]
        ldp = acc.ldp_epsilon(args.sigma, T, args.delta)
        rows.append((T, ",".join(repr(v) for v in [*vals, ldp])))
    header = "T," + ",".join(series) + ",ldp"
    _write_csv(args, "adaptive_compare.csv", [header], [f"{T},{body}" for T, body in sorted(rows)])
    return 0


def cmd_pairwise_eps(args: argparse.Namespace) -> int:
    if not args.sigma > 0 or not 0 < args.delta < 1:
        raise UsageError("--sigma must be positive and --delta in (0, 1)")
    if args.model == sens.Variant.COLLUDING.value:
        raise UsageError("pairwise-eps is defined for single observers; the colluding model is not supported")
    g = _load_graph(args)
    W = _weights(args, g)
    T = args.T_list[-1]
    deltas = sens.pairwise_sensitivities(args.model, W, T, correction=args.correction)
    table = acc.guarantee_table(deltas, args.sigma, args.delta)
    lines = table.to_csv().splitlines()
    _write_csv(args, "pairwise_eps.csv", [f"# T: {T}", lines[0]], lines[1:])
    return 0


def _train_data(args: argparse.Namespace, n: int):
    if bool(args.idx_images) != bool(args.idx_labels):
        raise UsageError("--idx-images and --idx-labels go together")
    if args.idx_images:
        pool = sim.load_idx(args.idx_images, args.idx_labels)
        classes = int(pool.labels.max()) + 1
        cut = max(1, len(pool) // 5)
        test = sim.LocalDataset(pool.features[:cut], pool.labels[:cut])
        train = sim.partition_iid(sim.LocalDataset(pool.features[cut:], pool.labels[cut:]), n, args.seed)
        return train, test, classes
    train, test = sim.synth_classification(args.seed, n, args.records_per_node, args.dims, args.classes)
    return train, test, args.classes


def cmd_train(args: argparse.Namespace) -> int:
    if not 0 < args.delta < 1:
        raise UsageError("--delta must lie in (0, 1)")
    g = _load_graph(args)
    W = _weights(args, g)
    train, test, classes = _train_data(args, g.n)
    cfg = sim.TrainConfig(rounds=args.rounds, learning_rate=args.lr, clip_norm=args.clip,
                          noise_multiplier=args.sigma, num_classes=classes, seed=args.seed)
    matched = sim.matched_noise(g, train, cfg, args.delta, W)

    def gossip(lr: float) -> sim.TrainHistory:
        return sim.dp_gossip_avg(g, W, train, sim.TrainConfig(**{**vars(cfg), "learning_rate": lr}), test)

    def fedavg(lr: float) -> sim.TrainHistory:
        c = sim.TrainConfig(**{**vars(cfg), "learning_rate": lr, "noise_multiplier": matched.fedavg_sigma,
                               "algorithm": sim.Algorithm.FEDAVG})
        return sim.dp_fedavg(train, c, test)

    if args.lr_grid:
        grid = sim.lr_grid(args.lr_grid)
        lr_g, hist_g = sim.tune_lr(gossip, grid)
        lr_f, hist_f = sim.tune_lr(fedavg, grid)
    else:
        lr_g, hist_g = args.lr, gossip(args.lr)
        lr_f, hist_f = args.lr, fedavg(args.lr)

    rescale = sorted(set(round(v, 15) for v in matched.rescale))
    info = (f"# matched: epsilon={matched.epsilon!r} delta={matched.delta!r} gossip_sigma={matched.gossip_sigma!r} "
            f"fedavg_sigma={matched.fedavg_sigma!r} rescale={';'.join(repr(v) for v in rescale)}")
    for name, hist, lr in (("train_gossip.csv", hist_g, lr_g), ("train_fedavg.csv", hist_f, lr_f)):
        extra = [info, f"# learning_rate: {lr!r}"]
        if hist.eval_node is not None:
            extra.append(f"# eval_node: {hist.eval_node}")
        csv = hist.to_csv().splitlines()
        _write_csv(args, name, extra + csv[:1], csv[1:])
    return 0


def _apply_config_file(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        values = parse_key_value(Path(args.config).read_text())
    except OSError as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in _EXCLUDED_FROM_CONFIG:
            parser.error(f"unknown config key {key!r} for {args.command}")
        action = actions[dest]
        try:
            defaults[dest] = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and defaults[dest] not in action.choices:
            parser.error(f"config key {key!r}: {raw!r} not in {sorted(action.choices)}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="gossipdp: %(levelname)s: %(message)s")
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RangeError as exc:
        print(f"gossipdp: range check failed (residual {exc.residual:.3e}): {exc}", file=sys.stderr)
        return EXIT_RANGE
    except (UsageError, GossipDPError) as exc:
        print(f"gossipdp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
