"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python3 tests/test_acceptance.py`` to get
the summary lines and a JSON verdict list.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import math
import sys
import time

import numpy as np
import pytest

from gossipdp import accountant as acc
from gossipdp import cli
from gossipdp import graph as gr
from gossipdp import mixing as mx
from gossipdp import sensitivity as se
from gossipdp import simulator as sim
from gossipdp import verification as ve
from gossipdp.sensitivity import ThreatModel, Variant

pytestmark = pytest.mark.slow

DELTA = 1e-5
FIG2_TS = [5, 10, 20, 40, 80]
FIG2_SIGMA = 10.0


@dataclasses.dataclass
class Outcome:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"ACCEPTANCE {self.name}: {'PASS' if self.passed else 'FAIL'} | {self.detail}"


# --- criterion 1 -----------------------------------------------------------

def criterion_1() -> Outcome:
    g = gr.erdos_renyi(100, 0.2, 0)
    W = mx.max_degree_weights(g)
    rng = np.random.default_rng(0)
    far = [(i, j) for i in range(100) for j in range(100) if i != j and not g.has_edge(i, j)]
    i, j = far[rng.integers(len(far))]
    Ts = list(range(10, 301))
    start = time.process_time()
    res = se.sensitivity_sweep(ThreatModel(Variant.NON_ADAPTIVE_SS, j, observer=i), W, Ts)
    elapsed = time.process_time() - start
    scaled = np.array([r.delta_sq / r.T for r in res])
    steps = np.diff(scaled)
    rises = int(np.sum(steps > 1e-12 * scaled[:-1]))
    final = scaled[-1]
    ok = rises == 0 and 0.01 <= final <= 0.02 and elapsed < 60
    detail = (f"pair i={i} j={j}; Δ²/T at T=10: {scaled[0]:.5f}, T=300: {final:.5f}; "
              f"{rises}/{len(steps)} increasing steps; cpu {elapsed:.1f}s")
    return Outcome("C1 Fig-1-left model 1 non-adjacent", ok, detail)


# --- criteria 2 and 3 ------------------------------------------------------

@functools.lru_cache(maxsize=1)
def _fig2():
    g = gr.erdos_renyi(50, 0.2, 0)
    W = mx.max_degree_weights(g)
    start = time.process_time()
    m3 = se.pairwise_sweep(Variant.NO_SS, W, FIG2_TS, correction=True, threads=1)
    m4 = se.pairwise_sweep(Variant.ADAPTIVE_SS, W, FIG2_TS, correction=True, threads=1)
    return g, m3, m4, time.process_time() - start


def criterion_2() -> Outcome:
    _, m3, m4, elapsed = _fig2()
    parts = []
    ok = elapsed < 600
    for T in FIG2_TS:
        e3 = acc.mean_epsilon(m3[T], FIG2_SIGMA, DELTA)
        e4 = acc.mean_epsilon(m4[T], FIG2_SIGMA, DELTA)
        ldp = acc.ldp_epsilon(FIG2_SIGMA, T, DELTA)
        ok = ok and e3 < ldp and e4 < ldp
        parts.append(f"T={T}: m3={e3:.4f} m4={e4:.4f} ldp={ldp:.4f}")
    T = FIG2_TS[-1]
    last3 = acc.mean_epsilon(m3[T], FIG2_SIGMA, DELTA)
    last4 = acc.mean_epsilon(m4[T], FIG2_SIGMA, DELTA)
    ok = ok and last3 < last4
    return Outcome("C2 Fig-2 shape", ok, "; ".join(parts) + f"; cpu {elapsed:.0f}s")


def criterion_3() -> Outcome:
    _, m3, m4, _ = _fig2()
    ratios = {}
    for name, sweep in (("m3", m3), ("m4", m4)):
        # Columns are observer-independent; one value per target.
        d40 = np.nanmax(sweep[40], axis=0) ** 2
        d80 = np.nanmax(sweep[80], axis=0) ** 2
        ratios[name] = float(np.max(d80 / (2.0 * d40)))
    ok = all(r <= 1.3 for r in ratios.values())
    detail = ", ".join(f"{k}: max Δ²(80)/(2Δ²(40)) = {v:.4f}" for k, v in ratios.items())
    return Outcome("C3 linear growth of Δ²", ok, detail + " (limit 1.3)")


# --- criterion 4 -----------------------------------------------------------

def _random_model(rng, g: gr.Graph, variant: Variant) -> ThreatModel:
    n = g.n
    j = int(rng.integers(n))
    others = [k for k in range(n) if k != j]
    if variant is Variant.COLLUDING:
        size = int(rng.integers(1, min(3, len(others)) + 1))
        return ThreatModel(variant, j, colluders=tuple(int(c) for c in rng.choice(others, size, replace=False)))
    if variant is Variant.NON_ADAPTIVE_SS:
        return ThreatModel(variant, j, observer=int(rng.choice(others)))
    if variant is Variant.ADAPTIVE_SS:
        nb = [k for k in g.closed_neighborhood(j) if k != j] or others
        return ThreatModel(variant, j, observer=int(rng.choice(nb)))
    return ThreatModel(variant, j, observer=int(rng.choice(others)))


def _random_graph(rng, n_lo: int, n_hi: int) -> tuple[gr.Graph, mx.GossipMatrix]:
    while True:
        n = int(rng.integers(n_lo, n_hi + 1))
        g = gr.erdos_renyi(n, float(rng.uniform(0.2, 0.7)), int(rng.integers(2**31)))
        if g.is_connected():
            break
    W = mx.max_degree_weights(g) if rng.random() < 0.5 else mx.neighborhood_average_weights(g)
    return g, W


def criterion_4() -> Outcome:
    rng = np.random.default_rng(4)
    variants = list(Variant)
    worst_route = 0.0
    for k in range(50):
        g, W = _random_graph(rng, 4, 30)
        model = _random_model(rng, g, variants[k % 4])
        T = int(rng.integers(1, 51))
        a = se.sensitivity(model, W, T).delta
        b = se.sensitivity_dense(model, W, T).delta
        rel = 0.0 if a == b else abs(a - b) / max(abs(b), np.finfo(float).tiny)
        worst_route = max(worst_route, rel)
    worst_tv = 0.0
    for k in range(20):
        g, W = _random_graph(rng, 4, 15)
        model = _random_model(rng, g, variants[k % 4])
        T = int(rng.integers(1, 21))
        a = se.sensitivity(model, W, T).delta
        b = se.sensitivity_time_varying(model, [W] * T).delta
        rel = 0.0 if a == b else abs(a - b) / max(abs(a), np.finfo(float).tiny)
        worst_tv = max(worst_tv, rel)
    ok = worst_route <= 1e-8 and worst_tv <= 1e-12
    return Outcome("C4 oracle equivalence", ok,
                   f"gram vs dense max rel {worst_route:.2e} (≤1e-8, 50 instances); "
                   f"time-varying constant max rel {worst_tv:.2e} (≤1e-12, 20 instances)")


# --- criterion 5 -----------------------------------------------------------

def criterion_5() -> Outcome:
    rng = np.random.default_rng(5)
    variants = list(Variant)
    worst = 0.0
    checks = 0
    for k in range(10):
        g, W = _random_graph(rng, 3, 6)
        model = _random_model(rng, g, variants[k % 4])
        T = int(rng.integers(1, 5))
        spec = se.system_spec(model, W, T)
        H = se.dense_operator(spec)
        x = se.build_direction(spec)
        delta = se.sensitivity(model, W, T).delta
        # Fixing Δ/σ = 1.5 keeps δ(ε ≤ 2) large enough for the sampler to observe.
        sigma = delta / 1.5 if delta > 0 else 1.0
        pair = ve.MechanismPair(x, H, sigma)
        for eps in (0.0, 1.0, 2.0):
            est = ve.mc_hockey_stick(pair, eps, samples=1_000_000, seed=100 * k + int(eps))
            exact = acc.gauss_delta(delta, sigma, 1, eps)
            z = abs(est.estimate - exact) / est.stderr if est.stderr > 0 else (0.0 if est.estimate == exact else math.inf)
            worst = max(worst, z)
            checks += 1
    return Outcome("C5 projected Gaussian via Monte Carlo", worst <= 4.0,
                   f"{checks} checks, max |MC - exact| = {worst:.2f} stderr (limit 4)")


# --- criterion 6 -----------------------------------------------------------

def criterion_6() -> Outcome:
    mus = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
    worst = 0.0
    for mu in mus:
        for k in range(21):
            eps = 0.5 * k
            worst = max(worst, abs(ve.numeric_gauss_delta(mu, eps) - acc.gauss_delta(mu, 1.0, 1, eps)))
    worst_rt = 0.0
    for d, s, T, target in itertools.product((0.1, 0.5, 1.0, 3.0), (0.5, 1.0, 10.0), (1, 10, 100), (1e-3, 1e-5, 1e-8)):
        eps = acc.epsilon_for_delta(d, s, T, target)
        if eps > 0:
            worst_rt = max(worst_rt, abs(acc.gauss_delta(d, s, T, eps) - target))
    ok = worst <= 1e-9 and worst_rt <= 1e-8
    return Outcome("C6 accountant vs quadrature", ok,
                   f"max |δ - quad| = {worst:.2e} (≤1e-9); roundtrip max err {worst_rt:.2e} (≤1e-8)")


# --- criterion 7 -----------------------------------------------------------

def criterion_7() -> Outcome:
    rng = np.random.default_rng(7)
    variants = list(Variant)
    failures = []
    total = 0
    for k in range(80):
        g, W = _random_graph(rng, 3, 8)
        assert W.W.min() >= 0
        model = _random_model(rng, g, variants[k % 4])
        T = int(rng.integers(1, 11))
        spec = se.system_spec(model, W, T)
        H = se.dense_operator(spec)
        if not np.any(H):
            continue
        kept = spec.kept_columns
        col = int(np.flatnonzero(kept == spec.target)[0])
        columns = [t * kept.size + col for t in range(T)]
        w = ve.brute_force_worst_direction(H, columns)
        total += 1
        if not w.is_all_ones:
            failures.append((k, model.variant.value, g.n, T, w.value, w.all_ones_value, w.signs))
    detail = f"{total - len(failures)}/{total} nonnegative-W instances maximized by all-ones"
    if failures:
        k, v, n, T, best, ones, signs = max(failures, key=lambda f: f[4] / f[5])
        pattern = "".join("+" if s > 0 else "-" for s in signs)
        detail += f"; e.g. instance {k} ({v}, n={n}, T={T}): {pattern} gives {best:.4f} vs all-ones {ones:.4f}"
    return Outcome("C7 all-ones worst direction", not failures, detail)


# --- criterion 8 -----------------------------------------------------------

def _criterion_8a() -> tuple[bool, str]:
    shards, test = sim.synth_classification(8, 100, 10, 10, 4)
    assert len({len(d) for d in shards}) == 1
    cfg = sim.TrainConfig(rounds=30, learning_rate=0.5, clip_norm=1.0, noise_multiplier=0.0,
                          num_classes=4, seed=8, algorithm="fedavg")
    fed = sim.dp_fedavg(shards, cfg, test).final
    pooled = sim.LocalDataset(np.vstack([d.features for d in shards]), np.concatenate([d.labels for d in shards]))
    model = sim.zero_model(10, 4)
    for _ in range(cfg.rounds):
        model = sim.local_dp_step(model, pooled, cfg.learning_rate, cfg.clip_norm, 0.0)
    err = float(np.max(np.abs(fed - model)))
    return err <= 1e-10, f"(a) fedavg vs pooled GD max coord err {err:.1e}"


def _criterion_8b() -> tuple[bool, str]:
    g = gr.erdos_renyi(100, 0.2, 0)
    W = mx.max_degree_weights(g)
    assert g.is_connected() and mx.validate(W, g).passed
    shards, test = sim.synth_classification(0, 100, 10, 10, 4)
    init = np.random.default_rng(1).standard_normal((100, 11, 4))
    cfg = sim.TrainConfig(rounds=200, learning_rate=0.0, clip_norm=1.0, noise_multiplier=0.0, num_classes=4)
    disp = sim.dp_gossip_avg(g, W, shards, cfg, test, init).dispersion
    first = next((t for t, d in enumerate(disp) if d < 1e-6), None)
    return first is not None, f"(b) consensus dispersion {disp[0]:.2f} -> {disp[-1]:.1e}, below 1e-6 at round {first}"


def _criterion_8c() -> tuple[bool, str]:
    gaps = []
    eps = []
    for seed in range(3):
        g = gr.erdos_renyi(100, 0.2, seed)
        W = mx.neighborhood_average_weights(g)
        shards, test = sim.synth_classification(seed, 100, 20, 10, 4, separation=2.0)
        cfg = sim.TrainConfig(rounds=50, learning_rate=0.5, clip_norm=1.0, noise_multiplier=5.0,
                              num_classes=4, seed=seed)
        matched = sim.matched_noise(g, shards, cfg, DELTA, W)
        grid = sim.lr_grid(range(5))
        _, hg = sim.tune_lr(lambda lr: sim.dp_gossip_avg(g, W, shards, dataclasses.replace(cfg, learning_rate=lr), test), grid)
        fed_cfg = dataclasses.replace(cfg, noise_multiplier=matched.fedavg_sigma, algorithm="fedavg")
        _, hf = sim.tune_lr(lambda lr: sim.dp_fedavg(shards, dataclasses.replace(fed_cfg, learning_rate=lr), test), grid)
        gaps.append((hg.accuracy[-1], hf.accuracy[-1]))
        eps.append(matched.epsilon)
    ga, fa = np.mean(gaps, axis=0)
    diff = abs(ga - fa) * 100
    return diff <= 5.0, (f"(c) mean ε {np.mean(eps):.3f}: gossip acc {ga:.4f} vs fedavg {fa:.4f}, "
                         f"gap {diff:.2f} points (≤5)")


def criterion_8() -> Outcome:
    parts = [_criterion_8a(), _criterion_8b(), _criterion_8c()]
    return Outcome("C8 training sanity", all(p for p, _ in parts), "; ".join(d for _, d in parts))


# --- criterion 9 -----------------------------------------------------------

CLI_RUNS = [
    ["graph-gen", "--n", "30", "--p", "0.2", "--seed", "3"],
    ["sens-sweep", "--n", "30", "--p", "0.2", "--model", "nonadaptive-ss", "--T-list", "5,10,20"],
    ["sens-sweep", "--n", "20", "--p", "0.3", "--model", "colluding", "--colluders", "1,2", "--T-list", "3,6"],
    ["sens-sweep", "--n", "20", "--p", "0.3", "--model", "adaptive-ss", "--correction", "off", "--T-list", "4"],
    ["adaptive-compare", "--n", "15", "--p", "0.3", "--T-list", "2,4,8", "--sigma", "3"],
    ["pairwise-eps", "--n", "12", "--p", "0.4", "--model", "nonadaptive-ss", "--T-list", "6"],
    ["train", "--n", "10", "--p", "0.5", "--rounds", "4", "--records-per-node", "6", "--sigma", "2"],
]


def _strip_version(text: str) -> str:
    return "\n".join(l for l in text.splitlines() if not l.startswith("# version:"))


def criterion_9(tmp_dir) -> Outcome:
    mismatched = []
    files = 0
    for k, argv in enumerate(CLI_RUNS):
        outs = []
        for rep in range(2):
            out = tmp_dir / f"run{k}_{rep}"
            code = cli.main(argv + ["--out", str(out)])
            if code != 0:
                mismatched.append(f"{argv[0]} exit {code}")
            outs.append({p.name: _strip_version(p.read_text()) for p in sorted(out.iterdir())})
        files += len(outs[0])
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(" ".join(argv[:1]))
    ok = not mismatched
    detail = f"{len(CLI_RUNS)} sweeps, {files} CSVs compared" + ("" if ok else f"; mismatches: {mismatched}")
    return Outcome("C9 CLI determinism", ok, detail)


# --- pytest wiring ---------------------------------------------------------

def _report(outcome: Outcome, capsys) -> None:
    with capsys.disabled():
        print("\n" + outcome.line())
    assert outcome.passed, outcome.line()


def test_c1_fig1_left(capsys):
    _report(criterion_1(), capsys)


def test_c2_fig2_shape(capsys):
    _report(criterion_2(), capsys)


def test_c3_linear_growth(capsys):
    _report(criterion_3(), capsys)


def test_c4_oracle_equivalence(capsys):
    _report(criterion_4(), capsys)


def test_c5_monte_carlo(capsys):
    _report(criterion_5(), capsys)


def test_c6_accountant(capsys):
    _report(criterion_6(), capsys)


def test_c7_worst_direction(capsys):
    _report(criterion_7(), capsys)


def test_c8_training(capsys):
    _report(criterion_8(), capsys)


def test_c9_determinism(capsys, tmp_path):
    _report(criterion_9(tmp_path), capsys)


def main() -> int:
    import tempfile
    from pathlib import Path

    outcomes = []
    with tempfile.TemporaryDirectory() as tmp:
        for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
                   criterion_7, criterion_8):
            outcomes.append(fn())
            print(outcomes[-1].line(), flush=True)
        outcomes.append(criterion_9(Path(tmp)))
        print(outcomes[-1].line(), flush=True)
    print(ve.verdicts_json([ve.verdict(o.name, o.passed, detail=o.detail) for o in outcomes]))
    return 0 if all(o.passed for o in outcomes) else 1


if __name__ == "__main__":
    sys.exit(main())
