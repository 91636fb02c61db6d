"""End-to-end exit criteria.

Each ``criterion_*`` function runs one criterion at its stated tolerance and
returns ``(passed, detail)``.  Under pytest every result is also collected
and printed as one PASS/FAIL line in the terminal summary; running this file
directly prints the same lines.
"""
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from subspace_fewshot.cli import main as cli_main
from subspace_fewshot.evaluation import (
    EvalConfig, SubspaceCache, evaluate, run_episode, sample_episode)
from subspace_fewshot.feature_io import (
    generate_synthetic_dataset, save_dataset, shuffle_labels)
from subspace_fewshot.metric import projection_fnorm, stack, wsd
from subspace_fewshot.reference import REFERENCE_RESULTS, reference_synthetic_config
from subspace_fewshot.stiefel import cayley_step, wsd_grad_basis
from subspace_fewshot.subspace import Subspace, extract_subspace, reconstruction_error
from subspace_fewshot.templates import (
    SupportSet, discriminative_subspaces, ds_objective, prototypical_subspace, ps_objective)

pytestmark = pytest.mark.acceptance

RESULTS: dict[str, tuple[bool, str]] = {}
MEASURED: dict[tuple, float] = {}  # reference-config accuracies seen in this session
FD_STEP = 1e-5


def _record(name, ok, detail):
    RESULTS[name] = (bool(ok), detail)
    return bool(ok), detail


def _central_difference(f, x, h=FD_STEP):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _random_subspace(rng, d, s):
    return extract_subspace(rng.standard_normal((d, int(rng.integers(s, 3 * s + 2)))), s)


_DATA = {}


def reference_dataset():
    if "ref" not in _DATA:
        _DATA["ref"] = generate_synthetic_dataset(reference_synthetic_config())
    return _DATA["ref"]


# -- 1 ------------------------------------------------------------------------

def criterion_1():
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    worst = dict(sym=0.0, rot=0.0, flip=0.0, ident=0.0, orth=0.0)
    in_range = True
    for _ in range(1000):
        d = int(rng.integers(2, 17))
        s = int(rng.integers(1, d // 2 + 1))
        a, b = _random_subspace(rng, d, s), _random_subspace(rng, d, s)
        v = wsd(a, b)
        in_range &= 0.0 <= v <= 1.0
        worst["sym"] = max(worst["sym"], abs(v - wsd(b, a)))
        q = np.linalg.qr(rng.standard_normal((d, d)))[0]
        worst["rot"] = max(worst["rot"], abs(v - wsd(Subspace(q @ a.basis, a.weights),
                                                     Subspace(q @ b.basis, b.weights))))
        flips = np.where(rng.random(s) < 0.5, -1.0, 1.0)
        worst["flip"] = max(worst["flip"], abs(v - wsd(Subspace(a.basis * flips, a.weights), b)))
        worst["ident"] = max(worst["ident"], wsd(a, a))
        cols = np.linalg.qr(rng.standard_normal((d, 2 * s)))[0]
        o1 = Subspace(cols[:, :s], a.weights)
        o2 = Subspace(cols[:, s:], b.weights)
        worst["orth"] = max(worst["orth"], abs(1.0 - wsd(o1, o2)))
    w1, w2 = Subspace(np.eye(2), [0.75, 0.25]), Subspace(np.eye(2), [0.25, 0.75])
    witness, pf = wsd(w1, w2), projection_fnorm(w1, w2)
    elapsed = time.perf_counter() - start
    ok = (in_range and worst["sym"] <= 1e-14 and worst["rot"] <= 1e-10 and worst["flip"] <= 1e-14
          and worst["ident"] <= 1e-7 and worst["orth"] <= 1e-12
          and abs(witness - 0.366025) <= 1e-6 and pf == 0.0 and elapsed < 5.0)
    detail = (f"1000 cases; sym {worst['sym']:.1e}, rot {worst['rot']:.1e}, flip {worst['flip']:.1e}, "
              f"identity {worst['ident']:.1e}, orthogonal {worst['orth']:.1e}; witness "
              f"{witness:.6f} vs projfn {pf}; {elapsed:.2f} s")
    return _record("1 WSD metric suite", ok, detail)


# -- 2 ------------------------------------------------------------------------

def criterion_2():
    rng = np.random.default_rng(1002)
    start = time.perf_counter()
    worst, monotone = 0.0, True
    for _ in range(100):
        d, m = (int(x) for x in rng.integers(2, 65, size=2))
        H = rng.standard_normal((d, m))
        evals = np.clip(np.linalg.eigvalsh(H @ H.T)[::-1], 0, None)
        for s in sorted({1, int(rng.integers(1, d + 1)), d}):
            err = reconstruction_error(H, extract_subspace(H, s).basis)
            worst = max(worst, abs(err - float(evals[s:].sum())))
        errs = [reconstruction_error(H, extract_subspace(H, s).basis)
                for s in range(1, min(d, 12) + 1)]
        monotone &= all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and monotone and elapsed < 10.0
    return _record("2 SVD optimality", ok,
                   f"100 matrices; max |err - eigen oracle| {worst:.1e}; non-increasing in s: "
                   f"{monotone}; {elapsed:.2f} s")


# -- 3 ------------------------------------------------------------------------

def criterion_3():
    rng = np.random.default_rng(1003)
    start = time.perf_counter()
    errs = {"wsd_grad_basis": [], "PS objective": [], "DS objective": []}
    for _ in range(20):
        d = int(rng.integers(4, 12))
        s = int(rng.integers(1, 4))
        a, b = _random_subspace(rng, d, s), _random_subspace(rng, d, s)
        g = wsd_grad_basis(a, b)
        fd = _central_difference(lambda x: wsd(Subspace(x, a.weights), b), a.basis.copy())
        errs["wsd_grad_basis"].append(_rel_err(g, fd))

        shots = [_random_subspace(rng, d, s) for _ in range(5)]
        bases, w = stack(shots)
        temp = _random_subspace(rng, d, s)
        _, g = ps_objective(temp.basis, temp.weights, bases, w)
        fd = _central_difference(lambda x: ps_objective(x, temp.weights, bases, w)[0],
                                 temp.basis.copy())
        errs["PS objective"].append(_rel_err(g, fd))

        n, k = 3, 2
        support = [_random_subspace(rng, d, s) for _ in range(n * k)]
        sb, sw = stack(support)
        tb, tw = stack([_random_subspace(rng, d, s) for _ in range(n)])
        labels = np.repeat(np.arange(n), k)
        _, g = ds_objective(tb, tw, sb, sw, labels)
        fd = _central_difference(lambda x: ds_objective(x, tw, sb, sw, labels)[0], tb.copy())
        errs["DS objective"].append(_rel_err(g, fd))
    elapsed = time.perf_counter() - start
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 30.0
    return _record("3 gradient correctness", ok,
                   "20 points each; max rel err " +
                   ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.2f} s")


# -- 4 ------------------------------------------------------------------------

def criterion_4():
    rng = np.random.default_rng(1004)
    worst = 0.0
    for alpha in (0.01, 0.1):
        for _ in range(100):
            d = int(rng.integers(4, 65))
            s = int(rng.integers(1, min(d, 8) + 1))
            u = np.linalg.qr(rng.standard_normal((d, s)))[0]
            target = _random_subspace(rng, d, s)
            lam = extract_subspace(rng.standard_normal((d, s + 3)), s).weights
            for it in range(50):
                # alternate real objective gradients with large random ones
                z = (wsd_grad_basis(Subspace(u, lam), target) if it % 2 == 0
                     else 10 * rng.standard_normal(u.shape))
                u = cayley_step(u, z, alpha)
            worst = max(worst, float(np.max(np.abs(u.T @ u - np.eye(s)))))
    u0 = np.linalg.qr(rng.standard_normal((16, 4)))[0]
    fixed = all(cayley_step(u0, np.zeros_like(u0), a).tobytes() == u0.tobytes() for a in (0.01, 0.1))
    ok = worst <= 1e-9 and fixed
    return _record("4 manifold preservation", ok,
                   f"200 trajectories x 50 steps; max |U^T U - I| {worst:.1e}; Z=0 bit-exact: {fixed}")


# -- 5 ------------------------------------------------------------------------

def criterion_5():
    rng = np.random.default_rng(1005)
    worst, passed = 0.0, 0
    for _ in range(100):
        H = rng.standard_normal((64, 25)) * rng.uniform(0.1, 10)
        sub = extract_subspace(H, 5)
        temp, trace = prototypical_subspace([sub], 5, mats=[H])
        dist = wsd(temp, sub)
        worst = max(worst, dist)
        passed += dist < 1e-3 and len(trace) == 51
    return _record("5 PS recovery (K=1)", passed == 100,
                   f"{passed}/100 trials with D < 1e-3 after 50 steps at alpha 0.1; worst D {worst:.1e}")


# -- 6 ------------------------------------------------------------------------

def criterion_6():
    data = reference_dataset()
    cfg = EvalConfig(ways=5, shots=5, queries=1, seed=1006)
    improved = 0
    for i in range(100):
        ep = sample_episode(data, cfg, i)
        mats = [[data.matrices[data.flat_index(*r)] for r in row] for row in ep.support]
        temps = discriminative_subspaces(SupportSet.from_matrices(mats, 5))
        improved += temps.trace[-1] < temps.trace[0]
    return _record("6 DS improvement", improved >= 95,
                   f"{improved}/100 support sets end with lower joint cross-entropy (need >= 95)")


# -- 7 ------------------------------------------------------------------------

def _timed_eval(data, cfg):
    start = time.perf_counter()
    rep = evaluate(data, cfg)
    return rep, time.perf_counter() - start


def _reference_eval(key, cfg):
    rep, sec = _timed_eval(reference_dataset(), cfg)
    MEASURED[key] = rep.mean_accuracy
    return rep, sec


def criterion_7a():
    data = reference_dataset()
    acc, slowest = {}, 0.0
    for strat in ("union", "nn", "ps", "ds"):
        rep, sec = _reference_eval(("strategy", strat, 5),
                                   EvalConfig(ways=5, shots=5, queries=15, episodes=500,
                                              template=strat))
        acc[strat] = (rep.mean_accuracy, rep.ci_half_width)
        slowest = max(slowest, sec)
    ok = acc["ds"][0] >= acc["ps"][0] >= max(acc["union"][0], acc["nn"][0]) and slowest < 300
    detail = ", ".join(f"{k} {100 * v[0]:.2f}+-{100 * v[1]:.2f}" for k, v in acc.items())
    return _record("7a strategy ordering DS >= PS >= max(Union, NN)", ok,
                   f"500 episodes 5-way 5-shot: {detail}; slowest run {slowest:.0f} s")


def _one_shot(s, metric="wsd"):
    # single-shot protocol; union, PS and NN templates all equal the shot subspace here
    return EvalConfig(ways=5, shots=1, queries=15, episodes=500, basis_size=s, metric=metric,
                      template="union")


def criterion_7b():
    data = reference_dataset()
    rows, ok, slowest = [], True, 0.0
    for s in (4, 6, 8):
        w, t1 = _reference_eval(("one-shot", "wsd", s), _one_shot(s))
        p, t2 = _reference_eval(("one-shot", "projfn", s), _one_shot(s, "projfn"))
        slowest = max(slowest, t1, t2)
        ok &= w.mean_accuracy >= p.mean_accuracy
        rows.append(f"s={s} wsd {100 * w.mean_accuracy:.2f} projfn {100 * p.mean_accuracy:.2f}")
    ok &= slowest < 300
    return _record("7b WSD >= projection F-norm at s >= 4", ok,
                   f"500 episodes 5-way 1-shot: {'; '.join(rows)}; slowest run {slowest:.0f} s")


def criterion_7c():
    data = reference_dataset()
    reps, slowest = {}, 0.0
    for s in (1, 6, 8):
        reps[s], sec = _reference_eval(("one-shot", "wsd", s), _one_shot(s))
        slowest = max(slowest, sec)
    a1, a6, a8 = (reps[s].mean_accuracy for s in (1, 6, 8))
    band = 2 * max(reps[6].ci_half_width, reps[8].ci_half_width)
    ok = a6 >= a1 and abs(a6 - a8) <= band and slowest < 300
    return _record("7c basis-size saturation", ok,
                   f"500 episodes 5-way 1-shot: s=1 {100 * a1:.2f}, s=6 {100 * a6:.2f}, "
                   f"s=8 {100 * a8:.2f}; |s6 - s8| {100 * abs(a6 - a8):.2f} vs 2 CI "
                   f"{100 * band:.2f}; slowest run {slowest:.0f} s")


# -- 8 ------------------------------------------------------------------------

def criterion_8():
    # 300 independent grids dealt into 10 classes: labels carry no information
    pool = generate_synthetic_dataset(replace(reference_synthetic_config(), num_classes=300,
                                              grids_per_class=1, seed=1008))
    data = shuffle_labels(pool, 10, seed=8)
    cfg = EvalConfig(ways=5, shots=5, queries=15, episodes=1000)
    rep = evaluate(data, cfg)
    n = cfg.episodes * cfg.ways * cfg.queries
    band = 2.5758 * math.sqrt(0.2 * 0.8 / n)
    ok = abs(rep.mean_accuracy - 0.2) <= band
    return _record("8 chance calibration", ok,
                   f"1000 episodes ({n} queries): accuracy {rep.mean_accuracy:.4f}, "
                   f"99% band 0.2 +- {band:.4f}")


# -- 9 ------------------------------------------------------------------------

def criterion_9(tmp_dir):
    data_dir = tmp_dir / "ref"
    save_dataset(reference_dataset(), data_dir)
    docs = []
    for workers in (1, 8):
        out = tmp_dir / f"w{workers}.json"
        code = cli_main(["eval", "--data", str(data_dir), "--episodes", "40", "--seed", "9",
                         "--template", "ds", "--workers", str(workers), "--out", str(out)])
        doc = json.loads(out.read_text())
        doc.pop("wall_clock_seconds")
        docs.append((code, json.dumps(doc, sort_keys=True).encode()))
    ok = docs[0][0] == docs[1][0] == 0 and docs[0][1] == docs[1][1]
    return _record("9 determinism across workers", ok,
                   f"eval JSON (without wall-clock) for 1 vs 8 workers byte-identical: "
                   f"{docs[0][1] == docs[1][1]}")


# -- 10 -----------------------------------------------------------------------

def criterion_10():
    data = reference_dataset()
    ds_cfg = EvalConfig(ways=5, shots=5, queries=15, basis_size=5, template="ds")
    cache = SubspaceCache(data, 5)
    times = []
    for i in range(5):
        ep = sample_episode(data, ds_cfg, i)
        start = time.perf_counter()
        run_episode(data, ep, ds_cfg, cache=cache)
        times.append(time.perf_counter() - start)
    ds_time = max(times)
    nn_rep, nn_time = _timed_eval(data, EvalConfig(ways=5, shots=5, queries=15, episodes=1000,
                                                   template="nn"))
    ok = ds_time < 1.0 and nn_time < 60.0
    return _record("10 performance envelope", ok,
                   f"slowest of 5 DS episodes {ds_time:.3f} s (d=64, s=5, 50 steps); "
                   f"1000 NN episodes {nn_time:.1f} s")


# -- pytest wrappers ------------------------------------------------------------

def _check(result):
    ok, detail = result
    assert ok, detail


def test_criterion_1():
    _check(criterion_1())


def test_criterion_2():
    _check(criterion_2())


def test_criterion_3():
    _check(criterion_3())


def test_criterion_4():
    _check(criterion_4())


def test_criterion_5():
    _check(criterion_5())


def test_criterion_6():
    _check(criterion_6())


def test_criterion_7a():
    _check(criterion_7a())


def test_criterion_7b():
    _check(criterion_7b())


def test_criterion_7c():
    _check(criterion_7c())


def test_criterion_8():
    _check(criterion_8())


def test_criterion_9(tmp_path):
    _check(criterion_9(tmp_path))


def test_criterion_10():
    _check(criterion_10())


def test_reference_run_is_reproduced():
    """Accuracies measured above equal the frozen reference-run values."""
    seen = {k: v for k, v in MEASURED.items() if k in REFERENCE_RESULTS}
    if not seen:
        pytest.skip("criterion 7 did not run in this session")
    for key, acc in seen.items():
        assert acc == pytest.approx(REFERENCE_RESULTS[key], abs=1e-9), key


def format_line(name, ok, detail):
    return f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}"


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
              criterion_7a, criterion_7b, criterion_7c, criterion_8, None, criterion_10]
    with tempfile.TemporaryDirectory() as tmp:
        for fn in checks:
            before = set(RESULTS)
            criterion_9(Path(tmp)) if fn is None else fn()
            (name,) = set(RESULTS) - before
            print(format_line(name, *RESULTS[name]), flush=True)
