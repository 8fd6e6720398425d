"""End-to-end acceptance checks. Each test prints one PASS/FAIL line, and the
lines are repeated in the pytest terminal summary."""
import json
import os

import numpy as np
import pytest

from genmatch.cli import field_error, run
from genmatch.generators import CondOTFlow, CTMCMixture, JumpAtoms, JumpBins, make_generator
from genmatch.loss import Bregman, bregman_grad_pred, bregman_value
from genmatch.marginal import MarginalModel
from genmatch.paths import Dataset, GeometricAverage, MixtureDiscrete, MixtureUniform
from genmatch.sim import SimConfig, jump_survival, simulate
from genmatch.train import FieldNet, NetModel, TrainConfig, train_model
from genmatch.verify import ctmc_oracle, gradient_equality_check, kfe_suite, marginal_rate_matrix, tv_hist

from oracles import fd_gradient_errors, random_upstream, report

pytestmark = pytest.mark.slow

EDGES_1D = np.linspace(-3, 3, 65)


def two_point_model(name):
    path = GeometricAverage()
    return MarginalModel(path, Dataset.two_point(), make_generator(name, path, bins=JumpBins(-2, 2, 129)))


def mode_stats(x):
    x = x.reshape(-1)
    mass = float(np.mean(x > 0))
    dist = float(np.mean(np.minimum(np.abs(x - 1), np.abs(x + 1))))
    return mass, dist


def test_c01_kfe_suite():
    rows = kfe_suite()
    bad = [r["pair"] for r in rows if not (r["pass"] and r["negative_control_pass"])]
    worst = max(r["max_residual"] / r["threshold"] for r in rows)
    ok = report("C1 KFE residual suite", not bad, f"{len(rows)} pairs, worst residual/threshold {worst:.2g}, failing {bad}")
    assert ok


def test_c02_exact_marginal_flow():
    res = simulate(two_point_model("flow"), SimConfig(n_steps=500, n_samples=20_000, seed=0))
    mass, dist = mode_stats(res.samples)
    ok = report("C2 exact-marginal flow", abs(mass - 0.5) <= 0.02 and dist <= 0.05, f"mass(x>0) {mass:.4f}, mean distance {dist:.4f}")
    assert ok


def test_c03_superposition_invariance():
    out = {}
    for name in ("flow", "jump", "superposition:flow+jump"):
        out[name] = simulate(two_point_model(name), SimConfig(n_steps=500, n_samples=20_000, seed=1)).samples
    names = list(out)
    tvs = {f"{a}|{b}": tv_hist(out[a], out[b], EDGES_1D) for i, a in enumerate(names) for b in names[i + 1 :]}
    worst = max(tvs.values())
    ok = report("C3 superposition invariance", worst <= 0.05, f"max pairwise TV {worst:.4f}")
    assert ok


def test_c04_langevin_invariance():
    path, data = GeometricAverage(), Dataset.two_point()
    cfg = SimConfig(n_steps=500, n_samples=20_000, seed=2)
    base = simulate(MarginalModel(path, data, CondOTFlow()), cfg).samples
    lang = simulate(MarginalModel(path, data, CondOTFlow(), langevin_beta=1.0), cfg).samples
    tv = tv_hist(base, lang, EDGES_1D)
    ok = report("C4 Langevin invariance", tv <= 0.05, f"TV {tv:.4f}")
    assert ok


def test_c05_checkerboard_mixture_jump():
    cb = Dataset.checkerboard()
    path = MixtureUniform(-1, 1, dim=2)
    model = MarginalModel(path, cb, make_generator("jump", path, support=JumpAtoms(cb.points)))
    res = simulate(model, SimConfig(n_steps=500, n_samples=50_000, seed=3))
    edges = [np.linspace(-1, 1, 17)] * 2
    tv = tv_hist(res.samples, cb, edges)
    ok = report("C5 checkerboard mixture jump", tv <= 0.1, f"TV {tv:.4f}")
    assert ok


def test_c06_ctmc_oracle_equivalence():
    probs = np.array([0.1, 0.4, 0.0, 0.2, 0.3])
    path = MixtureDiscrete(5)
    model = MarginalModel(path, Dataset.tokens(probs), CTMCMixture())
    times = (0.25, 0.5, 0.75, 0.999)
    res = simulate(model, SimConfig(n_steps=500, n_samples=50_000, seed=4, t_end=0.999, record_times=times[:3]))
    grid, traj, _ = ctmc_oracle(lambda t: marginal_rate_matrix(model, t), np.full(5, 0.2), 2000, t1=0.999, times=times)
    tvs = []
    for t in times:
        x = res.samples if t == 0.999 else res.records[t]
        emp = np.bincount(x[:, 0].astype(int), minlength=5) / len(x)
        ref = traj[int(np.argmin(np.abs(grid - t)))]
        tvs.append(0.5 * float(np.abs(emp - ref).sum()))
    ok = report("C6 CTMC oracle equivalence", max(tvs) <= 0.02, "TV per time " + ", ".join(f"{v:.4f}" for v in tvs))
    assert ok


def test_c07_jump_survival():
    h = 1e-4
    errs = [abs((1 - jump_survival(lam, t, h)) / h - lam) / lam for lam in (0.1, 1.0, 10.0) for t in (0.1, 0.5)]
    ok = report("C7 jump survival", max(errs) <= 0.01, f"max relative hazard error {max(errs):.2e}")
    assert ok


def test_c08_backprop():
    rng = np.random.default_rng(8)
    vocab = np.array([0, 3, 0])
    net = FieldNet(vocab, width=16, depth=2, emb=4, heads=("velocity", "jump", "ctmc"), bins=JumpBins(-1, 1, 5), seed=8)
    x = np.column_stack([rng.standard_normal(3), rng.integers(0, 3, 3), rng.standard_normal(3)])
    t = rng.uniform(0, 1, 3)
    errs = fd_gradient_errors(net, x, t, random_upstream(net, x, t, rng))
    ok = report("C8 backprop", errs.max() <= 1e-4, f"max relative error {errs.max():.2e} over {errs.size} parameters")
    assert ok


def test_c09_gradient_equality():
    path, data, gen = GeometricAverage(), Dataset.two_point(), CondOTFlow()
    big = gradient_equality_check(path, data, gen, M=1_000_000, rng=np.random.default_rng(90))
    # the gap is a random quantity; compare its RMS over independent replicates
    gaps = {}
    for m in (62_500, 1_000_000):
        g = [gradient_equality_check(path, data, gen, M=m, rng=np.random.default_rng((91, m, r)))["max_gap"] for r in range(16)]
        gaps[m] = float(np.sqrt(np.mean(np.square(g))))
    ratio = gaps[62_500] / gaps[1_000_000]
    ok = report("C9 gradient equality", big["cosine"] >= 0.99 and ratio >= 3, f"cosine {big['cosine']:.6f}, gap ratio {ratio:.2f}")
    assert ok


@pytest.fixture(scope="module")
def trained():
    path, data = GeometricAverage(), Dataset.two_point()
    net, _ = train_model(TrainConfig(seed=0), path, data, CondOTFlow(), Bregman("mse"))
    return net, MarginalModel(path, data, CondOTFlow())


def test_c10_trained_field(trained):
    net, model = trained
    ev = {"t_min": 0.1, "t_max": 0.9, "n_t": 17, "x_min": -3.0, "x_max": 3.0, "n_x": 121, "threshold": 0.1}
    rep = field_error(net, model, "velocity", ev, np.random.default_rng(10))
    ok = report("C10 trained field error", rep["relative_l2"] <= 0.1, f"relative L2 {rep['relative_l2']:.3f}")
    assert ok


def test_c10_trained_sampling(trained):
    net, model = trained
    res = simulate(NetModel(net, model.path), SimConfig(n_steps=500, n_samples=20_000, seed=10))
    mass, dist = mode_stats(res.samples)
    ok = report("C10 trained sampling", abs(mass - 0.5) <= 0.04, f"mass(x>0) {mass:.4f}, mean distance {dist:.4f}")
    assert ok


def test_c11_bregman_algebra():
    rng = np.random.default_rng(11)
    worst = {"identity": 0.0, "negative": 0.0, "affine": 0.0}
    for d in (Bregman("mse"), Bregman("rate_kl"), Bregman.parse("mse_cosh:1"), Bregman.parse("mse_exp:1")):
        draw = (lambda n: rng.lognormal(0, 1, n)) if d.name == "rate_kl" else (lambda n: rng.normal(0, 2, n))
        for _ in range(1000):
            a, a2, b, w = draw(3), draw(3), draw(3), rng.uniform()
            worst["identity"] = max(worst["identity"], abs(bregman_value(d, a, a)))
            worst["negative"] = max(worst["negative"], -bregman_value(d, a, b))
            lhs = bregman_grad_pred(d, w * a + (1 - w) * a2, b)
            rhs = w * bregman_grad_pred(d, a, b) + (1 - w) * bregman_grad_pred(d, a2, b)
            worst["affine"] = max(worst["affine"], float(np.abs(lhs - rhs).max()))
    ok = worst["identity"] <= 1e-12 and worst["negative"] <= 1e-12 and worst["affine"] <= 1e-10
    report("C11 Bregman algebra", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


CLI_CONFIGS = {
    "verify-kfe": {},
    "simulate": {"sim": {"n_steps": 200, "n_samples": 4000, "record_trajectories": True}},
    "train": {"train": {"steps": 500, "width": 32}, "sim": {"n_steps": 200, "n_samples": 2000}},
    "bench-toy": {"bench": {"n_steps": 100, "n_samples": 2000}},
}


def test_c12_cli_determinism(tmp_path):
    def files(out):
        return {f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out)) if f.endswith((".csv", ".json"))}

    diffs = []
    for command, obj in CLI_CONFIGS.items():
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(obj))
        a, b = str(tmp_path / f"{command}-a"), str(tmp_path / f"{command}-b")
        codes = (run(command, str(cfg), seed=12, out=a), run(command, str(cfg), seed=12, out=b))
        if codes != (0, 0) or files(a) != files(b):
            diffs.append(command)
    ok = report("C12 CLI determinism", not diffs, f"{len(CLI_CONFIGS)} commands, differing {diffs}")
    assert ok
