import itertools
import math

import numpy as np
import pytest

from tpower_uap.attack import (
    AttackConfig,
    Perturbation,
    cardinality_schedule,
    random_perturbation,
    sgd_layer_max_attack,
    sv_attack,
    top_k_for_damage,
    tpower_attack,
    tpower_iterate,
)
from tpower_uap.attack.baselines import project_lp_ball
from tpower_uap.attack.core import initial_cardinality
from tpower_uap.diffnet import Dense, Model, build_model
from tpower_uap.evaluation import damaged_pixel_fraction
from tpower_uap.exceptions import DegenerateIterateError, EmptyDataError, FormatError, InvalidKError
from tpower_uap.jacobian import BatchJacobian, MatrixOperator
from tpower_uap.numerics import INFINITY, SparsityPattern, lp_norm


def single(M):
    return BatchJacobian([MatrixOperator(M)])


def psd_spectrum_matrix(rng, m, n):
    U, _ = np.linalg.qr(rng.normal(size=(m, m)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = np.sort(rng.uniform(0.1, 3.0, size=min(m, n)))[::-1]
    return U[:, : len(s)] @ np.diag(s) @ V[:, : len(s)].T


# ---- schedule

def test_schedule_example():
    assert cardinality_schedule(1000, 10, 100, 10) == 630


def test_schedule_fixed_point():
    assert cardinality_schedule(10, 10, 100, 10) == 10
    assert cardinality_schedule(10, 10, 100, 10, k_initial=1000) == 10


@pytest.mark.parametrize("k0,top_k,n_steps,rs", [(1000, 10, 100, 10), (1024, 52, 40, 4), (3072, 1, 50, 5),
                                                  (500, 499, 100, 10), (98, 13, 28, 7)])
def test_schedule_reaches_top_k(k0, top_k, n_steps, rs):
    # exact arrival needs reduction_steps to divide n_steps; the attack projects at the end otherwise
    k = k0
    seen = [k]
    for _ in range(n_steps // rs):
        k = cardinality_schedule(k, top_k, n_steps, rs, k_initial=k0)
        seen.append(k)
    assert k == top_k
    assert all(a >= b for a, b in zip(seen, seen[1:]))


def test_initial_cardinality():
    assert initial_cardinality(1.0, 100, 5) == 100
    assert initial_cardinality(0.25, 100, 5) == 25
    assert initial_cardinality(0.01, 100, 5) == 5
    with pytest.raises(InvalidKError):
        initial_cardinality(1.0, 4, 5)


@pytest.mark.parametrize("h,w,ps,expected", [(224, 224, 1, 2509), (224, 224, 4, 157), (299, 299, 1, 4471),
                                             (300, 300, 1, 4500), (32, 32, 1, 52)])
def test_top_k_for_damage(h, w, ps, expected):
    assert top_k_for_damage(h, w, ps, 0.05) == expected


# ---- oracles on explicit operators

@pytest.mark.parametrize("shape", [(8, 12), (40, 60)])
def test_dense_iteration_matches_svd(shape):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=shape)
        n = shape[1]
        res = tpower_iterate(single(M), SparsityPattern.singletons(n), n, 1000, q=2, p=2, seed=seed)
        _, s, Vt = np.linalg.svd(M)
        assert abs(res.eps @ Vt[0]) >= 0.999
        rq = np.sum((M @ res.eps) ** 2)
        assert abs(rq - s[0] ** 2) <= 1e-6 * s[0] ** 2


def brute_force_sparse_opt(M, k):
    best = 0.0
    for S in itertools.combinations(range(M.shape[1]), k):
        best = max(best, np.linalg.norm(M[:, list(S)], 2) ** 2)
    return best


def test_sparse_iteration_against_exhaustive_subsets():
    good = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        M = psd_spectrum_matrix(rng, 10, 10)
        opt = brute_force_sparse_opt(M, 2)
        # the library defaults: 100 steps, one reduction every 10
        res = tpower_iterate(single(M), SparsityPattern.singletons(10), 2, 100, q=2, p=2, init_truncation=1.0,
                             reduction_steps=10, seed=seed)
        val = float(np.sum((M @ res.eps) ** 2))
        assert np.count_nonzero(res.eps) <= 2
        assert val <= opt * (1 + 1e-12)
        good += val >= 0.95 * opt
    assert good >= 18


@pytest.mark.parametrize("k,n", [(1, 6), (3, 10), (5, 12)])
def test_planted_rank_one_recovery(k, n):
    rng = np.random.default_rng(k * 100 + n)
    support = np.sort(rng.choice(n, size=k, replace=False))
    v = np.zeros(n)
    v[support] = rng.normal(size=k) + np.sign(rng.normal(size=k))
    u = rng.normal(size=7)
    M = 3.0 * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    res = tpower_iterate(single(M), SparsityPattern.singletons(n), k, 5, q=2, p=2, init_truncation=1.0,
                         reduction_steps=1, seed=k)
    np.testing.assert_array_equal(np.flatnonzero(res.eps), support)
    assert abs(res.eps @ v / np.linalg.norm(v)) >= 1 - 1e-9


def test_monotone_ascent_fixed_k():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ops = BatchJacobian([MatrixOperator(rng.normal(size=(6, 15))) for _ in range(3)])
        res = tpower_iterate(ops, SparsityPattern.singletons(15), 4, 40, q=2, p=2, init_truncation=4 / 15,
                             reduction_steps=None, seed=seed)
        t = res.objective_trace
        assert len(t) == 40
        assert all(b >= a - 1e-9 for a, b in zip(t, t[1:]))


def test_monotone_ascent_with_patch_blocks():
    rng = np.random.default_rng(77)
    pat = SparsityPattern.from_grid(4, 4, 2, 2)
    ops = BatchJacobian([MatrixOperator(rng.normal(size=(5, 32))) for _ in range(2)])
    res = tpower_iterate(ops, pat, 2, 30, q=2, p=2, init_truncation=0.5, reduction_steps=None, seed=1)
    t = res.objective_trace
    assert all(b >= a - 1e-9 for a, b in zip(t, t[1:]))
    assert len(pat.active_blocks(res.eps)) <= 2


@pytest.mark.parametrize("q,p", [(2, 2), (1, INFINITY), (3, INFINITY), (2, 1.5)])
def test_sign_symmetry(q, p):
    rng = np.random.default_rng(5)
    M = rng.normal(size=(9, 14))
    pat = SparsityPattern.singletons(14)
    eps0 = rng.uniform(-1, 1, size=14)
    a = tpower_iterate(single(M), pat, 3, 20, q=q, p=p, reduction_steps=4, eps0=eps0)
    b = tpower_iterate(single(M), pat, 3, 20, q=q, p=p, reduction_steps=4, eps0=-eps0)
    np.testing.assert_array_equal(b.eps, -a.eps)


def test_norm_support_and_k_trace():
    rng = np.random.default_rng(6)
    ops = BatchJacobian([MatrixOperator(rng.normal(size=(4, 30))) for _ in range(3)])
    for p in (2.0, 3.0, INFINITY):
        res = tpower_iterate(ops, SparsityPattern.singletons(30), 3, 20, q=1.5, p=p, init_truncation=1.0,
                             reduction_steps=4, seed=2)
        assert abs(lp_norm(res.eps, p) - 1) <= 1e-9
        assert np.count_nonzero(res.eps) <= 3
        k, expected = 30, []
        for s in range(1, 21):
            expected.append(k)
            if s % 4 == 0:
                k = cardinality_schedule(k, 3, 20, 4, k_initial=30)
        assert res.k_trace == expected


def test_degenerate_operator_aborts():
    with pytest.raises(DegenerateIterateError):
        tpower_iterate(single(np.zeros((3, 4))), SparsityPattern.singletons(4), 2, 5, seed=0)


def test_collapse_restarts_once():
    M = np.array([[1.0, 0.0]])
    res = tpower_iterate(single(M), SparsityPattern.singletons(2), 1, 3, eps0=np.array([0.0, 1.0]))
    assert res.restarted
    np.testing.assert_allclose(np.abs(res.eps), [1, 0])


def test_iterate_determinism():
    rng = np.random.default_rng(8)
    ops = BatchJacobian([MatrixOperator(rng.normal(size=(5, 20)))])
    a = tpower_iterate(ops, SparsityPattern.singletons(20), 4, 15, q=1, p=INFINITY, reduction_steps=3, seed=4)
    b = tpower_iterate(ops, SparsityPattern.singletons(20), 4, 15, q=1, p=INFINITY, reduction_steps=3, seed=4)
    assert a.eps.tobytes() == b.eps.tobytes()
    assert a.objective_trace == b.objective_trace


# ---- attacks on models

@pytest.fixture(scope="module")
def conv_setup():
    arch = [{"kind": "conv2d", "filters": 4, "kernel": 3, "padding": 1, "name": "conv"}, {"kind": "relu", "name": "act"},
            {"kind": "maxpool", "window": 2}, {"kind": "flatten"}, {"kind": "dense", "name": "out"}]
    model = build_model(arch, (10, 10, 3), 4, seed=3)
    X = np.random.default_rng(0).random((16, 10, 10, 3))
    return model, X


def test_tpower_attack_invariants(conv_setup):
    model, X = conv_setup
    k = top_k_for_damage(10, 10, 1, 0.05)
    for layer in ("conv", "act", "out"):
        cfg = AttackConfig(layer=layer, top_k=k, q=1, p=INFINITY, n_steps=12, reduction_steps=3, seed=1)
        pert = tpower_attack(model, X, cfg)
        assert pert.eps.shape == model.input_shape
        assert abs(pert.norm() - 1) <= 1e-9
        assert len(pert.support) <= k
        assert set(np.unique(pert.eps)) <= {-1.0, 0.0, 1.0}
        assert damaged_pixel_fraction(pert) <= 0.05 + 1 / 100
        assert pert.source_model_id == model.fingerprint()
        assert len(pert.objective_trace) == 12


def test_tpower_attack_patch_support(conv_setup):
    model, X = conv_setup
    cfg = AttackConfig(layer="act", top_k=2, q=2, p=INFINITY, patch_size=3, n_steps=8, reduction_steps=2)
    pert = tpower_attack(model, X, cfg)
    mask = np.any(pert.eps != 0, axis=2)
    assert len(pert.support) == 2
    assert mask.sum() <= 18
    # every channel of an active patch is perturbed
    assert np.all((pert.eps != 0) == mask[..., None])


def test_tpower_attack_deterministic(conv_setup, tmp_path):
    model, X = conv_setup
    cfg = AttackConfig(layer="act", top_k=5, q=1, n_steps=6, reduction_steps=2, seed=9)
    tpower_attack(model, X, cfg).save(tmp_path / "a.tpp")
    tpower_attack(model, X, cfg).save(tmp_path / "b.tpp")
    assert (tmp_path / "a.tpp").read_bytes() == (tmp_path / "b.tpp").read_bytes()


def test_sv_equals_full_cardinality_tpower(conv_setup, tmp_path):
    model, X = conv_setup
    sv = sv_attack(model, X, "act", q=2, p=INFINITY, n_steps=6, seed=3, reduction_steps=3)
    cfg = AttackConfig(layer="act", top_k=100, q=2, p=INFINITY, n_steps=6, init_truncation=1.0, reduction_steps=3,
                       seed=3)
    tp = tpower_attack(model, X, cfg)
    assert sv.eps.tobytes() == tp.eps.tobytes()
    sv.save(tmp_path / "sv.tpp")
    tp.save(tmp_path / "tp.tpp")
    assert (tmp_path / "sv.tpp").read_bytes() == (tmp_path / "tp.tpp").read_bytes()
    assert len(sv.support) == 100


def test_sv_attack_matches_svd_on_linear_model():
    rng = np.random.default_rng(12)
    W = rng.normal(size=(8, 12))
    model = Model([Dense(W, rng.normal(size=8))], (12,))
    pert = sv_attack(model, rng.normal(size=(3, 12)), 0, q=2, p=2, n_steps=500)
    v = np.linalg.svd(W)[2][0]
    assert abs(pert.eps @ v) >= 0.999
    assert abs(lp_norm(pert.eps, 2) - 1) <= 1e-9


def test_empty_batch_rejected(conv_setup):
    model, _ = conv_setup
    with pytest.raises(EmptyDataError):
        tpower_attack(model, np.zeros((0, 10, 10, 3)), AttackConfig(layer=0, top_k=1, n_steps=1, reduction_steps=1))


# ---- SGD baseline

def test_sgd_zero_lr_keeps_projected_start():
    rng = np.random.default_rng(0)
    model = Model([Dense(rng.normal(size=(3, 5)))], (5,))
    pert = sgd_layer_max_attack(model, rng.normal(size=(4, 5)), 0, q=2, p=2, steps=5, lr=0.0, seed=4)
    start = project_lp_ball(np.random.default_rng(4).uniform(-1, 1, size=(5,)), 2)
    np.testing.assert_array_equal(pert.eps, start)


def test_sgd_linear_case_matches_sv():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(6, 10))
    model = Model([Dense(W, rng.normal(size=6))], (10,))
    X = rng.normal(size=(4, 10))
    sgd = sgd_layer_max_attack(model, X, 0, q=2, p=2, magnitude=1.0, steps=400, lr=0.05, seed=0)
    sv = sv_attack(model, X, 0, q=2, p=2, n_steps=300)
    cos = abs(sgd.eps @ sv.eps) / (np.linalg.norm(sgd.eps) * np.linalg.norm(sv.eps))
    assert cos >= 0.99


def test_sgd_trace_non_decreasing_on_linear_model():
    rng = np.random.default_rng(2)
    model = Model([Dense(rng.normal(size=(4, 6)))], (6,))
    pert = sgd_layer_max_attack(model, rng.normal(size=(3, 6)), 0, q=2, p=INFINITY, steps=50, lr=1e-3, seed=1)
    t = pert.objective_trace
    assert all(b >= a - 1e-12 for a, b in zip(t, t[1:]))
    assert np.abs(pert.eps).max() <= 1


@pytest.mark.parametrize("p", [1.0, 2.0, INFINITY])
def test_project_lp_ball(p):
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=7) * 3
        w = project_lp_ball(v, p)
        assert lp_norm(w, p) <= 1 + 1e-12
    inside = np.full(4, 0.1)
    np.testing.assert_array_equal(project_lp_ball(inside, p), inside)


# ---- random baseline and perturbation files

def test_random_perturbation_budget():
    pert = random_perturbation((8, 8, 3), 5, 1, INFINITY, seed=0)
    assert len(pert.support) == 5
    assert set(np.unique(pert.eps)) <= {-1.0, 0.0, 1.0}
    other = random_perturbation((8, 8, 3), 5, 1, INFINITY, seed=1)
    assert pert.eps.tobytes() != other.eps.tobytes()


def test_perturbation_roundtrip_and_tamper(conv_setup, tmp_path):
    model, X = conv_setup
    pert = tpower_attack(model, X, AttackConfig(layer="conv", top_k=4, n_steps=4, reduction_steps=2, q=3))
    path = tmp_path / "p.tpp"
    pert.save(path)
    back = Perturbation.load(path)
    assert back.eps.tobytes() == pert.eps.tobytes()
    assert back.config == pert.config
    assert back.objective_trace == pert.objective_trace
    raw = path.read_bytes()
    # corrupt one stored value so that the support no longer matches
    zero_pos = len(raw) - 8 * (pert.eps.size - int(np.flatnonzero(pert.eps.ravel() == 0)[0]))
    bad = raw[:zero_pos] + np.float64(0.5).tobytes() + raw[zero_pos + 8 :]
    (tmp_path / "bad.tpp").write_bytes(bad)
    with pytest.raises(FormatError):
        Perturbation.load(tmp_path / "bad.tpp")


def test_config_validation_and_roundtrip():
    cfg = AttackConfig(layer="relu1", top_k=3, q=2, p=INFINITY)
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["p"] == "inf"
    with pytest.raises(ValueError):
        AttackConfig(layer=0, top_k=3, n_steps=5, reduction_steps=6)
    with pytest.raises(ValueError):
        AttackConfig(layer=0, top_k=3, init_truncation=0)
    with pytest.raises(ValueError):
        AttackConfig(layer=0, top_k=3, q=math.inf)
    with pytest.raises(InvalidKError):
        AttackConfig(layer=0, top_k=0)
