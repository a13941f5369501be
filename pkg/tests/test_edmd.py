"""Snapshot assembly and EDMD fitting: exact recovery on linear and bilinear
plants, structural invariants of the extracted (A, B, C), and persistence.
"""

import numpy as np
import pytest

from klmpc import edmd
from klmpc.edmd import (
    KoopmanModel,
    Snapshot,
    Trajectory,
    assemble_snapshots,
    fit_koopman,
    fit_linear_baseline,
    one_step_rmse,
    predict_one_step,
    simulate_lifted,
)
from klmpc.lifting import identity_basis, lift_g

from oracles import bilinear_basis, fit_bilinear_model, simulate_bilinear

TS = 0.05


def linear_trajectory(A, B, K, rng, x0=None):
    n, m = A.shape[0], B.shape[1]
    x = rng.normal(size=n) if x0 is None else np.asarray(x0, dtype=float)
    ys = np.zeros((K, n))
    us = rng.uniform(-1.0, 1.0, size=(K, m))
    for k in range(K):
        ys[k] = x
        x = A @ x + B @ us[k]
    return Trajectory(t=np.arange(K) * TS, y=ys, u=us)


def test_snapshot_count_minimal():
    rng = np.random.default_rng(0)
    traj = linear_trajectory(np.eye(1) * 0.5, np.eye(1), 3, rng)
    assert len(assemble_snapshots([traj], d=1)) == 1
    assert len(assemble_snapshots([traj], d=0)) == 2


def test_snapshots_never_straddle_trajectories():
    rng = np.random.default_rng(1)
    t1 = linear_trajectory(np.eye(1) * 0.5, np.eye(1), 10, rng)
    t2 = linear_trajectory(np.eye(1) * 0.5, np.eye(1), 6, rng)
    snaps = assemble_snapshots([t1, t2], d=1)
    assert len(snaps) == (10 - 2) + (6 - 2)


def test_snapshot_b_is_next_a():
    rng = np.random.default_rng(2)
    traj = linear_trajectory(np.eye(2) * 0.8, np.ones((2, 1)), 12, rng)
    for d in (0, 1, 2):
        snaps = assemble_snapshots([traj], d)
        for s, s_next in zip(snaps[:-1], snaps[1:]):
            assert np.array_equal(s.b, s_next.a)


def test_assemble_rejects_bad_trajectories():
    rng = np.random.default_rng(3)
    short = linear_trajectory(np.eye(1) * 0.5, np.eye(1), 2, rng)
    with pytest.raises(ValueError):
        assemble_snapshots([short], d=1)
    bad_t = Trajectory(t=np.array([0.0, 0.05, 0.2]), y=np.zeros((3, 1)),
                       u=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        assemble_snapshots([bad_t], d=0)


def test_exact_recovery_scalar():
    # x+ = 0.9 x + 0.1 u recovered exactly from noiseless data
    rng = np.random.default_rng(4)
    traj = linear_trajectory(np.array([[0.9]]), np.array([[0.1]]), 50, rng)
    snaps = assemble_snapshots([traj], d=0)
    model = fit_koopman(snaps, identity_basis(1, 1, 0), TS)
    assert abs(model.A[0, 0] - 0.9) < 1e-8
    assert abs(model.B[0, 0] - 0.1) < 1e-8


def test_exact_recovery_multivariate():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(4, 2))
    trajs = [linear_trajectory(A, B, 30, rng) for _ in range(3)]
    model = fit_linear_baseline(assemble_snapshots(trajs, d=0), n=4, m=2,
                                d=0, Ts=TS)
    assert np.linalg.norm(model.A - A) < 1e-8
    assert np.linalg.norm(model.B - B) < 1e-8
    assert model.bottom_block_residual < 1e-8


def test_frozen_system_gives_identity():
    # b == a with zero input for varied states: the fit must be the identity
    snaps = [Snapshot(a=np.array([x]), b=np.array([x]), u=np.array([0.0]))
             for x in (1.0, -2.0, 0.5, 3.0)]
    model = fit_koopman(snaps, identity_basis(1, 1, 0), TS)
    assert abs(model.A[0, 0] - 1.0) < 1e-8
    assert abs(model.B[0, 0]) < 1e-8


def test_duplicate_snapshots_invariance():
    rng = np.random.default_rng(6)
    traj = linear_trajectory(np.array([[0.7]]), np.array([[0.3]]), 30, rng)
    snaps = assemble_snapshots([traj], d=0)
    m1 = fit_koopman(snaps, identity_basis(1, 1, 0), TS)
    m2 = fit_koopman(snaps + snaps, identity_basis(1, 1, 0), TS)
    assert np.allclose(m1.A, m2.A, atol=1e-8)
    assert np.allclose(m1.B, m2.B, atol=1e-8)


def test_output_matrix_is_projection():
    model = fit_bilinear_model()
    n = model.n
    assert np.array_equal(model.C[:, :n], np.eye(n))
    assert np.array_equal(model.C[:, n:], np.zeros((n, model.n_z - n)))
    # C @ lift == the leading output coordinates, exactly
    yd = np.array([0.37])
    assert np.array_equal(model.C @ model.lift(yd, 0.1), yd)


def test_bilinear_heldout_one_step():
    model = fit_bilinear_model()
    rng = np.random.default_rng(99)
    held = simulate_bilinear(0.15, 60, rng)
    assert one_step_rmse(model, [held]) < 1e-8


def test_fit_requires_enough_snapshots():
    rng = np.random.default_rng(7)
    traj = linear_trajectory(np.array([[0.9]]), np.array([[0.1]]), 2, rng)
    snaps = assemble_snapshots([traj], d=0)  # 1 snapshot < n_z + m = 2
    with pytest.raises(ValueError):
        fit_koopman(snaps, identity_basis(1, 1, 0), TS)
    with pytest.raises(ValueError):
        fit_koopman([], identity_basis(1, 1, 0), TS)


def test_with_load_requires_annotations():
    rng = np.random.default_rng(8)
    traj = linear_trajectory(np.array([[0.9]]), np.array([[0.1]]), 20, rng)
    snaps = assemble_snapshots([traj], d=0)
    with pytest.raises(ValueError):
        fit_koopman(snaps, bilinear_basis(), TS, with_load=True)


def test_baseline_dimension():
    rng = np.random.default_rng(9)
    A = np.eye(4) * 0.5
    B = np.ones((4, 2)) * 0.1
    trajs = [linear_trajectory(A, B, 30, rng) for _ in range(2)]
    model = fit_linear_baseline(assemble_snapshots(trajs, d=1), n=4, m=2,
                                d=1, Ts=TS)
    assert model.n_z == 4 + (4 + 2) * 1
    assert model.p == 0


def test_predict_one_step_identity_model():
    basis = identity_basis(2, 1, 0)
    model = KoopmanModel(A=np.eye(2), B=np.zeros((2, 1)),
                         C=np.hstack([np.eye(2), np.zeros((2, 0))]),
                         basis=basis, Ts=TS)
    yd = np.array([1.5, -0.5])
    assert np.array_equal(predict_one_step(model, yd, 0.3), yd)


def test_simulate_lifted_matches_chained_steps():
    model = fit_bilinear_model()
    rng = np.random.default_rng(10)
    z = model.lift(np.array([0.4]), 0.2)
    inputs = rng.uniform(-1.0, 1.0, size=(12, 1))
    outs = simulate_lifted(model, z, inputs)
    zz = z.copy()
    for j, u in enumerate(inputs):
        zz = model.A @ zz + model.B @ u
        assert np.allclose(outs[j], model.C @ zz, atol=1e-12)
    with pytest.raises(ValueError):
        simulate_lifted(model, np.zeros(model.n_z + 1), inputs)


def test_lift_requires_load_when_augmented():
    model = fit_bilinear_model()
    with pytest.raises(ValueError):
        model.lift(np.array([0.1]))


def test_model_json_round_trip(tmp_path):
    model = fit_bilinear_model()
    path = tmp_path / "model.json"
    edmd.save_model(model, path)
    loaded = edmd.load_model(path)
    assert np.array_equal(loaded.A, model.A)
    assert np.array_equal(loaded.B, model.B)
    assert np.array_equal(loaded.C, model.C)
    assert loaded.p == model.p and loaded.Ts == model.Ts
    yd = np.array([0.7])
    assert np.array_equal(loaded.lift(yd, 0.1), model.lift(yd, 0.1))


def test_trajectory_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    trajs = [simulate_bilinear(w, 8, rng) for w in (0.0, 0.25)]
    path = tmp_path / "data.csv"
    edmd.save_trajectories(trajs, path)
    loaded = edmd.load_trajectories(path)
    assert len(loaded) == 2
    for orig, back in zip(trajs, loaded):
        assert np.array_equal(orig.t, back.t)
        assert np.array_equal(orig.y, back.y)
        assert np.array_equal(orig.u, back.u)
        assert np.array_equal(orig.w, back.w)


def test_trajectory_ts_validation():
    with pytest.raises(ValueError):
        Trajectory(t=np.array([0.0]), y=np.zeros((1, 1)), u=np.zeros((1, 1))).Ts
