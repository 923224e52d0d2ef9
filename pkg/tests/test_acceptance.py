"""Acceptance criteria 1-10.

Each test prints one ``[PASS]`` / ``[FAIL]`` line with the measured value and
runtime, then asserts at the stated tolerance.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

import oracles
from facemap import synthetic
from facemap.audio import FeatureMatrix, features_to_windows, upsample_linear
from facemap.emotion import RegionWeightField, ReferenceBank, augment_emotion, build_region_weights, nearest_calm_exemplar
from facemap.geodesics import build_heat_context, geodesic_from_source
from facemap.geometry_map import decode, encode, export_png
from facemap.losses import (
    BatchPredictions,
    adversarial_loss,
    classification_error,
    classification_loss_fake,
    classification_loss_real,
    discriminator_objective,
    generator_objective,
    reconstruction_error,
    reconstruction_loss,
    velocity_error,
)
from facemap.mds import classical_mds_2d, embedding_strain
from facemap.mesh import EmotionLabel
from facemap.morphable import fit_sequence, project_sop, solve_pose_points


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed, budget):
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            tag = "PASS" if ok else "FAIL"
            print(f"\n[{tag}] criterion {number}: {detail} ({elapsed:.2f} s, budget {budget:g} s)")
        return ok

    return emit


def test_criterion_01_geometry_map_shape(report, template, template_atlas, tmp_path):
    from PIL import Image

    t0 = time.perf_counter()
    gmap = encode(template.mesh, template_atlas)
    export_png(gmap, tmp_path / "t.png")
    elapsed = time.perf_counter() - t0
    size = Image.open(tmp_path / "t.png").size
    ok = gmap.grid.shape == (128, 128, 3) and gmap.mask.shape == (128, 128) and size == (128, 128)
    assert report(1, ok, f"grid {gmap.grid.shape}, mask {gmap.mask.shape}, png {size}", elapsed, 1.0)


def test_criterion_02_geodesic_accuracy(report):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sphere = synthetic.icosphere(4)
        ctx = build_heat_context(sphere)
    v = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
    rng = np.random.default_rng(2024)
    errs = []
    for s in rng.choice(sphere.n_vertices, 20, replace=False):
        d = geodesic_from_source(ctx, sphere, int(s))
        exact = np.arccos(np.clip(v @ v[s], -1, 1))
        keep = exact > 0
        errs.append(np.abs(d[keep] - exact[keep]) / exact[keep])
    sphere_err = float(np.mean(np.concatenate(errs)))

    grid = synthetic.grid_mesh(21, 21)
    d = geodesic_from_source(build_heat_context(grid), grid, 0)
    exact = np.linalg.norm(grid.vertices - grid.vertices[0], axis=1)
    grid_err = float(np.mean(np.abs(d[1:] - exact[1:]) / exact[1:]))
    elapsed = time.perf_counter() - t0
    ok = sphere_err <= 0.05 and grid_err <= 0.02
    detail = f"icosphere mean rel. error {sphere_err:.4f} (<= 0.05), 21x21 grid corner source {grid_err:.4f} (<= 0.02)"
    assert report(2, ok, detail, elapsed, 30.0)


def test_criterion_03_mds_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2)) * [5.0, 2.0]
    D = squareform(pdist(X))
    emb = classical_mds_2d(D)
    E = squareform(pdist(emb.coords))
    off = ~np.eye(200, dtype=bool)
    rel = float(np.max(np.abs(E[off] - D[off]) / D[off]))
    best = embedding_strain(emb.coords, D)
    budget = np.linalg.norm(emb.coords)
    wins = 0
    for _ in range(100):
        Y = rng.normal(size=(200, 2))
        Y *= budget / np.linalg.norm(Y)
        wins += best < embedding_strain(Y, D)
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-7 and wins == 100
    assert report(3, ok, f"max rel. distance error {rel:.2e} (<= 1e-7), strain wins {wins}/100", elapsed, 10.0)


def test_criterion_04_round_trip(report, template, template_atlas):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    meshes = [template.mesh] + [synthetic.smooth_deformation(template.mesh, rng) for _ in range(20)]
    worst_max, worst_rms = 0.0, 0.0
    for m in meshes:
        out = decode(encode(m, template_atlas), template_atlas)
        err = np.linalg.norm(out.vertices - m.vertices, axis=1)
        diag = m.bbox_diagonal()
        worst_max = max(worst_max, err.max() / (2 * diag / 128))
        worst_rms = max(worst_rms, np.sqrt(np.mean(err ** 2)) / (0.005 * diag))
    elapsed = time.perf_counter() - t0
    ok = worst_max <= 1 and worst_rms <= 1
    detail = f"21 meshes, worst max error {worst_max:.3f} of 2*diag/128, worst RMS {worst_rms:.3f} of 0.5% diag"
    assert report(4, ok, detail, elapsed, 30.0)


def test_criterion_05_sop_fitting(report, template):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    X = template.mesh.vertices[template.mesh.landmark_indices]
    worst = 0.0
    for _ in range(100):
        pose = synthetic.random_pose(rng, math.pi)
        est = solve_pose_points(project_sop(pose, X), X)
        worst = max(worst, np.linalg.norm(est.R - pose.R), abs(est.s - pose.s) / pose.s,
                    np.linalg.norm(est.T - pose.T))
    sigma = 0.5
    worst_rms = 0.0
    for _ in range(100):
        pose = synthetic.random_pose(rng, math.pi)
        x = project_sop(pose, X) + rng.normal(scale=sigma, size=(len(X), 2))
        r = x - project_sop(solve_pose_points(x, X), X)
        worst_rms = max(worst_rms, float(np.sqrt(np.mean(r * r))))

    model, lmk = synthetic.bilinear_model()
    frames, *_ = synthetic.synthetic_sequence(model, lmk, 8, seed=11, noise=sigma)
    fit = fit_sequence(frames, model, id_frames=5, max_iters=100, ridge=1.0)
    rises = 0
    for trace in [fit.identity_trace] + [f.energy_trace for f in fit.frames]:
        t = np.asarray(trace)
        rises += int(np.sum(t[1:] > t[:-1] * (1 + 1e-10)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and worst_rms <= 1.2 * sigma and rises == 0
    detail = (f"noiseless worst pose error {worst:.1e} (< 1e-6), noisy max residual RMS "
              f"{worst_rms:.3f} (<= {1.2 * sigma}), energy increases {rises}")
    assert report(5, ok, detail, elapsed, 30.0)


def test_criterion_06_bilinear_identifiability(report):
    t0 = time.perf_counter()
    model, lmk = synthetic.bilinear_model()
    frames, w_id, poses, w_exps = synthetic.synthetic_sequence(model, lmk, 10)
    fit = fit_sequence(frames, model)

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    worst = rel(fit.w_id, w_id)
    for f, p, w in zip(fit.frames, poses, w_exps):
        worst = max(worst, rel(f.w_exp, w), abs(f.pose.s - p.s) / p.s,
                    float(np.linalg.norm(f.pose.R - p.R)), rel(f.pose.T, p.T))
    elapsed = time.perf_counter() - t0
    assert report(6, worst <= 1e-4, f"worst relative parameter error {worst:.1e} (<= 1e-4)", elapsed, 10.0)


def test_criterion_07_emotion_augmentation(report):
    t0 = time.perf_counter()
    face = synthetic.face_template()
    bank = ReferenceBank(tuple(synthetic.reference_bank(face)), face.mesh.landmark_indices)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        weights = build_region_weights(face.mesh, face.upper_boundary, face.lower_boundary, 20.0)
        q = synthetic.smooth_deformation(face.mesh, np.random.default_rng(7), 0.02)
        g1 = augment_emotion(q, "surprise", bank, weights, 0.5).vertices - q.vertices
        g2 = augment_emotion(q, "surprise", bank, weights, 1.0).vertices - q.vertices
        linearity = float(np.max(np.abs(g2 - 2 * g1)))

        calm = bank.get("id00", "calm")
        out = augment_emotion(calm, "happy", bank, weights, 1.0)
        zero = weights.lower == 0
        unchanged = bool(np.array_equal(out.vertices[zero], calm.vertices[zero]))
        _, self_dist = nearest_calm_exemplar(calm, bank)

        ones = RegionWeightField(np.ones(calm.n_vertices), np.ones(calm.n_vertices))
        transfer = 0.0
        for target, expr in (("angry", "eyebrows_down"), ("surprise", "eyebrows_up"), ("happy", "grin")):
            o = augment_emotion(calm, target, bank, ones, 1.0)
            transfer = max(transfer, float(np.max(np.abs(o.vertices - bank.get("id00", expr).vertices))))
    elapsed = time.perf_counter() - t0
    ok = linearity <= 1e-10 and unchanged and self_dist == 0.0 and transfer < 1e-6
    detail = (f"gain linearity {linearity:.1e} (<= 1e-10), zero-weight vertices unchanged {unchanged}, "
              f"self-match distance {self_dist}, exact transfer error {transfer:.1e} (< 1e-6)")
    assert report(7, ok, detail, elapsed, 5.0)


def test_criterion_08_audio_windows(report):
    t0 = time.perf_counter()
    feat = FeatureMatrix(np.random.default_rng(8).random((60, 29)), rate=30)
    win = features_to_windows(feat, 60, 16)
    centers_exact = bool(np.array_equal(win.centers().frames, upsample_linear(feat, 120).frames))
    elapsed = time.perf_counter() - t0
    ok = win.tensor.shape == (120, 16, 29) and centers_exact
    assert report(8, ok, f"tensor {win.tensor.shape}, centers exact {centers_exact}", elapsed, 1.0)


def test_criterion_09_loss_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    labels = list(EmotionLabel)
    worst = 0.0
    for _ in range(1000):
        B = 8
        b = BatchPredictions(
            rng.uniform(1e-3, 1 - 1e-3, B), rng.uniform(1e-3, 1 - 1e-3, B),
            np.log(rng.uniform(1e-3, 1, B)), np.log(rng.uniform(1e-3, 1, B)),
            tuple((rng.normal(size=(4, 3)), rng.normal(size=(4, 3))) for _ in range(B)),
        )
        adv = oracles.adversarial(b.d_src_real.tolist(), b.d_src_fake.tolist())
        cr = oracles.neg_mean(b.cls_logprob_real.tolist())
        cf = oracles.neg_mean(b.cls_logprob_fake.tolist())
        rec = oracles.l1_cycle(b.recon_pairs)
        P, Q = rng.normal(size=(2, 4, 6, 3))
        sub = [0, 2, 5]
        pl = [labels[k] for k in rng.integers(0, 4, 10)]
        tl = [labels[k] for k in rng.integers(0, 4, 10)]
        pairs = [
            (adversarial_loss(b), adv),
            (classification_loss_real(b), cr),
            (classification_loss_fake(b), cf),
            (reconstruction_loss(b), rec),
            (discriminator_objective(b), -adv + cr),
            (generator_objective(b), adv + cf + 10.0 * rec),
            (reconstruction_error(P, Q, sub), oracles.re(P.tolist(), Q.tolist(), sub)),
            (velocity_error(P, Q, sub), oracles.ve(P.tolist(), Q.tolist(), sub)),
            (classification_error(pl, tl), oracles.ce(pl, tl)),
        ]
        worst = max(worst, max(abs(a - o) for a, o in pairs))
    half = BatchPredictions(np.full(4, 0.5), np.full(4, 0.5), np.zeros(4), np.zeros(4))
    adv_half = abs(adversarial_loss(half) + 2 * math.log(2))
    P = rng.integers(-64, 64, size=(5, 7, 3)) / 8.0
    Q = rng.integers(-64, 64, size=(5, 7, 3)) / 8.0
    shift = np.array([3.5, -12.25, 0.125])
    ve_invariant = velocity_error(P + shift, Q) == velocity_error(P, Q)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and adv_half <= 1e-12 and ve_invariant
    detail = (f"1000 batches, worst oracle deviation {worst:.1e} (<= 1e-12), |L_adv(0.5) + 2 log 2| "
              f"{adv_half:.1e}, VE translation invariant {ve_invariant}")
    assert report(9, ok, detail, elapsed, 10.0)


def test_criterion_10_cli_determinism(report, tmp_path):
    from test_cli import pipeline, run, tree

    t0 = time.perf_counter()
    assets = tmp_path / "assets"
    code, _, err = run("make-synthetic", assets)
    assert code == 0, err
    s1 = pipeline(assets, tmp_path / "t1", 1)
    s8 = pipeline(assets, tmp_path / "t8", 8)
    a, b = tree(tmp_path / "t1"), tree(tmp_path / "t8")
    differ = [k for k in a if a.get(k) != b.get(k)] + sorted(set(b) - set(a))
    elapsed = time.perf_counter() - t0
    ok = not differ and s1 == s8
    detail = f"{len(s1)} subcommands, {len(a)} output files, differing files {len(differ)}, stdout equal {s1 == s8}"
    assert report(10, ok, detail, elapsed, 120.0)
