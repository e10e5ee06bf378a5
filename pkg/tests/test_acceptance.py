"""Acceptance suite: one test per release criterion, one printed line each.

Every test prints `[acceptance] <criterion>: PASS|FAIL (elapsed / budget)` to
the live terminal, then asserts the criterion and its time budget.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

import aesim.engine as eng
import aesim.surrogate as sg
from aesim.acquisition import AcquisitionConfig, acquisition_values
from aesim.dataset import extract_patches, generate_synthetic_dataset
from aesim.engine import (
    ExperimentConfig,
    StudySpec,
    apply_intervention,
    init_experiment,
    is_stagnant,
    run_study,
    step,
)
from aesim.latent import LatentDistribution, LatentEmbedding, pca_embed
from aesim.report import write_run_report, write_study_report
from aesim.sampling import (
    KdeModel,
    build_exclusion_model,
    build_gd_model,
    build_ud_model,
    build_uls_model,
    kde_density,
    kde_density_many,
    max_center_density,
    snap_to_indices,
)


def announce(capsys, name, ok, elapsed, budget, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f"  {detail}" if detail else ""
    with capsys.disabled():
        print(f"[acceptance] {name}: {status} ({elapsed:.2f}s / budget {budget:.0f}s){suffix}")
    assert ok, f"{name}: {detail}"
    assert elapsed < budget, f"{name} exceeded time budget: {elapsed:.2f}s >= {budget}s"


@pytest.fixture(scope="module")
def big_dataset():
    ds = generate_synthetic_dataset(64, 64, rng_seed=0)
    emb = pca_embed(extract_patches(ds.image, 8))
    return ds, emb


def test_gp_oracle_equivalence(small_patches, small_truth, capsys):
    """Frozen features: posterior mean/sigma match a dense direct solve to 1e-8."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    idx = rng.choice(len(small_patches), 5, replace=False)
    x, y = small_patches.patches[idx], small_truth[idx]
    model = sg.train(None, x, y, sg.TrainOpts(iters=50, rng_seed=1))
    query = small_patches.patches[rng.choice(len(small_patches), 40, replace=False)]
    pred = sg.predict(model, query)

    f_train = sg.features(model, x)
    f_q = sg.features(model, query)
    k = sg._kernel(model.params, f_train, f_train) + model.noise_variance * np.eye(5)
    k_star = sg._kernel(model.params, f_q, f_train)
    k_inv = np.linalg.inv(k)
    y_std = (y - model.y_mean) / model.y_scale
    mean = model.y_mean + model.y_scale * (k_star @ k_inv @ y_std)
    var = math.exp(model.params["log_out"]) - np.einsum("ij,jk,ik->i", k_star, k_inv, k_star)
    sigma = model.y_scale * np.sqrt(np.maximum(var, 0.0))

    err = max(float(np.max(np.abs(pred.mean - mean))), float(np.max(np.abs(pred.sigma - sigma))))
    elapsed = time.perf_counter() - t0
    announce(capsys, "GP oracle equivalence", err < 1e-8, elapsed, 1, f"max err {err:.2e}")


def test_dkl_gradient_check(small_patches, small_truth, capsys):
    """Analytic NLL gradients vs central finite differences at 5 random points."""
    t0 = time.perf_counter()
    base_rng = np.random.default_rng(0)
    idx = base_rng.choice(len(small_patches), 3, replace=False)
    x, y = small_patches.patches[idx], small_truth[idx]
    y_std = (y - y.mean()) / y.std()

    worst = 0.0
    for seed in (11, 22, 33, 44, 55):
        rng = np.random.default_rng(seed)
        params = sg.init_model(x.shape[1], rng).params
        for key in sg.SCALAR_PARAMS:
            params[key] = float(params[key] + 0.3 * rng.standard_normal())
        for key in sg.ARRAY_PARAMS:
            params[key] = params[key] + 0.1 * rng.standard_normal(params[key].shape)
        _, grads = sg.nll_and_grads(params, x, y_std)
        for key in sg.ALL_PARAMS:
            analytic = np.atleast_1d(np.asarray(grads[key], dtype=float)).ravel()
            base = np.atleast_1d(np.asarray(params[key], dtype=float))
            scalar = not isinstance(params[key], np.ndarray)
            h = 1e-4
            for i in range(base.size):
                up = base.ravel().copy()
                dn = base.ravel().copy()
                up[i] += h
                dn[i] -= h
                q_up = dict(params)
                q_dn = dict(params)
                q_up[key] = float(up[0]) if scalar else up.reshape(base.shape)
                q_dn[key] = float(dn[0]) if scalar else dn.reshape(base.shape)
                numeric = (
                    sg._nll_terms(q_up, x, y_std)["nll"] - sg._nll_terms(q_dn, x, y_std)["nll"]
                ) / (2 * h)
                rel = abs(analytic[i] - numeric) / max(abs(numeric), 1.0)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    announce(capsys, "DKL gradient check", worst < 1e-4, elapsed, 10, f"max rel err {worst:.2e}")


def test_ei_ucb_analytics(capsys):
    t0 = time.perf_counter()
    ei = AcquisitionConfig(kind="ei")
    mu_cfg = AcquisitionConfig(kind="mu")
    checks = []
    val = acquisition_values([2.0], [1.0], [2.0], ei)[0]
    checks.append(abs(val - 0.398942) <= 1e-6)
    checks.append(acquisition_values([1.0], [0.0], [2.0], ei)[0] == 0.0)
    checks.append(acquisition_values([3.0], [0.0], [2.0], ei)[0] == 1.0)
    rng = np.random.default_rng(4)
    invariant = True
    for _ in range(100):
        mu = rng.normal(size=40)
        sigma = np.abs(rng.normal(size=40)) + 1e-6
        a = np.argmax(acquisition_values(mu, sigma, None, mu_cfg))
        b = np.argmax(acquisition_values(mu, np.exp(2 * sigma) + sigma**3, None, mu_cfg))
        invariant &= a == b
    checks.append(invariant)
    elapsed = time.perf_counter() - t0
    announce(capsys, "EI/UCB analytics", all(checks), elapsed, 1)


def test_kde_analytics(capsys):
    t0 = time.perf_counter()
    checks = []
    single = KdeModel(np.zeros((1, 2)), 1.0)
    checks.append(abs(kde_density(single, [0.0, 0.0]) - 1.0 / (2 * math.pi)) < 1e-12)
    checks.append(
        abs(kde_density(single, [1.0, 0.0]) - math.exp(-0.5) / (2 * math.pi)) < 1e-12
    )

    model = KdeModel(np.array([[0.0, 0.0], [1.5, 1.0], [-1.0, 0.5]]), 0.6)
    rng = np.random.default_rng(5)
    lo, hi = np.array([-7.0, -7.0]), np.array([8.5, 8.0])
    pts = rng.uniform(lo, hi, size=(1_000_000, 2))
    integral = float(np.prod(hi - lo)) * float(np.mean(kde_density_many(model, pts)))
    checks.append(abs(integral - 1.0) <= 0.02)

    blob_rng = np.random.default_rng(6)
    a = blob_rng.normal(0.0, 0.3, size=(300, 2))
    b = blob_rng.normal(0.0, 0.3, size=(100, 2)) + np.array([10.0, 0.0])
    emb = LatentEmbedding(coords=np.vstack([a, b]), source="external")
    gd = build_gd_model(emb)
    n = 10_000
    draws = gd.sample(n, np.random.default_rng(7))
    near_a = int(np.sum(draws[:, 0] < 5.0))
    sigma = math.sqrt(n * 0.75 * 0.25)
    checks.append(abs(near_a - n * 0.75) <= 3 * sigma)
    elapsed = time.perf_counter() - t0
    announce(capsys, "KDE analytics", all(checks), elapsed, 30, f"integral {integral:.4f}")


def test_sampling_model_contracts(small_embedding, capsys):
    t0 = time.perf_counter()
    checks = []

    uls = build_uls_model(small_embedding)
    n = 100_000
    pts = uls.sample(n, np.random.default_rng(8))
    span = uls.bbox_max - uls.bbox_min
    u = (pts - uls.bbox_min) / span
    ix = np.minimum((u[:, 0] * 10).astype(int), 9)
    iy = np.minimum((u[:, 1] * 10).astype(int), 9)
    counts = np.bincount(ix * 10 + iy, minlength=100)
    chi2 = float(np.sum((counts - n / 100) ** 2 / (n / 100)))
    p = float(stats.chi2.sf(chi2, df=99))
    checks.append(p > 0.01)

    ud = build_ud_model(small_embedding)
    ud_pts = ud.sample(20_000, np.random.default_rng(9))
    threshold = ud.support_threshold * max_center_density(ud.kde)
    checks.append(bool(np.all(kde_density_many(ud.kde, ud_pts) >= threshold)))

    center = small_embedding.coords.mean(axis=0, keepdims=True)
    radius = LatentDistribution(small_embedding).pairwise_percentile(10.0)
    excl = build_exclusion_model(small_embedding, center, radius)
    excl_pts = excl.sample(100_000, np.random.default_rng(10))
    violations = int(np.sum(np.sum((excl_pts - center[0]) ** 2, axis=1) <= radius**2))
    checks.append(violations == 0)

    queries = np.random.default_rng(11).uniform(-3, 3, size=(1000, 2))
    snapped = snap_to_indices(small_embedding, queries)
    oracle_ok = True
    for q, j in zip(queries, snapped):
        d2 = np.sum((small_embedding.coords - q) ** 2, axis=1)
        oracle_ok &= int(j) == int(np.argmin(d2))
    checks.append(oracle_ok)
    elapsed = time.perf_counter() - t0
    announce(
        capsys,
        "sampling-model contracts",
        all(checks),
        elapsed,
        60,
        f"chi2 p={p:.3f}, exclusion violations={violations}",
    )


def test_loop_protocol_fidelity(small_dataset, small_embedding, capsys):
    """5 seeds, 20 BO steps, 5 intervention points, then BO resumes."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        acquisition=AcquisitionConfig(kind="mu"),
        seed_model="gd",
        n_seed=5,
        budget=35,
        train_iters=20,
        master_seed=13,
    )
    state = init_experiment(small_dataset, small_embedding, cfg)
    for _ in range(20):
        step(state)
    apply_intervention(state, {"type": "exclusion"}, n_points=5)
    step(state)

    sources = [r.source for r in state.trace]
    checks = [
        sources[:5] == ["seed"] * 5,
        sources[5:25] == ["bo"] * 20,
        sources[25:30] == ["intervention"] * 5,
        sources[30] == "bo",
        len(set(r.index for r in state.trace)) == len(state.trace),
        [r.step for r in state.trace] == list(range(len(state.trace))),
        len(state.curve) == len(state.trace) - cfg.n_seed + 1,
    ]
    elapsed = time.perf_counter() - t0
    announce(capsys, "loop protocol fidelity", all(checks), elapsed, 10)


def test_end_to_end_learning_trend(big_dataset, capsys):
    """64x64, MU, 50 steps: sigma and MAE both improve on >= 9 of 10 seeds."""
    t0 = time.perf_counter()
    ds, emb = big_dataset
    wins = 0
    details = []
    for seed in range(10):
        cfg = ExperimentConfig(
            acquisition=AcquisitionConfig(kind="mu"),
            seed_model="gd",
            n_seed=5,
            budget=55,
            train_iters=200,
            master_seed=seed,
        )
        state = init_experiment(ds, emb, cfg)
        while state.status == "running":
            step(state)
        ms = [e.mean_sigma for e in state.curve]
        mae = [e.mae for e in state.curve]
        early = float(np.median(ms[1:11]))
        late = float(np.median(ms[41:51]))
        ok = late < early and mae[50] < mae[0]
        wins += ok
        details.append(f"seed {seed}: {'ok' if ok else 'MISS'}")
    elapsed = time.perf_counter() - t0
    announce(
        capsys,
        "end-to-end learning trend",
        wins >= 9,
        elapsed,
        600,
        f"{wins}/10 seeds improved",
    )


def test_intervention_dispersion(small_dataset, small_embedding, monkeypatch, capsys):
    """Exclusion intervention disperses selections on a stagnating fixture."""
    t0 = time.perf_counter()
    d2 = (
        (small_embedding.coords[:, None, :] - small_embedding.coords[None, :, :]) ** 2
    ).sum(2)
    r5 = LatentDistribution(small_embedding).pairwise_percentile(5.0)
    target = small_embedding.coords[int(np.argmax((d2 <= (r5 / 2) ** 2).sum(1)))]

    def trapping_scores(mu, sigma, measured_values, config):
        return -np.linalg.norm(small_embedding.coords - target, axis=1)

    monkeypatch.setattr(eng, "acquisition_values", trapping_scores)
    wins = 0
    flagged = 0
    for seed in range(5):
        cfg = ExperimentConfig(
            acquisition=AcquisitionConfig(kind="mu"),
            seed_model="gd",
            n_seed=5,
            budget=40,
            train_iters=10,
            master_seed=100 + seed,
        )
        state = init_experiment(small_dataset, small_embedding, cfg)
        for _ in range(12):
            step(state)
        if not is_stagnant(state):
            continue
        flagged += 1
        before = np.array([r.latent for r in state.trace[-10:]])
        apply_intervention(state, {"type": "exclusion"}, n_points=5)
        for _ in range(5):
            step(state)
        after = np.array([r.latent for r in state.trace[-10:]])
        if float(np.mean(pdist(after))) > float(np.mean(pdist(before))):
            wins += 1
    elapsed = time.perf_counter() - t0
    announce(
        capsys,
        "intervention dispersion",
        wins >= 4,
        elapsed,
        300,
        f"{wins}/5 seeds dispersed ({flagged}/5 flagged stagnant)",
    )


def test_determinism(small_dataset, small_embedding, tmp_path, capsys):
    """Identical seeds/config give byte-identical reports, serial or parallel."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        acquisition=AcquisitionConfig(kind="mu"),
        seed_model="gd",
        n_seed=5,
        budget=15,
        train_iters=30,
        master_seed=21,
    )
    run_dirs = []
    for name in ("run_a", "run_b"):
        state = init_experiment(small_dataset, small_embedding, cfg)
        while state.status == "running":
            step(state)
        out = tmp_path / name
        write_run_report(state, out)
        run_dirs.append(out)
    run_ok = all(
        (run_dirs[0] / f).read_bytes() == (run_dirs[1] / f).read_bytes()
        for f in ("trace.csv", "curve.csv", "summary.json")
    )

    spec = StudySpec(
        configs=[("mu_gd", cfg)],
        reps=3,
        bifurcate_at=4,
        intervention={"type": "exclusion"},
        intervention_points=2,
        master_seed=2,
    )
    serial = run_study(spec, small_dataset, small_embedding, n_jobs=1)
    parallel = run_study(spec, small_dataset, small_embedding, n_jobs=2)
    sdir, pdir = tmp_path / "study_serial", tmp_path / "study_parallel"
    write_study_report(serial, sdir)
    write_study_report(parallel, pdir)
    study_ok = True
    files = sorted(p.relative_to(sdir) for p in sdir.rglob("*") if p.is_file())
    files_p = sorted(p.relative_to(pdir) for p in pdir.rglob("*") if p.is_file())
    study_ok &= files == files_p
    for rel in files:
        if rel.suffix == ".png":
            continue
        study_ok &= (sdir / rel).read_bytes() == (pdir / rel).read_bytes()
    elapsed = time.perf_counter() - t0
    announce(capsys, "determinism", run_ok and study_ok, elapsed, 300)


def _oracle_stagnant(records, coords, window=10, radius_pct=5.0, frac=0.8, consecutive=2):
    """Independent stagnation recount used by the batch-protocol criterion."""
    bo = [r["latent"] for r in records if r["source"] == "bo"]
    if len(bo) < window + consecutive - 1:
        return False
    r = float(np.percentile(pdist(coords), radius_pct))
    pts = np.asarray(bo, dtype=float)
    for j in range(consecutive):
        end = len(pts) - j
        win = pts[end - window : end]
        centroid = win.mean(axis=0)
        if np.mean(np.linalg.norm(win - centroid, axis=1) <= r) < frac:
            return False
    return True


def test_batch_study_protocol(small_dataset, small_embedding, capsys):
    """{GD, UD, ULS} x {EI, MU} at reps = 15 with an independent recount oracle."""
    t0 = time.perf_counter()
    bifurcate_at = 20
    n_seed = 5
    horizon = 10
    configs = []
    for acq in ("ei", "mu"):
        for seed_model in ("gd", "ud", "uls"):
            cfg = ExperimentConfig(
                acquisition=AcquisitionConfig(kind=acq),
                seed_model=seed_model,
                n_seed=n_seed,
                budget=35,
                train_iters=30,
                master_seed=0,
            )
            configs.append((f"{acq}_{seed_model}", cfg))
    spec = StudySpec(
        configs=configs,
        reps=15,
        bifurcate_at=bifurcate_at,
        intervention={"type": "exclusion"},
        intervention_points=5,
        release_horizon=horizon,
        master_seed=9,
    )
    report = run_study(spec, small_dataset, small_embedding, n_jobs=4)

    checks = []
    coords = small_embedding.coords
    for acq in ("ei", "mu"):
        runs = sum(
            sum(1 for b in c.branches if b.branch == "control")
            for c in report.configs
            if c.label.startswith(acq)
        )
        checks.append(runs == 45)  # 3 seed models x 15 reps per acquisition

    recount_ok = True
    rates_ok = True
    for cfg_report in report.configs:
        checks.append(len(cfg_report.branches) == 30)  # 15 reps x 2 branches
        checks.append(all(b.branch in ("control", "intervention") for b in cfg_report.branches))
        rate = cfg_report.stagnation_rate()
        rates_ok &= 0.0 <= rate <= 1.0
        for branch_name in ("intervention", "control"):
            rr = cfg_report.release_rate(branch_name)
            rates_ok &= rr is None or 0.0 <= rr <= 1.0
        for b in cfg_report.branches:
            prefix = b.trace[: n_seed + bifurcate_at]
            recount_ok &= _oracle_stagnant(prefix, coords) == b.stagnant_at_bifurcation
            post_start = n_seed + bifurcate_at + (5 if b.branch == "intervention" else 0)
            released = False
            if b.stagnant_at_bifurcation:
                post = 0
                for i in range(post_start, len(b.trace)):
                    if b.trace[i]["source"] != "bo":
                        continue
                    post += 1
                    if post > horizon:
                        break
                    if not _oracle_stagnant(b.trace[: i + 1], coords):
                        released = True
            recount_ok &= released == b.released
    checks.append(recount_ok)
    checks.append(rates_ok)
    elapsed = time.perf_counter() - t0
    announce(
        capsys,
        "batch study protocol",
        all(checks),
        elapsed,
        1800,
        f"recount oracle {'agrees' if recount_ok else 'disagrees'}",
    )
