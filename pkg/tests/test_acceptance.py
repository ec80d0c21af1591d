"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line through the ``verdict`` fixture;
the lines are repeated in the terminal summary. Runtime budgets are part
of the criteria and are asserted as well.
"""
import time

import numpy as np
import pytest

from fddmimo import channel as ch
from fddmimo import estimators as es
from fddmimo import experiments as ex
from fddmimo import metrics as mt
from fddmimo import nn, reggan
from fddmimo import dataset as ds
from fddmimo.channel import PathParams, SystemConfig
from fddmimo.cli import main
from fddmimo.linalg import make_rng, rank

from conftest import random_params

pytestmark = pytest.mark.slow

DESCENT_LR = 1e-4


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def fd(f, v, h):
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        out[i] = (f(v + e) - f(v - e)) / (2 * h[i])
    return out


# ---------------------------------------------------------------------------

def test_01_channel_gradients(verdict):
    t0 = time.perf_counter()
    cfg = SystemConfig(M=16, K=8, L=5, p=4, K_dl=(1, 5), sigma_n2=1e-9)
    worst_up = worst_dl = 0.0
    for seed in range(100):
        rng = make_rng(seed)
        x = random_params(rng)
        up = ch.synth_uplink(x, cfg, rng)
        y = random_params(rng)
        v = np.concatenate([y.alpha, y.tau, y.theta, y.phi_up])
        _, g = ch.grad_uplink_objective(np.split(v, 4), up, cfg)
        h = np.concatenate([np.full(5, 1e-7), np.full(5, 1e-12), np.full(10, 1e-6)])
        g_fd = fd(lambda u: ch.uplink_objective(np.split(u, 4), up, cfg), v, h)
        worst_up = max(worst_up, rel_err(g, g_fd))

        dl = ch.synth_downlink(x, cfg, rng)
        B = ch.build_B(x.alpha, x.tau, x.theta, cfg, dl.S)
        phi = rng.uniform(0, 2 * np.pi, 5)
        _, g = ch.grad_dl_phase_objective(phi, B, dl.y)
        g_fd = fd(lambda u: ch.dl_phase_objective(u, B, dl.y), phi, np.full(5, 1e-6))
        worst_dl = max(worst_dl, rel_err(g, g_fd))
    dt = time.perf_counter() - t0
    ok = worst_up < 1e-5 and worst_dl < 1e-5 and dt < 10
    verdict(1, ok, f"100 instances, worst rel err uplink {worst_up:.1e}, "
                   f"downlink {worst_dl:.1e}, {dt:.1f}s")


def test_02_backprop(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for act in nn.ACTIVATIONS:
        for dropout in (0.0, 0.25):
            rng = make_rng(len(act))
            net = nn.Mlp.build([5, 8, 6, 3], rng, hidden_activation=act,
                               output_activation=act, dropout=dropout)
            x = rng.normal(size=(7, 5))
            w = rng.normal(size=(7, 3))
            mode = "train" if dropout else "eval"
            masks = net.forward(x, "train", rng)[1].masks if dropout else None
            _, cache = net.forward(x, mode, masks=masks)
            grads, gx = net.backward(cache, w)

            def loss(flat, k):
                arrs = [p.copy() for p in net.params] + [x.copy()]
                arrs[k] = flat.reshape(arrs[k].shape)
                trial = nn.Mlp([nn.Layer(arrs[2 * i], arrs[2 * i + 1], l.activation)
                                for i, l in enumerate(net.layers)], net.dropout)
                return float(np.sum(w * trial.forward(arrs[-1], mode, masks=masks)[0]))

            for k, g in enumerate(grads + [gx]):
                src = (net.params + [x])[k].ravel()
                g_fd = fd(lambda u: loss(u, k), src.copy(), np.full(src.size, 1e-6))
                worst = max(worst, rel_err(g.ravel(), g_fd))
    dt = time.perf_counter() - t0
    verdict(2, worst < 1e-5 and dt < 10,
            f"{len(nn.ACTIVATIONS)} activations x dropout on/off, worst rel err {worst:.1e}, "
            f"{dt:.1f}s")


def test_03_fixed_step_descent(verdict, desk_model, desk_dataset):
    t0 = time.perf_counter()
    cfg = SystemConfig()
    cfg = cfg.with_(P_T=10 * cfg.sigma_n2 / desk_dataset.mean_path_power())
    dcfg = es.DescentConfig(optimizer="fixed_step", lr=DESCENT_LR, max_iters=100, restarts=1,
                            init="random", candidates=1, epsilon=1e-12, patience=1000)
    violations, worst, steps = 0, 0.0, 0
    for seed in range(100):
        rng = make_rng(seed)
        obs = ch.synth_uplink(desk_dataset.records[desk_dataset.test[seed]], cfg, rng)
        tr = np.array(es.up_gan_estimate(obs, desk_model, cfg, dcfg, rng=rng).trace)
        inc = np.diff(tr) / tr[:-1]
        violations += int(np.sum(inc > 1e-12))
        worst = max(worst, inc.max())
        steps += len(inc)
    dt = time.perf_counter() - t0
    verdict(3, violations == 0 and dt < 120,
            f"lr={DESCENT_LR:g}, {steps} steps over 100 instances, {violations} increases "
            f"(largest relative change {worst:+.1e}), {dt:.1f}s")


def test_04_exact_recovery(verdict, desk_model):
    t0 = time.perf_counter()
    # (a) planted in the generator's range
    cfg = SystemConfig(sigma_n2=0.0)
    worst_a = -np.inf
    for seed in range(3):
        rng = make_rng(seed)
        a, tau, th = desk_model.scaler.inverse(desk_model.generate(rng.standard_normal(8)))
        x = PathParams.sorted_by_delay(a, tau, th, rng.uniform(0, 2 * np.pi, 5),
                                       rng.uniform(0, 2 * np.pi, 5))
        obs = ch.synth_uplink(x, cfg, rng)
        rep = es.up_gan_estimate(obs, desk_model, cfg, rng=make_rng(seed))
        worst_a = max(worst_a, mt.nmse_db(ch.uplink_channels(x, cfg), rep.h_up))
    # (b) downlink phases with the true frequency-independent parameters
    rng = make_rng(10)
    cfg = SystemConfig(sigma_n2=0.0, p=4, K_dl=(1, 9))
    x = random_params(rng)
    rep = es.dl_phase_estimate(ch.synth_downlink(x, cfg, rng), x.alpha, x.tau, x.theta, cfg)
    nmse_b = mt.nmse_db(ch.downlink_channels(x, cfg, range(1, 17), range(1, 65)), rep.h_dl)
    # (c) DL-LS
    obs = ch.synth_downlink(x, cfg, rng)
    rho = x.alpha * np.exp(1j * x.phi_dl)
    err_c = np.max(np.abs(es.dl_ls(obs, x.tau, x.theta, cfg).rho - rho)) / np.max(np.abs(rho))
    dt = time.perf_counter() - t0
    ok = worst_a <= -40 and nmse_b <= -60 and err_c < 1e-10 and dt < 60
    verdict(4, ok, f"(a) UP-GAN planted worst {worst_a:.1f} dB over 3, (b) DL phases "
                   f"{nmse_b:.1f} dB, (c) DL-LS max rel rho err {err_c:.1e}, {dt:.1f}s")


def _generic_pilots(cfg, rng):
    """QPSK pilots whose matrix has full rank (small random QPSK matrices can be singular)."""
    while True:
        S = ch.make_downlink_pilots(cfg, rng)
        if all(rank(Sk) == min(Sk.shape) for Sk in S):
            return S


def test_05_identifiability(verdict):
    """Dimension rule for the downlink problem.

    With the gains fixed, the phase-only problem can be exactly solvable
    below the rule (e.g. two phases from one complex measurement, up to a
    two-fold ambiguity), so the two-sided check is made on the linear
    problem (DL-LS, gains unknown) and the phase solver is checked for
    sufficiency plus the identifiability flag.
    """
    t0 = time.perf_counter()
    cases = 0
    missed, flag_bad, ls_bad, strict_bad = [], [], [], []
    for L in (2, 3, 5):
        for m in range(1, 8):
            for p in range(1, 8):
                rng = make_rng(1000 * L + 10 * m + p)
                cfg = SystemConfig(L=L, sigma_n2=0.0, p=p, K_dl=(1,),
                                   M_dl=tuple(range(1, m + 1)))
                x = random_params(rng, L=L)
                obs = ch.synth_downlink(x, cfg, rng, S=_generic_pilots(cfg, rng))
                rep = es.dl_phase_estimate(obs, x.alpha, x.tau, x.theta, cfg, rng=rng)
                H = ch.downlink_channels(x, cfg, range(1, 17), range(1, 65))
                success = (rep.objective < 1e-8 * np.vdot(obs.y, obs.y).real
                           and mt.nmse_db(H, rep.h_dl) <= -60)
                rho = x.alpha * np.exp(1j * x.phi_dl)
                rho_hat = es.dl_ls(obs, x.tau, x.theta, cfg).rho
                ls_ok = np.max(np.abs(rho_hat - rho)) < 1e-10 * np.max(np.abs(rho))
                expected = m >= L and p >= L
                cases += 1
                if expected and not success:
                    missed.append((L, m, p))
                if rep.identifiable != expected:
                    flag_bad.append((L, m, p))
                if ls_ok != expected:
                    ls_bad.append((L, m, p))
                if success != expected:
                    strict_bad.append((L, m, p))
    rank_bad = 0
    rng = make_rng(77)
    for _ in range(50):
        L, m = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        cfg = SystemConfig(L=L, p=max(L, m) + int(rng.integers(0, 3)),
                           K_dl=(int(rng.integers(1, 17)),),
                           M_dl=tuple(np.sort(rng.choice(np.arange(1, 65), m, replace=False))))
        x = random_params(rng, L=L)
        B = ch.build_B(x.alpha, x.tau, x.theta, cfg, _generic_pilots(cfg, rng))
        sv = np.linalg.svd(B, compute_uv=False)
        svd_rank = int(np.sum(sv > 1e-9 * sv[0]))
        rank_bad += not (rank(B) == svd_rank == min(m, L))
    dt = time.perf_counter() - t0
    ok = not (missed or flag_bad or ls_bad) and rank_bad == 0 and dt < 60
    verdict(5, ok, f"{cases} grid cases: rule => phase recovery misses {missed}, flag "
                   f"mismatches {flag_bad}, DL-LS iff mismatches {ls_bad}; rank vs SVD "
                   f"{50 - rank_bad}/50; phase solver exact below the rule in "
                   f"{len(strict_bad)} cases {strict_bad}; {dt:.1f}s")


# --- criterion 6 ------------------------------------------------------------

TOY_CENTRES = np.array([[-0.5, -0.5], [0.5, 0.5]])


def two_mode_toy(seed, n):
    rng = make_rng(seed)
    lab = rng.integers(0, 2, n)
    return TOY_CENTRES[lab] + 0.08 * rng.standard_normal((n, 2))


def toy_run(seed, lam):
    """Train on the toy and return (minority share, held-out D accuracy)."""
    cfg = reggan.GanConfig(d=2, n=2, lambda1=lam, lambda2=lam, seed=seed)
    model = reggan.train(two_mode_toy(100 + seed, 4000), cfg)
    s = model.sample(1000, make_rng(seed + 7))
    nearest = np.argmin(((s[:, None, :] - TOY_CENTRES) ** 2).sum(-1), axis=1)
    share = np.bincount(nearest, minlength=2).min() / 1000
    acc = reggan.diagnostics(model, two_mode_toy(200 + seed, 1000), n_samples=1000)["d_accuracy"]
    return share, acc


def test_06_mode_coverage(verdict):
    t0 = time.perf_counter()
    reg = [toy_run(seed, 1e-2) for seed in range(10)]
    van = [toy_run(seed, 0.0) for seed in range(10)]
    dt = time.perf_counter() - t0

    def summary(runs):
        shares = sum(s >= 0.2 for s, _ in runs)
        accs = sum(abs(a - 0.5) <= 0.15 for _, a in runs)
        both = sum(s >= 0.2 and abs(a - 0.5) <= 0.15 for s, a in runs)
        return shares, accs, both

    r_sh, r_acc, r_both = summary(reg)
    v_sh, v_acc, v_both = summary(van)
    detail = (f"Reg-GAN: share>=0.2 in {r_sh}/10, |acc-0.5|<=0.15 in {r_acc}/10, both in "
              f"{r_both}/10 (min share {min(s for s, _ in reg):.3f}); vanilla (reported only): "
              f"{v_sh}/10, {v_acc}/10, {v_both}/10; {dt:.0f}s")
    verdict(6, r_both >= 8 and dt < 900, detail)


# --- criteria 7 and 8 -------------------------------------------------------

def test_07_end_to_end_ordering(verdict, desk_model, desk_dataset):
    from conftest import SETUP_SECONDS
    t0 = time.perf_counter()
    spec = ex.SweepSpec(axis="p", values=(8, 16), scenarios=("DL-GAN", "DL-FullRecip-copy"),
                        trials=200, snr_db=10.0)
    rows = {(r.scenario, r.value): r.nmse_db for r in ex.run_sweep(spec, desk_model, desk_dataset)}
    dt = time.perf_counter() - t0 + sum(SETUP_SECONDS.values())
    gan8, gan16 = rows[("DL-GAN", 8)], rows[("DL-GAN", 16)]
    copy = rows[("DL-FullRecip-copy", 16)]
    gap = copy - max(gan8, gan16)
    ok = gap >= 3.0 and abs(gan8 - gan16) <= 1.0 and dt < 1800
    verdict(7, ok, f"200 trials at 10 dB: DL-GAN {gan8:.2f} dB (p=8) / {gan16:.2f} dB (p=16), "
                   f"copy-phase {copy:.2f} dB, gap {gap:.2f} dB, p=8 vs 16 "
                   f"{abs(gan8 - gan16):.2f} dB; {dt:.0f}s incl. data+training")


def test_08_feedback_error_trend(verdict, desk_model, desk_dataset):
    t0 = time.perf_counter()
    spec = ex.SweepSpec(axis="sigma_phi_deg", values=(0, 10, 20, 30, 40), scenarios=("DL-GAN",),
                        trials=200, snr_db=20.0)
    curve = [r.nmse_db for r in ex.run_sweep(spec, desk_model, desk_dataset)]
    dt = time.perf_counter() - t0
    ok = all(b >= a for a, b in zip(curve, curve[1:])) and dt < 600
    verdict(8, ok, "DL-GAN NMSE at 0..40 deg: " + ", ".join(f"{v:.2f}" for v in curve)
            + f" dB; {dt:.0f}s")


# --- criterion 9 ------------------------------------------------------------

def test_09_metric_sanity(verdict):
    t0 = time.perf_counter()
    rng = make_rng(0)
    h = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
    P, s2 = 2.0, 0.5
    perfect_rate = np.mean(np.log2(1 + P * np.sum(np.abs(h) ** 2, 1) / s2))
    orth = np.zeros_like(h)
    orth[:, 0], orth[:, 1] = -h[:, 1].conj(), h[:, 0].conj()
    h_orth = h.copy()
    h_orth[:, 2:] = 0                      # h_orth^H orth = 0 on every subcarrier
    identities = {
        "nmse(h,h)=0": mt.nmse(h, h) == 0.0,
        "nmse(h,0)=1": mt.nmse(h, 0 * h) == 1.0,
        "nmse(h,2h)=1": mt.nmse(h, 2 * h) == 1.0,
        "rate(h,h)=MF bound": abs(mt.rate(h, h, P, s2) - perfect_rate) <= 1e-12 * perfect_rate,
        "rate(orthogonal)=0": mt.rate(h_orth, orth, P, s2) == 0.0,
        "ser(perfect,noiseless)=0": mt.ser_qpsk(h, h, P, 0.0, 1000, rng) == 0.0,
        "feedback(sigma=0)=id": np.array_equal(mt.inject_feedback_error(
            np.linspace(0, 6, 7), 0.0, rng), np.linspace(0, 6, 7)),
    }
    worst_z = 0.0
    n = 200000
    for snr_db in (0.0, 4.0, 8.0):
        snr = 10 ** (snr_db / 10)
        ser = mt.ser_qpsk(np.ones((1, 1)), np.ones((1, 1)), snr, 1.0, n, make_rng(int(snr_db)))
        p = float(mt.qpsk_ser_theory(snr))
        worst_z = max(worst_z, abs(ser - p) / np.sqrt(p * (1 - p) / n))
    dt = time.perf_counter() - t0
    failed = [k for k, v in identities.items() if not v]
    verdict(9, not failed and worst_z <= 3 and dt < 120,
            f"{len(identities) - len(failed)}/{len(identities)} identities exact {failed}; "
            f"QPSK SER vs closed form at 0/4/8 dB within {worst_z:.2f} sigma; {dt:.1f}s")


# --- criterion 10 -----------------------------------------------------------

def test_10_reproducible_sweep(verdict, desk_model, desk_dataset, tmp_path):
    data, model = tmp_path / "data.jsonl", tmp_path / "gan.json"
    ds.save(desk_dataset, data)
    reggan.save_checkpoint(desk_model, model)
    args = ["sweep", "--data", str(data), "--model", str(model), "--axis", "snr_db",
            "--values", "0,20", "--scenarios", ",".join(ex.SCENARIOS), "--trials", "2",
            "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    verdict(10, a == b and len(a.splitlines()) == 1 + 2 * len(ex.SCENARIOS),
            f"two CLI sweeps ({len(a.splitlines()) - 1} rows, all scenarios) byte-identical: "
            f"{a == b}")
