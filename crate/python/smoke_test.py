"""End-to-end smoke test for the pyct3vae extension."""

import math
import tempfile
from pathlib import Path

import pyct3vae as ct


def main() -> None:
    q = ct.TDist([0.0, 0.0], [[1.0, 0.2], [0.2, 1.5]], 6.0)
    p = ct.TDist.diagonal([0.5, -0.3], [0.8, 1.2], 6.0)
    assert q.dim == 2 and q.nu == 6.0
    assert abs(ct.gamma_power_divergence(q, q)) < 1e-10
    original = ct.gamma_power_divergence(q, p, form="original")
    est, se = ct.mc_divergence(q, p, n_samples=200_000, seed=1)
    assert abs(est - original) < 4 * se, (est, se, original)
    cov = q.covariance()
    assert abs(cov[0][0] - 1.5) < 1e-12
    assert len(q.sample(5, seed=3)) == 5
    assert math.isfinite(q.log_density([0.1, 0.2]))

    assert abs(ct.tau_squared(4, 2, 10.0, 1.0, mode="original") - 0.37296) < 1e-4
    assert ct.exponential_decay_counts(500, 100.0, 10)[9] == 5

    x, y = ct.synth(3, 6, 40, seed=2)
    assert len(x) == 120 and sorted(set(y)) == [0, 1, 2]
    prec, rec = ct.precision_recall(x[:60], x[60:], k=3)
    assert 0.0 <= prec <= 1.0 and 0.0 <= rec <= 1.0
    assert ct.frechet(x, x) < 1e-8

    try:
        ct.TDist.diagonal([0.0], [1.0], -1.0)
    except ct.Ct3vaeError:
        pass
    else:
        raise AssertionError("negative dof accepted")

    with tempfile.TemporaryDirectory() as tmp:
        small = ["--set", "synth_k=3", "--set", "synth_n=6", "--set", "synth_per_class=60",
                 "--set", "synth_test_per_class=30", "--set", "latent_dim=2", "--set", "hidden=16"]
        code = ct.cli(["train", "--out-dir", tmp, "--epochs", "3", *small])
        assert code == 0
        ck = ct.Checkpoint.load(str(Path(tmp) / "checkpoint"))
        assert ck.family == "ct3vae" and ck.epochs_done == 3 and len(ck.history) == 3
        samples, labels, tau2 = ck.generate(30, seed=1, alpha=[1, 1, 1])
        assert len(samples) == 30 and len(labels) == 30 and tau2 > 0
        mu, var = ck.encode(samples[:4], labels[:4])
        assert len(mu[0]) == 2 and all(v > 0 for v in var[0])
        assert ct.cli(["train", "--family", "nope"]) == 1

    report = ct.trial({"synth_k": "3", "synth_n": "6", "synth_per_class": "60",
                       "synth_test_per_class": "30", "epochs": "3", "hidden": "16",
                       "latent_dim": "2", "family": "cvae"})
    assert len(report["recall"]) == 3 and 0.0 <= report["macro_f1"] <= 1.0
    print("smoke test passed")


if __name__ == "__main__":
    main()
