"""Loss functions against hand-evaluated oracles and finite differences.

The frozen constants were computed independently of the implementation
with 30-digit mpmath evaluations of the defining formulas.
"""

import math

import numpy as np
import pytest
import torch

from bridge_oa.losses import (
    MosScore,
    loss_combined,
    loss_pq,
    loss_ri,
    norm_mos,
    pq_target,
)

LOSS_RI_LOWER = 0.313261687518222834  # -ln(sigmoid(1))
LOSS_RI_UPPER = 0.693147180559945309  # -ln(sigmoid(0))


def loss_ri_oracle(logits, wers):
    """Plain-numpy evaluation of the defining formula."""
    sl = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    sw = 1.0 / (1.0 + np.exp(-np.asarray(wers, dtype=np.float64)))
    cs = float(sl @ sw / (np.linalg.norm(sl) * np.linalg.norm(sw)))
    return -math.log(1.0 / (1.0 + math.exp(-cs)))


def loss_ri_oracle_mp(logits, wers):
    """30-digit evaluation so the finite-difference quotient is not
    limited by float64 roundoff."""
    from mpmath import mp, exp, log, sqrt

    mp.dps = 30

    def sig(x):
        return 1 / (1 + exp(-x))

    sl = [sig(v) for v in logits]
    sw = [sig(v) for v in wers]
    dot = sum(a * b for a, b in zip(sl, sw))
    cs = dot / (sqrt(sum(a * a for a in sl)) * sqrt(sum(b * b for b in sw)))
    return -log(sig(cs))


class TestNormMos:
    def test_boundaries(self):
        assert norm_mos(1.0) == 0.0
        assert norm_mos(5.0) == 1.0

    def test_midpoint(self):
        assert norm_mos(3.0) == 0.5

    def test_arbitrary(self):
        assert norm_mos(4.2) == pytest.approx(0.8)

    @pytest.mark.parametrize("alpha", [0.5, 5.1, -1.0])
    def test_out_of_range(self, alpha):
        with pytest.raises(ValueError):
            norm_mos(alpha)


class TestPqTarget:
    def test_mixed(self):
        assert pq_target(MosScore(sig=4.0, bak=2.0)) == 0.5

    def test_boundaries(self):
        assert pq_target(MosScore(5.0, 5.0)) == 1.0
        assert pq_target(MosScore(1.0, 1.0)) == 0.0

    def test_mos_validation(self):
        with pytest.raises(ValueError, match="sig"):
            MosScore(sig=7.0, bak=3.0)


class TestLossPq:
    def test_zero(self):
        assert float(loss_pq(0.5, 0.5)) == 0.0

    def test_max(self):
        assert float(loss_pq(0.0, 1.0)) == 1.0

    def test_arithmetic_exact(self):
        assert float(loss_pq(0.3, 0.7)) == (0.3 - 0.7) ** 2

    def test_batch_mean(self):
        got = float(loss_pq(torch.tensor([0.0, 1.0]), torch.tensor([1.0, 1.0])))
        assert got == pytest.approx(0.5)


class TestLossRi:
    def test_identical_vectors(self):
        v = torch.tensor([0.3, -1.2, 0.0, 4.0], dtype=torch.float64)
        assert float(loss_ri(v, v)) == pytest.approx(LOSS_RI_LOWER, abs=1e-6)
        assert float(loss_ri(v, v)) == pytest.approx(loss_ri_oracle(v, v), abs=1e-12)

    def test_opposed_saturation(self):
        logits = torch.tensor([10.0, -10.0], dtype=torch.float64)
        wers = torch.tensor([-10.0, 10.0], dtype=torch.float64)
        assert float(loss_ri(logits, wers)) == pytest.approx(0.693102, abs=1e-5)
        assert float(loss_ri(logits, wers)) == pytest.approx(
            loss_ri_oracle(logits, wers), abs=1e-12
        )

    def test_bounds_over_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            d = int(rng.integers(2, 22))
            a = torch.tensor(rng.normal(scale=5.0, size=d))
            b = torch.tensor(rng.normal(scale=5.0, size=d))
            v = float(loss_ri(a, b))
            assert LOSS_RI_LOWER - 1e-12 <= v < LOSS_RI_UPPER

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = torch.tensor(rng.normal(size=11))
            b = torch.tensor(rng.uniform(0, 2, size=11))
            assert float(loss_ri(a, b)) == pytest.approx(float(loss_ri(b, a)), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            loss_ri(torch.zeros(3), torch.zeros(4))

    def test_scalar_vectors_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            loss_ri(torch.zeros(1), torch.zeros(1))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        h = 1e-10
        for _ in range(100):
            d = int(rng.integers(2, 22))
            logits = rng.normal(scale=3.0, size=d)
            wers = rng.uniform(0.0, 1.5, size=d)
            t = torch.tensor(logits, dtype=torch.float64, requires_grad=True)
            loss = loss_ri(t, torch.tensor(wers, dtype=torch.float64))
            loss.backward()
            analytic = t.grad.numpy()
            for i in range(d):
                up = [float(v) for v in logits]
                down = [float(v) for v in logits]
                up[i] += h
                down[i] -= h
                from mpmath import mpf

                fd = float(
                    (loss_ri_oracle_mp(up, wers) - loss_ri_oracle_mp(down, wers))
                    / (mpf(up[i]) - mpf(down[i]))
                )
                denom = max(abs(fd), abs(analytic[i]), 1e-10)
                assert abs(fd - analytic[i]) / denom < 1e-6

    def test_batched_averaging(self):
        a = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
        b = torch.tensor([[1.0, 2.0], [4.0, 3.0]], dtype=torch.float64)
        per_row = [float(loss_ri(a[i], b[i])) for i in range(2)]
        assert float(loss_ri(a, b)) == pytest.approx(np.mean(per_row), abs=1e-12)


class TestLossCombined:
    def test_mean(self):
        assert float(loss_combined(0.4, 0.6)) == pytest.approx(0.5)

    def test_spec_value(self):
        assert float(loss_combined(0.0, 0.313262)) == pytest.approx(0.156631)

    def test_gradient_is_half(self):
        a = torch.tensor(0.3, requires_grad=True, dtype=torch.float64)
        b = torch.tensor(0.9, requires_grad=True, dtype=torch.float64)
        loss_combined(a, b).backward()
        assert float(a.grad) == 0.5
        assert float(b.grad) == 0.5
