import math

import numpy as np
import pytest

from deltamem.kernels import (
    snr_monte_carlo_shared,
    KernelSpec,
    capacity_curve,
    capacity_curve_csv,
    kernel_eval,
    snr_closed_form,
    snr_monte_carlo,
)
from deltamem.numerics import Rng


class TestKernelEval:
    def test_linear_unit_vectors(self):
        e = np.array([1.0, 0.0, 0.0])
        assert kernel_eval(KernelSpec("linear"), e, e) == 1.0

    def test_exp_zero_dot(self):
        x = np.array([1.0, 0.0])
        y = np.array([0.0, 1.0])
        assert kernel_eval(KernelSpec("exp", tau=1.0), x, y) == 1.0

    def test_round_two_decimals(self):
        x = np.array([1.236, 0.0])
        y = np.array([1.0, 0.0])
        assert kernel_eval(KernelSpec("round", round_decimals=2), x, y) == pytest.approx(1.24)

    def test_relu_clamps_negatives(self):
        x = np.array([1.0, 0.0])
        assert kernel_eval(KernelSpec("relu"), x, -x) == 0.0

    def test_solu_blends_linear_and_exp(self):
        x = np.array([2.0])
        y = np.array([1.0])
        assert kernel_eval(KernelSpec("solu", tau=1.0), x, y) == pytest.approx(2.0 * math.exp(2.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="equal-length"):
            kernel_eval(KernelSpec("linear"), np.ones(2), np.ones(3))

    def test_symmetry_all_kinds(self):
        rng = Rng(5)
        x, y = rng.normal((8,)), rng.normal((8,))
        for kind in ("linear", "exp", "relu", "solu", "round"):
            spec = KernelSpec(kind, tau=2.0)
            assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)

    def test_softmax_row_not_pairwise(self):
        with pytest.raises(ValueError, match="pairwise"):
            kernel_eval(KernelSpec("softmax_row"), np.ones(2), np.ones(2))


class TestClosedForm:
    def test_linear(self):
        assert snr_closed_form(KernelSpec("linear"), n=8, d_k=4) == 2.0

    def test_relu(self):
        assert snr_closed_form(KernelSpec("relu"), n=8, d_k=4) == 1.0

    def test_exp_tau_one_exponent_vanishes(self):
        for n, d_k in [(5, 3), (100, 64)]:
            assert snr_closed_form(KernelSpec("exp", tau=1.0), n, d_k) == pytest.approx(n)

    def test_exp_default_tau(self):
        # tau = sqrt(64) = 8: exponent 2*(8-1)/64 * 64 = 14.
        val = snr_closed_form(KernelSpec("exp"), n=16, d_k=64)
        assert val == pytest.approx(16.0 / math.exp(14.0))

    def test_solu_boxed_specialization(self):
        # At tau = sqrt(d_k) the general form reduces to
        # (5 n / d_k) * exp(-2 (sqrt(d_k) - 1)).
        n, d_k = 10, 64
        val = snr_closed_form(KernelSpec("solu"), n, d_k)
        assert val == pytest.approx(5.0 * n / d_k * math.exp(-2.0 * (math.sqrt(d_k) - 1.0)))

    def test_round_unsupported(self):
        with pytest.raises(ValueError, match="closed-form"):
            snr_closed_form(KernelSpec("round"), 8, 4)

    def test_softmax_row_unsupported(self):
        with pytest.raises(ValueError, match="closed-form"):
            snr_closed_form(KernelSpec("softmax_row"), 8, 4)


class TestMonteCarlo:
    def test_single_pair_has_no_noise(self):
        est = snr_monte_carlo(KernelSpec("linear"), n=1, d_k=16, trials=200, rng=Rng(0))
        assert est.inverse_snr == 0.0
        assert est.stderr == 0.0

    def test_linear_matches_closed_form(self):
        est = snr_monte_carlo(KernelSpec("linear"), n=64, d_k=256, trials=2000, rng=Rng(1))
        assert abs(est.inverse_snr - 0.25) / 0.25 < 0.10

    def test_relu_matches_closed_form(self):
        est = snr_monte_carlo(KernelSpec("relu"), n=64, d_k=256, trials=2000, rng=Rng(2))
        assert abs(est.inverse_snr - 0.125) / 0.125 < 0.10

    def test_relu_to_linear_factor_is_half(self):
        lin = snr_monte_carlo(KernelSpec("linear"), n=32, d_k=64, trials=4000, rng=Rng(3))
        rel = snr_monte_carlo(KernelSpec("relu"), n=32, d_k=64, trials=4000, rng=Rng(4))
        assert 0.4 < rel.inverse_snr / lin.inverse_snr < 0.6

    @pytest.mark.parametrize("d_k", [64, 256])
    def test_ratio_matches_closed_form_within_15_percent(self, d_k):
        n = d_k // 2
        specs = [KernelSpec(k) for k in ("linear", "exp", "relu", "solu")]
        ests = snr_monte_carlo_shared(specs, n, d_k, trials=5000, rng=Rng(d_k))
        for spec, est in zip(specs, ests):
            mc = est.inverse_snr
            cf = snr_closed_form(spec, n, d_k)
            if spec.kind == "exp":
                assert abs(math.log(mc) - math.log(cf)) / abs(math.log(cf)) < 0.15, spec.kind
            else:
                assert abs(mc - cf) / cf < 0.15, spec.kind

    def test_stderr_shrinks_with_trials(self):
        small = snr_monte_carlo(KernelSpec("linear"), 32, 64, trials=500, rng=Rng(7))
        large = snr_monte_carlo(KernelSpec("linear"), 32, 64, trials=8000, rng=Rng(8))
        assert large.stderr < small.stderr

    def test_recall_method_cross_validates_ratio(self):
        # The full-recall estimator also averages over the probe norm, so
        # agreement is loose for the flat kernels and not asserted for exp.
        for kind, seed in [("linear", 11), ("relu", 12)]:
            spec = KernelSpec(kind)
            ratio = snr_monte_carlo(spec, 32, 128, trials=2000, rng=Rng(seed)).inverse_snr
            recall = snr_monte_carlo(spec, 32, 128, trials=2000, rng=Rng(seed + 50), method="recall").inverse_snr
            assert abs(recall - ratio) / ratio < 0.25

    def test_small_tau_does_not_overflow(self):
        est = snr_monte_carlo(KernelSpec("exp", tau=1.0), 16, 512, trials=200, rng=Rng(9))
        assert np.isfinite(est.inverse_snr)

    def test_trials_floor(self):
        with pytest.raises(ValueError, match="trials"):
            snr_monte_carlo(KernelSpec("linear"), 8, 4, trials=10, rng=Rng(0))


class TestOrdering:
    def test_capacity_ordering_at_dk64(self):
        # Chain supported by the closed forms at tau = sqrt(d_k):
        # exp < relu < linear, and solu < relu (the SoLU kernel beats even
        # exp here because of its extra 1/d_k factor).
        d_k, n = 64, 64
        vals = {
            kind: snr_closed_form(KernelSpec(kind), n, d_k)
            for kind in ("linear", "exp", "relu", "solu")
        }
        assert vals["exp"] < vals["relu"] < vals["linear"]
        assert vals["solu"] < vals["relu"]

        kinds = ("linear", "exp", "relu", "solu")
        ests = snr_monte_carlo_shared([KernelSpec(k) for k in kinds], n, d_k, trials=5000, rng=Rng(42))
        mc = {k: e.inverse_snr for k, e in zip(kinds, ests)}
        assert mc["exp"] < mc["relu"] < mc["linear"]
        assert mc["solu"] < mc["relu"]


class TestCapacityCurve:
    def test_linear_closed_form_column(self):
        rows = capacity_curve(KernelSpec("linear"), 64, [16, 32, 64], trials=400, rng=Rng(0))
        assert [r["closed_form"] for r in rows] == [0.25, 0.5, 1.0]

    def test_exp_closed_form_value(self):
        rows = capacity_curve(KernelSpec("exp"), 64, [16], trials=400, rng=Rng(0))
        assert rows[0]["closed_form"] == pytest.approx(16.0 / math.exp(14.0))

    def test_n_one_gives_zero(self):
        rows = capacity_curve(KernelSpec("round"), 16, [1], trials=400, rng=Rng(0))
        assert rows[0]["mc_mean"] == 0.0
        assert rows[0]["closed_form"] is None

    def test_csv_header_and_empty_closed_form(self):
        rows = capacity_curve(KernelSpec("round"), 16, [1, 2], trials=400, rng=Rng(0))
        text = capacity_curve_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == "n,closed_form,mc_mean,mc_stderr"
        assert lines[1].startswith("1,,")

    def test_empty_n_values_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            capacity_curve(KernelSpec("linear"), 8, [], trials=400, rng=Rng(0))
