"""Inequality verification, moduli fitting and the certify pipeline."""

import math

import numpy as np
import pytest

from fullstab.errors import InputError
from fullstab.modelspec import parse_model
from fullstab.stabharness import (
    CertifyOptions,
    certify,
    fit_moduli,
    graph_sample_from_model,
    verify_inequality,
)
from fullstab.visolver import LocalizationTable


def make_table(v, p, x):
    v = np.atleast_2d(np.asarray(v, dtype=float))
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None] if p.size == v.shape[0] else p.reshape(v.shape[0], -1)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return LocalizationTable(
        v_nodes=v,
        p_nodes=p,
        x_values=x,
        residuals=np.zeros(v.shape[0]),
        methods=["synthetic"] * v.shape[0],
    )


def scaled_inverse_table(c, count=40, seed=0):
    """theta(v) = v / c for f(x) = c x, parameter-free."""
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(count, 2))
    return make_table(V, np.zeros((count, 0)), V / c)


class TestVerifyInequality:
    def test_exact_algebra_no_violations(self):
        # theta(v) = v/(2c) with kappa = c: the left side vanishes.
        c = 3.0
        rng = np.random.default_rng(1)
        V = rng.normal(size=(30, 2))
        table = make_table(V, np.zeros((30, 0)), V / (2 * c))
        violations, count = verify_inequality(table, kappa=c, ell=0.0)
        assert count == 0 and violations == []

    def test_skew_violates_for_every_kappa(self):
        rng = np.random.default_rng(2)
        V = rng.normal(size=(25, 2))
        theta = np.column_stack([V[:, 0], -V[:, 1]])
        table = make_table(V, np.zeros((25, 0)), theta)
        for kappa in (0.01, 0.1, 1.0, 10.0):
            violations, count = verify_inequality(table, kappa=kappa, ell=0.0)
            assert count > 0, kappa
            assert violations[0]["margin"] > 0

    def test_rejects_bad_moduli(self):
        table = scaled_inverse_table(1.0, count=5)
        with pytest.raises(InputError):
            verify_inequality(table, kappa=0.0, ell=0.0)
        with pytest.raises(InputError):
            verify_inequality(table, kappa=1.0, ell=-1.0)

    def test_exponent_one_pass_implies_half_on_small_grids(self):
        # d <= 1 on the grid, so d <= sqrt(d) and the same ell works.
        rng = np.random.default_rng(3)
        V = rng.normal(size=(20, 1)) * 0.05
        P = rng.uniform(0, 0.5, size=(20, 1))
        X = 0.5 * V + 0.3 * P
        table = make_table(V, P, X)
        fitted = fit_moduli(table)
        assert fitted.ell_hat is not None
        _, count1 = verify_inequality(
            table, fitted.kappa_used, fitted.ell_hat, exponent=1.0
        )
        assert count1 == 0
        _, count_half = verify_inequality(
            table, fitted.kappa_used, fitted.ell_hat, exponent=0.5
        )
        assert count_half == 0

    def test_refinement_never_clears_violations(self):
        rng = np.random.default_rng(4)
        V = rng.normal(size=(15, 2))
        theta = np.column_stack([V[:, 0], -V[:, 1]])
        coarse = make_table(V, np.zeros((15, 0)), theta)
        _, count_coarse = verify_inequality(coarse, kappa=1.0, ell=0.0)
        assert count_coarse > 0
        V2 = np.vstack([V, rng.normal(size=(10, 2))])
        theta2 = np.column_stack([V2[:, 0], -V2[:, 1]])
        fine = make_table(V2, np.zeros((25, 0)), theta2)
        _, count_fine = verify_inequality(fine, kappa=1.0, ell=0.0)
        assert count_fine >= count_coarse


class TestFitModuli:
    def test_identity_map(self):
        table = scaled_inverse_table(1.0)
        fitted = fit_moduli(table)
        assert fitted.kappa_hat == pytest.approx(1.0, abs=1e-12)
        assert fitted.ell_hat == 0.0
        assert fitted.exponent_hat is None  # parameter-independent

    def test_scaled_map(self):
        table = scaled_inverse_table(4.0)
        fitted = fit_moduli(table)
        assert fitted.kappa_hat == pytest.approx(4.0, abs=1e-12)

    def test_lipschitz_regime_exponent_one(self):
        # theta(v, p) = 0.5 v + p: exactly Lipschitz in p.
        vals = np.linspace(-0.05, 0.05, 5)
        ps = np.linspace(-0.05, 0.05, 7)
        V, P, X = [], [], []
        for v in vals:
            for p in ps:
                V.append([v])
                P.append([p])
                X.append([0.5 * v + p])
        table = make_table(V, P, X)
        fitted = fit_moduli(table)
        assert fitted.exponent_hat == pytest.approx(1.0, abs=0.1)
        assert fitted.exponent_used == 1.0
        assert fitted.kappa_hat == pytest.approx(2.0, abs=1e-9)
        _, count = verify_inequality(
            table, fitted.kappa_used, fitted.ell_hat, fitted.exponent_used
        )
        assert count == 0

    def test_hoelder_regime_exponent_half(self):
        # theta(v, p) = 0.5 v + sqrt(p): square-root parameter response.
        # The regime shows on a geometric ladder of scales toward the
        # singular parameter (a uniform grid away from 0 is locally
        # Lipschitz and fits slope 1).
        vals = np.linspace(-0.02, 0.02, 5)
        ps = [0.0] + [0.1 * 0.25**k for k in range(8)]
        V, P, X = [], [], []
        for v in vals:
            for p in ps:
                V.append([v])
                P.append([p])
                X.append([0.5 * v + math.sqrt(p)])
        table = make_table(V, P, X)
        fitted = fit_moduli(table)
        assert fitted.exponent_hat is not None
        assert abs(fitted.exponent_hat - 0.5) < 0.25
        assert fitted.exponent_used == 0.5
        assert fitted.ell_hat is not None
        _, count = verify_inequality(
            table, fitted.kappa_used, fitted.ell_hat, exponent=0.5
        )
        assert count == 0

    def test_vacuous_kappa_flagged_not_failed(self):
        # localization constant in v: strong monotonicity is vacuous.
        rng = np.random.default_rng(5)
        V = rng.normal(size=(12, 1))
        P = rng.normal(size=(12, 1))
        X = np.column_stack([P[:, 0]])
        table = make_table(V, P, X)
        fitted = fit_moduli(table)
        assert fitted.kappa_vacuous is True
        assert fitted.kappa_flagged is False
        assert fitted.kappa_used == 1.0


class TestGraphSample:
    def test_unconstrained_direct(self, skew_model):
        s = graph_sample_from_model(skew_model, skew_model.reference, count=50, seed=3)
        assert len(s) >= 40

    def test_constrained_via_solver(self, ex64_model):
        s = graph_sample_from_model(
            ex64_model, ex64_model.reference, eta=0.01, count=20, seed=4
        )
        assert len(s) == 20
        # every sampled u solves the system: localization is the apex map
        assert np.max(np.abs(s.u[:, 2])) < 1e-9


class TestCertify:
    def test_worked_example_full_pipeline(self, ex64_model):
        opts = CertifyOptions(samples=150, grid_v=3, grid_p=3, n_random=5, seed=7)
        rep = certify(ex64_model, opts)
        assert rep.verdict == "fully_stable"
        assert rep.fully_stable is True
        assert rep.cq["mfcq"]["verdict"] == "holds"
        assert rep.cq["licq"]["verdict"] == "fails"
        assert rep.cq["crcq"]["verdict"] == "holds"
        assert rep.gssosc["verdict"] == "fails"
        assert rep.gusosc["verdict"] == "corroborated"
        assert any(s["zero"] for s in rep.scoc_probe)
        assert rep.violation_count == 0
        assert rep.moduli["kappa"] > 0

    def test_skew_not_fully_stable(self, skew_model):
        rep = certify(skew_model, CertifyOptions(samples=50, grid_v=5))
        assert rep.verdict == "not_fully_stable"
        assert rep.fully_stable is False
        assert rep.smooth_psd["verdict"] == "fails"
        assert rep.smooth_psd["modulus"] == pytest.approx(-1.0, abs=1e-12)
        assert rep.violation_count > 0
        assert rep.moduli["kappa_flagged"] is True

    def test_identity_fully_stable(self, identity_model):
        rep = certify(identity_model, CertifyOptions(samples=50))
        assert rep.verdict == "fully_stable"
        assert rep.moduli["kappa_hat"] == pytest.approx(1.0, abs=1e-10)
        assert rep.moduli["ell"] == 0.0

    def test_mfcq_failure_refuses_second_order(self):
        m = parse_model(
            "dims n=1 d=0\nf = (x1)\nconstraint x1 <= 0\nconstraint -x1 <= 0\n"
            "reference x=(0) p=() v=(0)\n"
        )
        rep = certify(m, CertifyOptions(samples=10))
        assert rep.verdict == "undetermined"
        assert rep.gssosc is None and rep.gusosc is None
        assert rep.multipliers.get("unbounded") is True
        assert rep.multipliers["recession"] is not None

    def test_missing_reference_rejected(self):
        m = parse_model("dims n=1 d=0\nf = (x1)\n")
        with pytest.raises(InputError):
            certify(m)

    def test_report_text_mirrors_json(self, identity_model):
        rep = certify(identity_model, CertifyOptions(samples=20))
        text = rep.to_text()
        data = rep.to_json_dict()
        assert f"verdict: {data['verdict']}" in text
        assert f"model_hash: {data['model_hash']}" in text
        for key in data:
            assert f"{key}:" in text


class TestConsistencyChain:
    # GSSOSC holds => GUSOSC corroborated => zero violations at the fitted
    # moduli; checked here on a handful of instances and in the acceptance
    # suite on the full 20-model corpus.
    def test_chain_on_small_corpus(self):
        corpus = [
            "dims n=1 d=1\nf = (2*x1 + p1)\nconstraint x1 - 1 <= 0\nreference x=(0) p=(0) v=(0)\n",
            "dims n=2 d=0\nf = (2*x1 + x2, x1 + 2*x2)\nreference x=(0, 0) p=() v=(0, 0)\n",
            "dims n=2 d=1\nf = (3*x1, 2*x2 + p1)\nconstraint -x1 <= 0\nreference x=(0, 0) p=(0) v=(-1, 0)\n",
        ]
        for text in corpus:
            m = parse_model(text)
            rep = certify(m, CertifyOptions(samples=60, grid_v=3, grid_p=3, n_random=3))
            assert rep.gssosc["verdict"] == "holds", text
            assert rep.gusosc["verdict"] == "corroborated", text
            assert rep.violation_count == 0, text
            assert rep.verdict == "fully_stable", text
