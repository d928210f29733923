import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mixenum.errors import ContractViolation
from mixenum.model import (
    Dataset,
    LcaParams,
    LpaParams,
    ModelSpec,
    count_params,
    loglik_lca,
    loglik_lpa,
    posterior,
    read_dataset_csv,
    write_dataset_csv,
)

from oracles import (
    loglik_lca_bruteforce,
    loglik_lpa_bruteforce,
    random_lca_instance,
    random_lpa_instance,
)


def lca_dataset(codes, categories=None):
    codes = np.asarray(codes)
    if categories is None:
        categories = max(2, int(codes.max()))
    return Dataset(values=codes.astype(float), categories=categories)


class TestLoglikLca:
    def test_single_class_closed_form(self):
        # K=1, J=1, C=2, rho=(.5,.5), two rows -> 2 ln(.5)
        params = LcaParams(pi=[1.0], rho=[[[0.5, 0.5]]])
        data = lca_dataset([[1], [2]])
        assert_allclose(loglik_lca(params, data), 2 * math.log(0.5), rtol=0, atol=1e-12)

    def test_identical_components_collapse(self):
        rng = np.random.default_rng(7)
        rho_row = rng.dirichlet(np.ones(2), size=(1, 3))
        one = LcaParams(pi=[1.0], rho=rho_row)
        two = LcaParams(pi=[0.5, 0.5], rho=np.repeat(rho_row, 2, axis=0))
        data = lca_dataset(rng.integers(1, 3, size=(6, 3)))
        assert_allclose(loglik_lca(two, data), loglik_lca(one, data), atol=1e-12)

    def test_matches_bruteforce_small(self):
        rng = np.random.default_rng(42)
        pi, rho, codes = random_lca_instance(rng, n=4, J=2, C=2, K=2)
        params = LcaParams(pi=pi, rho=rho)
        expected = loglik_lca_bruteforce(pi, rho, codes)
        assert_allclose(loglik_lca(params, lca_dataset(codes)), expected, atol=1e-12)

    def test_matches_bruteforce_sweep(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            pi, rho, codes = random_lca_instance(rng)
            params = LcaParams(pi=pi, rho=rho)
            expected = loglik_lca_bruteforce(pi, rho, codes)
            got = loglik_lca(params, lca_dataset(codes))
            assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(5)
        pi, rho, codes = random_lca_instance(rng, n=8, J=3, C=3, K=3)
        params = LcaParams(pi=pi, rho=rho)
        data = lca_dataset(codes)
        base = loglik_lca(params, data)
        for order in ([1, 2, 0], [2, 0, 1], [2, 1, 0]):
            assert_allclose(loglik_lca(params.permuted(order), data), base, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        params = LcaParams(pi=[1.0], rho=[[[0.5, 0.5]]])
        data = lca_dataset([[1, 2], [2, 1]])
        with pytest.raises(ContractViolation):
            loglik_lca(params, data)


class TestLoglikLpa:
    def test_standard_normal_at_mode(self):
        params = LpaParams(pi=[1.0], mu=[[0.0]], sigma2=[1.0])
        data = Dataset(values=[[0.0]])
        assert_allclose(loglik_lpa(params, data), math.log(1.0 / math.sqrt(2 * math.pi)), atol=1e-12)

    def test_identical_components_collapse(self):
        params1 = LpaParams(pi=[1.0], mu=[[0.3, -1.0]], sigma2=[0.7, 1.2])
        params2 = LpaParams(pi=[0.25, 0.75], mu=[[0.3, -1.0], [0.3, -1.0]], sigma2=[0.7, 1.2])
        data = Dataset(values=np.random.default_rng(3).normal(size=(5, 2)))
        assert_allclose(loglik_lpa(params2, data), loglik_lpa(params1, data), atol=1e-12)

    def test_matches_bruteforce_sweep(self):
        rng = np.random.default_rng(77)
        for _ in range(300):
            pi, mu, sigma2, values = random_lpa_instance(rng)
            params = LpaParams(pi=pi, mu=mu, sigma2=sigma2)
            expected = loglik_lpa_bruteforce(pi, mu, sigma2, values)
            got = loglik_lpa(params, Dataset(values=values))
            assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected))


class TestPosterior:
    def test_single_class_all_ones(self):
        params = LcaParams(pi=[1.0], rho=[[[0.3, 0.7]]])
        post = posterior(params, lca_dataset([[1], [2], [2]]))
        assert_allclose(post, np.ones((3, 1)), atol=0)

    def test_symmetric_two_class(self):
        # mirrored response profiles and a row equidistant between them
        rho = [[[0.8, 0.2]], [[0.2, 0.8]]]
        params = LcaParams(pi=[0.5, 0.5], rho=rho)
        post = posterior(params, lca_dataset([[1]]))
        assert_allclose(post, [[0.8 / (0.8 + 0.2), 0.2 / (0.8 + 0.2)]], atol=1e-12)
        both = posterior(params, lca_dataset([[1], [2]]))
        assert_allclose(both.mean(axis=0), [0.5, 0.5], atol=1e-12)

    def test_matches_bayes_rule(self):
        rng = np.random.default_rng(11)
        pi, rho, codes = random_lca_instance(rng, n=6, J=2, C=3, K=3)
        params = LcaParams(pi=pi, rho=rho)
        post = posterior(params, lca_dataset(codes))
        for i, row in enumerate(codes):
            dens = [np.prod([rho[k][j][c - 1] for j, c in enumerate(row)]) for k in range(3)]
            numer = np.array([pi[k] * dens[k] for k in range(3)])
            assert_allclose(post[i], numer / numer.sum(), atol=1e-10)

    def test_rows_sum_to_one_sweep(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            pi, rho, codes = random_lca_instance(rng)
            post = posterior(LcaParams(pi=pi, rho=rho), lca_dataset(codes))
            assert np.all(post >= 0) and np.all(post <= 1)
            assert_allclose(post.sum(axis=1), 1.0, atol=1e-10)
        for _ in range(200):
            pi, mu, sigma2, values = random_lpa_instance(rng)
            post = posterior(LpaParams(pi=pi, mu=mu, sigma2=sigma2), Dataset(values=values))
            assert_allclose(post.sum(axis=1), 1.0, atol=1e-10)


class TestCountParams:
    @pytest.mark.parametrize(
        "spec,expected",
        [
            (ModelSpec("lca", 1, 10, 5), 40),
            (ModelSpec("lca", 3, 10, 5), 122),
            (ModelSpec("lca", 5, 10, 5), 204),
            (ModelSpec("lpa", 1, 10), 11),
            (ModelSpec("lpa", 3, 10), 42),
            (ModelSpec("lpa", 5, 10), 64),
        ],
    )
    def test_counts(self, spec, expected):
        assert count_params(spec) == expected


class TestTypes:
    def test_pi_must_sum_to_one(self):
        with pytest.raises(ContractViolation):
            LcaParams(pi=[0.6, 0.6], rho=np.full((2, 1, 2), 0.5))

    def test_rho_rows_must_sum_to_one(self):
        with pytest.raises(ContractViolation):
            LcaParams(pi=[1.0], rho=[[[0.5, 0.6]]])

    def test_variance_floor_enforced(self):
        with pytest.raises(ContractViolation):
            LpaParams(pi=[1.0], mu=[[0.0]], sigma2=[1e-9])

    def test_codes_out_of_range_rejected(self):
        with pytest.raises(ContractViolation):
            Dataset(values=[[1.0, 6.0]], categories=5)
        with pytest.raises(ContractViolation):
            Dataset(values=[[1.5, 2.0]], categories=5)

    def test_arrays_are_immutable(self):
        params = LcaParams(pi=[1.0], rho=[[[0.5, 0.5]]])
        with pytest.raises(ValueError):
            params.pi[0] = 0.5
        data = Dataset(values=[[1.0]], categories=5)
        with pytest.raises(ValueError):
            data.values[0, 0] = 2.0


class TestCsvRoundTrip:
    def test_round_trip_with_labels(self, tmp_path):
        rng = np.random.default_rng(1)
        codes = rng.integers(1, 6, size=(20, 10))
        labels = rng.integers(1, 4, size=20)
        data = Dataset(values=codes.astype(float), true_labels=labels, categories=5)
        path = tmp_path / "d.csv"
        write_dataset_csv(data, path)
        back = read_dataset_csv(path)
        assert_allclose(back.values, data.values)
        assert np.array_equal(back.true_labels, labels)

    def test_reader_validates_range(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("item1,item2\n1,9\n", encoding="utf-8")
        with pytest.raises(ContractViolation):
            read_dataset_csv(path, categories=5)

    def test_reader_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ContractViolation):
            read_dataset_csv(path)
