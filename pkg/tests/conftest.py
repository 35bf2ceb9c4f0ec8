import itertools
import math

import numpy as np
import pytest


def urn_enumeration_pmf(n_cases, n_noncases, n_draws, odds):
    """pmf of the case count by summing over every ordered type sequence.

    Each draw picks a remaining case with probability
    odds * cases_left / (odds * cases_left + noncases_left).
    """
    pmf = np.zeros(n_draws + 1)
    for seq in itertools.product((0, 1), repeat=n_draws):
        c, m, prob = n_cases, n_noncases, 1.0
        for is_case in seq:
            tot = odds * c + m
            if tot <= 0:
                prob = 0.0
                break
            if is_case:
                prob *= odds * c / tot
                c -= 1
            else:
                prob *= m / tot
                m -= 1
            if prob == 0.0:
                break
        pmf[sum(seq)] += prob
    return pmf


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)
