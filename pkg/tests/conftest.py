"""Shared fixtures: small synthetic corpora with their encrypted forests."""

import sys

import numpy as np
import pytest

from encforest import annotator, harness


def make_setup(n, seed, noise, profile="tiny", **kw):
    records = harness.generate_corpus(n, seed, profile)
    cfg = annotator.SetupConfig(features=harness.profile_config(profile), noise=noise, **kw)
    state, ef, ksk = annotator.setup(records, cfg, seed)
    vecs = state.prepare([r.bundle for r in records])
    return records, state, ef, ksk, vecs


@pytest.fixture(scope="session")
def quiet_world():
    """200 tiny-profile images, obfuscation noise disabled."""
    return make_setup(200, 21, noise=False)


@pytest.fixture(scope="session")
def noisy_world():
    """200 tiny-profile images with default obfuscation noise."""
    return make_setup(200, 22, noise=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criteria verdicts, one line each."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
