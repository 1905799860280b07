"""Shared fixtures: bundled cases and a cache of relaxation solves."""

from __future__ import annotations

import functools
import logging
import os

import pytest

from opfrelax import relax as rx
from opfrelax.casefmt import load_case
from opfrelax.chordal import decompose

SMALL_CASES = ("case3_lmbd", "case5", "case5_pjm", "case9", "case14", "case30")


@functools.lru_cache(maxsize=None)
def network(name: str):
    return load_case(name)


@functools.lru_cache(maxsize=None)
def solved(case: str, variant: str, merge: str = "none", backend: str | None = None):
    """Build and solve one relaxation once per session."""
    net = network(case)
    variant = rx.canonical_variant(variant)
    dec = decompose(net, merge)[1] if variant in rx.CHORDAL_VARIANTS else None
    m = rx.build_model(net, variant, dec)
    return rx.solve_model(m, backend=backend)


@pytest.fixture(autouse=True)
def _quiet_solver_logs():
    logging.getLogger("opfrelax").setLevel(logging.ERROR)
    yield


def pytest_collection_modifyitems(config, items):
    if os.environ.get("OPFRELAX_LARGE") == "1":
        return
    skip = pytest.mark.skip(reason="large cases run only with OPFRELAX_LARGE=1")
    for item in items:
        if "large" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
