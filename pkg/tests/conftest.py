import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mulan_fixture(tmp_path):
    """Three instances, two features, two labels; one dense row, two sparse rows."""
    arff = tmp_path / "tiny.arff"
    xml = tmp_path / "tiny.xml"
    arff.write_text(
        "% constructed fixture\n"
        "@relation 'tiny: -C 2'\n"
        "@attribute f1 numeric\n"
        "@attribute 'feature two' real\n"
        "@attribute L1 {0,1}\n"
        "@attribute L2 {0,1}\n"
        "@data\n"
        "1.5,0,1,0\n"
        "{1 2, 3 1}\n"
        "{0 -0.25, 2 1, 3 1}\n")
    xml.write_text('<?xml version="1.0" encoding="utf-8"?>\n'
                   '<labels xmlns="http://mulan.sourceforge.net/labels">\n'
                   '<label name="L1"></label>\n<label name="L2"></label>\n</labels>\n')
    return arff, xml
