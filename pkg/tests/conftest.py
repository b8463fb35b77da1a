import re
from importlib import resources

import numpy as np
import pytest

from rfclink import dataset
from rfclink.corpus import load_document
from rfclink.encoder import EncoderConfig, Vocab

DATA = resources.files("rfclink") / "data"


def fixture_doc(number):
    return load_document(number, DATA / "rfc" / f"rfc{number}.txt")


@pytest.fixture(scope="session")
def schema():
    return dataset.load_schema(DATA / "schema.json")


@pytest.fixture(scope="session")
def samples():
    return dataset.load_samples(DATA / "samples.jsonl")


@pytest.fixture(scope="session")
def rfc791():
    return fixture_doc(791)


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(num_blocks=1, hidden_size=8, num_heads=2, max_desc_len=12,
                         max_field_len=4, vocab_size=64, dropout=0.0)


@pytest.fixture
def tiny_vocab():
    return Vocab.build(["the version field", "total length of the datagram", "checksum of header",
                        "reserved bits set to zero", "source address"], 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    def report(number, passed, detail):
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: (int(re.match(r"criterion (\d+)", s)[1]), s)):
            terminalreporter.write_line(line)
