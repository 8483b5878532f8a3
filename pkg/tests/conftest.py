import pytest

from acceptance_report import LINES
from scalemoe.synthcorpus import CorpusConfig, generate_corpus


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """The default 4×100 corpus, generated once per test session."""
    return generate_corpus(CorpusConfig(seed=0), tmp_path_factory.mktemp("corpus"))


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
