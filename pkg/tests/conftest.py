import pytest

from tubekit.synth import SynthConfig, generate

VERDICTS = []


def record_verdict(criterion, ok, detail=""):
    VERDICTS.append((criterion, bool(ok), detail))
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f" :: {detail}" if detail else "")
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in VERDICTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f" :: {detail}" if detail else ""))


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    generate(SynthConfig(num_videos=6, frames_per_video=5, num_actions=3, proposals_per_frame=7, seed=11), root)
    return root
