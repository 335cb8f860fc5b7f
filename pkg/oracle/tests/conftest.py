import subprocess
import sys

import pytest


def run_engine(*args):
    """Invoke the engine CLI; it is the only channel into the primary package."""
    return subprocess.run(
        [sys.executable, "-m", "sbcformer.cli", *map(str, args)],
        capture_output=True, text=True,
    )


@pytest.fixture(scope="session")
def engine_cli_available():
    proc = run_engine("--version")
    if proc.returncode != 0:
        pytest.skip("sbcformer engine CLI not installed")
    return True
