import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from neuralcloth import synthetic
from neuralcloth.body import BodySurface

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def pendulum():
    return synthetic.pendulum_body()


@pytest.fixture(scope="session")
def cap():
    return synthetic.cap_garment()


@pytest.fixture(scope="session")
def sphere_surface():
    v, f = synthetic.icosphere(0.5, 3)
    return BodySurface(v, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def run_python(code, disable_jit=False, timeout=600):
    """Run ``code`` in a fresh interpreter; returns the completed process."""
    env = dict(os.environ, NEURALCLOTH_DISABLE_JIT="1" if disable_jit else "0")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=timeout)
