"""Both kernel implementations produce the same numbers.

Counter-stream words are exact integer arithmetic, so they must match
bitwise across backends; Box-Muller normals and Jacobi rotations go through
libm and may differ by a few ulps, bounded here at 1e-12. Backend choice is
fixed at import time, so cross-backend checks run in subprocesses.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from diffusionlab.backend import HAS_NUMBA
from diffusionlab.numerics import kernels

_CHILD = """\
import sys
import numpy as np
from diffusionlab.backend import BACKEND
from diffusionlab.numerics.kernels import normals_block, raw_block, jacobi_sweeps

rng = np.random.default_rng(17)
a = rng.normal(size=(24, 24))
spd = a @ a.T + 24.0 * np.eye(24)
v = np.eye(24)
work = spd.copy()
jacobi_sweeps(work, v, 1e-13, 60)

np.savez(sys.argv[1],
         backend=np.array(BACKEND, dtype=object),
         raw=raw_block(123456789, 1000, 4096),
         normals=normals_block(987654321, 42, 4096),
         eigvals=np.sort(np.diag(work)),
         recomposed=v @ np.diag(np.diag(work)) @ v.T)
"""


def _run_backend(backend: str, out_path) -> dict:
    env = dict(os.environ, DIFFUSIONLAB_BACKEND=backend)
    subprocess.run([sys.executable, "-c", _CHILD, str(out_path)],
                   check=True, env=env, capture_output=True)
    return dict(np.load(out_path, allow_pickle=True))


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, DIFFUSIONLAB_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", "from diffusionlab.backend import BACKEND; print(BACKEND)"],
        env=env, capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == "numpy"


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
def test_env_flag_selects_numba_backend():
    env = dict(os.environ, DIFFUSIONLAB_BACKEND="numba")
    out = subprocess.run(
        [sys.executable, "-c", "from diffusionlab.backend import BACKEND; print(BACKEND)"],
        env=env, capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip() == "numba"


def test_unknown_backend_value_fails_at_import():
    env = dict(os.environ, DIFFUSIONLAB_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import diffusionlab.backend"],
                         env=env, capture_output=True, text=True)
    assert out.returncode != 0
    assert "DIFFUSIONLAB_BACKEND" in out.stderr


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
def test_cross_backend_kernel_agreement(tmp_path):
    nb = _run_backend("numba", tmp_path / "nb.npz")
    np_ = _run_backend("numpy", tmp_path / "np.npz")
    assert str(nb["backend"]) == "numba" and str(np_["backend"]) == "numpy"
    # integer streams: exact
    assert np.array_equal(nb["raw"], np_["raw"])
    # float kernels: a few ulps of libm slack
    assert np.max(np.abs(nb["normals"] - np_["normals"])) <= 1e-12
    assert np.max(np.abs(nb["eigvals"] - np_["eigvals"])) <= 1e-12
    assert np.max(np.abs(nb["recomposed"] - np_["recomposed"])) <= 1e-12


def test_scalar_loop_source_matches_vectorized_raw():
    """The un-jitted scalar loop and the numpy path agree bitwise on words."""
    n = 512
    out_loop = np.empty(n, dtype=np.uint64)
    out_np = np.empty(n, dtype=np.uint64)
    # the mixer wraps mod 2^64 on purpose; silence numpy's scalar warning
    with np.errstate(over="ignore"):
        kernels._raw_block_loop(np.uint64(31337), np.uint64(77), np.int64(n), out_loop)
    kernels._raw_block_np(np.uint64(31337), np.uint64(77), np.int64(n), out_np)
    assert np.array_equal(out_loop, out_np)


def test_scalar_loop_source_matches_vectorized_normals():
    n = 512
    out_loop = np.empty(n, dtype=np.float64)
    out_np = np.empty(n, dtype=np.float64)
    with np.errstate(over="ignore"):
        kernels._normals_block_loop(np.uint64(5), np.uint64(0), np.int64(n), out_loop)
    kernels._normals_block_np(np.uint64(5), np.uint64(0), np.int64(n), out_np)
    assert np.max(np.abs(out_loop - out_np)) <= 1e-12


def test_active_backend_matches_numpy_reference():
    """Whichever backend is live, its public outputs track the numpy path."""
    raw_active = kernels.raw_block(2718, 300, 1024)
    out_ref = np.empty(1024, dtype=np.uint64)
    kernels._raw_block_np(np.uint64(2718), np.uint64(300), np.int64(1024), out_ref)
    assert np.array_equal(raw_active, out_ref)

    normals_active = kernels.normals_block(161803, 10, 1024)
    ref = np.empty(1024, dtype=np.float64)
    kernels._normals_block_np(np.uint64(161803), np.uint64(10), np.int64(1024), ref)
    assert np.max(np.abs(normals_active - ref)) <= 1e-12
