import itertools
import math

import numpy as np
import pytest

from photonic_teleport.circuit import reference_chip_layout


def laplace_permanent(M):
    """Cofactor expansion along the first row."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n == 1:
        return M[0, 0]
    total = 0j
    for j in range(n):
        minor = np.delete(np.delete(M, 0, axis=0), j, axis=1)
        total += M[0, j] * laplace_permanent(minor)
    return total


def polynomial_amplitude(U, inp, out):
    """<out| U |inp> by expanding prod_j (sum_i U[i, j] a_i^dag)^{n_j} term by term."""
    U = np.asarray(U, dtype=complex)
    M = U.shape[0]
    photons = [j for j, n in enumerate(inp) for _ in range(n)]
    coeff = {}
    for rows in itertools.product(range(M), repeat=len(photons)):
        occ = [0] * M
        amp = 1.0 + 0j
        for i, j in zip(rows, photons):
            occ[i] += 1
            amp *= U[i, j]
        coeff[tuple(occ)] = coeff.get(tuple(occ), 0j) + amp
    norm_in = math.prod(math.factorial(n) for n in inp)
    c = coeff.get(tuple(out), 0j)
    # a^dag^n |0> = sqrt(n!) |n>
    return c * math.sqrt(math.prod(math.factorial(n) for n in out)) / math.sqrt(norm_in)


def random_unitary(n, rng):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture(scope="session")
def chip():
    return reference_chip_layout()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
