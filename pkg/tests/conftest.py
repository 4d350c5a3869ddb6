import numpy as np
import pytest


def blob_lattice(n: int = 64, dx: float = 0.0, spacing: float = 8.0, sigma: float = 2.0,
                 amp: float = 0.9) -> np.ndarray:
    """Smooth image of Gaussian blobs on a square lattice, translated by ``dx`` pixels."""
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    img = np.zeros((n, n))
    for cy in np.arange(-spacing, n + spacing, spacing):
        for cx in np.arange(-spacing, n + spacing, spacing):
            img += amp * np.exp(-((x - dx - cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2))
    return np.clip(img, 0.0, 1.0)


def single_blob(n: int, cx: float, cy: float, sigma: float, amp: float = 0.8) -> np.ndarray:
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    return 0.1 + amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting ---------------------------------------------------------

ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
