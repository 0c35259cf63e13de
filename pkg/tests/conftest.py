import pytest

from stockspline.simulate import default_truth, simulate


@pytest.fixture(scope="session")
def mid_stock():
    """A moderate simulated stock shared across tests (6 ages, 24 years)."""
    truth = default_truth(n_ages=6, n_years=24, n_surveys=2)
    data, states = simulate(truth, seed=1)
    return data, states, truth


@pytest.fixture(scope="session")
def mid_stock_dir(mid_stock, tmp_path_factory):
    from stockspline.data import save_stock
    data, _, _ = mid_stock
    out = tmp_path_factory.mktemp("stock")
    save_stock(data, out)
    return out
