import datetime as dt

import numpy as np
import pytest

from latent_sv.data import load_market
from latent_sv.estimation import PricingConfig, method_c_pricer
from latent_sv.model import SVParams
from oracles import synthetic_returns

ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(criterion, ok, detail=""):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def market_files(tmp_path_factory):
    """Synthetic share history plus three put quotes priced by the model at lambda = 0."""
    d = tmp_path_factory.mktemp("market")
    theta = SVParams(rho=-0.5, alpha=10.0, beta=-1.0, gamma=1.0, r=0.03)
    r, _ = synthetic_returns(theta, 120, seed=0)
    close = 30.0 * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    days = [dt.date(2003, 1, 1) + dt.timedelta(days=k) for k in range(close.size)]
    shares = d / "shares.csv"
    shares.write_text("date,close\n" + "".join(f"{a.isoformat()},{float(c)!r}\n" for a, c in zip(days, close)))
    spot = float(close[-1])
    options = d / "options.csv"
    header = "date,strike,maturity_days,price\n"
    strikes = (0.95 * spot, spot, 1.05 * spot)
    options.write_text(header + "".join(f"{days[-1].isoformat()},{k!r},10,1.0\n" for k in strikes))
    # replace the placeholder prices by model prices on unrelated paths
    quotes = load_market("x", shares, options, rate=0.03).quotes()
    pricer = method_c_pricer(PricingConfig(M=2000, m=50, seed=123))
    prices = [pricer(q, theta, i) for i, q in enumerate(quotes)]
    options.write_text(header + "".join(f"{days[-1].isoformat()},{k!r},10,{p!r}\n" for k, p in zip(strikes, prices)))
    return shares, options
