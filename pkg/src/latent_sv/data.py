"""CSV ingestion for share prices and option quotes."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from latent_sv.estimation import OptionQuote, historical_sigma0
from latent_sv.model import TRADING_DAY


class DataFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


@dataclass
class ShareSeries:
    dates: list
    close: np.ndarray

    @property
    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.close))

    def describe(self) -> tuple:
        """Mean and sample standard deviation of the closing prices."""
        return float(self.close.mean()), float(self.close.std(ddof=1))


@dataclass(frozen=True)
class QuoteRow:
    date: dt.date
    strike: float
    maturity_days: int
    price: float


@dataclass
class MarketData:
    equity: str
    shares: ShareSeries
    options: list = field(default_factory=list)
    rate: float = 0.0

    def quotes(self, window: int = 10, delta: float = TRADING_DAY) -> list:
        """Option quotes with s0 and a trailing historical sigma0 attached."""
        index = {d: i for i, d in enumerate(self.shares.dates)}
        rets = self.shares.log_returns
        out = []
        for k, q in enumerate(self.options):
            if q.date not in index:
                raise ValueError(f"no share price on quote date {q.date.isoformat()}")
            i = index[q.date]
            if i < 1:
                raise ValueError(f"no returns before quote date {q.date.isoformat()}")
            sigma0 = historical_sigma0(rets[max(0, i - window):i], window, delta)
            out.append(OptionQuote(price=q.price, strike=q.strike, steps=q.maturity_days,
                                   s0=float(self.shares.close[i]), sigma0=sigma0, r=self.rate,
                                   quote_id=f"{q.date.isoformat()}/{q.strike:g}/{q.maturity_days}"))
        return out


def _rows(path, header: list):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(path, 1, "file is empty") from None
        if [h.strip() for h in first] != header:
            raise DataFormatError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _date(path, line, text) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise DataFormatError(path, line, f"bad ISO date {text!r}") from None


def _positive(path, line, text, name) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(path, line, f"{name} is not a number: {text!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise DataFormatError(path, line, f"{name} must be positive, got {text!r}")
    return v


def ingest_shares(path) -> ShareSeries:
    """Read ``date,close`` rows; dates must strictly increase."""
    dates, close = [], []
    for line, (d, c) in _rows(path, ["date", "close"]):
        day = _date(path, line, d)
        if dates and day <= dates[-1]:
            raise DataFormatError(path, line, f"date {d} does not follow {dates[-1].isoformat()}")
        dates.append(day)
        close.append(_positive(path, line, c, "close"))
    if not dates:
        raise DataFormatError(path, 2, "no data rows")
    return ShareSeries(dates, np.array(close))


def ingest_options(path) -> list:
    """Read ``date,strike,maturity_days,price`` rows."""
    out = []
    for line, (d, k, mat, p) in _rows(path, ["date", "strike", "maturity_days", "price"]):
        try:
            days = int(mat)
        except ValueError:
            raise DataFormatError(path, line, f"maturity_days is not an integer: {mat!r}") from None
        if days < 1:
            raise DataFormatError(path, line, "maturity_days must be >= 1")
        out.append(QuoteRow(_date(path, line, d), _positive(path, line, k, "strike"), days,
                            _positive(path, line, p, "price")))
    if not out:
        raise DataFormatError(path, 2, "no data rows")
    return out


def load_market(equity: str, shares_path, options_path: Optional[str] = None, rate: float = 0.0) -> MarketData:
    shares = ingest_shares(shares_path)
    options = ingest_options(options_path) if options_path else []
    return MarketData(equity, shares, options, rate)
