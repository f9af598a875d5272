"""LOBSTER-format order book ingestion, cleaning, and microstructural statistics.

Prices are kept as integers in 1e-4 currency units (the LOBSTER convention)
end-to-end; conversion to currency happens only at reporting. Timestamps are
integer nanoseconds since midnight, parsed by decimal-string splitting so the
9-digit fractional part never touches floating point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CrossedBook,
    EmptyAfterClean,
    MalformedRow,
    MissingLevels,
    RowCountMismatch,
)

log = logging.getLogger(__name__)

N_LEVELS = 10
N_BOOK_COLS = 4 * N_LEVELS

SESSION_OPEN_NS = 34_200 * 10**9   # 09:30
SESSION_CLOSE_NS = 57_600 * 10**9  # 16:00

# column offsets within one level block (ask_p, ask_v, bid_p, bid_v)
ASK_P, ASK_V, BID_P, BID_V = 0, 1, 2, 3


def price_units(currency: float) -> int:
    """Convert a currency amount (e.g. 0.01 USD) to integer 1e-4 units."""
    return int(round(currency * 10_000))


@dataclass(frozen=True)
class StockMeta:
    """Static per-stock metadata: tick size and lot size."""

    ticker: str
    tick_size: float = 0.01   # currency units
    lot_size: int = 1

    def __post_init__(self):
        if self.tick_size <= 0:
            raise ValueError("tick_size must be positive")
        if self.lot_size < 1:
            raise ValueError("lot_size must be >= 1")

    @property
    def tick_units(self) -> int:
        """Tick size in integer 1e-4 currency units."""
        return price_units(self.tick_size)


@dataclass(frozen=True)
class LobSnapshot:
    """A single 10-level book state at one tick."""

    timestamp: int  # ns since midnight
    ask_prices: np.ndarray
    ask_volumes: np.ndarray
    bid_prices: np.ndarray
    bid_volumes: np.ndarray

    def is_crossed(self) -> bool:
        return int(self.ask_prices[0]) <= int(self.bid_prices[0])

    def validate(self) -> None:
        if len(self.ask_prices) != N_LEVELS:
            raise MissingLevels(f"expected {N_LEVELS} levels")
        if np.any(np.diff(self.ask_prices) <= 0):
            raise ValueError("ask prices not strictly increasing")
        if np.any(np.diff(self.bid_prices) >= 0):
            raise ValueError("bid prices not strictly decreasing")
        if np.any(self.ask_volumes < 0) or np.any(self.bid_volumes < 0):
            raise ValueError("negative volume")
        if self.is_crossed():
            raise ValueError("crossed book")


@dataclass
class LobSeries:
    """One trading day of book snapshots plus the aligned message fields.

    ``book`` has LOBSTER column order ask_p1, ask_v1, bid_p1, bid_v1, ...
    ``messages`` keeps the non-time message columns (type, id, size, price,
    direction) so a parsed series can be serialized back to its source rows.
    """

    meta: StockMeta
    day: str  # calendar date, YYYY-MM-DD
    timestamps: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    book: np.ndarray = field(default_factory=lambda: np.empty((0, N_BOOK_COLS), np.int64))
    messages: np.ndarray = field(default_factory=lambda: np.empty((0, 5), np.int64))

    @property
    def T(self) -> int:
        return len(self.timestamps)

    def snapshot(self, i: int) -> LobSnapshot:
        row = self.book[i]
        return LobSnapshot(
            timestamp=int(self.timestamps[i]),
            ask_prices=row[ASK_P::4],
            ask_volumes=row[ASK_V::4],
            bid_prices=row[BID_P::4],
            bid_volumes=row[BID_V::4],
        )

    def snapshots(self):
        return (self.snapshot(i) for i in range(self.T))

    def validate(self) -> None:
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps not non-decreasing")
        for snap in self.snapshots():
            snap.validate()


def _parse_time_ns(text: str) -> int:
    """Parse a LOBSTER seconds-since-midnight decimal string to integer ns."""
    if "." in text:
        whole, frac = text.split(".", 1)
    else:
        whole, frac = text, ""
    frac = (frac + "000000000")[:9]
    return int(whole) * 10**9 + int(frac)


def _format_time_ns(ns: int) -> str:
    return f"{ns // 10**9}.{ns % 10**9:09d}"


def parse_lobster_pair(orderbook_rows, message_rows, meta: StockMeta,
                       day: str = "1970-01-01") -> LobSeries:
    """Parse an aligned (orderbook, message) row pair into a LobSeries.

    Row i of each stream produces snapshot i. Crossed-book rows are reported
    with their 1-based line number but kept; :func:`clean_session` drops them.
    """
    orderbook_rows = list(orderbook_rows)
    message_rows = list(message_rows)
    if len(orderbook_rows) != len(message_rows):
        raise RowCountMismatch(
            f"{len(orderbook_rows)} orderbook rows vs {len(message_rows)} message rows"
        )

    n = len(orderbook_rows)
    timestamps = np.empty(n, np.int64)
    book = np.empty((n, N_BOOK_COLS), np.int64)
    messages = np.empty((n, 5), np.int64)

    for i, (ob_row, msg_row) in enumerate(zip(orderbook_rows, message_rows)):
        line_no = i + 1
        ob_fields = ob_row.strip().split(",")
        if len(ob_fields) != N_BOOK_COLS:
            raise MalformedRow(line_no, f"expected {N_BOOK_COLS} orderbook fields, "
                                        f"got {len(ob_fields)}")
        msg_fields = msg_row.strip().split(",")
        if len(msg_fields) != 6:
            raise MalformedRow(line_no, f"expected 6 message fields, got {len(msg_fields)}")
        try:
            book[i] = [int(f) for f in ob_fields]
            timestamps[i] = _parse_time_ns(msg_fields[0])
            messages[i] = [int(f) for f in msg_fields[1:]]
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        if book[i, ASK_P] <= book[i, BID_P]:
            log.warning("%s", CrossedBook(line_no))

    return LobSeries(meta=meta, day=day, timestamps=timestamps, book=book,
                     messages=messages)


def serialize_lobster_pair(series: LobSeries) -> tuple[list[str], list[str]]:
    """Render a LobSeries back to (orderbook, message) LOBSTER rows.

    Round-trips byte-for-byte against sources with canonical 9-digit
    fractional timestamps.
    """
    ob_rows = [",".join(str(v) for v in row) for row in series.book]
    msg_rows = [
        _format_time_ns(int(ts)) + "," + ",".join(str(v) for v in msg)
        for ts, msg in zip(series.timestamps, series.messages)
    ]
    return ob_rows, msg_rows


def clean_session(series: LobSeries, trim_start_s: float = 1800.0,
                  trim_end_s: float = 1800.0) -> LobSeries:
    """Restrict to the trimmed continuous session and drop bad rows.

    Keeps snapshots inside [09:30 + trim_start, 16:00 - trim_end]; drops
    crossed-book rows (reported) and rows with zero volume at level 1.
    """
    lo = SESSION_OPEN_NS + int(round(trim_start_s * 1e9))
    hi = SESSION_CLOSE_NS - int(round(trim_end_s * 1e9))
    in_window = (series.timestamps >= lo) & (series.timestamps <= hi)
    crossed = series.book[:, ASK_P] <= series.book[:, BID_P]
    zero_best = (series.book[:, ASK_V] == 0) | (series.book[:, BID_V] == 0)

    for idx in np.flatnonzero(in_window & crossed):
        log.warning("%s", CrossedBook(int(idx) + 1))

    keep = in_window & ~crossed & ~zero_best
    if not np.any(keep):
        raise EmptyAfterClean(f"{series.meta.ticker} {series.day}: no snapshots survive")

    return LobSeries(
        meta=series.meta,
        day=series.day,
        timestamps=series.timestamps[keep].copy(),
        book=series.book[keep].copy(),
        messages=series.messages[keep].copy(),
    )


def mid_and_spread(snapshot: LobSnapshot) -> tuple[float, int]:
    """Best-quote mid-price and spread, in 1e-4 currency units."""
    ask = int(snapshot.ask_prices[0])
    bid = int(snapshot.bid_prices[0])
    return (ask + bid) / 2, ask - bid


def mid_price_series(series: LobSeries) -> np.ndarray:
    """Twice the mid-price per snapshot, kept integer for exact labeling."""
    return (series.book[:, ASK_P] + series.book[:, BID_P]).astype(np.int64)


def actual_depth(snapshot: LobSnapshot, side: str, tick_units: int) -> float:
    """Span in ticks between the 1st and 10th quoted level on one side.

    9.0 for a fully compact book.
    """
    if side == "ask":
        prices = snapshot.ask_prices
    elif side == "bid":
        prices = snapshot.bid_prices
    else:
        raise ValueError(f"side must be 'ask' or 'bid', got {side!r}")
    if len(prices) < N_LEVELS:
        raise MissingLevels(f"need {N_LEVELS} levels, have {len(prices)}")
    return abs(int(prices[N_LEVELS - 1]) - int(prices[0])) / tick_units


def classify_tick_size(mean_spread_units: float, tick_units: int) -> str:
    """Partition stocks into small/medium/large tick by mean spread vs tick."""
    if mean_spread_units >= 3 * tick_units:
        return "small"
    if mean_spread_units <= 1.5 * tick_units:
        return "large"
    return "medium"


def synthesize_lob(seed: int, n_events: int, regime: str, meta: StockMeta,
                   day: str = "1970-01-01",
                   start_s: float = 36_100.0, end_s: float = 55_700.0) -> LobSeries:
    """Generate a deterministic synthetic day of LOBSTER-like data.

    ``compact`` emits consecutive-tick ladders on both sides (actual depth
    exactly 9); ``sparse`` draws geometric inter-level gaps.
    """
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    if regime not in ("compact", "sparse"):
        raise ValueError(f"unknown regime {regime!r}")

    rng = np.random.default_rng(seed)
    theta = meta.tick_units
    base_bid = 100 * 10_000  # start around $100

    timestamps = np.linspace(start_s * 1e9, end_s * 1e9, n_events).astype(np.int64)
    book = np.empty((n_events, N_BOOK_COLS), np.int64)
    messages = np.empty((n_events, 5), np.int64)

    bid1 = base_bid
    for i in range(n_events):
        bid1 += int(rng.integers(-1, 2)) * theta
        spread_ticks = 1 if regime == "compact" else int(rng.integers(1, 4))
        ask1 = bid1 + spread_ticks * theta
        if regime == "compact":
            ask_gaps = np.full(N_LEVELS - 1, 1)
            bid_gaps = np.full(N_LEVELS - 1, 1)
        else:
            ask_gaps = rng.geometric(0.4, N_LEVELS - 1)
            bid_gaps = rng.geometric(0.4, N_LEVELS - 1)
        ask_p = ask1 + np.concatenate([[0], np.cumsum(ask_gaps)]) * theta
        bid_p = bid1 - np.concatenate([[0], np.cumsum(bid_gaps)]) * theta
        ask_v = rng.integers(1, 500, N_LEVELS) * meta.lot_size
        bid_v = rng.integers(1, 500, N_LEVELS) * meta.lot_size
        book[i, ASK_P::4] = ask_p
        book[i, ASK_V::4] = ask_v
        book[i, BID_P::4] = bid_p
        book[i, BID_V::4] = bid_v
        messages[i] = [1, i + 1, int(ask_v[0]), int(ask_p[0]), 1]

    return LobSeries(meta=meta, day=day, timestamps=timestamps, book=book,
                     messages=messages)
