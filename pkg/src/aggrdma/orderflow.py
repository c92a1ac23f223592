"""Limit-order-book reconstruction and order aggressiveness classification.

Each submitted limit order is graded against the book as it stood just
before the order arrived:

    +5  buy at or above the best ask, larger than the ask depth up to its price
    +4  buy at or above the best ask, fully filled by that depth
    +3  buy strictly inside the spread
    +2  buy at the best bid
    +1  buy below the best bid

Sell orders mirror these rules with negative sign.  Prices are integer
ticks throughout, so "at the best price" is an exact comparison.
"""
import bisect
import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AggrDmaError

SIDES = ("buy", "sell")
KINDS = ("submit", "cancel")
CONTINUOUS = "continuous"
CSV_COLUMNS = ("seq", "side", "price_ticks", "quantity", "kind", "order_id", "phase")
LEVELS = (-5, -4, -3, -2, -1, 1, 2, 3, 4, 5)


@dataclass(frozen=True)
class OrderEvent:
    seq: int
    side: str
    price: int
    quantity: Optional[int]
    kind: str = "submit"
    order_id: Optional[str] = None
    phase: str = CONTINUOUS

    def __post_init__(self):
        if self.side not in SIDES:
            raise AggrDmaError("invalid-event", f"seq {self.seq}: side must be buy or sell")
        if self.kind not in KINDS:
            raise AggrDmaError("invalid-event", f"seq {self.seq}: kind must be submit or cancel")
        if self.kind == "cancel":
            if not self.order_id:
                raise AggrDmaError("invalid-event", f"seq {self.seq}: cancel needs an order_id")
            if self.quantity is not None and self.quantity < 1:
                raise AggrDmaError("invalid-event", f"seq {self.seq}: quantity must be >= 1")
            return
        if self.price is None or self.price < 1:
            raise AggrDmaError("invalid-event", f"seq {self.seq}: price must be >= 1 tick")
        if self.quantity is None or self.quantity < 1:
            raise AggrDmaError("invalid-event", f"seq {self.seq}: quantity must be >= 1")


@dataclass(frozen=True)
class BookState:
    """Aggregate snapshot of the book."""

    bids: dict
    asks: dict

    @property
    def best_bid(self):
        return max(self.bids) if self.bids else None

    @property
    def best_ask(self):
        return min(self.asks) if self.asks else None


@dataclass
class Execution:
    executed: int
    rested: int
    fills: list = field(default_factory=list)


class _Side:
    """One side of the book: price levels, aggregate depth and FIFO queues."""

    def __init__(self, is_bid):
        self.is_bid = is_bid
        self.prices = []  # ascending
        self.depth = {}
        self.queues = {}

    def __bool__(self):
        return bool(self.prices)

    def best(self):
        if not self.prices:
            return None
        return self.prices[-1] if self.is_bid else self.prices[0]

    def add(self, price, order_id, qty):
        if price not in self.depth:
            bisect.insort(self.prices, price)
            self.depth[price] = 0
            self.queues[price] = deque()
        self.depth[price] += qty
        self.queues[price].append([order_id, qty])

    def reduce(self, price, order_id, qty):
        q = self.queues[price]
        for entry in q:
            if entry[0] == order_id:
                entry[1] -= qty
                if entry[1] == 0:
                    q.remove(entry)
                break
        self.depth[price] -= qty
        if self.depth[price] == 0:
            self._drop(price)

    def _drop(self, price):
        del self.depth[price]
        del self.queues[price]
        self.prices.pop(bisect.bisect_left(self.prices, price))

    def depth_through(self, price):
        """Resting quantity at prices an incoming order at ``price`` can reach."""
        if self.is_bid:
            i = bisect.bisect_left(self.prices, price)
            levels = self.prices[i:]
        else:
            i = bisect.bisect_right(self.prices, price)
            levels = self.prices[:i]
        return sum(self.depth[p] for p in levels)


class OrderBook:
    """Price-time priority book with aggregate levels and per-order queues."""

    def __init__(self):
        self._bid = _Side(is_bid=True)
        self._ask = _Side(is_bid=False)
        self.orders = {}  # order_id -> (side, price, remaining)
        self._auto = 0

    @property
    def bids(self):
        return dict(self._bid.depth)

    @property
    def asks(self):
        return dict(self._ask.depth)

    @property
    def best_bid(self):
        return self._bid.best()

    @property
    def best_ask(self):
        return self._ask.best()

    def state(self):
        return BookState(bids=self.bids, asks=self.asks)

    def depth_through(self, side, price):
        """Opposite-side depth available to an incoming ``side`` order at ``price``."""
        return (self._ask if side == "buy" else self._bid).depth_through(price)

    def _new_id(self):
        self._auto += 1
        return f"_auto{self._auto}"

    def submit(self, side, price, quantity, order_id=None):
        if order_id is not None and order_id in self.orders:
            raise AggrDmaError("duplicate-order", f"order_id {order_id!r} is already resting")
        own, opp = (self._bid, self._ask) if side == "buy" else (self._ask, self._bid)
        remaining = quantity
        fills = []
        while remaining and opp:
            best = opp.best()
            if (side == "buy" and best > price) or (side == "sell" and best < price):
                break
            queue = opp.queues[best]
            while remaining and queue:
                rid, rqty = queue[0]
                take = min(remaining, rqty)
                fills.append((rid, best, take))
                remaining -= take
                opp.depth[best] -= take
                if take == rqty:
                    queue.popleft()
                    del self.orders[rid]
                else:
                    queue[0][1] -= take
                    s, p, _ = self.orders[rid]
                    self.orders[rid] = (s, p, rqty - take)
            if opp.depth[best] == 0:
                opp._drop(best)
        if remaining:
            oid = order_id if order_id is not None else self._new_id()
            own.add(price, oid, remaining)
            self.orders[oid] = (side, price, remaining)
        return Execution(executed=quantity - remaining, rested=remaining, fills=fills)

    def cancel(self, order_id, quantity=None):
        """Remove a resting order, or ``quantity`` of it when given.

        Returns the quantity removed.  Asking for more than remains removes
        the whole order.
        """
        if order_id not in self.orders:
            raise AggrDmaError("unknown-order", f"order_id {order_id!r} is not resting")
        side, price, remaining = self.orders[order_id]
        qty = remaining if quantity is None else min(quantity, remaining)
        (self._bid if side == "buy" else self._ask).reduce(price, order_id, qty)
        if qty == remaining:
            del self.orders[order_id]
        else:
            self.orders[order_id] = (side, price, remaining - qty)
        return qty

    @classmethod
    def from_levels(cls, bids=None, asks=None):
        """Book seeded with one resting order per price level."""
        book = cls()
        for price, qty in sorted((bids or {}).items()):
            book.submit("buy", price, qty, order_id=f"b{price}")
        for price, qty in sorted((asks or {}).items()):
            book.submit("sell", price, qty, order_id=f"a{price}")
        return book


def _depth_through(book, side, price):
    if isinstance(book, OrderBook):
        return book.depth_through(side, price)
    if side == "buy":
        return sum(q for p, q in book.asks.items() if p <= price)
    return sum(q for p, q in book.bids.items() if p >= price)


def classify(book, order):
    """
    Aggressiveness level of a submission against ``book`` (before matching).

    ``book`` may be an :class:`OrderBook` or a :class:`BookState`.  A missing
    best price is treated as absent: with an empty own side every
    non-marketable order counts as inside the spread, and with both sides
    empty the order is graded +3/-3 (inside the void spread).
    """
    if order.kind != "submit":
        raise AggrDmaError("invalid-event", f"seq {order.seq}: only submissions are classified")
    bb, ba = book.best_bid, book.best_ask
    p, v = order.price, order.quantity
    if order.side == "buy":
        if ba is not None and p >= ba:
            return 5 if v > _depth_through(book, "buy", p) else 4
        if bb is None or p > bb:
            return 3
        return 2 if p == bb else 1
    if bb is not None and p <= bb:
        return -5 if v > _depth_through(book, "sell", p) else -4
    if ba is None or p < ba:
        return -3
    return -2 if p == ba else -1


def apply_event(book, event):
    """Apply one event to ``book`` in place and return the execution report."""
    if event.kind == "cancel":
        removed = book.cancel(event.order_id, event.quantity)
        return Execution(executed=0, rested=-removed)
    return book.submit(event.side, event.price, event.quantity, event.order_id)


@dataclass
class AggressivenessSeries:
    stock_id: str
    values: np.ndarray
    seq: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.size == 0:
            raise AggrDmaError("empty-series", f"no submissions for {self.stock_id!r}")
        if not np.all(np.isin(self.values, LEVELS)):
            raise AggrDmaError("invalid-series", "values must lie in {-5..-1, 1..5}")
        if self.seq is not None:
            self.seq = np.asarray(self.seq, dtype=np.int64)

    @property
    def N(self):
        return self.values.size

    def __len__(self):
        return self.values.size


def build_series(events, stock_id="", book=None):
    """
    Classify every continuous-auction submission of an event stream.

    Cancels update the book but emit nothing.  Events from other session
    phases are skipped.  Errors are re-raised with the offending seq.
    """
    book = OrderBook() if book is None else book
    values, seqs = [], []
    meta = {"void_spread": 0, "empty_own_side": 0, "skipped_phase": 0, "cancels": 0}
    for ev in events:
        if ev.phase != CONTINUOUS:
            meta["skipped_phase"] += 1
            continue
        try:
            if ev.kind == "submit":
                bb, ba = book.best_bid, book.best_ask
                a = classify(book, ev)
                if bb is None and ba is None:
                    meta["void_spread"] += 1
                elif abs(a) == 3 and (bb if ev.side == "buy" else ba) is None:
                    meta["empty_own_side"] += 1
                values.append(a)
                seqs.append(ev.seq)
            else:
                meta["cancels"] += 1
            apply_event(book, ev)
        except AggrDmaError as exc:
            raise AggrDmaError(exc.code, f"seq {ev.seq}: {exc.detail}") from exc
    if not values:
        raise AggrDmaError("empty-series", f"no continuous-auction submissions for {stock_id!r}")
    return AggressivenessSeries(stock_id=stock_id, values=values, seq=seqs, metadata=meta)


def _parse_int(text, name, lineno, optional=False):
    text = text.strip()
    if not text:
        if optional:
            return None
        raise AggrDmaError("parse-error", f"line {lineno}: missing {name}")
    try:
        return int(text)
    except ValueError:
        raise AggrDmaError("parse-error", f"line {lineno}: {name} {text!r} is not an integer") from None


def read_events(path):
    """
    Read an event CSV.

    The file opens with ``#key=value`` metadata lines (``tick_size`` and
    ``stock_id``), followed by the header ``seq,side,price_ticks,quantity,
    kind,order_id,phase`` and one event per row.  An empty ``phase`` means
    continuous trading.

    Returns
    -------
    events : list of OrderEvent
    meta : dict
    """
    meta = {}
    events = []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                if header_seen:
                    continue
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(c.strip() for c in row) != CSV_COLUMNS:
                    raise AggrDmaError(
                        "parse-error",
                        f"line {lineno}: header must be {','.join(CSV_COLUMNS)}",
                    )
                header_seen = True
                continue
            if len(row) != len(CSV_COLUMNS):
                raise AggrDmaError(
                    "parse-error", f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}"
                )
            seq, side, price, qty, kind, oid, phase = (c.strip() for c in row)
            try:
                events.append(
                    OrderEvent(
                        seq=_parse_int(seq, "seq", lineno),
                        side=side,
                        price=_parse_int(price, "price_ticks", lineno, optional=kind == "cancel"),
                        quantity=_parse_int(qty, "quantity", lineno, optional=kind == "cancel"),
                        kind=kind,
                        order_id=oid or None,
                        phase=phase or CONTINUOUS,
                    )
                )
            except AggrDmaError as exc:
                if exc.code == "parse-error":
                    raise
                raise AggrDmaError("parse-error", f"line {lineno}: {exc.detail}") from None
    if not header_seen:
        raise AggrDmaError("parse-error", f"{path}: missing header row")
    if "tick_size" in meta:
        try:
            meta["tick_size"] = float(meta["tick_size"])
        except ValueError:
            raise AggrDmaError("parse-error", f"tick_size {meta['tick_size']!r} is not a number") from None
    return events, meta
