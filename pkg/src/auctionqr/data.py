"""Canonical auction CSV ingestion and emission.

First-price files carry one row per bid with header
`auction_id,n_bidders,bid,x1,...,xD`; ascending files carry one row per
auction with `winning_bid` in place of `bid`. Latent simulated values go to a
separate oracle file only when explicitly requested.
"""

import csv

import numpy as np

from .errors import DataSchemaError
from .model import ASCENDING, FIRST_PRICE, AuctionRecord, AuctionSample


def _covariate_header(d):
    return [f"x{j + 1}" for j in range(d)]


def write_sample_csv(sample, path):
    d = sample.d
    bid_col = "bid" if sample.format == FIRST_PRICE else "winning_bid"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["auction_id", "n_bidders", bid_col]
                        + _covariate_header(d))
        for rec in sample.records:
            xs = [repr(float(v)) for v in rec.x]
            if sample.format == FIRST_PRICE:
                for bid in rec.bids:
                    writer.writerow([rec.auction_id, rec.n_bidders,
                                     repr(float(bid))] + xs)
            else:
                writer.writerow([rec.auction_id, rec.n_bidders,
                                 repr(float(rec.winning_bid))] + xs)


def write_oracle_csv(sample, path):
    """Latent signals and values from a simulated sample (one row per bidder)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["auction_id", "bidder", "signal", "value"])
        for rec in sample.records:
            if rec.values is None:
                raise DataSchemaError(
                    f"auction {rec.auction_id} carries no oracle values")
            for i, (sig, val) in enumerate(zip(rec.signals, rec.values)):
                writer.writerow([rec.auction_id, i + 1, repr(float(sig)),
                                 repr(float(val))])


def _parse_float(token, name, row):
    try:
        return float(token)
    except ValueError:
        raise DataSchemaError(f"non-numeric {name} {token!r}", row=row) from None


def read_sample_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataSchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "bid" in header:
            fmt, bid_col = FIRST_PRICE, "bid"
        elif "winning_bid" in header:
            fmt, bid_col = ASCENDING, "winning_bid"
        else:
            raise DataSchemaError(
                f"{path}: header must contain a 'bid' or 'winning_bid' column")
        for col in ("auction_id", "n_bidders"):
            if col not in header:
                raise DataSchemaError(f"{path}: missing column {col!r}")
        x_cols = [h for h in header if h.startswith("x")]
        expected = ["auction_id", "n_bidders", bid_col] + _covariate_header(
            len(x_cols))
        if header != expected:
            raise DataSchemaError(
                f"{path}: header {header} does not match the canonical schema "
                f"{expected}")
        idx = {h: i for i, h in enumerate(header)}

        rows = {}
        order = []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataSchemaError(f"{path}: expected {len(header)} fields, "
                                      f"got {len(row)}", row=rownum)
            try:
                auction_id = int(row[idx["auction_id"]])
                n_bidders = int(row[idx["n_bidders"]])
            except ValueError:
                raise DataSchemaError(f"{path}: non-integer id or bidder count",
                                      row=rownum) from None
            bid = _parse_float(row[idx[bid_col]], bid_col, rownum)
            xs = np.array([_parse_float(row[idx[c]], c, rownum)
                           for c in x_cols])
            if auction_id not in rows:
                rows[auction_id] = {"n_bidders": n_bidders, "x": xs,
                                    "bids": [], "first_row": rownum}
                order.append(auction_id)
            else:
                known = rows[auction_id]
                if known["n_bidders"] != n_bidders or not np.array_equal(
                        known["x"], xs):
                    raise DataSchemaError(
                        f"{path}: auction {auction_id} has inconsistent "
                        "covariates or bidder count", row=rownum)
            rows[auction_id]["bids"].append(bid)

    records = []
    for auction_id in order:
        info = rows[auction_id]
        if fmt == FIRST_PRICE:
            if len(info["bids"]) != info["n_bidders"]:
                raise DataSchemaError(
                    f"{path}: auction {auction_id} has {len(info['bids'])} bid "
                    f"rows for {info['n_bidders']} bidders",
                    row=info["first_row"])
            records.append(AuctionRecord(auction_id=auction_id,
                                         n_bidders=info["n_bidders"],
                                         x=info["x"],
                                         bids=np.array(info["bids"])))
        else:
            if len(info["bids"]) != 1:
                raise DataSchemaError(
                    f"{path}: ascending auction {auction_id} must have exactly "
                    "one winning-bid row", row=info["first_row"])
            records.append(AuctionRecord(auction_id=auction_id,
                                         n_bidders=info["n_bidders"],
                                         x=info["x"],
                                         winning_bid=info["bids"][0]))
    if not records:
        raise DataSchemaError(f"{path}: no data rows")
    return AuctionSample(records, format=fmt)
