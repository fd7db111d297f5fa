"""Brute-force reference consolidator used to check the archive implementation.

Everything here is deliberately naive: plain dicts and lists, scalar Python
arithmetic, re-scanning every window from scratch. Slow, but obviously
correct, which is the point of an oracle.
"""

import math


def expected_rows(step, var_names, archive, updates):
    """Consolidate an update stream the slow way.

    `updates` is a list of (timestamp, {name: value-or-None}) applied in
    order, with non-decreasing bin indexes. Returns the rows the archive
    should hold afterwards, oldest first, as (end_time, [value-or-None per
    variable]) tuples. Only bins strictly before the latest one are
    finalized; the newest bin stays pending and contributes nothing.
    """
    ppw = int(round(archive.granularity / step))
    capacity = int(math.ceil(archive.expire / archive.granularity - 1e-9))

    finalized, first_bin, pending_bin = _replay(step, var_names, updates)
    if pending_bin is None:
        return []

    rows = []
    window = first_bin // ppw
    while (window + 1) * ppw <= pending_bin:
        vector = []
        for vi in range(len(var_names)):
            known = [
                finalized[b][vi]
                for b in range(window * ppw, (window + 1) * ppw)
                if b >= first_bin and finalized[b][vi] is not None
            ]
            if len(known) < archive.xff * ppw - 1e-9 or not known:
                vector.append(None)
            elif archive.cf.value == "AVERAGE":
                vector.append(sum(known) / len(known))
            elif archive.cf.value == "MIN":
                vector.append(min(known))
            elif archive.cf.value == "MAX":
                vector.append(max(known))
            else:
                vector.append(known[-1])
        rows.append(((window + 1) * ppw * step, vector))
        window += 1
    return rows[-capacity:]


def _replay(step, var_names, updates):
    """Apply the update stream: last write in a bin wins wholesale."""
    finalized = {}
    first_bin = None
    pending_bin = None
    pending = None
    for ts, values in updates:
        bin_index = math.floor(ts / step)
        vector = [None] * len(var_names)
        for i, name in enumerate(var_names):
            v = values.get(name)
            if v is not None:
                vector[i] = float(v)
        if pending_bin is None:
            first_bin = bin_index
        elif bin_index > pending_bin:
            finalized[pending_bin] = pending
            for gap in range(pending_bin + 1, bin_index):
                finalized[gap] = [None] * len(var_names)
        elif bin_index < pending_bin:
            raise AssertionError("oracle streams must not go backwards")
        pending_bin = bin_index
        pending = vector
    return finalized, first_bin, pending_bin


def assert_rows_match(archive_rows, oracle_rows, cf, rel_tol=1e-9):
    """Compare implementation rows against oracle rows.

    AVERAGE gets a relative tolerance (summation order differs between the
    two); MIN, MAX and LAST must match exactly.
    """
    assert len(archive_rows) == len(oracle_rows), (
        f"row count {len(archive_rows)} != oracle {len(oracle_rows)}")
    for (got_t, got_row), (want_t, want_row) in zip(archive_rows, oracle_rows):
        assert abs(got_t - want_t) < 1e-6, f"row end {got_t} != {want_t}"
        for got, want in zip(got_row, want_row):
            got_known = not math.isnan(got)
            if want is None:
                assert not got_known, f"row {got_t}: got {got}, oracle says unknown"
            else:
                assert got_known, f"row {got_t}: got unknown, oracle says {want}"
                if cf.value == "AVERAGE":
                    assert got == want or abs(got - want) <= rel_tol * max(
                        abs(got), abs(want)), f"row {got_t}: {got} != {want}"
                else:
                    assert got == want, f"row {got_t}: {got} != {want}"
