"""Read and write the LIBSVM sparse text format for binary classification.

One record per line: ``<label> <index>:<value> ...`` with 1-based, strictly
increasing indices.  ``#`` starts a comment that runs to the end of the line.
"""

import numpy as np

from .errors import MalformedLine, NonBinaryLabel


def _label(token, line_no):
    try:
        v = float(token)
    except ValueError:
        raise NonBinaryLabel(f"line {line_no}: label {token!r} is not numeric") from None
    if v == 1.0:
        return 1.0
    if v in (-1.0, 0.0):
        return -1.0
    raise NonBinaryLabel(f"line {line_no}: label {token!r} is not binary")


def parse_libsvm(lines, n_features=None):
    """Parse an iterable of lines into a dense ``(features, labels)`` pair.

    Labels ``0``/``-1`` map to -1 and ``1`` to +1.  The column count is the
    largest index seen unless ``n_features`` is given, in which case larger
    indices are an error.
    """
    labels = []
    rows = []
    max_index = 0
    for line_no, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        labels.append(_label(tokens[0], line_no))
        entries = []
        last = 0
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise MalformedLine(line_no, raw.rstrip("\n"), f"token {tok!r}")
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise MalformedLine(line_no, raw.rstrip("\n"), f"token {tok!r}") from None
            if j <= last:
                raise MalformedLine(line_no, raw.rstrip("\n"), "indices must be >= 1 and strictly increasing")
            if n_features is not None and j > n_features:
                raise MalformedLine(line_no, raw.rstrip("\n"), f"index {j} exceeds n_features={n_features}")
            last = j
            entries.append((j - 1, v))
        max_index = max(max_index, last)
        rows.append(entries)

    n = max_index if n_features is None else int(n_features)
    X = np.zeros((len(rows), n))
    for i, entries in enumerate(rows):
        for j, v in entries:
            X[i, j] = v
    return X, np.array(labels, dtype=float)


def read_libsvm(path, n_features=None):
    with open(path) as fh:
        return parse_libsvm(fh, n_features)


def emit_libsvm(features, labels):
    """Yield LIBSVM lines (with trailing newline); zero entries are omitted."""
    X = np.asarray(features, dtype=float)
    for row, lab in zip(X, np.asarray(labels)):
        parts = ["+1" if lab > 0 else "-1"]
        for j in np.flatnonzero(row):
            parts.append(f"{j + 1}:{row[j]:.17g}")
        yield " ".join(parts) + "\n"


def write_libsvm(path, features, labels):
    with open(path, "w") as fh:
        fh.writelines(emit_libsvm(features, labels))
