"""Row-band fan-out for per-pixel stages.

Stages whose work is pure per pixel (MAP search, label refinement,
refocusing) accept a row range and return flat arrays for those rows.
``map_row_bands`` splits the image into contiguous bands, runs the band
function in worker processes, and concatenates the results, so the output
is identical to a single-band run for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np


def band_ranges(n_rows: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n_rows))
    edges = np.linspace(0, n_rows, workers + 1).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(workers) if edges[i] < edges[i + 1]]


def map_row_bands(fn, n_rows: int, workers: int, *args):
    """Run ``fn((r0, r1), *args)`` over row bands and concatenate the outputs.

    ``fn`` must return a tuple of 1-D arrays covering its band's pixels in
    row-major order.
    """
    bands = band_ranges(n_rows, workers)
    if len(bands) == 1:
        return fn(bands[0], *args)
    with ProcessPoolExecutor(max_workers=len(bands)) as pool:
        futures = [pool.submit(fn, band, *args) for band in bands]
        parts = [f.result() for f in futures]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
