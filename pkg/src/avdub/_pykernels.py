"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 4096


def nearest_centroid(x, centroids):
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    n = x.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        block = x[start:start + _CHUNK]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
        # argmin returns the first minimum: lowest-index tie-break
        j = d2.argmin(axis=1)
        idx[start:start + _CHUNK] = j
        dist[start:start + _CHUNK] = d2[np.arange(len(j)), j]
    return idx, dist


def rvq_encode(x, books):
    resid = np.array(x, dtype=np.float64, copy=True)
    codes = np.empty((resid.shape[0], books.shape[0]), dtype=np.int64)
    for k in range(books.shape[0]):
        j, _ = nearest_centroid(resid, books[k])
        codes[:, k] = j
        resid -= books[k][j]
    return codes


def accumulate_means(x, labels, num_clusters):
    x = np.asarray(x, dtype=np.float64)
    sums = np.zeros((num_clusters, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=num_clusters).astype(np.int64)
    return sums, counts


def levenshtein(ref, hyp):
    ref = list(ref)
    hyp = list(hyp)
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]
