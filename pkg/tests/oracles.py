"""Independent numerical oracles shared by the test modules."""

import numpy as np


def central_difference(fn, arrays, index_sets, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. selected entries.

    ``arrays`` are mutated in place and restored; ``index_sets`` holds one list
    of flat indices per array.
    """
    out = []
    for arr, idxs in zip(arrays, index_sets):
        flat = arr.reshape(-1)
        est = []
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            est.append((fp - fm) / (2 * h))
        out.append(np.array(est))
    return out


def grad_close(analytic, numeric, rtol=1e-4, atol=1e-9):
    """Relative error |a-n| <= rtol*max(|a|,|n|), with an absolute floor for ~0 entries."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.all(np.abs(a - n) <= rtol * np.maximum(np.abs(a), np.abs(n)) + atol)


def conv2d_loops(x, w, stride=(1, 1), padding=(0, 0)):
    """Direct nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ic, i * sh + u, j * sw + v] * w[oc, ic, u, v]
                    out[b, oc, i, j] = acc
    return out


def pool_loops(x, k, s, reduce):
    n, c, h, w = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((n, c, oh, ow))
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    out[b, ch, i, j] = reduce(x[b, ch, i * s:i * s + k, j * s:j * s + k])
    return out
