"""Brute-force reference implementations. Deliberately naive: plain loops and
full distance matrices, no k-d trees, no bincount tricks."""
import numpy as np


def brute_nn_distances(src, dst):
    d = np.sqrt(((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2))
    return d.min(axis=1)


def brute_recon(pred, gt, tau):
    dp = brute_nn_distances(pred, gt)
    dg = brute_nn_distances(gt, pred)
    acc, comp = dp.mean(), dg.mean()
    prec, rec = np.mean(dp < tau), np.mean(dg < tau)
    f = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return {"acc": acc, "comp": comp, "prec": prec, "recall": rec, "cd": acc + comp, "fscore": f}


def brute_occupancy(pred, gt):
    """(sc_iou, ssc_miou) by visiting every voxel once per class."""
    p = pred.ravel().tolist()
    g = gt.ravel().tolist()
    tp = fp = fn = 0
    for a, b in zip(p, g):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
    sc = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    ious = []
    for c in sorted(set(g) - {0}):
        inter = sum(1 for a, b in zip(p, g) if a == c and b == c)
        union = sum(1 for a, b in zip(p, g) if a == c or b == c)
        ious.append(inter / union)
    if ious:
        miou = sum(ious) / len(ious)
    else:
        miou = 1.0 if not any(p) else 0.0
    return sc, miou


def brute_labels(dense, sparse):
    """Nearest labeled voxel by squared index distance over the full distance
    matrix; ties to the smallest linear index."""
    src = np.argwhere(sparse)  # row-major, so argmin's first minimum has the smallest linear index
    dst = np.argwhere(dense)
    out = np.zeros(sparse.shape, np.uint16)
    if len(dst) == 0:
        return out
    d2 = ((dst[:, None, :] - src[None, :, :]) ** 2).sum(axis=2)
    best = src[np.argmin(d2, axis=1)]
    out[tuple(dst.T)] = sparse[tuple(best.T)]
    return out
