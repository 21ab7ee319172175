"""Plain-text artifacts.

Matrices, partitions and loss traces are CSV. Trained models use a small
versioned flat file::

    featnet-model 1
    kind = margin
    kernel = linear
    bias = -0.25
    coef.shape = 3
    coef = 0.5 -0.5 1.0
    ...

Every line after the header is ``key = value``. Arrays are stored as
whitespace separated ``repr`` floats with a companion ``<key>.shape`` entry,
so values round-trip exactly.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .clustering import Partition, SoftPartition
from .convtrain import MaskedConvNet
from .errors import ParseError
from .hierarchy import HierarchicalNetwork
from .learners import MarginModel, PlattCalibrator
from .network import FeatureNetwork

MODEL_HEADER = "featnet-model"
MODEL_VERSION = 1


def _fmt(v):
    return repr(float(v))


def write_matrix_csv(path, M, col_ids=None, row_ids=None, row_label="row"):
    """Dense matrix with a header of column ids and optional row ids."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    col_ids = [str(c) for c in (col_ids if col_ids is not None else range(M.shape[1]))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if row_ids is None:
            w.writerow(col_ids)
            for row in M:
                w.writerow([_fmt(v) for v in row])
        else:
            w.writerow([row_label] + col_ids)
            for rid, row in zip(row_ids, M):
                w.writerow([rid] + [_fmt(v) for v in row])


def read_matrix_csv(path, has_row_ids=False):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("empty matrix file", 1)
    header = rows[0][1:] if has_row_ids else rows[0]
    body, ids = [], []
    for line, r in enumerate(rows[1:], start=2):
        if has_row_ids:
            ids.append(r[0])
            r = r[1:]
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(r)}", line)
        try:
            body.append([float(v) for v in r])
        except ValueError:
            raise ParseError("non-numeric cell", line) from None
    M = np.array(body, dtype=float).reshape(len(body), len(header))
    return (M, header, ids) if has_row_ids else (M, header)


def write_network(path, G: FeatureNetwork):
    ids = G.node_ids if G.node_ids is not None else [str(i) for i in range(G.p)]
    write_matrix_csv(path, G.W, ids)


def read_network(path, mode="prior"):
    W, ids = read_matrix_csv(path)
    return FeatureNetwork(W, ids, mode)


def write_partition(path, C, node_ids=None):
    """``node_id,cluster_id`` rows, or one membership column per cluster for
    a soft partition."""
    ids = node_ids if node_ids is not None else [str(i) for i in range(C.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(C, SoftPartition):
            w.writerow(["node_id"] + [str(j) for j in range(C.d)])
            for i, nid in enumerate(ids):
                w.writerow([nid] + [_fmt(u) for u in C.U[:, i]])
        else:
            w.writerow(("node_id", "cluster_id"))
            for nid, c in zip(ids, C.assign):
                w.writerow((nid, int(c)))


def read_partition(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "node_id":
        raise ParseError("partition file must start with a node_id header", 1)
    try:
        if rows[0][1:] == ["cluster_id"]:
            return Partition([int(r[1]) for r in rows[1:]])
        U = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    except (ValueError, IndexError):
        raise ParseError("malformed partition row", 2) from None
    return SoftPartition(U.T)


def write_hierarchy(directory, H: HierarchicalNetwork):
    """``layer_k.network.csv`` for every layer and ``layer_k.partition.csv``
    for the partition from layer ``k`` to ``k + 1``. Returns written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, G in enumerate(H.layers):
        path = os.path.join(directory, f"layer_{k}.network.csv")
        write_network(path, G)
        paths.append(path)
    for k, C in enumerate(H.partitions):
        path = os.path.join(directory, f"layer_{k}.partition.csv")
        write_partition(path, C, H.layers[k].node_ids)
        paths.append(path)
    return paths


def read_hierarchy(directory):
    layers, parts = [], []
    k = 0
    while os.path.exists(os.path.join(directory, f"layer_{k}.network.csv")):
        layers.append(read_network(os.path.join(directory, f"layer_{k}.network.csv"),
                                   "prior" if k == 0 else "coarsened"))
        k += 1
    for k in range(len(layers) - 1):
        parts.append(read_partition(os.path.join(directory, f"layer_{k}.partition.csv")))
    return HierarchicalNetwork(layers, parts)


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for epoch, loss in enumerate(trace):
            w.writerow((epoch, _fmt(loss)))


def read_loss_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows if r])


# ---------------------------------------------------------------------------
# model flat files


def _array_lines(key, a):
    a = np.asarray(a, dtype=float)
    shape = " ".join(str(s) for s in a.shape)
    return [f"{key}.shape = {shape}", f"{key} = " + " ".join(_fmt(v) for v in a.ravel())]


def _model_fields(model):
    if isinstance(model, MarginModel):
        lines = ["kind = margin", f"kernel = {model.kernel}",
                 f"gamma = {'none' if model.gamma is None else _fmt(model.gamma)}",
                 f"C = {_fmt(model.C)}", f"bias = {_fmt(model.bias)}"]
        lines += _array_lines("coef", model.coef)
        lines += _array_lines("support_points", model.support_points)
        return lines
    if isinstance(model, PlattCalibrator):
        return ["kind = platt", f"A = {_fmt(model.A)}", f"B = {_fmt(model.B)}"]
    if isinstance(model, MaskedConvNet):
        lines = ["kind = convnet", f"loss = {model.loss}", f"layers = {model.depth}"]
        for k in range(model.depth):
            lines.append(f"layer.{k}.activation = {model.activations[k]}")
            lines += _array_lines(f"layer.{k}.weights", model.weights[k])
            lines += _array_lines(f"layer.{k}.mask", model.masks[k])
        return lines
    raise TypeError(f"cannot serialise {type(model).__name__}")


def save_model(path, model):
    lines = [f"{MODEL_HEADER} {MODEL_VERSION}"] + _model_fields(model)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_fields(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != [MODEL_HEADER, str(MODEL_VERSION)]:
        raise ParseError(f"not a version {MODEL_VERSION} model file", 1)
    fields = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            # an empty array serialises as "key = " which strips to "key ="
            key, sep, value = line.partition(" =")
            if not sep:
                raise ParseError(f"expected 'key = value', got {line!r}", line_no)
        fields[key.strip()] = value.strip()
    return fields


def _array(fields, key):
    shape = tuple(int(s) for s in fields[f"{key}.shape"].split())
    values = [float(v) for v in fields[key].split()]
    return np.array(values, dtype=float).reshape(shape)


def load_model(path):
    f = _parse_fields(path)
    kind = f.get("kind")
    if kind == "margin":
        gamma = None if f["gamma"] == "none" else float(f["gamma"])
        coef = _array(f, "coef")
        return MarginModel(f["kernel"], gamma, coef, float(f["bias"]),
                           _array(f, "support_points"), float(f["C"]))
    if kind == "platt":
        return PlattCalibrator(float(f["A"]), float(f["B"]))
    if kind == "convnet":
        n = int(f["layers"])
        return MaskedConvNet([_array(f, f"layer.{k}.weights") for k in range(n)],
                             [_array(f, f"layer.{k}.mask") for k in range(n)],
                             [f[f"layer.{k}.activation"] for k in range(n)], f["loss"])
    raise ParseError(f"unknown model kind {kind!r}", 2)
