"""Latency clustering of backbone routers the PTR zone does not place."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import networkx as nx
import numpy as np

from ..errors import InputDataError
from .routers import Attribution, BackboneRouter

DEFAULT_CLUSTER_THRESHOLD_MS = 5.0
AMBIGUOUS_FLAG = "ambiguous"


class MatrixShapeMismatch(InputDataError, ValueError):
    pass


def _check_matrix(matrix: np.ndarray, size: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (size, size):
        raise MatrixShapeMismatch(f"Latency matrix is {matrix.shape}, expected ({size}, {size})")
    if size and not np.allclose(matrix, matrix.T, equal_nan=True):
        raise MatrixShapeMismatch("Latency matrix is not symmetric")
    if size and np.any(np.diag(matrix) != 0):
        raise MatrixShapeMismatch("Latency matrix diagonal must be zero")
    return matrix


def latency_components(matrix: np.ndarray, threshold_ms: float) -> list[set[int]]:
    """Single-linkage components over router pairs closer than the threshold."""
    size = matrix.shape[0]
    graph = nx.Graph()
    graph.add_nodes_from(range(size))
    rows, cols = np.nonzero(np.triu(matrix < threshold_ms, k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return [set(component) for component in nx.connected_components(graph)]


def cluster_unresolved(
    routers: Sequence[BackboneRouter],
    matrix: np.ndarray,
    threshold_ms: float = DEFAULT_CLUSTER_THRESHOLD_MS,
) -> list[BackboneRouter]:
    """Give PTR-less routers the PoP of PTR-attributed routers they cluster with.

    A component anchored in one PoP hands that PoP to its other members; one
    anchored in several is flagged ambiguous and left alone; one with no
    anchor gets an ``unknown-N`` label, numbered by smallest member address.
    Output keeps the input order.
    """
    matrix = _check_matrix(matrix, len(routers))
    result = list(routers)
    unanchored: list[set[int]] = []
    ambiguous = 0
    for component in latency_components(matrix, threshold_ms):
        anchors = {
            routers[i].pop.code
            for i in component
            if routers[i].attribution is Attribution.PTR and routers[i].pop is not None
        }
        members = [i for i in component if routers[i].attribution is not Attribution.PTR]
        if not members:
            continue
        if len(anchors) == 1:
            anchor = next(routers[i] for i in sorted(component) if routers[i].attribution is Attribution.PTR)
            for i in members:
                result[i] = replace(
                    routers[i],
                    pop=anchor.pop,
                    attribution=Attribution.LATENCY_CLUSTER,
                    cluster=anchor.pop.code,
                )
        elif anchors:
            ambiguous += 1
            for i in members:
                result[i] = replace(
                    routers[i],
                    pop=None,
                    attribution=Attribution.UNRESOLVED,
                    cluster=None,
                    flags=tuple(sorted({*routers[i].flags, AMBIGUOUS_FLAG})),
                )
        else:
            unanchored.append(set(members))

    unanchored.sort(key=lambda members: min(routers[i].addr for i in members))
    for number, members in enumerate(unanchored, start=1):
        for i in members:
            result[i] = replace(
                routers[i], pop=None, attribution=Attribution.UNRESOLVED, cluster=f"unknown-{number}"
            )

    if ambiguous or unanchored:
        logging.info(
            "Latency clustering: %d ambiguous components, %d unknown PoP clusters",
            ambiguous,
            len(unanchored),
        )
    return result
