"""Post-hoc label cleaning.

Body-part plausibility rules live in a data file mapping named regions
(groups of body-template vertices) to forbidden classes; violating points
are relabeled to the nearest allowed label found by breadth-first search
over the scan's kNN graph. Majority-vote and direct relabeling mirror the
interactive tool's edit semantics (ties go to the lowest class id).
"""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path

import numpy as np

from .body import BodyFeatureField
from .errors import ValidationError
from .graph import KnnGraph
from .taxonomy import DEFAULT_TAXONOMY, LabelTaxonomy

RULES_SCHEMA = 1


def default_rules(vertex_parts: np.ndarray, part_names) -> dict:
    """Feet/arms/head rules for a body template with per-vertex part ids."""
    def verts(*parts):
        ids = [i for i, name in enumerate(part_names) if name in parts]
        return np.flatnonzero(np.isin(vertex_parts, ids)).tolist()

    upper = ["T-shirt", "Shirt", "Vest", "Coat", "Jacket", "Hoodies",
             "Dress", "Jumpsuit", "Swimsuit", "Scarf"]
    lower = ["Short-Pants", "Pants", "Skirts"]
    return {
        "schema": RULES_SCHEMA,
        "regions": {
            "feet": verts("l_foot", "r_foot"),
            "arms": verts("l_arm", "r_arm"),
            "head": verts("head"),
        },
        "forbidden": {
            "feet": upper + ["Hat", "Hair", "Scarf"],
            "arms": lower + ["Shoes", "Hat", "Hair"],
            "head": lower + ["Shoes"],
        },
    }


def load_rules(path) -> dict:
    rules = json.loads(Path(path).read_text())
    if rules.get("schema") != RULES_SCHEMA:
        raise ValidationError(
            f"rules schema {rules.get('schema')!r} unsupported")
    return rules


def save_rules(rules: dict, path) -> None:
    Path(path).write_text(json.dumps(rules, indent=2))


def _forbidden_matrix(rules: dict, num_vertices: int,
                      taxonomy: LabelTaxonomy) -> np.ndarray:
    """(num_vertices, num_classes) bool: True where a class is forbidden."""
    regions = rules.get("regions", {})
    unknown = [r for r in rules.get("forbidden", {}) if r not in regions]
    if unknown:
        raise ValidationError(
            f"rules forbid classes in unknown regions {unknown}; "
            f"known regions: {sorted(regions)}")
    forbidden = np.zeros((num_vertices, taxonomy.num_classes), dtype=bool)
    for region, classes in rules.get("forbidden", {}).items():
        verts = np.asarray(regions[region], dtype=np.int64)
        if verts.size and (verts.min() < 0 or verts.max() >= num_vertices):
            raise ValidationError(
                f"region {region!r} references vertices outside the template")
        for cls in classes:
            forbidden[verts, taxonomy.index(cls)] = True
    return forbidden


def body_part_filter(labels: np.ndarray, body_feats: BodyFeatureField,
                     rules: dict, graph: KnnGraph,
                     taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
                     num_vertices: int | None = None
                     ) -> tuple[np.ndarray, int]:
    """Relabel points whose class is implausible for their body region.

    Each violating point takes the label of the nearest (BFS over the kNN
    graph, original labels) point that is allowed at the violator's region;
    if the search exhausts, it falls back to Body. ``num_vertices`` is the
    body template's vertex count (inferred from the inputs when omitted).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != body_feats.vertex_indices.shape[0]:
        raise ValidationError("labels and body features disagree on length")
    if num_vertices is None:
        region_max = max((max(v) for v in rules.get("regions", {}).values()
                          if v), default=-1)
        num_vertices = max(int(body_feats.vertex_indices.max()),
                           int(region_max)) + 1
    forbidden = _forbidden_matrix(rules, max(num_vertices, 1), taxonomy)
    point_forbidden = forbidden[body_feats.vertex_indices]  # (n, K)
    violating = point_forbidden[np.arange(labels.shape[0]), labels]
    out = labels.copy()
    body_idx = taxonomy.index("Body")
    for i in np.flatnonzero(violating):
        allowed_here = ~point_forbidden[i]
        replacement = body_idx
        seen = {int(i)}
        queue = deque(int(j) for j in graph.neighbors[i])
        while queue:
            j = queue.popleft()
            if j in seen:
                continue
            seen.add(j)
            if not violating[j] and allowed_here[labels[j]]:
                replacement = int(labels[j])
                break
            queue.extend(int(m) for m in graph.neighbors[j])
        out[i] = replacement
    return out, int(violating.sum())


def majority_vote(labels: np.ndarray, selection,
                  num_classes: int | None = None) -> np.ndarray:
    """Assign the selection's modal class to every selected point."""
    labels = np.asarray(labels, dtype=np.int64)
    selection = np.asarray(selection, dtype=np.int64)
    if selection.size == 0:
        raise ValidationError("majority vote needs a nonempty selection")
    if selection.min() < 0 or selection.max() >= labels.shape[0]:
        raise ValidationError("selection indices outside the scan")
    counts = np.bincount(labels[selection],
                         minlength=num_classes or int(labels.max()) + 1)
    winner = int(counts.argmax())  # argmax takes the lowest id on ties
    out = labels.copy()
    out[selection] = winner
    return out


def relabel(labels: np.ndarray, selection, class_id: int,
            num_classes: int) -> np.ndarray:
    """Set the selection to one class; everything else is untouched."""
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 <= class_id < num_classes:
        raise ValidationError(
            f"class id {class_id} outside 0..{num_classes - 1}")
    selection = np.asarray(selection, dtype=np.int64)
    if selection.size and (selection.min() < 0
                           or selection.max() >= labels.shape[0]):
        raise ValidationError("selection indices outside the scan")
    out = labels.copy()
    out[selection] = class_id
    return out
