"""
Resolved synthetic world: class prototypes, box statistics, edge affinities
and the relation-rule table, all derived deterministically from a WorldSpec.
"""

from __future__ import annotations

import functools
import logging

import numpy as np

from src.errors import DataError
from src.utils.config import SPATIAL_BUCKETS, WorldSpec

logger = logging.getLogger(__name__)

NUM_BUCKETS = len(SPATIAL_BUCKETS)
LEFT_OF, RIGHT_OF, ABOVE, BELOW, OVERLAPPING, CONTAINING = range(NUM_BUCKETS)

# Stream tags keep the independent random streams of a world apart.
_PROTOTYPE_STREAM = 1
_POSITION_STREAM = 2
_LAYOUT_STREAM = 3
_AFFINITY_STREAM = 4
_BUCKET_MC_STREAM = 5
_BUCKET_MC_SAMPLES = 4000


def zipf_weights(num_predicates: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, num_predicates + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def spatial_bucket(subject_box, object_box) -> int:
    sx1, sy1, sx2, sy2 = subject_box
    ox1, oy1, ox2, oy2 = object_box
    if sx1 <= ox1 and sy1 <= oy1 and sx2 >= ox2 and sy2 >= oy2:
        return CONTAINING
    if min(sx2, ox2) > max(sx1, ox1) and min(sy2, oy2) > max(sy1, oy1):
        return OVERLAPPING
    dx = (ox1 + ox2 - sx1 - sx2) / 2.0
    dy = (oy1 + oy2 - sy1 - sy2) / 2.0
    if abs(dx) >= abs(dy):
        return LEFT_OF if dx > 0 else RIGHT_OF
    return ABOVE if dy > 0 else BELOW


def spatial_buckets(subject_boxes: np.ndarray, object_boxes: np.ndarray) -> np.ndarray:
    """Vectorized `spatial_bucket` over (N, 4) arrays."""
    s, o = subject_boxes, object_boxes
    contains = (s[:, 0] <= o[:, 0]) & (s[:, 1] <= o[:, 1]) & (s[:, 2] >= o[:, 2]) & (s[:, 3] >= o[:, 3])
    overlaps = (np.minimum(s[:, 2], o[:, 2]) > np.maximum(s[:, 0], o[:, 0])) & (
        np.minimum(s[:, 3], o[:, 3]) > np.maximum(s[:, 1], o[:, 1])
    )
    dx = (o[:, 0] + o[:, 2] - s[:, 0] - s[:, 2]) / 2.0
    dy = (o[:, 1] + o[:, 3] - s[:, 1] - s[:, 3]) / 2.0
    horizontal = np.abs(dx) >= np.abs(dy)
    out = np.where(horizontal, np.where(dx > 0, LEFT_OF, RIGHT_OF), np.where(dy > 0, ABOVE, BELOW))
    out = np.where(overlaps, OVERLAPPING, out)
    return np.where(contains, CONTAINING, out).astype(np.int64)


class World:
    def __init__(self, spec: WorldSpec):
        if spec.num_entity_classes < 1 or spec.num_predicates < 1 or spec.feature_dim < 1:
            raise DataError(
                "degenerate world: need at least one entity class, one predicate and feature_dim >= 1 "
                f"(got {spec.num_entity_classes}, {spec.num_predicates}, {spec.feature_dim})"
            )
        self.spec = spec
        self.num_classes = spec.num_entity_classes
        self.num_predicates = spec.num_predicates
        self.zipf = zipf_weights(spec.num_predicates, spec.predicate_zipf_exponent)
        self.prototypes = np.stack([self.class_prototype(c) for c in range(self.num_classes)])
        self.position_projection = self._rng(_POSITION_STREAM).normal(0.0, 0.5, size=(spec.feature_dim, 4))
        self.box_scale = self._rng(_LAYOUT_STREAM).uniform(0.7, 1.4, size=self.num_classes)
        self.affinity = self._build_affinity()
        self.rules = self._resolve_rules() if spec.relation_rules else self._generate_rules()

    def _rng(self, *stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.spec.seed, *stream]))

    def class_prototype(self, class_id: int) -> np.ndarray:
        vec = self._rng(_PROTOTYPE_STREAM, class_id).normal(size=self.spec.feature_dim)
        return vec / max(np.linalg.norm(vec), 1e-12)

    def positional_component(self, box) -> np.ndarray:
        return self.position_projection @ (np.asarray(box, dtype=np.float64) - 0.5)

    def sample_boxes(self, rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)
        centers = rng.uniform(0.1, 0.9, size=(n, 2))
        sizes = rng.uniform(0.08, 0.3, size=(n, 2)) * self.box_scale[labels][:, None]
        low = np.clip(centers - sizes / 2.0, 0.0, 1.0)
        high = np.clip(centers + sizes / 2.0, 0.0, 1.0)
        return np.concatenate([low, high], axis=1)

    # ------------------------------------------------------------------
    # Edge structure
    # ------------------------------------------------------------------

    def _build_affinity(self) -> np.ndarray:
        spec = self.spec
        rng = self._rng(_AFFINITY_STREAM)
        dense = rng.random((self.num_classes, self.num_classes)) < spec.affinity_density
        return np.where(dense, spec.edge_affinity_high, spec.edge_affinity_low)

    def _bucket_frequencies(self) -> np.ndarray:
        """Monte Carlo estimate of P(bucket | subject class, object class)."""
        rng = self._rng(_BUCKET_MC_STREAM)
        c = self.num_classes
        subj = np.repeat(np.arange(c), c * _BUCKET_MC_SAMPLES)
        obj = np.tile(np.repeat(np.arange(c), _BUCKET_MC_SAMPLES), c)
        buckets = spatial_buckets(self.sample_boxes(rng, subj), self.sample_boxes(rng, obj))
        counts = np.zeros((c, c, NUM_BUCKETS))
        np.add.at(counts, (subj, obj, buckets), 1.0)
        return counts / _BUCKET_MC_SAMPLES

    def _generate_rules(self) -> np.ndarray:
        """
        Sharp rows (one dominant predicate each) whose dominants are assigned
        so that usage-weighted predicate mass tracks the Zipf marginal.
        """
        usage = self.affinity[:, :, None] * self._bucket_frequencies()
        target = self.zipf * usage.sum()
        assigned = np.zeros(self.num_predicates)
        dominant = np.zeros(usage.shape, dtype=np.int64)
        flat_order = np.argsort(-usage.reshape(-1), kind="stable")
        for flat in flat_order:
            key = np.unravel_index(flat, usage.shape)
            choice = int(np.argmax(target - assigned))
            dominant[key] = choice
            assigned[choice] += usage[key]
        logger.debug("rule dominants: target mass %s, assigned %s", np.round(target, 4), np.round(assigned, 4))
        sharp = self.spec.rule_sharpness
        rules = (1.0 - sharp) * np.broadcast_to(self.zipf, usage.shape + (self.num_predicates,)).copy()
        np.put_along_axis(rules, dominant[..., None], np.take_along_axis(rules, dominant[..., None], -1) + sharp, -1)
        return rules

    def _resolve_rules(self) -> np.ndarray:
        """Most specific matching rule wins; earlier rules win ties."""
        c, p = self.num_classes, self.num_predicates
        rules = np.zeros((c, c, NUM_BUCKETS, p))
        specificity = np.full((c, c, NUM_BUCKETS), -1)
        for rule in self.spec.relation_rules:
            level = sum(v is not None for v in (rule.subject, rule.object, rule.bucket))
            subjects = range(c) if rule.subject is None else [rule.subject]
            objects = range(c) if rule.object is None else [rule.object]
            buckets = range(NUM_BUCKETS) if rule.bucket is None else [SPATIAL_BUCKETS.index(rule.bucket)]
            for s in subjects:
                for o in objects:
                    for b in buckets:
                        if level > specificity[s, o, b]:
                            specificity[s, o, b] = level
                            rules[s, o, b] = rule.probs
        return rules

    def bayes_predicate(self, subject_label: int, object_label: int, bucket: int) -> int:
        """Rule-lookup oracle: most probable predicate for a key."""
        return int(np.argmax(self.rules[subject_label, object_label, bucket]))


@functools.lru_cache(maxsize=16)
def _cached_world(spec_json: str) -> World:
    return World(WorldSpec.model_validate_json(spec_json))


def get_world(spec: WorldSpec) -> World:
    if spec.num_entity_classes < 1 or spec.num_predicates < 1 or spec.feature_dim < 1:
        raise DataError(
            f"degenerate world: {spec.num_entity_classes} classes, {spec.num_predicates} predicates"
        )
    return _cached_world(spec.model_dump_json())
