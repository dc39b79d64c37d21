"""Incident correlation: weighted temporal/spatial/semantic similarity with gating.

For a new document and a candidate incident the score is

    sigma = w_t * phi_t(dt) + w_g * phi_g(dg) + w_s * phi_s(text)

where each phi is in [0, 1].  A modality with no evidence (no geometry on one
side, or empty text) is dropped and the remaining weights renormalized, unless
``strict_missing`` is set, in which case its phi counts as 0.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from functools import cmp_to_key
from typing import Iterable, Protocol, Sequence

import numpy as np

from .geo import Geometry, min_distance_m
from .model import EidoDocument, descriptive_text

LN2 = math.log(2.0)
TIE_EPS = 1e-9
DEFAULT_DIM = 4096

_TOKEN_RE = re.compile(r"[a-z0-9]+")


# -- text vectors ----------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vectorizer(Protocol):
    def __call__(self, text: str) -> np.ndarray: ...


class HashedVectorizer:
    """Hashed term-frequency vectors, L2-normalized; all-zero for token-free text."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def bucket(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % self.dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            vec[self.bucket(tok)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


# -- evidence terms --------------------------------------------------------------

def phi_t(delta_t_s: float, half_life_s: float) -> float:
    return math.exp(-LN2 * delta_t_s / half_life_s)


def phi_g(delta_g_m: float, half_life_m: float) -> float:
    return math.exp(-LN2 * delta_g_m / half_life_m)


def phi_s(v_new: np.ndarray, vectors: Iterable[np.ndarray]) -> float:
    """Best-match clamped cosine against an incident's document vectors."""
    best = 0.0
    for v in vectors:
        best = max(best, min(1.0, max(0.0, cosine(v_new, v))))
    return best


# -- config and state ------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationConfig:
    w_t: float = 1 / 3
    w_g: float = 1 / 3
    w_s: float = 1 / 3
    tau: float = 0.55
    temporal_half_life: timedelta = timedelta(hours=2)
    spatial_half_life_m: float = 1000.0
    window: timedelta | None = timedelta(hours=24)  # None disables the gate
    spatial_gate_m: float | None = 50_000.0  # None disables the gate
    strict_missing: bool = False

    def __post_init__(self) -> None:
        weights = (self.w_t, self.w_g, self.w_s)
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError(f"weights must be finite and non-negative, got {weights}")
        total = sum(weights)
        if total <= 0:
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "w_t", self.w_t / total)
        object.__setattr__(self, "w_g", self.w_g / total)
        object.__setattr__(self, "w_s", self.w_s / total)
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.temporal_half_life <= timedelta(0) or self.spatial_half_life_m <= 0:
            raise ValueError("half-lives must be positive")

    @property
    def weights(self) -> tuple[float, float, float]:
        return self.w_t, self.w_g, self.w_s

    def with_weights(self, w_t: float, w_g: float, w_s: float) -> "CorrelationConfig":
        return replace(self, w_t=w_t, w_g=w_g, w_s=w_s)

    def ungated(self) -> "CorrelationConfig":
        return replace(self, window=None, spatial_gate_m=None)

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "tau": self.tau,
            "temporalHalfLifeSeconds": self.temporal_half_life.total_seconds(),
            "spatialHalfLifeMeters": self.spatial_half_life_m,
            "windowSeconds": None if self.window is None else self.window.total_seconds(),
            "spatialGateMeters": self.spatial_gate_m,
            "strictMissing": self.strict_missing,
        }


@dataclass(frozen=True)
class IncidentContext:
    incident_id: str
    linked_eido_ids: tuple[str, ...]
    created_at: datetime
    latest_activity: datetime
    cached_geometries: tuple[Geometry, ...] = ()
    cached_vectors: tuple[np.ndarray, ...] = field(default=(), compare=False)

    @classmethod
    def start(cls, incident_id: str, doc: EidoDocument, vector: np.ndarray) -> "IncidentContext":
        return cls(incident_id, (doc.eido_id,), doc.issued, doc.issued,
                   tuple(doc.geometries()), (vector,))

    def link(self, doc: EidoDocument, vector: np.ndarray) -> "IncidentContext":
        return replace(
            self,
            linked_eido_ids=self.linked_eido_ids + (doc.eido_id,),
            latest_activity=max(self.latest_activity, doc.issued),
            cached_geometries=self.cached_geometries + tuple(doc.geometries()),
            cached_vectors=self.cached_vectors + (vector,),
        )


@dataclass(frozen=True)
class SimilarityBreakdown:
    incident_id: str
    delta_t_s: float
    delta_g_m: float | None
    phi_t: float
    phi_g: float | None
    phi_s: float | None
    effective_weights: tuple[float, float | None, float | None]
    sigma: float
    passed_window: bool
    passed_spatial_gate: bool

    def to_dict(self) -> dict:
        return {
            "incidentId": self.incident_id,
            "deltaTSeconds": self.delta_t_s,
            "deltaGMeters": self.delta_g_m,
            "phiT": self.phi_t,
            "phiG": self.phi_g,
            "phiS": self.phi_s,
            "effectiveWeights": list(self.effective_weights),
            "sigma": self.sigma,
            "passedWindow": self.passed_window,
            "passedSpatialGate": self.passed_spatial_gate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimilarityBreakdown":
        return cls(
            incident_id=data["incidentId"],
            delta_t_s=data["deltaTSeconds"],
            delta_g_m=data["deltaGMeters"],
            phi_t=data["phiT"],
            phi_g=data["phiG"],
            phi_s=data["phiS"],
            effective_weights=tuple(data["effectiveWeights"]),  # type: ignore[arg-type]
            sigma=data["sigma"],
            passed_window=data["passedWindow"],
            passed_spatial_gate=data["passedSpatialGate"],
        )


@dataclass(frozen=True)
class Decision:
    eido_id: str
    linked: bool  # True: link to incident_id; False: start a new incident
    incident_id: str | None
    ranked: tuple[SimilarityBreakdown, ...]
    candidates: int  # incidents considered before gating

    @property
    def kind(self) -> str:
        return "LinkTo" if self.linked else "NewIncident"


# -- scoring ---------------------------------------------------------------------

def _delta_t_seconds(doc: EidoDocument, incident: IncidentContext) -> float:
    return abs((doc.issued - incident.latest_activity).total_seconds())


def score(
    doc: EidoDocument,
    incident: IncidentContext,
    cfg: CorrelationConfig,
    vector: np.ndarray,
    *,
    delta_g_m: float | None = None,
    geometry_known: bool = False,
) -> SimilarityBreakdown:
    """Score one candidate.  ``vector`` is the new document's text vector.

    Callers that already computed the spatial distance pass it with
    ``geometry_known=True`` to avoid recomputation.
    """
    dt = _delta_t_seconds(doc, incident)
    if not geometry_known:
        delta_g_m = min_distance_m(doc.geometries(), incident.cached_geometries)
    pt = phi_t(dt, cfg.temporal_half_life.total_seconds())
    pg = None if delta_g_m is None else phi_g(delta_g_m, cfg.spatial_half_life_m)
    has_text = bool(np.any(vector)) and any(np.any(v) for v in incident.cached_vectors)
    ps = phi_s(vector, incident.cached_vectors) if has_text else None

    terms = [(cfg.w_t, pt), (cfg.w_g, pg), (cfg.w_s, ps)]
    if cfg.strict_missing:
        eff = [w for w, _ in terms]
        sigma = sum(w * (p or 0.0) for w, p in terms)
        phis = [p if p is not None else 0.0 for _, p in terms]
        pg_out, ps_out = phis[1], phis[2]
        eff_out: tuple = tuple(eff)
    else:
        total = sum(w for w, p in terms if p is not None)
        if total > 0:
            eff_out = tuple(None if p is None else w / total for w, p in terms)
            sigma = sum(w * p for w, p in zip(eff_out, (pt, pg, ps)) if w is not None and p is not None)
        else:
            eff_out = tuple(None if p is None else 0.0 for _, p in terms)
            sigma = 0.0
        pg_out, ps_out = pg, ps

    passed_window = cfg.window is None or dt <= cfg.window.total_seconds()
    passed_gate = cfg.spatial_gate_m is None or delta_g_m is None or delta_g_m <= cfg.spatial_gate_m
    return SimilarityBreakdown(
        incident_id=incident.incident_id,
        delta_t_s=dt,
        delta_g_m=delta_g_m,
        phi_t=pt,
        phi_g=pg_out,
        phi_s=ps_out,
        effective_weights=eff_out,  # type: ignore[arg-type]
        sigma=sigma,
        passed_window=passed_window,
        passed_spatial_gate=passed_gate,
    )


def _rank_cmp(created: dict[str, datetime]):
    def cmp(a: SimilarityBreakdown, b: SimilarityBreakdown) -> int:
        if a.sigma > b.sigma + TIE_EPS:
            return -1
        if b.sigma > a.sigma + TIE_EPS:
            return 1
        ka = (created[a.incident_id], a.incident_id)
        kb = (created[b.incident_id], b.incident_id)
        return (ka > kb) - (ka < kb)
    return cmp


def rank(breakdowns: Sequence[SimilarityBreakdown], incidents: Sequence[IncidentContext]) -> list[SimilarityBreakdown]:
    """Order by sigma (ties within 1e-9 go to the earliest-created, then smallest id)."""
    created = {inc.incident_id: inc.created_at for inc in incidents}
    ordered = sorted(breakdowns, key=lambda b: (-b.sigma, created[b.incident_id], b.incident_id))
    if not ordered:
        return ordered
    top = ordered[0].sigma
    leaders = [b for b in ordered if b.sigma >= top - TIE_EPS]
    winner = min(leaders, key=lambda b: (created[b.incident_id], b.incident_id))
    rest = sorted((b for b in ordered if b is not winner), key=cmp_to_key(_rank_cmp(created)))
    return [winner] + rest


def score_all(
    doc: EidoDocument,
    incidents: Iterable[IncidentContext],
    cfg: CorrelationConfig,
    vector: np.ndarray,
) -> list[SimilarityBreakdown]:
    """Score every incident without gating; gate flags are still reported."""
    incidents = list(incidents)
    return rank([score(doc, inc, cfg, vector) for inc in incidents], incidents)


def correlate(
    doc: EidoDocument,
    incidents: Iterable[IncidentContext],
    cfg: CorrelationConfig,
    vector: np.ndarray,
) -> Decision:
    """Link ``doc`` to the best-scoring incident at or above tau, or start a new one.

    Candidates pass a temporal window on latest activity, then (when both sides
    carry geometry) a distance gate, before full scoring.
    """
    incidents = list(incidents)
    window_s = None if cfg.window is None else cfg.window.total_seconds()
    geoms = doc.geometries()
    survivors: list[IncidentContext] = []
    breakdowns: list[SimilarityBreakdown] = []
    for inc in incidents:
        if window_s is not None and _delta_t_seconds(doc, inc) > window_s:
            continue
        dg = min_distance_m(geoms, inc.cached_geometries)
        if cfg.spatial_gate_m is not None and dg is not None and dg > cfg.spatial_gate_m:
            continue
        survivors.append(inc)
        breakdowns.append(score(doc, inc, cfg, vector, delta_g_m=dg, geometry_known=True))
    ranked = rank(breakdowns, survivors)
    if ranked and ranked[0].sigma >= cfg.tau:
        return Decision(doc.eido_id, True, ranked[0].incident_id, tuple(ranked), len(incidents))
    return Decision(doc.eido_id, False, None, tuple(ranked), len(incidents))


# -- in-memory incident tracker --------------------------------------------------

def incident_id_for(counter: int) -> str:
    return f"INC-{counter:06d}"


class IncidentTracker:
    """Sequential (single-writer) correlation state over an arrival-ordered stream."""

    def __init__(self, cfg: CorrelationConfig, vectorizer: Vectorizer | None = None):
        self.cfg = cfg
        self.vectorizer = vectorizer or HashedVectorizer()
        self.incidents: dict[str, IncidentContext] = {}
        self.documents: dict[str, EidoDocument] = {}
        self.incident_of: dict[str, str] = {}
        self._counter = 0

    def vector(self, doc: EidoDocument) -> np.ndarray:
        return self.vectorizer(descriptive_text(doc))

    def evaluate(self, doc: EidoDocument, vec: np.ndarray | None = None) -> Decision:
        """Decide without committing."""
        if vec is None:
            vec = self.vector(doc)
        return correlate(doc, self.incidents.values(), self.cfg, vec)

    def commit(self, doc: EidoDocument, decision: Decision, vec: np.ndarray | None = None) -> Decision:
        if vec is None:
            vec = self.vector(doc)
        self.documents[doc.eido_id] = doc
        if decision.linked:
            assert decision.incident_id is not None
            self.incidents[decision.incident_id] = self.incidents[decision.incident_id].link(doc, vec)
            self.incident_of[doc.eido_id] = decision.incident_id
            return decision
        self._counter += 1
        new_id = incident_id_for(self._counter)
        self.incidents[new_id] = IncidentContext.start(new_id, doc, vec)
        self.incident_of[doc.eido_id] = new_id
        return replace(decision, incident_id=new_id)

    def process(self, doc: EidoDocument) -> Decision:
        vec = self.vector(doc)
        return self.commit(doc, self.evaluate(doc, vec), vec)

    def restore(self, incidents: dict[str, IncidentContext], documents: dict[str, EidoDocument],
                counter: int) -> None:
        self.incidents = dict(incidents)
        self.documents = dict(documents)
        self.incident_of = {e: inc.incident_id for inc in incidents.values() for e in inc.linked_eido_ids}
        self._counter = counter


def decision_record(decision: Decision) -> dict:
    return {
        "eidoId": decision.eido_id,
        "decision": decision.kind,
        "incidentId": decision.incident_id,
        "candidates": decision.candidates,
        "ranked": [b.to_dict() for b in decision.ranked],
    }
