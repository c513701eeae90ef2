"""The four densities learned from one demonstration, and their file format.

* object model: features sampled around each demonstrated contact
* task model: features over the whole visible cloud, weighted by curvature
* contact model: per link, the link pose seen from each contact feature
  (``u_ni = v_i^-1 o L_n``), plus the pose of every task feature seen from
  each contact feature (``u_ij = v_i^-1 o v_j``)
* configuration model: the demonstrated (drone, link) pose pairs
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .cloud import DEFAULT_K, PointCloud, sample_contact_indices, sample_task_indices
from .density import Bandwidths, MixtureDensity, log_gaussian, log_vmf_antipodal, log_vmf_normalizer, mixture_logpdf_arrays
from .errors import DownsampleOverflowError, EmptyInputError, SchemaError, SchemaVersionError
from .geom import Pose, canonical_quat, compose_arrays, geodesic_angle, inverse_arrays

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLAT_TOL = 1e-3


@dataclass(eq=False)
class DemonstrationRecord:
    """A training cloud plus the demonstrated ``(drone, link)`` pose of every quadrotor."""

    cloud: PointCloud
    links: list
    label: str = ""

    def __post_init__(self):
        self.links = [(b, L) for b, L in self.links]
        if not self.links:
            raise EmptyInputError("a demonstration needs at least one (drone, link) pair")


@dataclass(eq=False)
class ObjectModel:
    density: MixtureDensity
    groups: np.ndarray  # contact (link) index each kernel was sampled around


@dataclass(eq=False)
class TaskModel:
    density: MixtureDensity


@dataclass(eq=False)
class ContactLink:
    """Contact kernels of one link, as parallel arrays.

    ``offset_*`` rows hold ``u_ij`` for retained kernel ``offset_i`` and task
    kernel ``offset_j``.
    """

    u_p: np.ndarray
    u_q: np.ndarray
    r: np.ndarray
    weights: np.ndarray
    source: np.ndarray
    offset_i: np.ndarray
    offset_j: np.ndarray
    offset_p: np.ndarray
    offset_q: np.ndarray

    def __len__(self):
        return len(self.weights)


@dataclass(eq=False)
class ContactModel:
    links: list
    bandwidths: Bandwidths


FRAMES = ("anchored", "world", "formation")


@dataclass(eq=False)
class ConfigurationModel:
    drone_p: np.ndarray
    drone_q: np.ndarray
    link_p: np.ndarray
    link_q: np.ndarray
    alpha: float = 10.0
    sigma_p: float = 0.01
    kappa: float = 100.0
    rot_weight: float = 1.0
    frame: str = "anchored"
    record_sizes: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.link_p) == 0:
            raise EmptyInputError("configuration model needs at least one kernel")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be finite and > 0")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown configuration frame {self.frame!r}")
        if not self.record_sizes:
            self.record_sizes = [len(self.link_p)]

    def __len__(self):
        return len(self.link_p)

    def kernel_poses(self):
        return [(Pose(bp, bq), Pose(lp, lq)) for bp, bq, lp, lq in
                zip(self.drone_p, self.drone_q, self.link_p, self.link_q)]


@dataclass(eq=False)
class ModelBundle:
    object: ObjectModel
    task: TaskModel
    contact: ContactModel
    configuration: ConfigurationModel
    label: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def n_links(self) -> int:
        return len(self.contact.links)


# ----------------------------------------------------------------- learning

def learn_object_model(contact_features, bw: Bandwidths, groups=None) -> ObjectModel:
    """One kernel per contact-region feature, uniform weights ``1/N_O``."""
    feats = list(contact_features)
    if not feats:
        raise EmptyInputError("object model needs at least one feature")
    groups = np.zeros(len(feats), dtype=int) if groups is None else np.asarray(groups, dtype=int)
    return ObjectModel(MixtureDensity.from_features(feats, bw), groups)


def task_weights(r1, flat_tol: float = FLAT_TOL) -> np.ndarray:
    """``r1_j / max r1`` renormalized; uniform if the whole sample is flat."""
    r1 = np.asarray(r1, dtype=float)
    top = r1.max()
    if top <= flat_tol:
        logger.warning("task features are all flat (max r1 = %.3g); using uniform weights", top)
        return np.full(len(r1), 1.0 / len(r1))
    w = np.clip(r1, 0.0, None) / top
    return w / w.sum()


def learn_task_model(task_features, bw: Bandwidths, flat_tol: float = FLAT_TOL) -> TaskModel:
    feats = list(task_features)
    if not feats:
        raise EmptyInputError("task model needs at least one feature")
    w = task_weights([f.r[0] for f in feats], flat_tol)
    return TaskModel(MixtureDensity.from_features(feats, bw, weights=w))


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def learn_contact_model(record: DemonstrationRecord, obj: ObjectModel, task: TaskModel,
                        n_c: int, bw_c: Bandwidths, seed=None) -> ContactModel:
    """Per link, downsample ``n_c`` object kernels and store link and task offsets."""
    rng = _as_rng(seed)
    od, td = obj.density, task.density
    single = len(record.links) == 1
    links = []
    for n, (_, L) in enumerate(record.links):
        pool = np.arange(len(od)) if single else np.flatnonzero(obj.groups == n)
        if n_c > len(pool):
            raise DownsampleOverflowError(
                f"link {n}: N_c={n_c} exceeds the {len(pool)} object kernels available")
        src = rng.choice(pool, size=n_c, replace=False)
        vp, vq = od.positions[src], od.quats[src]
        ip, iq = inverse_arrays(vp, vq)
        u_p, u_q = compose_arrays(ip, iq, np.broadcast_to(L.p, vp.shape), np.broadcast_to(L.q, vq.shape))

        nt = len(td)
        oi = np.repeat(np.arange(n_c), nt)
        oj = np.tile(np.arange(nt), n_c)
        off_p, off_q = compose_arrays(ip[oi], iq[oi], td.positions[oj], td.quats[oj])
        links.append(ContactLink(
            u_p=u_p, u_q=u_q, r=od.curvatures[src].copy(), weights=np.full(n_c, 1.0 / n_c),
            source=src, offset_i=oi, offset_j=oj, offset_p=off_p, offset_q=off_q))
    return ContactModel(links, bw_c)


def contact_logpdf(m: ContactModel, link_index: int, u_p, u_q, r) -> np.ndarray:
    """Batched log ``M_n(u, r)``."""
    cl = m.links[link_index]
    with np.errstate(divide="ignore"):
        lw = np.log(cl.weights)
    return mixture_logpdf_arrays(cl.u_p, cl.u_q, cl.r, lw, m.bandwidths, u_p, u_q, r)


def contact_curvature_logpdf(m: ContactModel, link_index: int, r) -> np.ndarray:
    cl = m.links[link_index]
    r = np.asarray(r, dtype=float).reshape(-1, 2)
    with np.errstate(divide="ignore"):
        lw = np.log(cl.weights)
    lk = log_gaussian(r[:, None, :], cl.r[None], m.bandwidths.sigma_r, 2)
    return logsumexp(lk + lw, axis=1)


def contact_eval(m: ContactModel, link_index: int, u: Pose, r) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.exp(contact_logpdf(m, link_index, u.p[None], u.q[None], r[None])[0]))


def learn_configuration_model(records, alpha: float = 10.0, sigma_p: float = 0.01,
                              kappa: float = 100.0, rot_weight: float = 1.0,
                              frame: str = "anchored") -> ConfigurationModel:
    """One kernel per demonstrated ``(b_n, L_n)`` across all records."""
    records = list(records)
    if not records:
        raise EmptyInputError("configuration model needs at least one demonstration")
    pairs = [pair for rec in records for pair in rec.links]
    return ConfigurationModel(
        drone_p=np.array([b.p for b, _ in pairs]), drone_q=np.array([b.q for b, _ in pairs]),
        link_p=np.array([L.p for _, L in pairs]), link_q=np.array([L.q for _, L in pairs]),
        alpha=alpha, sigma_p=sigma_p, kappa=kappa, rot_weight=rot_weight, frame=frame,
        record_sizes=[len(rec.links) for rec in records])


def _formation_offsets(link_p, record_sizes):
    """Centroid of each record's link positions, repeated per kernel."""
    out = np.empty_like(link_p)
    s = 0
    for n in record_sizes:
        out[s:s + n] = link_p[s:s + n].mean(axis=0)
        s += n
    return out


def configuration_logpdf_pairs(h: ConfigurationModel, b_p, b_q, L_p, L_q) -> np.ndarray:
    """Per-pair log H for candidates shaped ``(..., n_drones, 3|4)``; returns ``(..., n_drones)``."""
    b_p, b_q, L_p, L_q = (np.asarray(a, dtype=float) for a in (b_p, b_q, L_p, L_q))
    kb_p, kl_p = h.drone_p, h.link_p
    dist = (np.linalg.norm(b_p[..., None, :] - kb_p, axis=-1)
            + h.rot_weight * geodesic_angle(b_q[..., None, :], h.drone_q))
    lw = -h.alpha * dist**2
    if h.frame == "world":
        lp = log_gaussian(L_p[..., None, :], kl_p, h.sigma_p, 3)
    else:
        c = L_p.mean(axis=-2, keepdims=True)
        kc = _formation_offsets(h.link_p, h.record_sizes)
        lp = log_gaussian((L_p - c)[..., None, :], kl_p - kc, h.sigma_p, 3)
        if h.frame == "anchored":
            # centroid term shared out over the pairs so the product carries it once
            n = L_p.shape[-2]
            lp = lp - 0.5 * np.sum((c[..., None, :] - kc) ** 2, axis=-1) / (n * h.sigma_p**2)
    lk = lp + log_vmf_antipodal(L_q[..., None, :], h.link_q, h.kappa, log_vmf_normalizer(h.kappa))
    return logsumexp(lw + lk, axis=-1)


def configuration_logpdf(h: ConfigurationModel, b_p, b_q, L_p, L_q) -> np.ndarray:
    return configuration_logpdf_pairs(h, b_p, b_q, L_p, L_q).sum(axis=-1)


def _pairs_to_arrays(candidate):
    pairs = list(candidate)
    if not pairs:
        raise EmptyInputError("candidate needs at least one (drone, link) pair")
    return (np.array([b.p for b, _ in pairs]), np.array([b.q for b, _ in pairs]),
            np.array([L.p for _, L in pairs]), np.array([L.q for _, L in pairs]))


def configuration_eval(h: ConfigurationModel, candidate) -> float:
    """Product over candidate pairs of ``sum_i e^{-alpha d(b, b_i)^2} N3(p_L) Theta(q_L)``.

    ``frame`` sets how link positions are compared. ``"world"`` uses them as
    given. ``"formation"`` takes them relative to the centroid of the candidate's
    links, so translating the whole formation leaves the score unchanged.
    ``"anchored"`` (default) scores the formation shape that way and adds the
    world-frame distance between centroids; for one drone it equals ``"world"``.
    """
    return float(np.exp(configuration_logpdf(h, *_pairs_to_arrays(candidate))))


# ------------------------------------------------------------- full pipeline

def learn_models(record: DemonstrationRecord, *, n_o: int = 500, n_t: int = 50, n_c: int = 500,
                 bw_object: Bandwidths = Bandwidths(), bw_task: Bandwidths = Bandwidths(sigma_p=0.05),
                 bw_contact: Bandwidths = Bandwidths(), contact_radius: float = 0.05,
                 k: int = DEFAULT_K, alpha: float = 10.0, rot_weight: float = 1.0,
                 config_frame: str = "anchored", seed: int = 0) -> ModelBundle:
    """Learn all four models from one demonstration."""
    ss = np.random.SeedSequence(seed)
    s_obj, s_task, s_contact = ss.spawn(3)
    obj_rngs = [np.random.default_rng(s) for s in s_obj.spawn(len(record.links))]
    cloud = record.cloud
    table = cloud.features(k)

    idx, groups = [], []
    for n, (_, L) in enumerate(record.links):
        sel = sample_contact_indices(cloud, L.p, contact_radius, n_o, k, obj_rngs[n])
        idx.append(sel)
        groups.append(np.full(len(sel), n))
    idx = np.concatenate(idx)
    obj = learn_object_model([table.feature(i) for i in idx], bw_object, np.concatenate(groups))

    tidx = sample_task_indices(cloud, n_t, k, np.random.default_rng(s_task))
    task = learn_task_model([table.feature(i) for i in tidx], bw_task)

    contact = learn_contact_model(record, obj, task, n_c, bw_contact, np.random.default_rng(s_contact))
    config = learn_configuration_model([record], alpha=alpha, sigma_p=bw_contact.sigma_p,
                                       kappa=bw_contact.kappa, rot_weight=rot_weight,
                                       frame=config_frame)
    meta = {"n_o": n_o, "n_t": n_t, "n_c": n_c, "contact_radius": contact_radius, "k": k,
            "seed": seed, "n_cloud_points": len(cloud)}
    return ModelBundle(obj, task, contact, config, label=record.label, metadata=meta)


# ------------------------------------------------------------ serialization

def _kernel_rows(d: MixtureDensity):
    return np.column_stack([d.positions, d.quats, d.curvatures, d.weights]).tolist()


def _to_dict(b: ModelBundle) -> dict:
    h = b.configuration
    links, offsets = [], []
    for n, cl in enumerate(b.contact.links):
        links.append({
            "kernels": np.column_stack([cl.u_p, cl.u_q, cl.r, cl.weights]).tolist(),
            "source": cl.source.tolist(),
        })
        offsets.extend(np.column_stack([
            np.full(len(cl.offset_i), n), cl.offset_i, cl.offset_j, cl.offset_p, cl.offset_q,
        ]).tolist())
    return {
        "schema_version": SCHEMA_VERSION,
        "label": b.label,
        "metadata": b.metadata,
        "bandwidths": {
            "object": b.object.density.bandwidths.as_list(),
            "task": b.task.density.bandwidths.as_list(),
            "contact": b.contact.bandwidths.as_list(),
        },
        "object": {"columns": "px py pz qw qx qy qz r1 r2 w",
                   "kernels": _kernel_rows(b.object.density),
                   "groups": b.object.groups.tolist()},
        "task": {"columns": "px py pz qw qx qy qz r1 r2 w", "kernels": _kernel_rows(b.task.density)},
        "contact": {
            "columns": "px py pz qw qx qy qz r1 r2 w",
            "links": links,
            "offset_columns": "link i j px py pz qw qx qy qz",
            "task_offsets": offsets,
        },
        "configuration": {
            "columns": "b:px py pz qw qx qy qz L:px py pz qw qx qy qz",
            "kernels": np.column_stack([h.drone_p, h.drone_q, h.link_p, h.link_q]).tolist(),
            "alpha": h.alpha, "sigma_p": h.sigma_p, "kappa": h.kappa,
            "rot_weight": h.rot_weight, "frame": h.frame, "record_sizes": list(h.record_sizes),
        },
    }


def save_model(path, bundle: ModelBundle) -> None:
    """Write a bundle as one JSON document; floats keep full round-trip precision."""
    Path(path).write_text(json.dumps(_to_dict(bundle), separators=(",", ":")) + "\n")


def _section(doc, name):
    cur = doc
    for part in name.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise SchemaError(f"model file is missing section '{name}'")
        cur = cur[part]
    return cur


def _array(doc, name, width):
    try:
        a = np.array(_section(doc, name), dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"section '{name}' is not numeric") from None
    if a.size == 0:
        a = a.reshape(0, width)
    if a.ndim != 2 or a.shape[1] != width:
        raise SchemaError(f"section '{name}' must have {width} columns, found shape {a.shape}")
    return a


def _density(doc, name, bw):
    rows = _array(doc, f"{name}.kernels", 10)
    try:
        return MixtureDensity(rows[:, :3], rows[:, 3:7], rows[:, 7:9], rows[:, 9], bw)
    except ValueError as exc:
        raise SchemaError(f"section '{name}': {exc}") from None


def _bandwidths(doc, name):
    try:
        return Bandwidths(*[float(v) for v in _section(doc, f"bandwidths.{name}")])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"section 'bandwidths.{name}': {exc}") from None


def _from_dict(doc) -> ModelBundle:
    if not isinstance(doc, dict):
        raise SchemaError("model file must hold a JSON object")
    version = _section(doc, "schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"model schema version {version!r}, expected {SCHEMA_VERSION}")
    for name in ("bandwidths", "object", "task", "contact", "configuration"):
        _section(doc, name)
    obj_d = _density(doc, "object", _bandwidths(doc, "object"))
    groups = np.array(_section(doc, "object.groups"), dtype=int)
    if len(groups) != len(obj_d):
        raise SchemaError("section 'object.groups' length does not match its kernels")
    task_d = _density(doc, "task", _bandwidths(doc, "task"))
    bw_c = _bandwidths(doc, "contact")

    offsets = _array(doc, "contact.task_offsets", 10)
    links_doc = _section(doc, "contact.links")
    if not isinstance(links_doc, list) or not links_doc:
        raise SchemaError("section 'contact.links' must be a non-empty list")
    links = []
    for n, ld in enumerate(links_doc):
        rows = _array(ld, "kernels", 10) if isinstance(ld, dict) else None
        if rows is None:
            raise SchemaError(f"section 'contact.links[{n}]' must be an object")
        src = np.array(_section(ld, "source"), dtype=int)
        mine = offsets[offsets[:, 0] == n]
        links.append(ContactLink(
            u_p=rows[:, :3], u_q=canonical_quat(rows[:, 3:7]), r=rows[:, 7:9], weights=rows[:, 9],
            source=src, offset_i=mine[:, 1].astype(int), offset_j=mine[:, 2].astype(int),
            offset_p=mine[:, 3:6], offset_q=canonical_quat(mine[:, 6:10]) if len(mine) else mine[:, 6:10]))
        if abs(rows[:, 9].sum() - 1.0) > 1e-9:
            raise SchemaError(f"section 'contact.links[{n}]': weights do not sum to 1")

    cfg = _section(doc, "configuration")
    ck = _array(doc, "configuration.kernels", 14)
    try:
        config = ConfigurationModel(
            drone_p=ck[:, :3], drone_q=canonical_quat(ck[:, 3:7]) if len(ck) else ck[:, 3:7],
            link_p=ck[:, 7:10], link_q=canonical_quat(ck[:, 10:14]) if len(ck) else ck[:, 10:14],
            alpha=float(_section(cfg, "alpha")), sigma_p=float(_section(cfg, "sigma_p")),
            kappa=float(_section(cfg, "kappa")), rot_weight=float(cfg.get("rot_weight", 1.0)),
            frame=str(cfg.get("frame", "anchored")), record_sizes=list(cfg.get("record_sizes", [])))
    except (ValueError, EmptyInputError) as exc:
        raise SchemaError(f"section 'configuration': {exc}") from None
    return ModelBundle(
        ObjectModel(obj_d, groups), TaskModel(task_d), ContactModel(links, bw_c), config,
        label=str(doc.get("label", "")), metadata=dict(doc.get("metadata", {})))


def load_model(path) -> ModelBundle:
    """Read a bundle; any schema problem raises before anything is returned."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"corrupt model file {path}: {exc}") from None
    return _from_dict(doc)
