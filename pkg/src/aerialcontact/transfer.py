"""Contact transfer to a novel cloud.

For every link a query density over link poses is built by importance
sampling (see :func:`build_query_density`); candidates maximizing
``prod_n H(h_n) Q_n(L_n)`` are then found with simulated annealing.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .cloud import PointCloud
from .density import Bandwidths, log_gaussian, log_vmf_antipodal, log_vmf_normalizer, mixture_logpdf_arrays
from .errors import AllZeroWeightsError, DimensionMismatchError, NoFeaturesError
from .geom import Pose, canonical_quat, compose_arrays, inverse_arrays, pose_distance, quat_from_axis_angle, quat_mul, quat_rotate
from .models import ConfigurationModel, ContactModel, TaskModel, configuration_logpdf, contact_curvature_logpdf, contact_logpdf

logger = logging.getLogger(__name__)

# a kernel whose curvature matches the contact model this poorly counts as zero weight
MATCH_FLOOR = 1e-12
_CHUNK = 1 << 21


@dataclass(frozen=True)
class TransferParams:
    n_i: int = 500
    n_j: int = 5
    n_q: int = 1000
    t0: float = 1.0
    cooling: float = 0.97
    steps: int = 2000
    reanchor_prob: float = 0.25
    formation_prob: float = 0.5
    pos_scale: float | None = None  # defaults to the query position bandwidth
    rot_scale: float = 0.1  # radians at T = T0
    region_radius: float | None = None  # defaults to 2 * query sigma_p
    region_tries: int = 20
    refine_steps: int = 400  # greedy polish after annealing; 0 disables
    chains: int | None = None
    seed: int = 0
    ablate_task: bool = False
    k_neighbors: int = 30
    threads: int = 1

    def __post_init__(self):
        for name in ("n_i", "n_j", "n_q", "steps", "region_tries", "k_neighbors", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.cooling < 1.0:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.chains is not None and self.chains < 1:
            raise ValueError("chains must be positive")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")


@dataclass(eq=False)
class QueryLink:
    positions: np.ndarray
    quats: np.ndarray
    log_weights: np.ndarray
    feature_index: np.ndarray  # query-cloud point the kernel was placed from
    contact_index: np.ndarray  # contact kernel whose u_ni placed it

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def __len__(self):
        return len(self.log_weights)


@dataclass(eq=False)
class QueryDensity:
    """Per-link mixtures ``sum_k w_nk N3(p | p_k) Theta(q | q_k)``."""

    links: list
    sigma_p: float
    kappa: float

    @property
    def bandwidths(self) -> Bandwidths:
        return Bandwidths(self.sigma_p, self.kappa, 1.0)

    def logpdf(self, link_index: int, positions, quats) -> np.ndarray:
        ql = self.links[link_index]
        return mixture_logpdf_arrays(ql.positions, ql.quats, None, ql.log_weights, self.bandwidths,
                                     positions, quats, None)

    def position_logpdf(self, link_index: int, positions) -> np.ndarray:
        """Log density of the link position with orientation integrated out."""
        ql = self.links[link_index]
        return mixture_logpdf_arrays(ql.positions, None, None, ql.log_weights, self.bandwidths,
                                     positions, None, None)


@dataclass(eq=False)
class CandidateGrasp:
    pairs: list  # [(drone b, link L)] one per link
    log_j: float
    feasible: bool = True
    nearest: list | None = None
    displacement: np.ndarray | None = None
    trace: np.ndarray | None = field(default=None, repr=False)
    reason: str = ""

    @property
    def links(self) -> list:
        return [L for _, L in self.pairs]

    @property
    def drones(self) -> list:
        return [b for b, _ in self.pairs]


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ------------------------------------------------------------ query density

def _offset_table(cl):
    """``(n_c, n_task)`` row indices into the stored u_ij offsets; -1 where absent."""
    lookup = np.full((len(cl), int(cl.offset_j.max()) + 1), -1, dtype=int)
    lookup[cl.offset_i, cl.offset_j] = np.arange(len(cl.offset_i))
    return lookup


def _task_support(sp, sq, ci, jp, jq, jr, td, cl, lookup):
    """log sum_j T(v_j, r_j) seen from each kernel's contact feature.

    Kernel k sits on query feature ``(sp[k], sq[k])`` and was placed with
    contact kernel ``ci[k]``; the task density is re-expressed in that feature's
    frame through the u_ij offsets stored for the same contact kernel, and
    evaluated at the sampled query task features ``(jp, jq, jr)``.
    """
    bw = td.bandwidths
    m, nj = len(sp), len(jp)
    live = np.flatnonzero(np.isfinite(td.log_weights))
    lr = log_gaussian(jr[:, None, :], td.curvatures[live][None], bw.sigma_r, 2) + td.log_weights[live]
    ip, iq = inverse_arrays(sp, sq)
    lnorm = log_vmf_normalizer(bw.kappa)
    out = np.empty((m, nj))
    step = max(1, _CHUNK // max(nj * len(live), 1))
    for s in range(0, m, step):
        sl = slice(s, s + step)
        cnt = len(ip[sl])
        rel_p, rel_q = compose_arrays(
            np.repeat(ip[sl], nj, axis=0), np.repeat(iq[sl], nj, axis=0),
            np.tile(jp, (cnt, 1)), np.tile(jq, (cnt, 1)))
        rows = lookup[ci[sl]][:, live]  # (cnt, n_live)
        op = cl.offset_p[rows].repeat(nj, axis=0)
        oq = cl.offset_q[rows].repeat(nj, axis=0)
        lk = (log_gaussian(rel_p[:, None, :], op, bw.sigma_p, 3)
              + log_vmf_antipodal(rel_q[:, None, :], oq, bw.kappa, lnorm)
              + np.tile(lr, (cnt, 1)))
        out[sl] = logsumexp(lk, axis=1).reshape(cnt, nj)
    return logsumexp(out, axis=1)


def _build_link(n, contact: ContactModel, task: TaskModel, cloud: PointCloud, params: TransferParams,
                bw_q: Bandwidths, rng, log_task_marginal):
    table = cloud.features(params.k_neighbors)
    valid = np.flatnonzero(table.valid)
    cl = contact.links[n]
    td = task.density
    radius = params.region_radius if params.region_radius is not None else 2.0 * bw_q.sigma_p

    # (a) task features on the query cloud, drawn by task curvature marginal
    lt = log_task_marginal
    p = np.exp(lt - logsumexp(lt))
    jq = rng.choice(valid, size=params.n_j, p=p)
    jp_, jq_, jr_ = table.positions[jq], table.quats[jq], table.curvatures[jq]
    # which learned task kernel each sampled feature plays: by curvature match
    match = td.log_weights[None, :] + log_gaussian(jr_[:, None, :], td.curvatures[None],
                                                   td.bandwidths.sigma_r, 2)
    match = np.exp(match - logsumexp(match, axis=1, keepdims=True))
    lookup = _offset_table(cl)
    # (b, c) regions located by the inverse task offsets, then a feature inside
    s_idx = []
    pending = params.n_i
    for _ in range(params.region_tries):
        if pending == 0:
            break
        j = rng.integers(0, params.n_j, size=pending)
        jt = np.array([rng.choice(len(td), p=match[jj]) for jj in j])
        ic = rng.choice(len(cl), size=pending, p=cl.weights)
        rows = lookup[ic, jt]
        keep = rows >= 0
        rows, j = rows[keep], j[keep]
        ui_p, ui_q = inverse_arrays(cl.offset_p[rows], cl.offset_q[rows])
        centers, _ = compose_arrays(jp_[j], jq_[j], ui_p, ui_q)
        hits = cloud.tree.query_ball_point(centers, radius)
        for h in hits:
            h = np.array(sorted(h), dtype=int)
            h = h[table.valid[h]] if len(h) else h
            if len(h):
                s_idx.append(int(rng.choice(h)))
        pending = params.n_i - len(s_idx)
    if not s_idx:
        raise AllZeroWeightsError(
            f"link {n}: no query region matched the learned task offsets")
    if pending:
        logger.info("link %d: %d of %d contact regions empty after %d tries",
                    n, pending, params.n_i, params.region_tries)
    s_idx = np.array(s_idx)
    task_state = (jp_, jq_, jr_)

    # (d) kernels: a contact feature per kernel, and a Dirac draw of u_ni
    ns = len(s_idx)
    which = np.resize(np.arange(ns), params.n_q)
    feat = s_idx[which]
    ci = rng.choice(len(cl), size=params.n_q, p=cl.weights)
    vp, vq, vr = table.positions[feat], table.quats[feat], table.curvatures[feat]
    Lp, Lq = compose_arrays(vp, vq, cl.u_p[ci], cl.u_q[ci])

    # (e) weights: M(u|r) M(r) [x task support]; the query-cloud O factors are the sampling
    lw = contact_logpdf(contact, n, cl.u_p[ci], cl.u_q[ci], vr)
    curv_match = contact_curvature_logpdf(contact, n, vr) + np.log(2 * np.pi * contact.bandwidths.sigma_r**2)
    lw = np.where(curv_match < np.log(MATCH_FLOOR), -np.inf, lw)
    if not params.ablate_task:
        lw = lw + _task_support(vp, vq, ci, *task_state, td, cl, lookup)
    if not np.any(np.isfinite(lw)):
        raise AllZeroWeightsError(
            f"link {n}: every query kernel has zero weight; the contact model does not match this payload")
    lw = lw - logsumexp(lw)
    return QueryLink(Lp, Lq, lw, feat, ci)


def build_query_density(contact: ContactModel, task: TaskModel, query_cloud: PointCloud,
                        params: TransferParams = TransferParams(),
                        bandwidths: Bandwidths | None = None) -> QueryDensity:
    """Sample ``N_Q`` weighted link-pose kernels per link on ``query_cloud``.

    With ``params.ablate_task`` the task support factor is left out of the
    kernel weights; contact regions are still located through the task offsets.
    """
    bw_q = bandwidths or contact.bandwidths
    table = query_cloud.features(params.k_neighbors)
    valid = np.flatnonzero(table.valid)
    if len(valid) == 0:
        raise NoFeaturesError("query cloud has no usable surface features")
    lt = task.density.curvature_logpdf(table.curvatures[valid])
    seeds = np.random.SeedSequence(params.seed).spawn(len(contact.links))

    def work(n):
        return _build_link(n, contact, task, query_cloud, params, bw_q, np.random.default_rng(seeds[n]), lt)

    if params.threads > 1 and len(contact.links) > 1:
        with ThreadPoolExecutor(max_workers=params.threads) as ex:
            links = list(ex.map(work, range(len(contact.links))))
    else:
        links = [work(n) for n in range(len(contact.links))]
    return QueryDensity(links, bw_q.sigma_p, bw_q.kappa)


def query_eval(q: QueryDensity, link_index: int, L: Pose, log: bool = False) -> float:
    v = float(q.logpdf(link_index, L.p[None], L.q[None])[0])
    return v if log else math.exp(v)


# ---------------------------------------------------------------- objective

def _score(queries: QueryDensity, config: ConfigurationModel, bp, bq, Lp, Lq):
    """log J for a batch of candidates shaped ``(C, n_links, 3|4)``."""
    total = configuration_logpdf(config, bp, bq, Lp, Lq)
    for n in range(Lp.shape[1]):
        total = total + queries.logpdf(n, Lp[:, n], Lq[:, n])
    return total


def likelihood(candidate: CandidateGrasp, queries: QueryDensity, config: ConfigurationModel) -> float:
    """``log J = sum_n log H(h_n) + log Q_n(L_n)``; ``-inf`` when any factor vanishes."""
    if len(candidate.pairs) != len(queries.links):
        raise DimensionMismatchError(
            f"candidate has {len(candidate.pairs)} drones, query density has {len(queries.links)} links")
    bp = np.array([[b.p for b, _ in candidate.pairs]])
    bq = np.array([[b.q for b, _ in candidate.pairs]])
    Lp = np.array([[L.p for _, L in candidate.pairs]])
    Lq = np.array([[L.q for _, L in candidate.pairs]])
    return float(_score(queries, config, bp, bq, Lp, Lq)[0])


# ---------------------------------------------------------------- annealing

def _demo_offsets(config: ConfigurationModel, n_links: int):
    """Link offsets from link 0 and drone-from-link offsets of the first record."""
    take = np.arange(n_links) if len(config) >= n_links else np.zeros(n_links, dtype=int)
    Lp = config.link_p[take]
    return Lp - Lp[0], config.drone_p[take] - Lp, config.drone_q[take]


def _sample_kernel(ql: QueryLink, rng):
    return rng.choice(len(ql), p=ql.weights)


def anneal(queries: QueryDensity, config: ConfigurationModel, params: TransferParams = TransferParams(),
           chains: int | None = None):
    """Run independent SA chains in lockstep; chain ``c`` uses seed ``params.seed + c``.

    The temperature-scaled steps are negligible long before the last step, so
    each chain's best state is then polished by :func:`_refine`.

    Returns ``(bp, bq, Lp, Lq, log_j, trace)`` for the best state of each chain;
    ``trace[c, t]`` is chain c's best-so-far log J after step t (annealing steps
    first, then refinement steps).
    """
    n = len(queries.links)
    C = chains or params.chains or 8
    rngs = [np.random.default_rng(params.seed + c) for c in range(C)]
    pos_scale = params.pos_scale if params.pos_scale is not None else queries.sigma_p
    dL, db, dbq = _demo_offsets(config, n)
    for ql in queries.links:
        if not np.all(np.isfinite(ql.weights.sum())):
            raise AllZeroWeightsError("query density has no finite weights")

    Lp = np.empty((C, n, 3))
    Lq = np.empty((C, n, 4))
    for c, rng in enumerate(rngs):
        k0 = _sample_kernel(queries.links[0], rng)
        Lp[c, 0], Lq[c, 0] = queries.links[0].positions[k0], queries.links[0].quats[k0]
        for m in range(1, n):
            Lp[c, m] = Lp[c, 0] + dL[m]
            ql = queries.links[m]
            near = np.argmin(np.sum((ql.positions - Lp[c, m]) ** 2, axis=1))
            Lq[c, m] = ql.quats[near]
    bp = Lp + db[None]
    bq = np.broadcast_to(dbq, (C, n, 4)).copy()
    cur = _score(queries, config, bp, bq, Lp, Lq)
    best = cur.copy()
    best_state = [a.copy() for a in (bp, bq, Lp, Lq)]
    trace = np.empty((C, params.steps + params.refine_steps))

    for t in range(params.steps):
        T = params.t0 * params.cooling**t
        s = T / params.t0
        nbp, nbq, nLp, nLq = bp.copy(), bq.copy(), Lp.copy(), Lq.copy()
        for c, rng in enumerate(rngs):
            rigid = n > 1 and rng.random() < params.formation_prob
            if rng.random() < params.reanchor_prob:
                m = int(rng.integers(n))
                ql = queries.links[m]
                k = _sample_kernel(ql, rng)
                delta = ql.positions[k] - Lp[c, m]
                moved = slice(None) if rigid else m
                nLp[c, moved] += delta
                nbp[c, moved] += delta
                nLq[c, m] = ql.quats[k]
            elif rigid:
                delta = pos_scale * s * rng.standard_normal(3)
                axis = rng.standard_normal(3)
                dq = quat_from_axis_angle(axis, params.rot_scale * s * rng.standard_normal())
                cen = Lp[c].mean(axis=0)
                nLp[c] = cen + quat_rotate(dq, Lp[c] - cen) + delta
                nbp[c] = cen + quat_rotate(dq, bp[c] - cen) + delta
                nLq[c] = canonical_quat(quat_mul(dq, Lq[c]))
                nbq[c] = canonical_quat(quat_mul(dq, bq[c]))
            else:
                delta = pos_scale * s * rng.standard_normal((n, 3))
                axes = rng.standard_normal((n, 3))
                dq = quat_from_axis_angle(axes, params.rot_scale * s * rng.standard_normal(n))
                nLp[c] += delta
                nLq[c] = canonical_quat(quat_mul(dq, Lq[c]))
                nbp[c] += delta + pos_scale * s * rng.standard_normal((n, 3))
        new = _score(queries, config, nbp, nbq, nLp, nLq)
        for c, rng in enumerate(rngs):
            u = rng.random()
            if not np.isfinite(new[c]):
                accept = not np.isfinite(cur[c])
            elif not np.isfinite(cur[c]) or new[c] >= cur[c]:
                accept = True
            else:
                accept = u < math.exp((new[c] - cur[c]) / T)
            if accept:
                bp[c], bq[c], Lp[c], Lq[c], cur[c] = nbp[c], nbq[c], nLp[c], nLq[c], new[c]
                if cur[c] > best[c]:
                    best[c] = cur[c]
                    for dst, src in zip(best_state, (bp, bq, Lp, Lq)):
                        dst[c] = src[c]
        trace[:, t] = best
    _refine(queries, config, params, rngs, best_state, best, trace[:, params.steps:], pos_scale)
    return (*best_state, best, trace)


def _refine(queries, config, params, rngs, state, best, trace, pos_scale):
    """Greedy local search from each chain's best state, in place.

    Each step perturbs one component (link position, link rotation, drone
    position or drone rotation) of one drone, with scales shrinking
    geometrically from the annealing scales at T0 down by a factor of 1000.
    Only improvements are kept.
    """
    bp, bq, Lp, Lq = state
    C, n = Lp.shape[:2]
    steps = params.refine_steps
    for t in range(steps):
        f = 1e-3 ** (t / max(steps - 1, 1))
        nbp, nbq, nLp, nLq = bp.copy(), bq.copy(), Lp.copy(), Lq.copy()
        for c, rng in enumerate(rngs):
            m = int(rng.integers(n))
            kind = int(rng.integers(4))
            if kind == 0:
                delta = pos_scale * f * rng.standard_normal(3)
                nLp[c, m] += delta
                nbp[c, m] += delta
            elif kind == 1:
                dq = quat_from_axis_angle(rng.standard_normal(3), params.rot_scale * f * rng.standard_normal())
                nLq[c, m] = canonical_quat(quat_mul(dq, Lq[c, m]))
            elif kind == 2:
                nbp[c, m] += pos_scale * f * rng.standard_normal(3)
            else:
                dq = quat_from_axis_angle(rng.standard_normal(3), params.rot_scale * f * rng.standard_normal())
                nbq[c, m] = canonical_quat(quat_mul(dq, bq[c, m]))
        new = _score(queries, config, nbp, nbq, nLp, nLq)
        up = new > best
        for a, na in ((bp, nbp), (bq, nbq), (Lp, nLp), (Lq, nLq)):
            a[up] = na[up]
        best[up] = new[up]
        trace[:, t] = best


def optimize(queries: QueryDensity, config: ConfigurationModel, params: TransferParams = TransferParams(),
             query_cloud: PointCloud | None = None, k: int = 5, min_separation: float = 0.02,
             max_tilt: float = math.pi / 2, contact_radius: float = 0.05) -> list:
    """Anneal, flag infeasible results, and return deduplicated candidates by descending log J.

    Up to ``k`` feasible candidates are returned, followed (in log J order) by
    up to ``k`` flagged infeasible ones; the list is never empty.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    chains = params.chains or k
    bp, bq, Lp, Lq, logj, trace = anneal(queries, config, params, chains)
    cands = []
    for c in range(chains):
        pairs = [(Pose(bp[c, m], bq[c, m]), Pose(Lp[c, m], Lq[c, m])) for m in range(Lp.shape[1])]
        cand = CandidateGrasp(pairs, float(logj[c]), trace=trace[c])
        if query_cloud is not None:
            cand = feasibility_filter(cand, query_cloud, max_tilt, contact_radius, params.k_neighbors)
        cands.append(cand)
    good = select_top_k([c for c in cands if c.feasible], k, min_separation)
    bad = select_top_k([c for c in cands if not c.feasible], k, min_separation)
    return sorted(good + bad, key=lambda c: -c.log_j)


# --------------------------------------------------- post-processing helpers

def feasibility_filter(candidate: CandidateGrasp, query_cloud: PointCloud, max_tilt: float = math.pi / 2,
                       contact_radius: float = 0.05, k: int = 30) -> CandidateGrasp:
    """Flag candidates with a link off the surface or on a surface facing downward past ``max_tilt``."""
    table = query_cloud.features(k)
    nearest, reasons = [], []
    for m, L in enumerate(candidate.links):
        d, i = query_cloud.tree.query(L.p)
        nearest.append(int(i))
        if d > contact_radius:
            reasons.append(f"link {m}: no surface within {contact_radius} m")
            continue
        nrm = table.normals[i]
        if not np.all(np.isfinite(nrm)):
            reasons.append(f"link {m}: no normal at nearest point")
            continue
        tilt = math.acos(max(-1.0, min(1.0, float(nrm[2]))))
        if tilt > max_tilt + 1e-12:
            reasons.append(f"link {m}: surface tilted {math.degrees(tilt):.1f} deg from up")
    return replace(candidate, feasible=not reasons, nearest=nearest, reason="; ".join(reasons))


def snap_to_surface(candidate: CandidateGrasp, query_cloud: PointCloud) -> CandidateGrasp:
    """Move every link onto its nearest cloud point, keeping orientation and drones."""
    pairs, disp, nearest = [], [], []
    for b, L in candidate.pairs:
        _, i = query_cloud.tree.query(L.p)
        target = query_cloud.points[i]
        disp.append(target - L.p)
        nearest.append(int(i))
        pairs.append((b, Pose(target, L.q)))
    return replace(candidate, pairs=pairs, displacement=np.array(disp), nearest=nearest)


def select_top_k(candidates, k: int, min_separation: float = 0.02, rot_weight: float = 1.0) -> list:
    """Greedy pick by descending log J, skipping near-duplicates of kept candidates.

    A candidate is a duplicate when every one of its links lies within
    ``min_separation`` (pose distance) of the matching link of a kept one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = []
    for c in sorted(candidates, key=lambda c: -c.log_j):
        dup = any(
            all(pose_distance(a, b, rot_weight) < min_separation for a, b in zip(c.links, o.links))
            for o in kept)
        if not dup:
            kept.append(c)
            if len(kept) == k:
                break
    return kept
