"""Relative-pose evaluation from two-view correspondences.

The chain is: corner detection and patch descriptors (or externally
produced matches), a two-NN ratio matcher, a five-point essential-matrix
solver inside RANSAC, cheirality-checked pose recovery, and angular
rotation/translation errors against ground-truth kinematics.  All
estimation runs on intrinsics-normalized coordinates.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist

from .errors import (
    ConfigError,
    DegenerateConfigurationError,
    DimensionError,
    EstimationFailedError,
    ParameterError,
    UndefinedMetricError,
)


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair, pixel coordinates in each image."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ParameterError("correspondence coordinates must be finite")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 1e-3
    confidence: float = 0.999
    max_iterations: int = 1000
    seed: int = 0
    refit: bool = False

    def __post_init__(self):
        if self.threshold <= 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence must be in (0, 1), got {self.confidence}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rotation and unit translation of camera 2 relative to camera 1."""

    rotation: np.ndarray
    translation: np.ndarray
    ambiguous: bool = False

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).ravel()
        if r.shape != (3, 3) or t.shape != (3,):
            raise DimensionError("pose wants a 3x3 rotation and a 3-vector")
        if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-9 or np.linalg.det(r) < 0:
            raise ParameterError("rotation is not orthonormal with det +1")
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise ParameterError("translation must be a unit vector")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


# -- features and matching ------------------------------------------------

PATCH = 11


def _grayscale(frame):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        return f @ np.array([0.299, 0.587, 0.114])
    return f


def detect_and_describe(frame, max_keypoints=500, k=0.06, rel_threshold=0.01,
                        nms_radius=4):
    """Harris corners with zero-mean unit-norm 11x11 patch descriptors.

    Returns (keypoints, descriptors): an (N, 2) array of (x, y) pixel
    positions and an (N, 121) float array.  A featureless frame yields
    two empty arrays.
    """
    g = _grayscale(frame)
    gy, gx = np.gradient(g)
    ixx = ndimage.gaussian_filter(gx * gx, sigma=1.5)
    iyy = ndimage.gaussian_filter(gy * gy, sigma=1.5)
    ixy = ndimage.gaussian_filter(gx * gy, sigma=1.5)
    resp = ixx * iyy - ixy * ixy - k * (ixx + iyy) ** 2

    peak = resp.max(initial=0.0)
    if peak <= 0.0:
        return np.zeros((0, 2)), np.zeros((0, PATCH * PATCH))
    local_max = resp == ndimage.maximum_filter(resp, size=2 * nms_radius + 1)
    r = PATCH // 2
    interior = np.zeros_like(local_max)
    interior[r : g.shape[0] - r, r : g.shape[1] - r] = True
    ys, xs = np.nonzero(local_max & interior & (resp > rel_threshold * peak))
    order = np.argsort(resp[ys, xs])[::-1][:max_keypoints]

    keypoints = []
    descriptors = []
    for y, x in zip(ys[order], xs[order]):
        patch = g[y - r : y + r + 1, x - r : x + r + 1].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-12:
            continue
        keypoints.append((float(x), float(y)))
        descriptors.append(patch / norm)
    if not keypoints:
        return np.zeros((0, 2)), np.zeros((0, PATCH * PATCH))
    return np.array(keypoints), np.array(descriptors)


def _one_way(dist, ratio):
    out = {}
    for i in range(dist.shape[0]):
        row = dist[i]
        if row.size == 1:
            j, d1, d2 = 0, row[0], np.inf
        else:
            two = np.argpartition(row, 1)[:2]
            if row[two[0]] > row[two[1]]:
                two = two[::-1]
            j, d1, d2 = two[0], row[two[0]], row[two[1]]
        if d1 < ratio * d2:
            out[i] = int(j)
    return out


def ratio_match(desc1, desc2, ratio=0.75):
    """Two-NN ratio test with a symmetric cross-check.

    Returns index pairs (i, j) into the two descriptor arrays; use
    build_correspondences to attach pixel coordinates.
    """
    d1 = np.asarray(desc1, dtype=np.float64)
    d2 = np.asarray(desc2, dtype=np.float64)
    if d1.size == 0 or d2.size == 0:
        return []
    if d1.shape[1] != d2.shape[1]:
        raise DimensionError(
            f"descriptor widths differ: {d1.shape[1]} vs {d2.shape[1]}"
        )
    dist = cdist(d1, d2)
    fwd = _one_way(dist, ratio)
    bwd = _one_way(dist.T, ratio)
    return [(i, j) for i, j in sorted(fwd.items()) if bwd.get(j) == i]


def build_correspondences(kp1, kp2, matches):
    return [
        Correspondence(kp1[i][0], kp1[i][1], kp2[j][0], kp2[j][1])
        for i, j in matches
    ]


def match_frames(frame1, frame2, ratio=0.75):
    kp1, d1 = detect_and_describe(frame1)
    kp2, d2 = detect_and_describe(frame2)
    return build_correspondences(kp1, kp2, ratio_match(d1, d2, ratio))


def corrs_to_arrays(corrs):
    pts = np.array([(c.x1, c.y1, c.x2, c.y2) for c in corrs], dtype=np.float64)
    if pts.size == 0:
        pts = pts.reshape(0, 4)
    return pts[:, :2], pts[:, 2:]


def normalize_points(pts, intrinsics):
    """Pixel coordinates to unit-focal camera coordinates."""
    pts = np.asarray(pts, dtype=np.float64)
    y = (pts[:, 1] - intrinsics.cy) / intrinsics.fy
    x = (pts[:, 0] - intrinsics.cx - intrinsics.skew * y) / intrinsics.fx
    return np.stack([x, y], axis=1)


# -- five-point solver ----------------------------------------------------

# Monomials of (x, y, z) up to total degree 3, in the elimination order
# the solver's Gauss-Jordan step expects: the first ten are reduced away,
# the last ten factor as x*(z^2,z,1), y*(z^2,z,1), (z^3,z^2,z,1).
_MONOMIALS = (
    (3, 0, 0), (0, 3, 0), (2, 1, 0), (1, 2, 0), (2, 0, 1),
    (2, 0, 0), (0, 2, 1), (0, 2, 0), (1, 1, 1), (1, 1, 0),
    (1, 0, 2), (1, 0, 1), (1, 0, 0), (0, 1, 2), (0, 1, 1),
    (0, 1, 0), (0, 0, 3), (0, 0, 2), (0, 0, 1), (0, 0, 0),
)
_MONO_INDEX = {m: i for i, m in enumerate(_MONOMIALS)}


def _pmul(a, b):
    out = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            key = (ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2])
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def _pacc(target, poly, scale=1.0):
    for m, c in poly.items():
        target[m] = target.get(m, 0.0) + scale * c


def _pvec(poly):
    vec = np.zeros(len(_MONOMIALS))
    for m, c in poly.items():
        vec[_MONO_INDEX[m]] = c
    return vec


def _epipolar_rows(x1, x2):
    """One row per pair: the epipolar identity as a linear form in
    row-major E."""
    a = np.column_stack([x1, np.ones(len(x1))])
    b = np.column_stack([x2, np.ones(len(x2))])
    return np.einsum("ni,nj->nij", b, a).reshape(len(x1), 9)


def _zshift(p):
    return np.concatenate(([0.0], p))


def _zsub(a, b):
    out = np.zeros(max(len(a), len(b)))
    out[: len(a)] += a
    out[: len(b)] -= b
    return out


def _zadd(a, b):
    out = np.zeros(max(len(a), len(b)))
    out[: len(a)] += a
    out[: len(b)] += b
    return out


def _zval(p, z):
    return np.polyval(p[::-1], z)


def five_point_essential(x1, x2):
    """All essential matrices consistent with five (or more) normalized
    correspondences; up to ten candidates, each Frobenius-normalized.

    Null-space basis of the epipolar design plus the rank and trace
    cubics, reduced to a degree-10 polynomial whose real roots index the
    candidates.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape or x1.ndim != 2 or x1.shape[1] != 2:
        raise DimensionError(
            f"point arrays must both be (n, 2), got {x1.shape} and {x2.shape}"
        )
    if len(x1) < 5:
        raise ParameterError(f"need at least 5 correspondences, got {len(x1)}")

    q = _epipolar_rows(x1, x2)
    _, s, vt = np.linalg.svd(q)
    if s[4] <= 1e-10 * s[0] or s[0] == 0.0:
        raise DegenerateConfigurationError(
            "correspondences span too few directions for a five-point solve"
        )
    basis = vt[-4:].reshape(4, 3, 3)

    # E(x, y, z) = x*B0 + y*B1 + z*B2 + B3, entries linear in (x, y, z).
    ent = [
        [
            {(1, 0, 0): basis[0, i, j], (0, 1, 0): basis[1, i, j],
             (0, 0, 1): basis[2, i, j], (0, 0, 0): basis[3, i, j]}
            for j in range(3)
        ]
        for i in range(3)
    ]

    det = {}
    _pacc(det, _pmul(ent[0][0], _psub2(_pmul(ent[1][1], ent[2][2]),
                                       _pmul(ent[1][2], ent[2][1]))))
    _pacc(det, _pmul(ent[0][1], _psub2(_pmul(ent[1][2], ent[2][0]),
                                       _pmul(ent[1][0], ent[2][2]))))
    _pacc(det, _pmul(ent[0][2], _psub2(_pmul(ent[1][0], ent[2][1]),
                                       _pmul(ent[1][1], ent[2][0]))))

    eet = [[{} for _ in range(3)] for _ in range(3)]
    for i in range(3):
        for j in range(3):
            for k in range(3):
                _pacc(eet[i][j], _pmul(ent[i][k], ent[j][k]))
    trace = {}
    for i in range(3):
        _pacc(trace, eet[i][i])

    rows = [_pvec(det)]
    for i in range(3):
        for j in range(3):
            c = {}
            for k in range(3):
                _pacc(c, _pmul(eet[i][k], ent[k][j]), 2.0)
            _pacc(c, _pmul(trace, ent[i][j]), -1.0)
            rows.append(_pvec(c))

    m = np.array(rows)
    raw = m.copy()
    scale = np.abs(m).max()
    for col in range(10):
        piv = col + int(np.argmax(np.abs(m[col:, col])))
        if abs(m[piv, col]) < 1e-14 * scale:
            # A continuum of solutions (no-parallax data): the
            # elimination cannot proceed, but members of the family are
            # still perfectly valid candidates.
            return _constraint_family(raw, basis)
        m[[col, piv]] = m[[piv, col]]
        m[col] /= m[col, col]
        for r in range(10):
            if r != col:
                m[r] -= m[r, col] * m[col]

    # Reduced row i reads lead_i + x*P_i(z) + y*Q_i(z) + R_i(z) = 0.
    def parts(i):
        p = m[i, [12, 11, 10]]
        qq = m[i, [15, 14, 13]]
        rr = m[i, [19, 18, 17, 16]]
        return p, qq, rr

    # Rows 4/5 lead with x^2 z and x^2, 6/7 with y^2 z and y^2, 8/9 with
    # xyz and xy; pairing each row with z times its partner cancels the
    # leads and leaves three equations linear in (x, y, 1).
    b = []
    for hi, lo in ((4, 5), (6, 7), (8, 9)):
        ph, qh, rh = parts(hi)
        pl, ql, rl = parts(lo)
        b.append((_zsub(ph, _zshift(pl)), _zsub(qh, _zshift(ql)),
                  _zsub(rh, _zshift(rl))))

    p1 = _zsub(np.convolve(b[1][2], b[0][1]), np.convolve(b[0][2], b[1][1]))
    p2 = _zsub(np.convolve(b[0][2], b[1][0]), np.convolve(b[1][2], b[0][0]))
    p3 = _zsub(np.convolve(b[0][0], b[1][1]), np.convolve(b[0][1], b[1][0]))
    n = _zadd(_zadd(np.convolve(p1, b[2][0]), np.convolve(p2, b[2][1])),
              np.convolve(p3, b[2][2]))

    coeffs = n[::-1]
    top = np.abs(coeffs).max()
    if top == 0.0:
        raise DegenerateConfigurationError("vanishing root polynomial")
    lead = int(np.argmax(np.abs(coeffs) > 1e-14 * top))
    coeffs = coeffs[lead:]
    if len(coeffs) < 2:
        return []

    out = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-8 * (1.0 + abs(root.real)):
            continue
        z = float(root.real)
        d1, d2, d3 = _zval(p1, z), _zval(p2, z), _zval(p3, z)
        if abs(d3) > 1e-12 * max(abs(d1), abs(d2), 1.0):
            x, y = d1 / d3, d2 / d3
        else:
            bz = np.array([[_zval(c, z) for c in brow] for brow in b])
            v = np.linalg.svd(bz)[2][-1]
            if abs(v[2]) < 1e-12:
                continue
            x, y = v[0] / v[2], v[1] / v[2]
        e = x * basis[0] + y * basis[1] + z * basis[2] + basis[3]
        fro = np.linalg.norm(e)
        if fro < 1e-12:
            continue
        out.append(e / fro)
    return out


def _psub2(a, b):
    out = dict(a)
    _pacc(out, b, -1.0)
    return out


def _constraint_family(raw, basis):
    """Distinct zeros of the ten cubics found from fixed starts on the
    unit sphere of the homogenized system; used when the reduced system
    has no unique root set."""

    def residual(v):
        v = v / np.linalg.norm(v)
        x, y, z, w = v
        return raw @ np.array([
            x**i * y**j * z**k * w ** (3 - i - j - k)
            for i, j, k in _MONOMIALS
        ])

    rng = np.random.default_rng(0)
    starts = list(np.eye(4)) + list(-np.eye(4)) + list(rng.normal(size=(8, 4)))
    out = []
    for start in starts:
        sol = least_squares(residual, start, method="lm", max_nfev=200)
        if np.linalg.norm(sol.fun) > 1e-10:
            continue
        v = sol.x / np.linalg.norm(sol.x)
        e = np.tensordot(v, basis, axes=1)
        fro = np.linalg.norm(e)
        if fro < 1e-9:
            continue
        e = e / fro
        if all(min(np.linalg.norm(e - o), np.linalg.norm(e + o)) > 1e-6
               for o in out):
            out.append(e)
        if len(out) == 10:
            break
    if not out:
        raise DegenerateConfigurationError(
            "constraint system admits no essential matrix"
        )
    return out


def sampson_distance(e, x1, x2):
    """First-order epipolar distance per correspondence, normalized
    units."""
    a = np.column_stack([x1, np.ones(len(x1))])
    b = np.column_stack([x2, np.ones(len(x2))])
    ex1 = a @ e.T
    etx2 = b @ e
    r = np.sum(b * ex1, axis=1)
    denom = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
    return np.abs(r) / np.sqrt(np.maximum(denom, 1e-300))


def ransac_essential(corrs, intrinsics, cfg):
    """Seeded RANSAC over five-point hypotheses; returns the best
    essential matrix and the indices of its inliers."""
    pts1, pts2 = corrs_to_arrays(corrs)
    n = len(pts1)
    if n < 5:
        raise ParameterError(f"need at least 5 correspondences, got {n}")
    x1 = normalize_points(pts1, intrinsics)
    x2 = normalize_points(pts2, intrinsics)

    rng = np.random.default_rng(cfg.seed)
    best_e = None
    best_in = np.zeros(0, dtype=np.int64)
    limit = cfg.max_iterations
    it = 0
    while it < limit:
        it += 1
        pick = rng.choice(n, size=5, replace=False)
        try:
            candidates = five_point_essential(x1[pick], x2[pick])
        except DegenerateConfigurationError:
            continue
        for e in candidates:
            inl = np.flatnonzero(sampson_distance(e, x1, x2) < cfg.threshold)
            if len(inl) > len(best_in):
                best_e, best_in = e, inl
                w5 = min((len(inl) / n) ** 5, 1.0 - 1e-15)
                needed = np.log(1.0 - cfg.confidence) / np.log(1.0 - w5)
                limit = min(limit, int(np.ceil(needed)))

    if best_e is None or len(best_in) < 5:
        raise EstimationFailedError(
            f"no model with at least 5 inliers among {n} correspondences"
        )
    if cfg.refit:
        best_e = _refit_essential(x1[best_in], x2[best_in])
        best_in = np.flatnonzero(sampson_distance(best_e, x1, x2) < cfg.threshold)
    return best_e, best_in


def _skew(t):
    return np.array([
        [0.0, -t[2], t[1]],
        [t[2], 0.0, -t[0]],
        [-t[1], t[0], 0.0],
    ])


def essential_from_pose(r, t):
    """Unit-norm E implied by a relative rotation and translation."""
    e = _skew(np.asarray(t, dtype=np.float64)) @ np.asarray(r, dtype=np.float64)
    return e / np.linalg.norm(e)


def _expmap(w):
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        return np.eye(3)
    k = _skew(w / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * k @ k


def _refit_essential(x1, x2):
    """Least-squares E over the inliers, then a Sampson-error descent
    on the pose manifold.  Both halves are deterministic."""
    e = np.linalg.svd(_epipolar_rows(x1, x2))[2][-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(e)
    mid = (s[0] + s[1]) / 2.0
    e = u @ np.diag([mid, mid, 0.0]) @ vt
    return _polish_essential(e / np.linalg.norm(e), x1, x2)


def _polish_essential(e0, x1, x2):
    """Minimize Sampson residuals over (R, t); five free parameters,
    translation constrained to the unit sphere."""
    u, _, vt = np.linalg.svd(e0)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r0 = u @ w @ vt
    t0 = u[:, 2]
    pick = np.eye(3)[int(np.argmin(np.abs(t0)))]
    b1 = np.cross(t0, pick)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(t0, b1)

    a = np.column_stack([x1, np.ones(len(x1))])
    b = np.column_stack([x2, np.ones(len(x2))])

    def unpack(p):
        r = r0 @ _expmap(p[:3])
        t = t0 + p[3] * b1 + p[4] * b2
        return r, t / np.linalg.norm(t)

    def residuals(p):
        r, t = unpack(p)
        e = _skew(t) @ r
        e /= np.linalg.norm(e)
        ex1 = a @ e.T
        etx2 = b @ e
        num = np.sum(b * ex1, axis=1)
        den = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
        return num / np.sqrt(np.maximum(den, 1e-300))

    sol = least_squares(residuals, np.zeros(5), method="lm", max_nfev=200)
    r, t = unpack(sol.x)
    return essential_from_pose(r, t)


# -- pose recovery --------------------------------------------------------


def _triangulate(r, t, x1, x2):
    """Homogeneous midpoints of the two viewing rays, one row per pair."""
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([r, t[:, None]])
    out = np.empty((len(x1), 4))
    for i, ((a, bb), (c, d)) in enumerate(zip(x1, x2)):
        rows = np.array([
            a * p1[2] - p1[0],
            bb * p1[2] - p1[1],
            c * p2[2] - p2[0],
            d * p2[2] - p2[1],
        ])
        out[i] = np.linalg.svd(rows)[2][-1]
    return out


def cheirality_count(r, t, x1, x2):
    """How many triangulated points sit in front of both cameras."""
    xh = _triangulate(r, t, x1, x2)
    w = xh[:, 3]
    front1 = xh[:, 2] * w > 0
    front2 = (xh[:, :3] @ r[2] + t[2] * w) * w > 0
    return int(np.count_nonzero(front1 & front2))


def recover_pose(e, x1, x2):
    """The (R, t) pair explaining E whose triangulations land in front
    of both cameras; ties are flagged ambiguous."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if len(x1) == 0:
        raise ParameterError("pose recovery needs at least one inlier")
    u, _, vt = np.linalg.svd(np.asarray(e, dtype=np.float64))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    candidates = [
        (u @ w @ vt, t),
        (u @ w @ vt, -t),
        (u @ w.T @ vt, t),
        (u @ w.T @ vt, -t),
    ]
    counts = [cheirality_count(r, tv, x1, x2) for r, tv in candidates]
    best = int(np.argmax(counts))
    r, tv = candidates[best]
    return Pose(
        rotation=r,
        translation=tv / np.linalg.norm(tv),
        ambiguous=counts.count(counts[best]) > 1,
    )


# -- error measures -------------------------------------------------------


def _check_rotation(r, name):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise DimensionError(f"{name} must be 3x3, got {r.shape}")
    if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-6 or np.linalg.det(r) < 0:
        raise ParameterError(f"{name} is not a rotation")
    return r


def rre(r_est, r_gt):
    """Geodesic angle between two rotations, degrees in [0, 180]."""
    r_est = _check_rotation(r_est, "r_est")
    r_gt = _check_rotation(r_gt, "r_gt")
    c = (np.trace(r_est.T @ r_gt) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def rte(t_est, t_gt):
    """Angle between translation directions, degrees in [0, 180].

    The monocular sign ambiguity is left in: an estimate opposite the
    truth reads 180.  A zero ground-truth translation has no direction
    and the metric is undefined.
    """
    t_est = np.asarray(t_est, dtype=np.float64).ravel()
    t_gt = np.asarray(t_gt, dtype=np.float64).ravel()
    ng = np.linalg.norm(t_gt)
    if ng == 0.0:
        raise UndefinedMetricError("zero ground-truth translation")
    ne = np.linalg.norm(t_est)
    if ne == 0.0:
        raise ParameterError("estimated translation is zero")
    # atan2 of cross and dot: same angle as the arccos of the cosine,
    # exact at 0 and 180 where arccos loses digits
    return float(np.degrees(np.arctan2(
        np.linalg.norm(np.cross(t_est, t_gt)), np.dot(t_est, t_gt)
    )))


def select_pairs(sequence_length, window=20):
    """Frame pairs (t, t + window) for every start the sequence fits."""
    if window < 1:
        raise ParameterError(f"window must be at least 1, got {window}")
    if sequence_length <= window:
        warnings.warn(
            f"sequence of {sequence_length} frames has no pairs at window "
            f"{window}",
            RuntimeWarning,
        )
        return []
    return [(t, t + window) for t in range(sequence_length - window)]


def pair_seed(seed, index):
    """Stable per-pair RANSAC seed, independent of evaluation order."""
    return int(np.random.SeedSequence((int(seed), int(index))).generate_state(1)[0])


# -- file ingestion -------------------------------------------------------


def read_pose_file(path):
    """Camera-to-world poses, one 4x4 row-major matrix per line."""
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 16:
                raise ParameterError(
                    f"{path} line {ln}: expected 16 values, got {len(vals)}"
                )
            try:
                poses.append(np.array([float(v) for v in vals]).reshape(4, 4))
            except ValueError as exc:
                raise ParameterError(f"{path} line {ln}: {exc}") from exc
    if not poses:
        raise ParameterError(f"{path}: no poses")
    return np.array(poses)


def relative_pose(pose_i, pose_j):
    """Rotation and translation taking camera-i coordinates to camera-j,
    from two camera-to-world matrices.  Translation keeps its length."""
    ri, pi = pose_i[:3, :3], pose_i[:3, 3]
    rj, pj = pose_j[:3, :3], pose_j[:3, 3]
    return rj.T @ ri, rj.T @ (pi - pj)


def read_intrinsics(path):
    """One line: fx fy cx cy."""
    with open(path, "r", encoding="utf-8") as fh:
        vals = fh.read().split()
    if len(vals) != 4:
        raise ParameterError(f"{path}: expected 4 values, got {len(vals)}")
    try:
        fx, fy, cx, cy = (float(v) for v in vals)
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)


def read_correspondences_csv(path):
    """Rows of x1,y1,x2,y2; a non-numeric first row is taken as a
    header."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParameterError(
                    f"{path} line {ln}: expected 4 fields, got {len(parts)}"
                )
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if ln == 1:
                    continue
                raise ParameterError(f"{path} line {ln}: non-numeric field")
            out.append(Correspondence(*vals))
    return out


def read_flow(path, height, width):
    """Dense flow stored as little-endian float32, the full u plane then
    the full v plane; returns (H, W, 2)."""
    data = np.fromfile(path, dtype="<f4")
    if data.size != 2 * height * width:
        raise ParameterError(
            f"{path}: expected {2 * height * width} floats, got {data.size}"
        )
    u = data[: height * width].reshape(height, width)
    v = data[height * width :].reshape(height, width)
    return np.stack([u, v], axis=-1).astype(np.float64)


def flow_to_correspondences(flow, stride=8):
    """Subsample a flow field into point matches on a stride grid."""
    if stride < 1:
        raise ParameterError(f"stride must be at least 1, got {stride}")
    h, w = flow.shape[:2]
    out = []
    for y in range(stride // 2, h, stride):
        for x in range(stride // 2, w, stride):
            u, v = flow[y, x]
            if np.isfinite(u) and np.isfinite(v):
                out.append(Correspondence(float(x), float(y),
                                          float(x + u), float(y + v)))
    return out


def evaluate_pair(corrs, intrinsics, r_gt, t_gt, cfg):
    """Estimate the relative pose from one pair's matches and score it
    against ground truth.  RTE is omitted when the ground-truth
    translation has no direction."""
    e, inliers = ransac_essential(corrs, intrinsics, cfg)
    pts1, pts2 = corrs_to_arrays(corrs)
    x1 = normalize_points(pts1[inliers], intrinsics)
    x2 = normalize_points(pts2[inliers], intrinsics)
    pose = recover_pose(e, x1, x2)
    row = {
        "rre": rre(pose.rotation, r_gt),
        "n_inliers": int(len(inliers)),
        "ambiguous": pose.ambiguous,
    }
    try:
        row["rte"] = rte(pose.translation, t_gt)
    except UndefinedMetricError:
        pass
    return row
