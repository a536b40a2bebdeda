"""Structural analyses of trained integrator networks.

Covers moment-based integrator verification, singular spectra, the geometry
of the current manifold, the two-population ReLU code, mixed-selectivity
angles, Dale-mode structure and encoder/decoder support blocks. All analyses
are pure functions over weight matrices and immutable trajectory sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .losses import moments  # re-exported: mu_q = d . W^q e
from .model import Trajectory
from .numerics import svd
from .training import DaleMask

__all__ = [
    "moments",
    "gi_check",
    "GiReport",
    "spectrum_summary",
    "SpectrumSummary",
    "current_linearity_fit",
    "classify_populations",
    "PopulationLabels",
    "current_conditions_residuals",
    "CurrentConditionResiduals",
    "manifold_ratio",
    "ManifoldReport",
    "fit_R_matrix",
    "selectivity_analysis",
    "SelectivityReport",
    "angle_histogram",
    "chi2_uniformity",
    "rank1_relu_predictions",
    "Rank1Report",
    "dale_mode_analysis",
    "DaleModeReport",
    "support_structure_analysis",
    "SupportReport",
]


def _pool(trajectories):
    """Stack a Trajectory or a sequence of them into pooled time-major arrays."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    currents = np.concatenate([t.currents for t in trajectories], axis=0)
    states = np.concatenate([t.states for t in trajectories], axis=0)
    targets = np.concatenate([t.targets.T for t in trajectories], axis=0)
    outputs = np.concatenate([t.outputs.T for t in trajectories], axis=0)
    return currents, states, targets, outputs


# ---------------------------------------------------------------------------
# integrator verification
# ---------------------------------------------------------------------------


@dataclass
class GiReport:
    """Moment residuals |d_c . W^q e_c - s_c gamma_c^q| (and cross-channel
    leakage |d_c' . W^q e_c|) up to lag qmax."""

    qmax: int
    tol: float
    per_channel: np.ndarray  # (D,) max residual per channel
    cross_max: float
    max_moment_residual: float
    verdict: bool

    def to_dict(self) -> dict:
        return {
            "qmax": self.qmax,
            "tol": self.tol,
            "per_channel": [float(v) for v in self.per_channel],
            "cross_max": float(self.cross_max),
            "max_moment_residual": float(self.max_moment_residual),
            "verdict": bool(self.verdict),
        }


def gi_check(W, encoders, decoders, scales, gammas, qmax: int = 100,
             tol: float = 1e-6) -> GiReport:
    """Verify the generalizing-integrator moment conditions channel by channel."""
    W = np.asarray(W, dtype=float)
    E = np.atleast_2d(np.asarray(encoders, dtype=float))
    Dm = np.atleast_2d(np.asarray(decoders, dtype=float))
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    D = E.shape[0]
    per_channel = np.zeros(D)
    cross_max = 0.0
    V = E.T.copy()  # columns W^q e_c
    for q in range(1, qmax + 1):
        V = W @ V
        pair = Dm @ V  # pair[c', c] = d_c' . W^q e_c
        for c in range(D):
            per_channel[c] = max(per_channel[c], abs(pair[c, c] - scales[c] * gammas[c] ** q))
        if D > 1:
            off = pair[~np.eye(D, dtype=bool)]
            cross_max = max(cross_max, float(np.abs(off).max()))
    max_res = float(max(per_channel.max(), cross_max))
    return GiReport(
        qmax=qmax,
        tol=tol,
        per_channel=per_channel,
        cross_max=cross_max,
        max_moment_residual=max_res,
        verdict=bool(max_res < tol),
    )


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass
class SpectrumSummary:
    singular_values: np.ndarray
    top_triplets: list  # (sigma, left, right) for the D leading values
    outlier_count: int
    bulk_mean: float
    bulk_max: float

    def to_dict(self) -> dict:
        return {
            "singular_values_top": [float(v) for v in self.singular_values[: len(self.top_triplets) + 5]],
            "outlier_count": self.outlier_count,
            "bulk_mean": self.bulk_mean,
            "bulk_max": self.bulk_max,
        }


def spectrum_summary(W, D: int, gap_factor: float = 5.0) -> SpectrumSummary:
    """Top-D singular triplets plus an outlier count: the number of singular
    values exceeding ``gap_factor`` times the (D+1)-th one."""
    res = svd(W)
    s = res.singular_values
    if D >= len(s):
        raise ValueError(f"D={D} leaves no bulk reference in a {len(s)}-sized spectrum")
    triplets = [(float(s[i]), res.left_vectors[:, i], res.right_vectors[:, i]) for i in range(D)]
    outliers = int(np.sum(s > gap_factor * s[D]))
    bulk = s[D:]
    return SpectrumSummary(
        singular_values=s,
        top_triplets=triplets,
        outlier_count=outliers,
        bulk_mean=float(bulk.mean()),
        bulk_max=float(bulk.max()),
    )


# ---------------------------------------------------------------------------
# current linearity and populations (single channel, ReLU)
# ---------------------------------------------------------------------------


def current_linearity_fit(trajectories, targets=None):
    """Zero-intercept per-neuron fit nu_i(t) = L_i * ybar(t).

    Returns (L, r_squared) with R^2 = 1 - ||nu - L ybar||^2 / ||nu||^2.
    """
    currents, _, pooled_targets, _ = _pool(trajectories)
    if targets is None:
        if pooled_targets.shape[1] != 1:
            raise ValueError("current_linearity_fit expects single-channel trajectories")
        targets = pooled_targets[:, 0]
    targets = np.asarray(targets, dtype=float)
    denom = float(targets @ targets)
    if denom == 0.0:
        raise ValueError("targets are identically zero; the fit is degenerate")
    L = currents.T @ targets / denom
    resid = currents - np.outer(targets, L)
    ss_res = np.sum(resid**2, axis=0)
    ss_tot = np.sum(currents**2, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 1.0)
    return L, r2


@dataclass
class PopulationLabels:
    """Per-neuron population labels from the nonnegative two-ramp fit
    h_i(t) = relu(ybar) L+_i + relu(-ybar) L-_i."""

    labels: np.ndarray  # array of strings: plus / minus / shared / null
    L_plus: np.ndarray
    L_minus: np.ndarray
    threshold: float

    def fraction(self, name: str) -> float:
        return float(np.mean(self.labels == name))

    @property
    def fractions(self) -> dict:
        return {name: self.fraction(name) for name in ("plus", "minus", "shared", "null")}

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "fractions": self.fractions}


def classify_populations(trajectories, d=None, threshold: float | None = None) -> PopulationLabels:
    """Fit the two ramp vectors by nonnegative least squares and label neurons.

    The two regressors relu(+-ybar) have disjoint support, so the NNLS
    solution is the clipped pair of independent one-dimensional fits.
    """
    _, states, targets, _ = _pool(trajectories)
    if targets.shape[1] != 1:
        raise ValueError("classify_populations expects single-channel trajectories")
    ybar = targets[:, 0]
    ramp_plus = np.maximum(ybar, 0.0)
    ramp_minus = np.maximum(-ybar, 0.0)
    denom_plus = float(ramp_plus @ ramp_plus)
    denom_minus = float(ramp_minus @ ramp_minus)
    if denom_plus == 0.0 or denom_minus == 0.0:
        raise ValueError("targets must take both signs to separate the populations")
    L_plus = np.maximum(states.T @ ramp_plus / denom_plus, 0.0)
    L_minus = np.maximum(states.T @ ramp_minus / denom_minus, 0.0)
    if threshold is None:
        threshold = 1e-3 * max(L_plus.max(), L_minus.max())
    plus_on = L_plus > threshold
    minus_on = L_minus > threshold
    labels = np.where(
        plus_on & minus_on, "shared",
        np.where(plus_on, "plus", np.where(minus_on, "minus", "null")),
    )
    return PopulationLabels(labels=labels, L_plus=L_plus, L_minus=L_minus,
                            threshold=float(threshold))


@dataclass
class CurrentConditionResiduals:
    """Normalized residuals of the equalities a ReLU integrator must satisfy:
    W L+ = -W L- = W e / s and d . relu(+-W e) = +-s gamma."""

    symmetry: float  # ||W L+ + W L-|| / ||W e||
    scale: float  # ||s W L+ - W e|| / ||W e||
    decoder_plus: float  # |d . relu(W e) - s gamma| / (s gamma)
    decoder_minus: float

    def max(self) -> float:
        return max(self.symmetry, self.scale, self.decoder_plus, self.decoder_minus)

    def to_dict(self) -> dict:
        return {
            "symmetry": self.symmetry,
            "scale": self.scale,
            "decoder_plus": self.decoder_plus,
            "decoder_minus": self.decoder_minus,
        }


def current_conditions_residuals(W, e, d, s: float, gamma: float,
                                 L_plus=None, L_minus=None) -> CurrentConditionResiduals:
    """Residuals of the ReLU integrator conditions; the ramp vectors default
    to relu(+-W e) / (s gamma)."""
    W = np.asarray(W, dtype=float)
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    u = W @ e
    norm_u = float(np.linalg.norm(u))
    if L_plus is None:
        L_plus = np.maximum(u, 0.0) / (s * gamma)
    if L_minus is None:
        L_minus = np.maximum(-u, 0.0) / (s * gamma)
    wp = W @ np.asarray(L_plus, dtype=float)
    wm = W @ np.asarray(L_minus, dtype=float)
    scale_ref = norm_u if norm_u > 0 else 1.0
    return CurrentConditionResiduals(
        symmetry=float(np.linalg.norm(wp + wm)) / scale_ref,
        scale=float(np.linalg.norm(s * wp - u)) / scale_ref,
        decoder_plus=abs(d @ np.maximum(u, 0.0) - s * gamma) / (s * gamma),
        decoder_minus=abs(d @ np.maximum(-u, 0.0) + s * gamma) / (s * gamma),
    )


# ---------------------------------------------------------------------------
# current manifold
# ---------------------------------------------------------------------------


@dataclass
class ManifoldReport:
    r: float
    r_null: float
    D_used: int
    basis: np.ndarray  # (n, D) leading left singular vectors

    def to_dict(self) -> dict:
        return {"r": self.r, "r_null": self.r_null, "D_used": self.D_used}


def manifold_ratio(trajectories, W, D: int) -> ManifoldReport:
    """Time-averaged out-of-subspace over in-subspace current norm, using the
    span of the top-D left singular vectors of W. The chance level for
    isotropic currents is sqrt(n/D - 1)."""
    currents, _, _, _ = _pool(trajectories)
    if not np.any(currents):
        raise ValueError("all currents vanish; manifold ratio is undefined")
    res = svd(W)
    basis = res.left_vectors[:, :D]  # orthonormal
    coords = currents @ basis
    parallel = coords @ basis.T
    ortho = currents - parallel
    mean_par = float(np.linalg.norm(parallel, axis=1).mean())
    mean_ort = float(np.linalg.norm(ortho, axis=1).mean())
    n = W.shape[0]
    return ManifoldReport(
        r=mean_ort / mean_par,
        r_null=float(np.sqrt(n / D - 1.0)),
        D_used=D,
        basis=basis,
    )


def fit_R_matrix(trajectories, basis, targets=None):
    """Linear map from integral values to current-manifold coordinates.

    Infers the coordinates alpha_t of each current in the given basis by
    least squares, then regresses alpha = R ybar. Returns (R, residual) with
    residual = RMS(alpha - R ybar) / RMS(alpha).
    """
    currents, _, pooled_targets, _ = _pool(trajectories)
    if targets is None:
        targets = pooled_targets
    targets = np.asarray(targets, dtype=float)
    basis = np.asarray(basis, dtype=float)
    alpha, *_ = np.linalg.lstsq(basis, currents.T, rcond=None)
    alpha = alpha.T  # (M, D)
    sing = np.linalg.svd(targets, compute_uv=False)
    if sing[0] == 0 or sing[-1] / sing[0] < 1e-10:
        raise ValueError("target covariance is rank-deficient; R is not identifiable")
    Rt, *_ = np.linalg.lstsq(targets, alpha, rcond=None)
    resid = alpha - targets @ Rt
    rms_alpha = float(np.sqrt(np.mean(alpha**2)))
    residual = float(np.sqrt(np.mean(resid**2))) / rms_alpha
    return Rt.T, residual


# ---------------------------------------------------------------------------
# mixed selectivity
# ---------------------------------------------------------------------------


@dataclass
class SelectivityReport:
    directions: np.ndarray  # (n, D) fitted per-neuron directions (nan if excluded)
    angles: np.ndarray  # (n,) in [0, 2pi); nan if excluded
    quality: np.ndarray  # per-neuron fit quality in [0, 1]
    excluded: np.ndarray  # indices of silent neurons
    link: str

    def valid_angles(self) -> np.ndarray:
        return self.angles[~np.isnan(self.angles)]

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "n_excluded": int(len(self.excluded)),
            "median_quality": float(np.nanmedian(self.quality)),
        }


def _fit_relu_direction(h, targets, iterations: int = 8):
    """Censored least squares for h = relu(s . y): refit on the active set."""
    s, *_ = np.linalg.lstsq(targets, h, rcond=None)
    active = None
    for _ in range(iterations):
        new_active = targets @ s > 0
        if active is not None and np.array_equal(new_active, active):
            break
        active = new_active
        if active.sum() < targets.shape[1] + 2:
            break
        s, *_ = np.linalg.lstsq(targets[active], h[active], rcond=None)
    pred = np.maximum(targets @ s, 0.0)
    ss_tot = float(np.sum((h - h.mean()) ** 2))
    quality = 1.0 - float(np.sum((h - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return s, quality


def _fit_sigmoid_direction(h, targets, band_width: float = 0.15):
    """Boundary normal from the half-maximum level set of the activity."""
    top = np.quantile(h, 0.99)
    half = top / 2.0
    band = np.abs(h - half) < band_width * top
    if band.sum() < targets.shape[1] + 3:
        # fall back to a wider band before giving up
        band = np.abs(h - half) < 2 * band_width * top
    if band.sum() < targets.shape[1] + 3:
        return None, 0.0
    pts = targets[band]
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    # orient towards increasing activity
    corr = np.corrcoef(targets @ normal, h)[0, 1]
    if not np.isfinite(corr):
        return None, 0.0
    if corr < 0:
        normal = -normal
        corr = -corr
    return normal, float(corr)


def selectivity_analysis(trajectories, link: str = "relu", targets=None,
                         silent_variance: float = 1e-12) -> SelectivityReport:
    """Per-neuron selectivity direction in integral space for a two-channel
    network; the angle distribution is the mixed-selectivity summary."""
    if link not in ("relu", "sigmoid"):
        raise ValueError(f"unknown link {link!r}")
    _, states, pooled_targets, _ = _pool(trajectories)
    if targets is None:
        targets = pooled_targets
    targets = np.asarray(targets, dtype=float)
    if targets.shape[1] != 2:
        raise ValueError("selectivity analysis is defined for D=2 targets")
    n = states.shape[1]
    directions = np.full((n, 2), np.nan)
    angles = np.full(n, np.nan)
    quality = np.full(n, np.nan)
    excluded = []
    for i in range(n):
        h = states[:, i]
        if h.var() < silent_variance:
            excluded.append(i)
            continue
        if link == "relu":
            s, q = _fit_relu_direction(h, targets)
        else:
            s, q = _fit_sigmoid_direction(h, targets)
        if s is None or not np.all(np.isfinite(s)) or np.linalg.norm(s) == 0:
            excluded.append(i)
            continue
        directions[i] = s
        angles[i] = np.arctan2(s[1], s[0]) % (2.0 * np.pi)
        quality[i] = q
    return SelectivityReport(
        directions=directions,
        angles=angles,
        quality=quality,
        excluded=np.array(excluded, dtype=int),
        link=link,
    )


def angle_histogram(angles, bins: int = 16):
    """Histogram of angles over [0, 2pi); returns (counts, edges)."""
    return np.histogram(np.asarray(angles, dtype=float), bins=bins, range=(0.0, 2.0 * np.pi))


def chi2_uniformity(angles, bins: int = 16):
    """Pearson chi-square test of angle uniformity; returns (statistic, p_value)."""
    counts, _ = angle_histogram(angles, bins)
    total = counts.sum()
    if total == 0:
        raise ValueError("no angles to test")
    expected = total / bins
    statistic = float(np.sum((counts - expected) ** 2 / expected))
    p_value = float(stats.chi2.sf(statistic, df=bins - 1))
    return statistic, p_value


# ---------------------------------------------------------------------------
# rank-1 ReLU structure
# ---------------------------------------------------------------------------


@dataclass
class Rank1Report:
    sigma: float
    sigma_predicted: float  # 2 gamma max(s, 1)
    r_dot_e: float
    r_dot_e_predicted: float  # min(s, 1)
    cos_l_d: float
    positive_fraction_l: float

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "sigma_predicted": self.sigma_predicted,
            "r_dot_e": self.r_dot_e,
            "r_dot_e_predicted": self.r_dot_e_predicted,
            "cos_l_d": self.cos_l_d,
            "positive_fraction_l": self.positive_fraction_l,
        }


def rank1_relu_predictions(W, e, d, s: float, gamma: float) -> Rank1Report:
    """Compare the leading singular triplet of a trained single-channel ReLU
    integrator with its theoretical structure."""
    res = svd(W)
    sigma = float(res.singular_values[0])
    l = res.left_vectors[:, 0]
    r = res.right_vectors[:, 0]
    if r @ np.asarray(e, dtype=float) < 0:
        l, r = -l, -r
    return Rank1Report(
        sigma=sigma,
        sigma_predicted=2.0 * gamma * max(s, 1.0),
        r_dot_e=float(r @ np.asarray(e, dtype=float)),
        r_dot_e_predicted=min(s, 1.0),
        cos_l_d=float(l @ np.asarray(d, dtype=float)),
        positive_fraction_l=float(np.mean(l > 0)),
    )


# ---------------------------------------------------------------------------
# Dale-mode and support-block structure
# ---------------------------------------------------------------------------


@dataclass
class DaleModeReport:
    sigma0: float
    l0: np.ndarray
    r0: np.ndarray
    l0_min: float
    r0_sign_agreement: float  # fraction of columns matching the mask sign
    decoder_overlaps: np.ndarray  # |d_c . l0| per channel
    outlier_count: int

    def to_dict(self) -> dict:
        return {
            "sigma0": self.sigma0,
            "l0_min": self.l0_min,
            "r0_sign_agreement": self.r0_sign_agreement,
            "decoder_overlaps": [float(v) for v in self.decoder_overlaps],
            "outlier_count": self.outlier_count,
        }


def dale_mode_analysis(W, decoders, mask: DaleMask, D: int) -> DaleModeReport:
    """Structure of the extra singular mode of a sign-constrained network:
    nonnegative left vector, right vector signed like the excitatory /
    inhibitory split, and near-orthogonality to the decoders."""
    Dm = np.atleast_2d(np.asarray(decoders, dtype=float))
    summary = spectrum_summary(W, D + 1)
    sigma0, l0, r0 = summary.top_triplets[0]
    if l0.sum() < 0:
        l0, r0 = -l0, -r0
    agreement = float(np.mean(np.sign(r0) == mask.column_signs))
    return DaleModeReport(
        sigma0=sigma0,
        l0=l0,
        r0=r0,
        l0_min=float(l0.min()),
        r0_sign_agreement=agreement,
        decoder_overlaps=np.abs(Dm @ l0),
        outlier_count=summary.outlier_count,
    )


@dataclass
class SupportReport:
    on_block_mass: float
    off_block_mass: float
    off_block_fraction: float

    def to_dict(self) -> dict:
        return {
            "on_block_mass": self.on_block_mass,
            "off_block_mass": self.off_block_mass,
            "off_block_fraction": self.off_block_fraction,
        }


def support_structure_analysis(W, supports) -> SupportReport:
    """Frobenius mass of W inside same-channel blocks versus across channels.

    ``supports`` must partition the neuron indices, one index set per channel.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    channel = np.full(n, -1, dtype=int)
    for c, idx in enumerate(supports):
        idx = np.asarray(idx, dtype=int)
        if np.any(channel[idx] != -1):
            raise ValueError("supports overlap; block masses need a partition")
        channel[idx] = c
    if np.any(channel == -1):
        raise ValueError("supports do not cover every neuron")
    same = channel[:, None] == channel[None, :]
    total = float(np.sum(W**2))
    on = float(np.sum(W[same] ** 2))
    off = total - on
    return SupportReport(
        on_block_mass=on,
        off_block_mass=off,
        off_block_fraction=off / total if total > 0 else 0.0,
    )
