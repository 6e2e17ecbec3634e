"""Effective-receptive-field estimation and 2D Gaussian least-squares fitting.

``estimate_erf`` measures how much each input pixel can influence the center
cell of a net's last feature map: backpropagate from the channel-summed
center-cell activation to the input, take absolute values, sum over input
channels, average over images, and normalize the result to peak 1.

``fit_gaussian2d`` fits that map (or any 2D map) with an axis-aligned
elliptical Gaussian plus a constant baseline,

    m(x, y) = offset + amplitude * exp(-(x-mu_x)^2/(2 sx^2) - (y-mu_y)^2/(2 sy^2)),

by Levenberg-Marquardt on 6 parameters with an analytic Jacobian. The sigmas
are optimized in log-space, which enforces positivity without constraints.
Damping starts at 1e-3, divides by 10 on every accepted step and multiplies
by 10 on every rejected one; iteration stops when an accepted step improves
the cost by less than 1e-10 relative, and errors out after 200 iterations or
when damping overflows without progress.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .micronet import NetActivations, feature_cell_input_gradient, forward
from .tensorio import as_tensor


class FitError(RuntimeError):
    pass


@dataclass
class ErfMap:
    values: np.ndarray  # (w, h), peak normalized to 1
    n_images: int

    def __post_init__(self):
        self.values = as_tensor(self.values)


@dataclass
class ErfFit:
    amplitude: float
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    offset: float
    r_squared: float
    n_pixels_used: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "amplitude": self.amplitude,
                "mu_x": self.mu_x,
                "mu_y": self.mu_y,
                "sigma_x": self.sigma_x,
                "sigma_y": self.sigma_y,
                "offset": self.offset,
                "r_squared": self.r_squared,
                "n_pixels_used": self.n_pixels_used,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ErfFit":
        doc = json.loads(text)
        return cls(**{k: doc[k] for k in (
            "amplitude", "mu_x", "mu_y", "sigma_x", "sigma_y",
            "offset", "r_squared", "n_pixels_used")})

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ErfFit":
        return cls.from_json(Path(path).read_text())


@dataclass
class LMResult:
    params: np.ndarray
    cost_history: list = field(default_factory=list)  # accepted costs, monotone decreasing
    n_iter: int = 0
    lam: float = 0.0
    converged: bool = False


def lm_fit(residual_fn, jacobian_fn, p0, max_iter: int = 200, lam0: float = 1e-3,
           rel_tol: float = 1e-10, lam_max: float = 1e12) -> LMResult:
    """Generic Levenberg-Marquardt minimizer of ``sum(residual_fn(p)**2)``.

    ``residual_fn(p)`` returns the residual vector, ``jacobian_fn(p)`` its
    Jacobian with one column per parameter. A step is accepted only when it
    strictly lowers the cost, so ``cost_history`` is monotone decreasing.
    Convergence: an accepted step improving the cost by less than ``rel_tol``
    relative, or proposed steps shrinking to machine scale. Raises
    :class:`FitError` when neither happens before the iteration or damping
    budget runs out; the message carries the final damping factor and cost.
    """
    p = np.asarray(p0, dtype=np.float64).copy()
    r = residual_fn(p)
    cost = float(r @ r)
    history = [cost]
    lam = lam0
    for it in range(1, max_iter + 1):
        jac = jacobian_fn(p)
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.maximum(np.diag(hess), 1e-12)
        step_scale = 1e-14 * (1.0 + float(np.abs(p).max()))
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                if float(np.abs(step).max()) <= step_scale:
                    # parameters are converged to machine scale; no further
                    # strict improvement is representable
                    return LMResult(params=p, cost_history=history, n_iter=it,
                                    lam=lam, converged=True)
                p_new = p + step
                r_new = residual_fn(p_new)
                cost_new = float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            lam *= 10.0
            if lam > lam_max:
                raise FitError(
                    f"no acceptable step after {it} iterations "
                    f"(damping {lam:.3g}, residual cost {cost:.6g})"
                )
        improvement = cost - cost_new
        p, r, cost = p_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if cost == 0.0 or improvement <= rel_tol * max(cost, 1e-300):
            return LMResult(params=p, cost_history=history, n_iter=it, lam=lam, converged=True)
    raise FitError(
        f"did not converge in {max_iter} iterations "
        f"(damping {lam:.3g}, residual cost {cost:.6g})"
    )


def gaussian2d_model(params, xs, ys) -> np.ndarray:
    """Evaluate the 6-parameter model at pixel coordinates (xs, ys).

    ``params`` = (amplitude, mu_x, mu_y, log_sigma_x, log_sigma_y, offset).
    """
    amp, mu_x, mu_y, log_sx, log_sy, off = params
    sx, sy = np.exp(log_sx), np.exp(log_sy)
    return off + amp * np.exp(
        -((xs - mu_x) ** 2) / (2.0 * sx * sx) - ((ys - mu_y) ** 2) / (2.0 * sy * sy)
    )


def _gaussian2d_jacobian(params, xs, ys) -> np.ndarray:
    amp, mu_x, mu_y, log_sx, log_sy, off = params
    sx, sy = np.exp(log_sx), np.exp(log_sy)
    dx = xs - mu_x
    dy = ys - mu_y
    e = np.exp(-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy))
    jac = np.empty((xs.size, 6))
    jac[:, 0] = e
    jac[:, 1] = amp * e * dx / (sx * sx)
    jac[:, 2] = amp * e * dy / (sy * sy)
    jac[:, 3] = amp * e * (dx * dx) / (sx * sx)  # d/d(log sx)
    jac[:, 4] = amp * e * (dy * dy) / (sy * sy)
    jac[:, 5] = 1.0
    return jac


def _moment_init(vals, xs, ys) -> np.ndarray:
    off0 = float(vals.min())
    amp0 = float(vals.max() - vals.min()) or 1.0
    wts = vals - off0
    total = wts.sum()
    if total <= 0:
        wts = np.ones_like(vals)
        total = wts.sum()
    mu_x0 = float((wts * xs).sum() / total)
    mu_y0 = float((wts * ys).sum() / total)
    sx0 = max(np.sqrt((wts * (xs - mu_x0) ** 2).sum() / total), 0.5)
    sy0 = max(np.sqrt((wts * (ys - mu_y0) ** 2).sum() / total), 0.5)
    return np.array([amp0, mu_x0, mu_y0, np.log(sx0), np.log(sy0), off0])


def fit_gaussian2d(erf_map, ignore_negative: bool = False) -> ErfFit:
    """Least-squares 2D Gaussian fit of a pixel map.

    ``ignore_negative`` drops negative-valued pixels from the residual set
    (useful for signed gradient maps whose unused pixels dip below zero).
    """
    values = erf_map.values if isinstance(erf_map, ErfMap) else as_tensor(erf_map)
    if values.ndim != 2:
        raise ValueError("expected a rank-2 map")
    xs, ys = np.meshgrid(
        np.arange(values.shape[0], dtype=np.float64),
        np.arange(values.shape[1], dtype=np.float64),
        indexing="ij",
    )
    mask = values >= 0 if ignore_negative else np.ones_like(values, dtype=bool)
    vals = values[mask]
    xs, ys = xs[mask], ys[mask]
    if vals.size < 6:
        raise FitError(f"only {vals.size} usable pixels, need at least 6")
    if vals.max() == vals.min():
        raise FitError("degenerate map: all usable pixels are equal")

    def residuals(p):
        return gaussian2d_model(p, xs, ys) - vals

    def jac(p):
        return _gaussian2d_jacobian(p, xs, ys)

    result = lm_fit(residuals, jac, _moment_init(vals, xs, ys))
    amp, mu_x, mu_y, log_sx, log_sy, off = result.params
    predicted = gaussian2d_model(result.params, xs, ys)
    return ErfFit(
        amplitude=float(amp),
        mu_x=float(mu_x),
        mu_y=float(mu_y),
        sigma_x=float(np.exp(log_sx)),
        sigma_y=float(np.exp(log_sy)),
        offset=float(off),
        r_squared=r_squared(vals, predicted),
        n_pixels_used=int(vals.size),
    )


def r_squared(observed, predicted) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    o = as_tensor(observed).ravel()
    p = as_tensor(predicted).ravel()
    if o.shape != p.shape:
        raise ValueError(f"length mismatch: {o.shape} vs {p.shape}")
    if o.size < 2:
        raise ValueError("need at least 2 observations")
    ss_tot = float(((o - o.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("SS_tot is zero: observations are constant")
    ss_res = float(((o - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def estimate_erf(net, images, cell=None, signed: bool = False) -> ErfMap:
    """Average the input-gradient footprint of one feature-map cell.

    For each image: backpropagate from the channel-summed activation at
    ``cell`` (default: the center cell) to the input, reduce over input
    channels (absolute values unless ``signed``), then average over images in
    their given order and normalize the peak to 1.
    """
    images = list(images)
    if not images:
        raise ValueError("need at least one image")
    shape = as_tensor(images[0]).shape
    acc = None
    for i, img in enumerate(images):
        img = as_tensor(img)
        if img.shape != shape:
            raise ValueError(f"image {i} shape {img.shape} differs from {shape}")
        acts: NetActivations = forward(net, img)
        g = feature_cell_input_gradient(net, acts, cell=cell)
        contrib = g.sum(axis=0) if signed else np.abs(g).sum(axis=0)
        acc = contrib if acc is None else acc + contrib
    avg = acc / len(images)
    peak = avg.max()
    if peak <= 0:
        raise ValueError("gradient footprint is empty: cannot normalize")
    return ErfMap(values=avg / peak, n_images=len(images))
