"""Forward models and plug-and-play solvers for deblurring and superresolution.

The degradation is ``y = S B x + eta`` with ``B`` a known circular blur
applied per channel and ``S`` decimation by an integer stride (stride 1 means
deblurring). PnP-FBS iterates ``x <- D(x - alpha * grad f(x))`` for a
denoiser ``D``; when ``D`` is contractive with constant ``L_D`` and
``L_D * ||I - alpha A^T A|| < 1`` the iteration is a contraction, so the
residuals decay geometrically to a unique fixed point. PnP-DRS swaps the
denoiser into Douglas-Rachford splitting, with the quadratic prox solved
exactly in the Fourier domain (stride 1) or by conjugate gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, SolverError, ValidationError
from .io import Rng, add_awgn
from .tensorops import as_image, conv2d_circular, conv2d_circular_adjoint

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 500


@dataclass(frozen=True)
class ForwardModel:
    """Blur taps (k x k, odd, unit sum by convention), decimation stride, noise level."""

    blur: np.ndarray
    stride: int = 1
    noise_sigma: float = 0.0

    def __post_init__(self):
        blur = np.asarray(self.blur, dtype=np.float64)
        if blur.ndim != 2 or blur.shape[0] % 2 == 0 or blur.shape[1] % 2 == 0:
            raise DimensionError(
                f"blur must be a 2D kernel with odd sides, got {blur.shape}")
        if not np.all(np.isfinite(blur)):
            raise ValidationError("blur taps must be finite")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "blur", blur)

    def kernel4d(self):
        return self.blur[None, None]


def apply_forward(x, model):
    """S B x: circular blur per channel, then keep every stride-th row/col."""
    x = as_image(x)
    h, w = x.shape[-2:]
    if h % model.stride or w % model.stride:
        raise DimensionError(
            f"image {h}x{w} not divisible by stride {model.stride}")
    blurred = conv2d_circular(x[..., None, :, :], model.kernel4d())[..., 0, :, :]
    return blurred[..., ::model.stride, ::model.stride]


def apply_adjoint(u, model, full_h, full_w):
    """B^T S^T u: zero-fill upsample, then the adjoint blur."""
    u = as_image(u)
    s = model.stride
    if u.shape[-2] * s != full_h or u.shape[-1] * s != full_w:
        raise DimensionError(
            f"adjoint input {u.shape[-2]}x{u.shape[-1]} does not fold to "
            f"{full_h}x{full_w} at stride {s}")
    up = np.zeros(u.shape[:-2] + (full_h, full_w))
    up[..., ::s, ::s] = u
    return conv2d_circular_adjoint(up[..., None, :, :], model.kernel4d())[..., 0, :, :]


def grad_datafit(x, y, model):
    """Gradient of f(x) = 1/2 ||y - A x||^2, i.e. A^T (A x - y)."""
    x = as_image(x)
    y = as_image(y)
    return apply_adjoint(apply_forward(x, model) - y, model,
                         x.shape[-2], x.shape[-1])


def datafit(x, y, model):
    return 0.5 * float(np.sum((apply_forward(x, model) - y) ** 2))


def simulate(x, model, rng=None):
    """Degrade a clean image: forward model plus AWGN at the model's sigma."""
    y = apply_forward(x, model)
    if model.noise_sigma > 0:
        y = add_awgn(y, model.noise_sigma, rng if rng is not None else Rng(0))
    return y


@dataclass
class PnPTrace:
    """Per-iteration record of a PnP run."""

    residuals: list = field(default_factory=list)
    datafits: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)
    final: np.ndarray = None
    converged: bool = False

    @property
    def iterations(self):
        return len(self.residuals)


def trace_to_csv(trace, path):
    """Write iter,residual,datafit,psnr rows with round-trip float precision."""
    with open(path, "w", newline="\n") as f:
        f.write("iter,residual,datafit,psnr\n")
        for i, (r, d, p) in enumerate(
                zip(trace.residuals, trace.datafits, trace.psnrs), start=1):
            f.write(f"{i},{r!r},{d!r},{p!r}\n")


def _psnr_or_nan(x, ref):
    if ref is None:
        return float("nan")
    from .metrics import psnr
    return psnr(x, ref)


def pnp_fbs(y, model, denoiser, alpha_step, max_iters=DEFAULT_MAX_ITERS,
            tol=DEFAULT_TOL, ref=None, x0=None):
    """Plug-and-play forward-backward splitting.

    Args:
        y: Observation (C, H/s, W/s).
        model: ForwardModel whose stride relates y to the full grid.
        denoiser: Callable mapping full-resolution images to the same shape.
        alpha_step: Gradient step size (> 0).
        max_iters, tol: Stop at ``||x_new - x|| <= tol * ||x||`` or the cap.
        ref: Optional clean reference; records per-iteration PSNR.
        x0: Optional start; defaults to ``A^T y``.

    Returns:
        PnPTrace with the final iterate; raises DivergenceError (trace
        attached) if an iterate goes non-finite.
    """
    if not alpha_step > 0:
        raise ValidationError(f"alpha_step must be positive, got {alpha_step}")
    y = as_image(y)
    full_h = y.shape[-2] * model.stride
    full_w = y.shape[-1] * model.stride
    x = apply_adjoint(y, model, full_h, full_w) if x0 is None else as_image(x0).copy()
    trace = PnPTrace()
    for _ in range(max_iters):
        z = x - alpha_step * grad_datafit(x, y, model)
        x_new = denoiser(z)
        res = float(np.linalg.norm(x_new - x))
        if not np.all(np.isfinite(x_new)) or not np.isfinite(res):
            trace.final = x
            raise DivergenceError(
                "non-finite iterate in PnP-FBS (expansive composition?)", trace)
        trace.residuals.append(res)
        trace.datafits.append(datafit(x_new, y, model))
        trace.psnrs.append(_psnr_or_nan(x_new, ref))
        norm_x = float(np.linalg.norm(x))
        x = x_new
        if res <= tol * norm_x:
            trace.converged = True
            break
    trace.final = x
    return trace


def _prox_datafit_fft(z, y, model, weight):
    # solve (I + weight * B^T B) x = z + weight * B^T y per channel via FFT
    h, w = z.shape[-2:]
    from .tensorops import _padded_kernel_fft
    bf = _padded_kernel_fft(model.kernel4d(), h, w)[0, 0]
    rhs = z + weight * apply_adjoint(y, model, h, w)
    denom = 1.0 + weight * np.abs(bf) ** 2
    return np.fft.ifft2(np.fft.fft2(rhs, axes=(-2, -1)) / denom, axes=(-2, -1)).real


def _prox_datafit_cg(z, y, model, weight, tol=1e-10, max_iters=2000):
    # conjugate gradient on the SPD map x -> x + weight * A^T A x
    h, w = z.shape[-2:]

    def op(v):
        return v + weight * apply_adjoint(apply_forward(v, model), model, h, w)

    b = z + weight * apply_adjoint(y, model, h, w)
    x = np.zeros_like(b)
    r = b - op(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    b_norm = float(np.linalg.norm(b))
    for _ in range(max_iters):
        if np.sqrt(rs) <= tol * max(b_norm, 1e-300):
            return x
        ap = op(p)
        alpha = rs / float(np.sum(p * ap))
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(
        f"conjugate gradient did not reach tol {tol} in {max_iters} iterations")


def pnp_drs(y, model, denoiser, step, max_iters=DEFAULT_MAX_ITERS,
            tol=DEFAULT_TOL, ref=None, z0=None):
    """Plug-and-play Douglas-Rachford splitting.

    One iteration: ``x = prox(z)``, ``u = D(2x - z)``, ``z <- z + u - x``,
    where prox solves ``(I + (1/step) A^T A) x = z + (1/step) A^T y`` exactly
    (FFT for stride 1, CG to 1e-10 otherwise). Residuals track the z-update.
    """
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    y = as_image(y)
    full_h = y.shape[-2] * model.stride
    full_w = y.shape[-1] * model.stride
    weight = 1.0 / step
    prox = _prox_datafit_fft if model.stride == 1 else _prox_datafit_cg
    z = apply_adjoint(y, model, full_h, full_w) if z0 is None else as_image(z0).copy()
    trace = PnPTrace()
    x = z
    for _ in range(max_iters):
        x = prox(z, y, model, weight)
        u = denoiser(2.0 * x - z)
        z_new = z + u - x
        res = float(np.linalg.norm(z_new - z))
        if not np.all(np.isfinite(u)) or not np.isfinite(res):
            trace.final = x
            raise DivergenceError(
                "non-finite iterate in PnP-DRS (expansive composition?)", trace)
        trace.residuals.append(res)
        trace.datafits.append(datafit(x, y, model))
        trace.psnrs.append(_psnr_or_nan(x, ref))
        norm_z = float(np.linalg.norm(z))
        z = z_new
        if res <= tol * norm_z:
            trace.converged = True
            break
    trace.final = prox(z, y, model, weight)
    trace.converged = trace.converged and bool(np.all(np.isfinite(trace.final)))
    return trace


def composite_contraction_bound(model, alpha_step, lip_denoiser,
                                grid_h, grid_w, tol=1e-10):
    """``L_D * ||I - alpha A^T A||`` on the given grid; < 1 certifies PnP-FBS.

    For stride 1 the spectrum of ``A^T A`` is ``|B_hat|^2``, so the norm is
    exact; for stride > 1 the norm comes from power iteration on the
    symmetric map to relative tolerance ``tol``.
    """
    if alpha_step < 0:
        raise ValidationError(f"alpha_step must be >= 0, got {alpha_step}")
    if grid_h % model.stride or grid_w % model.stride:
        raise DimensionError(
            f"grid {grid_h}x{grid_w} not divisible by stride {model.stride}")
    if model.stride == 1:
        from .tensorops import _padded_kernel_fft
        bf = _padded_kernel_fft(model.kernel4d(), grid_h, grid_w)[0, 0]
        lam = np.abs(bf) ** 2
        return lip_denoiser * float(np.max(np.abs(1.0 - alpha_step * lam)))

    def op(v):
        return v - alpha_step * apply_adjoint(apply_forward(v, model), model,
                                              grid_h, grid_w)

    rng = np.random.default_rng(0)
    v = rng.standard_normal((1, grid_h, grid_w))
    v /= np.linalg.norm(v)
    prev = -1.0
    stable = 0
    est = 0.0
    for _ in range(100_000):
        w = op(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
        if prev >= 0 and abs(est - prev) <= tol * max(est, 1e-300):
            stable += 1
            if stable >= 3:
                break
        else:
            stable = 0
        prev = est
    return lip_denoiser * est


# ---------------------------------------------------------------------------
# blur kernel families


def gaussian_blur(size, sigma):
    if size % 2 == 0 or size < 1:
        raise ValidationError(f"kernel size must be odd, got {size}")
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def box_blur(size):
    if size % 2 == 0 or size < 1:
        raise ValidationError(f"kernel size must be odd, got {size}")
    return np.full((size, size), 1.0 / (size * size))


def disk_blur(radius):
    """Defocus disk of the given radius; kernel size 2*radius + 1."""
    if radius < 1:
        raise ValidationError(f"radius must be >= 1, got {radius}")
    size = 2 * radius + 1
    r = np.arange(size) - radius
    mask = (r[:, None] ** 2 + r[None, :] ** 2) <= radius ** 2
    k = mask.astype(np.float64)
    return k / k.sum()


def anisotropic_gaussian_blur(size, sigma_x, sigma_y, theta_deg):
    if size % 2 == 0 or size < 1:
        raise ValidationError(f"kernel size must be odd, got {size}")
    if not (sigma_x > 0 and sigma_y > 0):
        raise ValidationError("sigmas must be positive")
    r = np.arange(size) - size // 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    t = np.deg2rad(theta_deg)
    xr = np.cos(t) * xx + np.sin(t) * yy
    yr = -np.sin(t) * xx + np.cos(t) * yy
    k = np.exp(-(xr ** 2 / (2 * sigma_x ** 2) + yr ** 2 / (2 * sigma_y ** 2)))
    return k / k.sum()


def motion_blur(length, direction="diag"):
    """Straight-line motion kernel; currently the main diagonal."""
    if length % 2 == 0 or length < 1:
        raise ValidationError(f"length must be odd, got {length}")
    if direction != "diag":
        raise ValidationError(f"unsupported motion direction {direction!r}")
    k = np.zeros((length, length))
    np.fill_diagonal(k, 1.0)
    return k / k.sum()


def sparse_random_blur(size, density, seed=0):
    """Random nonnegative kernel with the given fraction of zeros, seeded."""
    if size % 2 == 0 or size < 1:
        raise ValidationError(f"kernel size must be odd, got {size}")
    if not 0.0 <= density < 1.0:
        raise ValidationError(f"density (zero fraction) must be in [0, 1), got {density}")
    rng = Rng(seed)
    vals = rng.uniform(size * size).reshape(size, size)
    keep = rng.uniform(size * size).reshape(size, size) >= density
    k = vals * keep
    if k.sum() == 0.0:
        k[size // 2, size // 2] = 1.0
    return k / k.sum()


def delta_blur():
    return np.ones((1, 1))


def parse_blur_spec(spec):
    """Parse the blur mini-language used on the command line.

    Forms: ``delta``, ``gauss:SIZE:SIGMA``, ``box:SIZE``, ``disk:RADIUS``,
    ``aniso:SIZE:SX:SY:THETA``, ``motion:LENGTH:diag``,
    ``sparse:SIZE:DENSITY:SEED``.
    """
    parts = str(spec).split(":")
    kind = parts[0]
    try:
        if kind == "delta" and len(parts) == 1:
            return delta_blur()
        if kind == "gauss" and len(parts) == 3:
            return gaussian_blur(int(parts[1]), float(parts[2]))
        if kind == "box" and len(parts) == 2:
            return box_blur(int(parts[1]))
        if kind == "disk" and len(parts) == 2:
            return disk_blur(int(parts[1]))
        if kind == "aniso" and len(parts) == 5:
            return anisotropic_gaussian_blur(int(parts[1]), float(parts[2]),
                                             float(parts[3]), float(parts[4]))
        if kind == "motion" and len(parts) == 3:
            return motion_blur(int(parts[1]), parts[2])
        if kind == "sparse" and len(parts) == 4:
            return sparse_random_blur(int(parts[1]), float(parts[2]), int(parts[3]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad blur spec {spec!r}: {exc}") from exc
    raise ValidationError(f"unrecognized blur spec {spec!r}")
