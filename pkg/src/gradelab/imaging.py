"""Coordinate-network imaging: degradations, TV split training, PSNR.

An image is modeled as a function from pixel-center coordinates in [0,1]^2
to intensity. Training always happens on the [0,1] intensity scale (pixels
divided by 255) for conditioning; PSNR is always computed on the 0-255
scale. The TV pipeline alternates a soft-threshold update of the split
variable u with a few optimizer epochs on the network parameters, and the
trace it returns records PSNR against the clean image per outer iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .calculus import (
    _cache,
    _weighted_grad,
    default_pixel_grid,
    diff_h,
    diff_h_adj,
    diff_v,
    diff_v_adj,
)
from .network import (
    Arch,
    ParamVec,
    batch_forward,
    hidden_features,
    init_params,
    param_views,
)
from .training import (
    ADAM_B1,
    ADAM_B2,
    ADAM_EPS,
    DIVERGENCE_CAP,
    GradeStack,
    _as_grade_archs,
    _check_trainable_depth,
    _grade_scales,
    format_float,
    mgdl_predict,
)

PEAK = 255.0


# ---------------------------------------------------------------------------
# images and degradations


@dataclass(frozen=True)
class GrayImage:
    """Square grayscale image on the 0-255 intensity scale.

    Values may leave [0, 255] in memory (additive noise is kept unclamped
    for training); every output path clamps.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"pixels must be square (n, n), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        object.__setattr__(self, "pixels", px)

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    def clamped(self) -> "GrayImage":
        return GrayImage(np.clip(self.pixels, 0.0, PEAK))


@dataclass(frozen=True)
class DegradationSpec:
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ValueError("sigmas must be nonnegative")


def coord_grid(n: int) -> np.ndarray:
    """Pixel centers of an n x n grid in [0,1]^2, row-major, row coord first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return default_pixel_grid(n)


def quarter_train_split(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major indices: train = both coordinates even, test = every pixel."""
    s = np.arange(0, n, 2)
    train = (s[:, None] * n + s[None, :]).reshape(-1)
    test = np.arange(n * n)
    return train, test


def add_gaussian_noise(img: GrayImage, sigma: float, seed: int) -> GrayImage:
    """I.i.d. Gaussian pixel noise, deterministic in seed, NOT clamped."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return img
    n = img.n
    noise = rng.normals(rng.substream(seed, 1), n * n).reshape(n, n)
    return GrayImage(img.pixels + sigma * noise)


def gaussian_blur_matrix(n: int, sigma_hat: float) -> np.ndarray:
    """One-dimensional blur matrix K: truncated Gaussian, radius ceil(3*sigma),
    kernel renormalized to sum 1, replicate boundary. sigma 0 gives identity.
    Blurring an image V is K @ V @ K.T; the adjoint is K.T @ R @ K."""
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    if sigma_hat == 0:
        return np.eye(n)
    r = math.ceil(3.0 * sigma_hat)
    d = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (d / sigma_hat) ** 2)
    k /= k.sum()
    K = np.zeros((n, n))
    for i in range(n):
        idx = np.clip(i + d.astype(np.int64), 0, n - 1)
        np.add.at(K[i], idx, k)
    return K


def gaussian_blur_apply(img: GrayImage, sigma_hat: float) -> GrayImage:
    K = gaussian_blur_matrix(img.n, sigma_hat)
    return GrayImage(K @ img.pixels @ K.T)


def degrade(truth: GrayImage, spec: DegradationSpec) -> GrayImage:
    """Blur first, then add noise: the observed image K f + noise."""
    out = truth
    if spec.blur_sigma > 0:
        out = gaussian_blur_apply(out, spec.blur_sigma)
    return add_gaussian_noise(out, spec.noise_sigma, spec.seed)


def diff_operator_apply(values: np.ndarray) -> np.ndarray:
    """Forward differences, horizontal block stacked over vertical, (2n, n)."""
    V = np.asarray(values, dtype=np.float64)
    return np.vstack([diff_h(V), diff_v(V)])


def soft_threshold(x: np.ndarray, kappa: float) -> np.ndarray:
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def psnr(truth: GrayImage, recon: GrayImage) -> float:
    """10*log10(n_pixels * 255^2 / ||v - v_hat||_F^2); +inf when identical."""
    if truth.pixels.shape != recon.pixels.shape:
        raise ValueError("images must have the same shape")
    err = float(np.sum((truth.pixels - recon.pixels) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * math.log10(truth.pixels.size * PEAK * PEAK / err)


def psnr_at(truth: GrayImage, recon: GrayImage, idx: np.ndarray) -> float:
    """PSNR restricted to a row-major pixel index subset."""
    t = truth.pixels.reshape(-1)[idx]
    r = recon.pixels.reshape(-1)[idx]
    err = float(np.sum((t - r) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * math.log10(t.size * PEAK * PEAK / err)


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class ImageProblem:
    """A clean image, its degraded observation, and the train/test pixel sets.

    train_idx is the quarter grid for regression problems and the full grid
    for denoising/deblurring; test_idx is always every pixel.
    """

    truth: GrayImage
    observed: GrayImage
    blur_sigma: float
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n(self) -> int:
        return self.truth.n

    @property
    def scaled_observed(self) -> np.ndarray:
        return self.observed.pixels / PEAK

    def blur_matrix(self) -> np.ndarray:
        return gaussian_blur_matrix(self.n, self.blur_sigma)

    @staticmethod
    def regression(truth: GrayImage) -> "ImageProblem":
        train, test = quarter_train_split(truth.n)
        return ImageProblem(truth, truth, 0.0, train, test)

    @staticmethod
    def denoising(truth: GrayImage, sigma: float, seed: int) -> "ImageProblem":
        observed = degrade(truth, DegradationSpec(sigma, 0.0, seed))
        full = np.arange(truth.n * truth.n)
        return ImageProblem(truth, observed, 0.0, full, full.copy())

    @staticmethod
    def deblurring(truth: GrayImage, noise_sigma: float, blur_sigma: float,
                   seed: int) -> "ImageProblem":
        observed = degrade(truth, DegradationSpec(noise_sigma, blur_sigma, seed))
        full = np.arange(truth.n * truth.n)
        return ImageProblem(truth, observed, blur_sigma, full, full.copy())


def regression_dataset(problem: ImageProblem):
    """(train Dataset, full-grid Dataset) on the unit intensity scale."""
    from .calculus import Dataset

    grid = coord_grid(problem.n)
    target = problem.scaled_observed.reshape(-1)
    train = Dataset(grid[problem.train_idx], target[problem.train_idx])
    full = Dataset(grid, target)
    return train, full


# ---------------------------------------------------------------------------
# TV split training


@dataclass(frozen=True)
class TvConfig:
    lam: float = 0.1
    beta: float = 1.0
    alpha_relax: float = 1.0
    inner_epochs: int = 5
    inner_eta: float = 1e-3
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lam <= 0 or self.beta <= 0:
            raise ValueError("lam and beta must be positive")
        if not 0.0 < self.alpha_relax <= 1.0:
            raise ValueError("alpha_relax must lie in (0, 1]")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")
        if self.inner_eta <= 0:
            raise ValueError("inner_eta must be positive")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")


@dataclass
class TvTrace:
    """Per-outer-iteration record. Row 0 is the initial state.

    u_deltas[k] is the objective change produced by outer iteration k's
    u-update at fixed parameters (nonpositive up to roundoff when the relax
    factor is in (0, 1]).
    """

    outer_iters: list = field(default_factory=list)
    psnr_train: list = field(default_factory=list)
    psnr_test: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    u_deltas: list = field(default_factory=list)
    diverged: bool = False

    def record(self, k, p_train, p_test, obj):
        self.outer_iters.append(int(k))
        self.psnr_train.append(float(p_train))
        self.psnr_test.append(float(p_test))
        self.objectives.append(float(obj))


def u_update(pred: np.ndarray, u: np.ndarray, lam: float, beta: float,
             alpha_relax: float = 1.0) -> np.ndarray:
    """Relaxed prox step on the split variable at a fixed prediction image."""
    target = alpha_relax * diff_operator_apply(pred) + (1.0 - alpha_relax) * u
    return soft_threshold(target, alpha_relax * lam / beta)


class _TvObjective:
    """Loss/gradient closures for the split objective at the current u.

    Data term (1/2)||K P K^T - F||^2 with P the prediction image on the unit
    scale; K is skipped entirely when the problem has no blur so that the
    identity path is bit-for-bit the plain elementwise residual."""

    def __init__(self, arch: Arch, problem: ImageProblem, cfg: TvConfig,
                 inputs: np.ndarray, eps_scale: float,
                 offset: np.ndarray | None):
        self.arch = arch
        self.cfg = cfg
        self.n = problem.n
        self.F = problem.scaled_observed
        self.inputsT = np.ascontiguousarray(inputs.T)
        self.eps = float(eps_scale)
        self.offset = offset
        self.K = problem.blur_matrix() if problem.blur_sigma > 0 else None
        self.layout = None  # set on first call

    def prediction(self, w: np.ndarray) -> np.ndarray:
        pv = ParamVec(self.layout, w)
        out = batch_forward(self.arch, pv, self.inputsT.T)
        P = self.eps * out[:, 0].reshape(self.n, self.n)
        return P if self.offset is None else P + self.offset

    def _fields(self, views, u):
        _, _, out = _cache(self.arch, views, self.inputsT)
        P = self.eps * out[0].reshape(self.n, self.n)
        if self.offset is not None:
            P = P + self.offset
        data_res = (P if self.K is None else self.K @ P @ self.K.T) - self.F
        e2 = diff_h(P) - u[: self.n]
        e3 = diff_v(P) - u[self.n:]
        return P, data_res, e2, e3

    def loss(self, w: np.ndarray, u: np.ndarray) -> float:
        views = param_views(ParamVec(self.layout, w))
        _, data_res, e2, e3 = self._fields(views, u)
        return float(
            0.5 * np.sum(data_res * data_res)
            + self.cfg.lam * np.sum(np.abs(u))
            + 0.5 * self.cfg.beta * (np.sum(e2 * e2) + np.sum(e3 * e3))
        )

    def loss_grad(self, w: np.ndarray, u: np.ndarray):
        views = param_views(ParamVec(self.layout, w))
        acts, derivs, out = _cache(self.arch, views, self.inputsT)
        P = self.eps * out[0].reshape(self.n, self.n)
        if self.offset is not None:
            P = P + self.offset
        data_res = (P if self.K is None else self.K @ P @ self.K.T) - self.F
        e2 = diff_h(P) - u[: self.n]
        e3 = diff_v(P) - u[self.n:]
        L = float(
            0.5 * np.sum(data_res * data_res)
            + self.cfg.lam * np.sum(np.abs(u))
            + 0.5 * self.cfg.beta * (np.sum(e2 * e2) + np.sum(e3 * e3))
        )
        w_data = data_res if self.K is None else self.K.T @ data_res @ self.K
        w_img = w_data + self.cfg.beta * (diff_h_adj(e2) + diff_v_adj(e3))
        g = self.eps * _weighted_grad(self.arch, views, acts, derivs,
                                      w_img.reshape(-1))
        return L, g


def _render_scaled(pred_unit: np.ndarray) -> GrayImage:
    return GrayImage(np.clip(PEAK * pred_unit, 0.0, PEAK))


def _tv_train_single(arch: Arch, problem: ImageProblem, cfg: TvConfig,
                     outers: int, seed: int, inputs: np.ndarray,
                     eps_scale: float, offset: np.ndarray | None,
                     u0: np.ndarray | None, init: ParamVec | None):
    _check_trainable_depth(arch, "prox_grad_tv_train")
    obj = _TvObjective(arch, problem, cfg, inputs, eps_scale, offset)
    pv0 = init if init is not None else init_params(arch, seed)
    obj.layout = pv0.layout
    w = pv0.data.copy()
    n = problem.n
    u = np.zeros((2 * n, n)) if u0 is None else np.asarray(u0, dtype=np.float64).copy()
    trace = TvTrace()
    if cfg.optimizer == "adam":
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        t = 0

    def record(k):
        img = _render_scaled(obj.prediction(w))
        trace.record(
            k,
            psnr_at(problem.truth, img, problem.train_idx),
            psnr_at(problem.truth, img, problem.test_idx),
            obj.loss(w, u),
        )

    record(0)
    for k in range(1, outers + 1):
        before = obj.loss(w, u)
        u = u_update(obj.prediction(w), u, cfg.lam, cfg.beta, cfg.alpha_relax)
        after = obj.loss(w, u)
        trace.u_deltas.append(after - before)
        halted = False
        for _ in range(cfg.inner_epochs):
            L, g = obj.loss_grad(w, u)
            if not np.isfinite(L) or L > DIVERGENCE_CAP:
                trace.diverged = True
                halted = True
                break
            if cfg.optimizer == "gd":
                w = w - cfg.inner_eta * g
            else:
                t += 1
                m = ADAM_B1 * m + (1 - ADAM_B1) * g
                v = ADAM_B2 * v + (1 - ADAM_B2) * g * g
                mh = m / (1 - ADAM_B1**t)
                vh = v / (1 - ADAM_B2**t)
                w = w - cfg.inner_eta * mh / (np.sqrt(vh) + ADAM_EPS)
        record(k)
        if halted:
            break
    return ParamVec(pv0.layout, w), u, trace


@dataclass(frozen=True)
class MgdlTvSpec:
    """Graded variant of the TV trainer: which grade family, how many grades,
    and the per-grade output scale (scalar or one value per grade)."""

    grades: object = "MGDL-2"
    n_grades: int = 4
    eps: object = 1.0


def prox_grad_tv_train(model, problem: ImageProblem, cfg: TvConfig,
                       outers: int, seed: int = 0,
                       init: ParamVec | None = None):
    """Alternating split training: u-update then inner optimizer epochs.

    model is either an Arch (plain stack; returns (ParamVec, TvTrace)) or an
    MgdlTvSpec (graded; returns (GradeStack, list[TvTrace]) with the total
    outer budget split evenly across grades, the split variable carried
    over, and each grade's committed output folded into the offset image).
    """
    if outers < 1:
        raise ValueError("outers must be >= 1")
    grid = coord_grid(problem.n)
    if isinstance(model, Arch):
        params, _, trace = _tv_train_single(
            model, problem, cfg, outers, seed, grid, 1.0, None, None, init
        )
        return params, trace

    if not isinstance(model, MgdlTvSpec):
        raise TypeError("model must be an Arch or an MgdlTvSpec")
    archs = _as_grade_archs(model.grades, model.n_grades)
    scales = _grade_scales(model.eps, model.n_grades)
    per = max(1, outers // model.n_grades)
    stack = GradeStack(grades=[])
    traces = []
    feats = grid
    offset = None
    u = None
    for l in range(model.n_grades):
        tail = archs[l].trainable_tail()
        if feats.shape[1] != tail.widths[0]:
            raise ValueError(
                f"grade {l + 1} tail expects input width {tail.widths[0]}, "
                f"features have width {feats.shape[1]}"
            )
        params, u, trace = _tv_train_single(
            tail, problem, cfg, per, rng.substream(seed, l), feats,
            scales[l], offset, u, None,
        )
        traces.append(trace)
        stack.grades.append((tail, params, scales[l]))
        pred = scales[l] * batch_forward(tail, params, feats)[:, 0]
        pred = pred.reshape(problem.n, problem.n)
        offset = pred if offset is None else offset + pred
        stack.residual_norms.append(
            float(np.linalg.norm(problem.scaled_observed - offset))
        )
        feats = hidden_features(tail, params, feats)
        if trace.diverged:
            break
    return stack, traces


def render_prediction(model, n: int) -> GrayImage:
    """Evaluate a trained model on the full grid, rescale to 0-255, clamp.

    model: (Arch, ParamVec) pair, a GradeStack, or a callable mapping
    (n*n, d) coordinates to per-pixel unit-scale intensities.
    """
    grid = coord_grid(n)
    if isinstance(model, GradeStack):
        pred = mgdl_predict(model, grid)[:, 0]
    elif callable(model):
        pred = np.asarray(model(grid), dtype=np.float64).reshape(-1)
    else:
        arch, params = model
        pred = batch_forward(arch, params, grid)[:, 0]
    return _render_scaled(pred.reshape(n, n))


def tv_trace_csv(trace: TvTrace) -> str:
    lines = ["outer_iter,psnr_train,psnr_test,objective"]
    for i, k in enumerate(trace.outer_iters):
        lines.append(",".join([
            str(k),
            format_float(trace.psnr_train[i]),
            format_float(trace.psnr_test[i]),
            format_float(trace.objectives[i]),
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# PGM I/O and the phantom


def _pgm_tokens(raw: bytes):
    """Header tokens with # comments stripped, plus the raster offset."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(raw):
            raise ValueError("truncated PGM header")
        c = raw[pos:pos + 1]
        if c == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace():
                pos += 1
            tokens.append(raw[start:pos])
    return tokens, pos + 1  # single whitespace byte after maxval


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, data_at = _pgm_tokens(raw)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file (magic {magic!r})")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"only 8-bit PGM supported, maxval {maxval}")
    if width != height:
        raise ValueError(f"image must be square, got {width}x{height}")
    count = width * height
    if magic == b"P5":
        data = np.frombuffer(raw[data_at:data_at + count], dtype=np.uint8)
        if data.size != count:
            raise ValueError("truncated PGM raster")
    else:
        vals = raw[data_at - 1:].split()
        if len(vals) < count:
            raise ValueError("truncated PGM raster")
        data = np.array([int(v) for v in vals[:count]], dtype=np.float64)
    px = data.astype(np.float64).reshape(height, width)
    if px.max() > maxval:
        raise ValueError("pixel exceeds declared maxval")
    return GrayImage(px * (PEAK / maxval) if maxval != 255 else px)


def write_pgm(path, img: GrayImage) -> None:
    """Binary 8-bit export; quantization is round-half-to-even."""
    q = np.rint(np.clip(img.pixels, 0.0, PEAK)).astype(np.uint8)
    header = f"P5\n{img.n} {img.n}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes())


def make_phantom(n: int, seed: int = 0) -> GrayImage:
    """Synthetic test image: ramp background, checkerboard band, three disks.

    Piecewise-smooth with sharp edges so TV methods have structure to
    preserve; deterministic in (n, seed)."""
    if n < 4:
        raise ValueError("n must be >= 4")
    s = np.arange(n, dtype=np.float64)[:, None]
    t = np.arange(n, dtype=np.float64)[None, :]
    img = 30.0 + 60.0 * (s / n) + 30.0 * (t / n)
    p = max(2, n // 8)
    board = 40.0 * (((s // p) + (t // p)) % 2)
    half = n // 2
    img[half:, :] += board[half:, :]
    centers = rng.uniforms(rng.substream(seed, 2), 6).reshape(3, 2)
    radii = (n / 6.0, n / 8.0, n / 12.0)
    levels = (220.0, 170.0, 90.0)
    for (cs, ct), rad, level in zip(centers, radii, levels):
        cy = (0.2 + 0.6 * cs) * n
        cx = (0.2 + 0.6 * ct) * n
        mask = (s - cy) ** 2 + (t - cx) ** 2 <= rad * rad
        img[mask] = level
    return GrayImage(np.clip(img, 0.0, PEAK))
