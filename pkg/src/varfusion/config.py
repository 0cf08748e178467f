from __future__ import annotations

from dataclasses import dataclass, replace

from .raster import Kernel


@dataclass(frozen=True)
class FusionConfig:
    """Scalar parameters of the whole pipeline.

    Defaults are the values used for the interpolation experiments
    (h=0.1, a=0.01, sigma=1, eps=0.001, eta=0.95, mu=2.5, vartheta=1, gamma=0)
    with an 8-bit intensity cap.
    """

    # texture index
    a: float = 0.01
    h: float = 0.1
    sigma: float = 1.0
    # unit normals
    eps: float = 0.001
    normal_steps: int = 2
    normal_dt: float = 0.0  # 0 -> 0.2 * eps
    # fusion energy
    eta: float = 0.95
    mu: float = 2.5
    gamma: float = 0.0
    restoration_gamma: float = 1.0
    vartheta: float = 1.0
    cap: float = 255.0
    kernel: str = "box"
    kernel_size: int = 0  # 0 -> resolution ratio
    # prototype prediction
    lambda1: float = 0.5
    steps_per_day: int = 1
    w_min: float = 1e-8
    w_max: float = 1e3
    # solvers
    grad_floor: float = 1e-8
    descent_dt: float = 1.0
    descent_max_iters: int = 200
    descent_tol: float = 1e-7
    descent_metric: str = "diffusivity"  # or "identity" for the plain gradient step
    metric_cg_tol: float = 1e-2
    cg_tol: float = 1e-8
    cg_max_iters: int = 2000

    def __post_init__(self):
        for name in ("a", "h", "sigma", "eps", "lambda1", "cap", "descent_dt", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        for name in ("mu", "gamma", "vartheta", "restoration_gamma", "normal_dt"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kernel not in ("box", "lanczos"):
            raise ValueError(f"unknown kernel kind {self.kernel!r}")
        if self.descent_metric not in ("diffusivity", "identity"):
            raise ValueError(f"unknown descent metric {self.descent_metric!r}")
        if self.normal_steps < 1 or self.steps_per_day < 1:
            raise ValueError("step counts must be >= 1")
        if not 0 < self.w_min <= self.w_max:
            raise ValueError("need 0 < w_min <= w_max")

    @property
    def flow_dt(self) -> float:
        return self.normal_dt if self.normal_dt > 0 else 0.2 * self.eps

    def make_kernel(self, ratio: int) -> Kernel:
        size = self.kernel_size or ratio
        return Kernel.box(size) if self.kernel == "box" else Kernel.lanczos(size)

    def with_(self, **changes) -> "FusionConfig":
        return replace(self, **changes)
