"""Dataclasses shared by the sampling, algorithm and reporting layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VarianceParams:
    sigma_a_sq: float
    sigma_r_sq: float
    degenerate: bool = False
    small_n: bool = False

    def __post_init__(self) -> None:
        for name in ("sigma_a_sq", "sigma_r_sq"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class AlectonConfig:
    n: int
    p: int
    q: int
    epsilon: float
    eta: float
    k_steps: int
    l_steps: int
    seed: int = 0
    renorm_every: int = 1000
    trace_every: int = 0
    eigengap: float | None = None


@dataclass(frozen=True)
class StepSizeReport:
    gamma: float
    satisfied: bool
    eta_max: float


@dataclass(frozen=True)
class TracePoint:
    step: int
    rho: float
    tau: float | None
    wall_ms: float


@dataclass
class ConvergenceTrace:
    epsilon: float
    points: list[TracePoint] = field(default_factory=list)

    def record(self, point: TracePoint) -> None:
        if self.points and point.step <= self.points[-1].step:
            raise ValueError(f"trace steps must increase: {point.step} after {self.points[-1].step}")
        self.points.append(point)

    @property
    def first_success(self) -> int | None:
        for point in self.points:
            if point.rho >= 1.0 - self.epsilon:
                return point.step
        return None

    @property
    def converged(self) -> bool:
        return self.first_success is not None

    @property
    def final_rho(self) -> float | None:
        return self.points[-1].rho if self.points else None


@dataclass(frozen=True)
class SuccessCheck:
    lambda_min_ratio: float
    succeeded: bool


@dataclass(frozen=True)
class RecoveryResult:
    y_hat: np.ndarray
    r_bar: np.ndarray | None
    factor: np.ndarray
    trace: ConvergenceTrace
    step_size: StepSizeReport | None = None
    clipped: int = 0
    wall_ms: float = 0.0
