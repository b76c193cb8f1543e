"""
MBIR-TV baseline: min_x 1/2 ||Ax - b||^2 + lambda TV(x)

Split as x = z and solved by ADMM: a conjugate-gradient x-update on
(A^T A + rho I), a TV proximal z-update computed with Chambolle's dual
projection, and a scaled dual update. An iteration that raises the objective
is rolled back to the last accepted iterate with the dual cleared, so the
logged objective never increases.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core_image import as_image
from .ct_sim import GeometryConfig, Projector, Sinogram, fbp_reconstruct
from .errors import DimensionError, DivergenceError, ParameterError
from .metrics import nrmse

logger = logging.getLogger(__name__)

OBJECTIVE_COLUMNS = ["iteration", "data_term", "tv_term", "total"]


@dataclass(frozen=True)
class TVParams:
    lam: float = 0.05
    rho: float = 1.0
    outer_iters: int = 30
    cg_iters: int = 10
    chambolle_iters: int = 50
    chambolle_step: float = 0.125
    tolerance: float = 1e-6

    def validate(self) -> "TVParams":
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.rho <= 0:
            raise ParameterError(f"rho must be > 0, got {self.rho}")
        if not 0 < self.chambolle_step <= 0.25:
            raise ParameterError(f"chambolle step must be in (0, 1/4], got {self.chambolle_step}")
        for name in ("outer_iters", "cg_iters", "chambolle_iters"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.tolerance < 0:
            raise ParameterError(f"tolerance must be >= 0, got {self.tolerance}")
        return self


@dataclass
class ObjectiveRecord:
    iteration: int
    data_term: float
    tv_term: float
    total: float


@dataclass
class AdmmState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    objective_log: List[ObjectiveRecord] = field(default_factory=list)


def image_gradient(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences along columns (x) and rows (y); zero at the far border"""
    gx = np.zeros_like(image)
    gy = np.zeros_like(image)
    gx[:, :-1] = image[:, 1:] - image[:, :-1]
    gy[:-1, :] = image[1:, :] - image[:-1, :]
    return gx, gy


def image_divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of image_gradient"""
    div = np.zeros_like(px)
    div[:, 0] = px[:, 0]
    div[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    div[:, -1] = -px[:, -2]
    div[0, :] += py[0, :]
    div[1:-1, :] += py[1:-1, :] - py[:-2, :]
    div[-1, :] += -py[-2, :]
    return div


def tv_value(image) -> float:
    """Isotropic total variation"""
    gx, gy = image_gradient(as_image(image))
    return float(np.sum(np.sqrt(gx * gx + gy * gy)))


def tv_prox_chambolle(v, weight: float, params: Optional[TVParams] = None) -> np.ndarray:
    """argmin_u 1/2 ||u - v||^2 + weight TV(u) by the dual fixed-point iteration"""
    if weight < 0:
        raise ParameterError(f"prox weight must be >= 0, got {weight}")
    params = params or TVParams()
    v = as_image(v)
    if weight == 0 or min(v.shape) < 2:
        return v.copy()

    tau = params.chambolle_step
    px = np.zeros_like(v)
    py = np.zeros_like(v)
    scaled = v / weight
    for _ in range(params.chambolle_iters):
        gx, gy = image_gradient(image_divergence(px, py) - scaled)
        norm = np.sqrt(gx * gx + gy * gy)
        px = (px + tau * gx) / (1.0 + tau * norm)
        py = (py + tau * gy) / (1.0 + tau * norm)
    return v - weight * image_divergence(px, py)


def prox_objective(u, v, weight: float) -> float:
    diff = np.asarray(u) - np.asarray(v)
    return 0.5 * float(np.sum(diff * diff)) + weight * tv_value(u)


def backproject(sino: Sinogram, geometry: Optional[GeometryConfig] = None,
                projector: Optional[Projector] = None) -> np.ndarray:
    """Exact adjoint of forward_project"""
    geometry = geometry or sino.geometry
    if geometry != sino.geometry:
        raise DimensionError("sinogram was acquired with a different geometry")
    projector = projector or Projector(geometry, cache=False)
    return projector.adjoint(sino.data)


def conjugate_gradient(apply_op: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
                       x0: np.ndarray, iterations: int) -> np.ndarray:
    """Fixed number of CG steps for a symmetric positive definite operator"""
    x = x0.copy()
    r = rhs - apply_op(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    floor = 1e-30 * max(float(np.vdot(rhs, rhs)), 1e-300)
    for _ in range(iterations):
        if rs <= floor:
            break
        ap = apply_op(p)
        alpha = rs / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rs_next = float(np.vdot(r, r))
        p = r + (rs_next / rs) * p
        rs = rs_next
    return x


def admm_tv_reconstruct(sino: Sinogram, geometry: Optional[GeometryConfig] = None,
                        params: Optional[TVParams] = None, x0: Optional[np.ndarray] = None,
                        projector: Optional[Projector] = None) -> Tuple[np.ndarray, List[ObjectiveRecord]]:
    params = (params or TVParams()).validate()
    geometry = geometry or sino.geometry
    if geometry != sino.geometry or sino.data.shape != geometry.shape:
        raise DimensionError("sinogram does not match the reconstruction geometry")
    n = geometry.image_size
    projector = projector or Projector(geometry, cache=True)

    b = sino.data
    x = fbp_reconstruct(sino) if x0 is None else as_image(x0, "initial image").copy()
    if x.shape != (n, n):
        raise DimensionError(f"initial image {x.shape} does not match the {n}x{n} grid")
    state = AdmmState(x=x, z=x.copy(), u=np.zeros_like(x))

    def normal_operator(image):
        return projector.normal(image) + params.rho * image

    atb = projector.adjoint(b)
    accepted: Optional[Tuple[ObjectiveRecord, np.ndarray, np.ndarray]] = None
    restarts = 0
    for iteration in range(1, params.outer_iters + 1):
        rhs = atb + params.rho * (state.z - state.u)
        state.x = conjugate_gradient(normal_operator, rhs, state.x, params.cg_iters)
        state.z = tv_prox_chambolle(state.x + state.u, params.lam / params.rho, params)
        state.u = state.u + state.x - state.z

        residual = projector.forward(state.x) - b
        data_term = 0.5 * float(np.sum(residual * residual))
        tv_term = tv_value(state.x)
        total = data_term + params.lam * tv_term
        if not (math.isfinite(total) and np.all(np.isfinite(state.z))):
            raise DivergenceError("non-finite MBIR objective", iteration=iteration)

        if accepted is not None and total > accepted[0].total:
            # objective went up: resume from the last accepted iterate with a cleared dual
            record, x, z = accepted
            state.x, state.z, state.u = x.copy(), z.copy(), np.zeros_like(x)
            state.objective_log.append(replace(record, iteration=iteration))
            restarts += 1
            logger.debug(f"ADMM {iteration}: objective {total:.6g} above {record.total:.6g}, restarting")
            continue

        record = ObjectiveRecord(iteration, data_term, tv_term, total)
        state.objective_log.append(record)
        logger.debug(f"ADMM {iteration}: data {data_term:.6g}, TV {tv_term:.6g}, total {total:.6g}")
        previous = None if accepted is None else accepted[0].total
        accepted = (record, state.x.copy(), state.z.copy())

        if previous is not None and abs(previous - total) <= params.tolerance * max(abs(previous), 1e-300):
            logger.info(f"ADMM converged after {iteration} iterations")
            break
    if restarts:
        logger.info(f"ADMM restarted {restarts} times")
    return state.z, state.objective_log


def objective_frame(log: Sequence[ObjectiveRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in log], columns=OBJECTIVE_COLUMNS)


def save_objective_log(path, log: Sequence[ObjectiveRecord]) -> Path:
    path = Path(path)
    objective_frame(log).to_csv(path, index=False)
    return path


def tune_lambda(sino: Sinogram, reference: np.ndarray, params: Optional[TVParams] = None,
                grid: Sequence[float] = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1)) -> Tuple[float, pd.DataFrame]:
    """Grid search over lambda (rho fixed); returns the lowest-NRMSE lambda and the table"""
    if not grid:
        raise ParameterError("empty lambda grid")
    params = (params or TVParams()).validate()
    projector = Projector(sino.geometry, cache=True)
    x0 = fbp_reconstruct(sino)
    rows = []
    for lam in grid:
        image, log = admm_tv_reconstruct(sino, params=replace(params, lam=float(lam)), x0=x0, projector=projector)
        rows.append({"lambda": float(lam), "nrmse": nrmse(image, reference),
                     "iterations": len(log), "objective": log[-1].total})
        logger.info(f"lambda {lam:g}: NRMSE {rows[-1]['nrmse']:.5f}")
    table = pd.DataFrame(rows)
    best = float(table.loc[table["nrmse"].idxmin(), "lambda"])
    return best, table
