"""
    2D TMz finite-difference time-domain solver producing A-scans and
    B-scans of a common-offset GPR survey.
"""

import logging
import math
from multiprocessing.pool import ThreadPool
from typing import Optional, Tuple

import numpy as np
from scipy import constants

from gprforge.configuration import Configuration
from gprforge.exceptions import NumericalBlowup, PointOutsideGrid
from gprforge.models import FieldState, MaterialGrid, Radargram, Scene, Trace, Waveform

log = logging.getLogger(__name__)

C0 = constants.c
EPS0 = constants.epsilon_0
MU0 = constants.mu_0
ETA0 = math.sqrt(MU0 / EPS0)

PML_CELLS = 10
PML_ORDER = 3
AIR_CELLS = 20
DEFAULT_COURANT = 0.95
BLOWUP_LIMIT = 1e30
CHECK_EVERY = 16

Point = Tuple[float, float]


def ricker(t, fc: float, delay: float):
    # Second derivative of a Gaussian, unit peak at t = delay
    arg = (np.pi * fc * (np.asarray(t, dtype=np.float64) - delay)) ** 2
    out = (1.0 - 2.0 * arg) * np.exp(-arg)
    return float(out) if np.ndim(out) == 0 else out


def source_delay(fc: float) -> float:
    return 1.5 / fc


def cfl_timestep(dx: float, dz: float, courant: float = DEFAULT_COURANT) -> float:
    return courant / (C0 * math.sqrt(1.0 / dx**2 + 1.0 / dz**2))


def rasterize_scene(s: Scene) -> MaterialGrid:
    # Last object covering a cell centre wins; pec cells go to the mask
    dx, dz = s.cell
    nx = int(round(s.domain[0] / dx))
    nz = int(round(s.domain[1] / dz))
    background = s.halfspace
    grid = MaterialGrid.uniform(nx, nz, dx, dz, background.eps_r, background.sigma)

    xc = (np.arange(nx) + 0.5)[:, None] * dx
    zc = (np.arange(nz) + 0.5)[None, :] * dz
    for obj in s.objects:
        if obj.is_cylinder:
            x0, z0, r = obj.geometry
            covered = (xc - x0) ** 2 + (zc - z0) ** 2 <= r**2
        else:
            x1, z1, x2, z2 = obj.geometry
            covered = (xc >= x1) & (xc <= x2) & (zc >= z1) & (zc <= z2)
        if obj.material == "pec":
            grid.pec_mask |= covered
            continue
        m = s.material(obj.material)
        grid.eps_r[covered] = m.eps_r
        grid.sigma[covered] = m.sigma
        grid.pec_mask[covered] = False

    return grid


def pml_depth_nodes(n: int, cells: int) -> np.ndarray:
    # Depth (in cells) of each cell centre inside the low/high absorbers
    i = np.arange(n)
    low = cells - i - 0.5
    high = i - (n - cells) + 0.5
    return np.clip(np.maximum(low, high), 0.0, None)


def pml_depth_faces(n: int, cells: int) -> np.ndarray:
    # Depth of the n-1 faces between neighbouring cells
    f = np.arange(n - 1)
    low = cells - 1.0 - f
    high = f + 1.0 - (n - cells)
    return np.clip(np.maximum(low, high), 0.0, None)


class YeeSolver(object):
    """Leapfrog stepper on the material grid padded with an air layer on top
    and a split-field PML on all four sides. Index (0, 0) of the padded
    arrays is the top-left PML corner; the outermost ring of Ez is held at
    zero."""

    def __init__(
        self,
        grid: MaterialGrid,
        dt: float,
        pml_cells: int = PML_CELLS,
        air_cells: int = AIR_CELLS,
        pml_order: int = PML_ORDER,
    ):
        self.grid = grid
        self.dt = dt
        self.pml_cells = p = pml_cells
        self.air_cells = a = air_cells

        # Pad: PML copies the adjacent material outward; air on top
        pad = ((p, p), (0, p))
        eps = np.pad(grid.eps_r, pad, mode="edge")
        sigma = np.pad(grid.sigma, pad, mode="edge")
        pec = np.pad(grid.pec_mask, pad, mode="constant")
        top = p + a
        self.eps_r = np.concatenate([np.ones((eps.shape[0], top)), eps], axis=1)
        self.sigma = np.concatenate([np.zeros((eps.shape[0], top)), sigma], axis=1)
        self.pec = np.concatenate([np.zeros((eps.shape[0], top), dtype=bool), pec], axis=1)
        self.nx, self.nz = self.eps_r.shape
        self.origin = (p, top)

        self.state = FieldState.zeros(self.nx, self.nz)
        self._build_coefficients(pml_order)

    def _build_coefficients(self, order: int):
        dt, dx, dz, p = self.dt, self.grid.dx, self.grid.dz, self.pml_cells
        eps = EPS0 * self.eps_r

        # Normalized absorber loss kappa = sigma / eps [1/s], matched in H
        def kappa(depth, spacing, eps_r):
            if p == 0:
                return np.zeros_like(depth * eps_r)
            sigma_max = 0.8 * (order + 1) / (ETA0 * spacing)
            return (sigma_max / EPS0) * (depth / p) ** order * np.sqrt(eps_r)

        kx = kappa(pml_depth_nodes(self.nx, p)[:, None], dx, self.eps_r)
        kz = kappa(pml_depth_nodes(self.nz, p)[None, :], dz, self.eps_r)

        def e_coeffs(k):
            loss = (self.sigma + k * eps) * dt / (2.0 * eps)
            ca = (1.0 - loss) / (1.0 + loss)
            cb = (dt / eps) / (1.0 + loss)
            ca[self.pec] = 0.0
            cb[self.pec] = 0.0
            return ca[1:-1, 1:-1], cb[1:-1, 1:-1]

        self.ezx_a, ezx_b = e_coeffs(kx)
        self.ezz_a, ezz_b = e_coeffs(kz)
        self.ezx_b = ezx_b / dx
        self.ezz_b = ezz_b / dz

        # Faces use the mean permittivity of their two cells
        eps_xf = 0.5 * (self.eps_r[1:, :] + self.eps_r[:-1, :])
        eps_zf = 0.5 * (self.eps_r[:, 1:] + self.eps_r[:, :-1])
        khy = kappa(pml_depth_faces(self.nx, p)[:, None], dx, eps_xf)
        khx = kappa(pml_depth_faces(self.nz, p)[None, :], dz, eps_zf)
        self.hy_a = (1.0 - khy * dt / 2.0) / (1.0 + khy * dt / 2.0)
        self.hy_b = (dt / MU0) / (1.0 + khy * dt / 2.0) / dx
        self.hx_a = (1.0 - khx * dt / 2.0) / (1.0 + khx * dt / 2.0)
        self.hx_b = (dt / MU0) / (1.0 + khx * dt / 2.0) / dz

    def node(self, point: Point) -> Tuple[int, int]:
        """Padded-grid cell holding a point; z = 0 is the air row just
        above the surface, negative z lies in the air layer. Points in the
        PML are rejected."""
        x, z = point
        edge = max(self.pml_cells, 1)
        i = self.origin[0] + math.floor(x / self.grid.dx + 1e-9)
        j = self.origin[1] + math.ceil(z / self.grid.dz - 1e-9) - 1
        if not (edge <= i < self.nx - edge and edge <= j < self.nz - edge):
            raise PointOutsideGrid(subject=point)
        return i, j

    @property
    def ez(self) -> np.ndarray:
        return self.state.ez

    def step(self):
        f = self.state
        ez = f.ezx + f.ezz
        f.hy *= self.hy_a
        f.hy += self.hy_b * (ez[1:, :] - ez[:-1, :])
        f.hx *= self.hx_a
        f.hx -= self.hx_b * (ez[:, 1:] - ez[:, :-1])

        inner = (slice(1, -1), slice(1, -1))
        f.ezx[inner] *= self.ezx_a
        f.ezx[inner] += self.ezx_b * (f.hy[1:, 1:-1] - f.hy[:-1, 1:-1])
        f.ezz[inner] *= self.ezz_a
        f.ezz[inner] -= self.ezz_b * (f.hx[1:-1, 1:] - f.hx[1:-1, :-1])
        f.step += 1

    def inject(self, node: Tuple[int, int], value: float):
        # Soft current source; PEC cells stay clamped
        i, j = node
        if self.pec[i, j]:
            return
        value /= self.eps_r[i, j]
        self.state.ezx[i, j] += 0.5 * value
        self.state.ezz[i, j] += 0.5 * value

    def sample(self, node: Tuple[int, int]) -> float:
        i, j = node
        return float(self.state.ezx[i, j] + self.state.ezz[i, j])

    def max_abs(self) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(np.max(np.abs(self.state.ezx + self.state.ezz)))
        return value


def check_blowup(value: float, step: int):
    if not math.isfinite(value) or abs(value) > BLOWUP_LIMIT:
        raise NumericalBlowup(step=step, value=value)


def run_ascan(
    grid: MaterialGrid,
    tx: Point,
    rx: Point,
    waveform: Waveform,
    time_window: float,
    courant: float = DEFAULT_COURANT,
    pml_cells: int = PML_CELLS,
    air_cells: int = AIR_CELLS,
) -> Trace:
    # Sample n is Ez at rx after the E update of step n; sample 0 = source start
    dt = cfl_timestep(grid.dx, grid.dz, courant)
    n_steps = math.ceil(time_window / dt - 1e-9)
    solver = YeeSolver(grid, dt, pml_cells, air_cells)
    tx_node, rx_node = solver.node(tx), solver.node(rx)
    pulse = waveform.amplitude * ricker(
        np.arange(n_steps) * dt, waveform.center_freq, source_delay(waveform.center_freq)
    )

    samples = np.zeros(n_steps)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            solver.step()
            solver.inject(tx_node, pulse[n])
            samples[n] = solver.sample(rx_node)
            check_blowup(samples[n], n)
            if n % CHECK_EVERY == 0:
                check_blowup(solver.max_abs(), n)

    return Trace(samples, dt, 0.0)


def pick_first_break(samples, fraction: float = 0.05) -> Optional[int]:
    """Index of the first sample whose magnitude exceeds `fraction` of the
    trace maximum; None for an all-zero trace."""
    mag = np.abs(np.asarray(samples, dtype=np.float64))
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return None
    return int(np.argmax(mag > fraction * peak))


def run_bscan(
    s: Scene,
    courant: float = DEFAULT_COURANT,
    threads: Optional[int] = None,
    grid: Optional[MaterialGrid] = None,
) -> Radargram:
    # One A-scan per scan position; traces are independent
    grid = grid if grid is not None else rasterize_scene(s)
    positions = s.positions()
    threads = threads or Configuration().threads

    def one_trace(index):
        x = positions[index]
        try:
            trace = run_ascan(
                grid,
                (x, s.source_depth),
                (x + s.rx_offset, s.source_depth),
                s.waveform,
                s.time_window,
                courant,
            )
        except NumericalBlowup as e:
            raise NumericalBlowup(step=e.step, trace_index=index, value=e.value)
        log.debug(f"Trace {index + 1}/{len(positions)} at x={x:.3f} m done")
        return index, trace

    if threads > 1 and len(positions) > 1:
        with ThreadPool(processes=min(threads, len(positions))) as pool:
            results = dict(pool.imap_unordered(one_trace, range(len(positions))))
    else:
        results = dict(one_trace(i) for i in range(len(positions)))

    traces = [results[i] for i in range(len(positions))]
    log.info(
        f"B-scan: {len(traces)} traces x {len(traces[0].samples)} samples, "
        f"dt={traces[0].dt:.4e} s"
    )
    return Radargram(
        np.stack([t.samples for t in traces]).astype(np.float32),
        traces[0].dt,
        s.trace_spacing(),
        0.0,
    )
