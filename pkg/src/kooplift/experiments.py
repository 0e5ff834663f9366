"""Benchmark scenarios shared by the command line and the acceptance suite.

Each scenario fixes one training dataset (its own seed) and varies landmark
draws and, where relevant, test initial conditions across the requested seeds,
so repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, LandmarkSet, LandmarkStrategy, build_pairs, derived_rng, sample_landmarks
from .identify import ForecastDivergence, KoopmanModel, NystromLift, ThinPlateLift, fit, forecast
from .kernels import KernelFamily, KernelSpec
from .lqr import LqrWeights, solve_model_dare
from .numerics import RankTolerance
from .simulate import (
    CollectionProtocol,
    SquareWave,
    SystemSpec,
    UniformBall,
    UniformBox,
    UniformIID,
    ZeroInput,
    cubic_system,
    duffing_system,
    collect_training_data,
    metric_rmse_pct,
    metric_rmse_u_pct,
    rollout_closed_loop,
    rollout_open_loop,
    rollout_policy,
    true_optimal_control_cubic,
)
from . import theory

MATERN_UNIT = KernelSpec(KernelFamily.Matern52, lengthscale=1.0, variance=1.0)

__all__ = [
    "MATERN_UNIT",
    "seed_map",
    "cubic_training_data",
    "duffing_training_data",
    "fit_nystrom",
    "fit_exact",
    "cubic_cost_experiment",
    "cubic_rmse_experiment",
    "duffing_stabilization_experiment",
    "duffing_forecast_experiment",
    "fixture_dataset",
    "gap_sweep",
    "riccati_objective_sweep",
]


def seed_map(fn, seeds, workers: int = 1) -> list:
    """Apply fn to each seed, optionally on a bounded thread pool.

    Results come back in seed order, so the output is identical for any worker
    count; each seed's work is self-contained and RNG-derived from its seed.
    """
    seeds = list(seeds)
    if workers <= 1:
        return [fn(s) for s in seeds]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def cubic_training_data(seed: int = 0) -> tuple[SystemSpec, Dataset]:
    """20 excitation trajectories of 2 s at dt = 0.01, u and x0 uniform on [-1, 1]."""
    sys = cubic_system(dt=0.01)
    protocol = CollectionProtocol(
        n_traj=20,
        duration=2.0,
        input_law=UniformIID(-1.0, 1.0),
        init_law=UniformBox(-1.0, 1.0),
        seed=seed,
    )
    return sys, build_pairs(collect_training_data(sys, protocol))


def duffing_training_data(seed: int = 0) -> tuple[SystemSpec, Dataset]:
    """100 unforced 5 s trajectories plus 100 forced 2 s trajectories, unit-ball starts."""
    sys = duffing_system(dt=0.01)
    unforced = CollectionProtocol(
        n_traj=100, duration=5.0, input_law=ZeroInput(), init_law=UniformBall(1.0), seed=seed
    )
    forced = CollectionProtocol(
        n_traj=100,
        duration=2.0,
        input_law=UniformIID(-1.0, 1.0),
        init_law=UniformBall(1.0),
        seed=seed + 1,
    )
    trajs = collect_training_data(sys, unforced) + collect_training_data(sys, forced)
    return sys, build_pairs(trajs)


def fit_nystrom(
    ds: Dataset,
    m: int,
    seed: int,
    gamma: float = 1e-6,
    kernel: KernelSpec = MATERN_UNIT,
    strategy: LandmarkStrategy = LandmarkStrategy.SharedUniform,
) -> KoopmanModel:
    landmarks = sample_landmarks(ds, m, strategy, seed=seed)
    return fit(ds, NystromLift(kernel, landmarks), gamma=gamma, lam=gamma)


def fit_exact(ds: Dataset, gamma: float = 1e-6, kernel: KernelSpec = MATERN_UNIT) -> KoopmanModel:
    """Landmarks = the full paired training set: the uncompressed special case."""
    landmarks = LandmarkSet(ds.X.copy(), ds.Y.copy(), seed=-1)
    return fit(ds, NystromLift(kernel, landmarks), gamma=gamma, lam=gamma)


def _cubic_cost(sys, model, sol, x0=0.9, max_steps=10_000) -> tuple[float, bool]:
    res = rollout_closed_loop(
        sys,
        model,
        sol,
        np.array([x0]),
        T_steps=max_steps,
        Qprime=np.eye(1),
        R=np.eye(1),
        stop_norm=1e-6,
    )
    return res.total_cost, res.diverged


@dataclass
class CubicCostResult:
    nystrom_costs: list[float]
    exact_cost: float
    optimal_cost: float
    diverged: int

    @property
    def median_cost(self) -> float:
        return float(np.median(self.nystrom_costs))


def cubic_cost_experiment(
    n_seeds: int = 50,
    m: int = 100,
    gamma: float = 1e-6,
    x0: float = 0.9,
    data_seed: int = 0,
    exact: bool = True,
    workers: int = 1,
) -> CubicCostResult:
    """Truncated closed-loop quadratic costs of the learned regulators.

    The cost is the plain running sum of x_t^2 + u_t^2 until ||x|| < 1e-6 or
    10^4 steps, reported for the compressed models across landmark seeds, the
    uncompressed model, and the known optimal feedback.
    """
    sys, ds = cubic_training_data(seed=data_seed)

    def one(seed: int):
        model = fit_nystrom(ds, m, seed, gamma)
        sol = solve_model_dare(model, np.eye(1), np.eye(1))
        return _cubic_cost(sys, model, sol, x0)

    outcomes = seed_map(one, range(n_seeds), workers)
    costs = [c for c, _ in outcomes]
    diverged = sum(int(bad) for _, bad in outcomes)
    if exact:
        model_ex = fit_exact(ds, gamma)
        sol_ex = solve_model_dare(model_ex, np.eye(1), np.eye(1))
        exact_cost, _ = _cubic_cost(sys, model_ex, sol_ex, x0)
    else:
        exact_cost = math.nan
    opt = rollout_policy(
        sys,
        lambda x: np.array([true_optimal_control_cubic(x)]),
        np.array([x0]),
        T_steps=10_000,
        Qprime=np.eye(1),
        R=np.eye(1),
        stop_norm=1e-6,
    )
    return CubicCostResult(costs, exact_cost, opt.total_cost, diverged)


def cubic_rmse_experiment(
    n_seeds: int = 50,
    m: int = 100,
    gamma: float = 1e-6,
    x0: float = 0.9,
    T: int = 200,
    data_seed: int = 0,
    workers: int = 1,
) -> list[float]:
    """Control-signal mismatch against the known optimal regulator, in percent.

    Both controllers run in closed loop on the true system from the same start;
    the metric compares the two control sequences over T steps.
    """
    sys, ds = cubic_training_data(seed=data_seed)
    opt = rollout_policy(
        sys,
        lambda x: np.array([true_optimal_control_cubic(x)]),
        np.array([x0]),
        T_steps=T,
    )
    u_opt = opt.controls

    def one(seed: int) -> float:
        model = fit_nystrom(ds, m, seed, gamma)
        sol = solve_model_dare(model, np.eye(1), np.eye(1))
        res = rollout_closed_loop(sys, model, sol, np.array([x0]), T_steps=T)
        return metric_rmse_u_pct(res.controls, u_opt)

    return seed_map(one, range(n_seeds), workers)


@dataclass
class StabilizationResult:
    reached: list[bool]
    diverged: int
    min_norms: list[float]

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.reached))


def duffing_stabilization_experiment(
    n_seeds: int = 50,
    m: int = 20,
    gamma: float = 1e-6,
    x0=(-0.5, 0.0),
    horizon_s: float = 5.0,
    target_norm: float = 0.05,
    data_seed: int = 0,
    workers: int = 1,
) -> StabilizationResult:
    """Regulate the oscillator to the origin with a small compressed model."""
    sys, ds = duffing_training_data(seed=data_seed)
    T = int(round(horizon_s / sys.dt))

    def one(seed: int):
        model = fit_nystrom(ds, m, seed, gamma)
        sol = solve_model_dare(model, np.eye(2), np.eye(1))
        res = rollout_closed_loop(sys, model, sol, np.array(x0), T_steps=T)
        norms = np.linalg.norm(res.states, axis=1)
        return float(np.min(norms)), res.diverged

    outcomes = seed_map(one, range(n_seeds), workers)
    min_norms = [mn for mn, _ in outcomes]
    reached = [mn < target_norm for mn in min_norms]
    diverged = sum(int(bad) for _, bad in outcomes)
    return StabilizationResult(reached, diverged, min_norms)


def _square_wave_controls(T: int, dt: float, amplitude: float = 1.0, freq: float = 3.33) -> np.ndarray:
    law = SquareWave(amplitude=amplitude, frequency=freq)
    return np.array([law.sample(None, k * dt, 1) for k in range(T)])


def duffing_forecast_experiment(
    m_list=(10, 20, 40, 80),
    n_seeds: int = 50,
    gamma: float = 1e-6,
    horizon_s: float = 2.0,
    data_seed: int = 0,
    workers: int = 1,
) -> dict:
    """Open-loop forecast error under square-wave forcing, compressed kernel
    lift versus the thin-plate-spline baseline with matched feature counts.

    Returns per-m lists of percent RMSE, with non-finite forecasts recorded as
    +inf, plus divergence counters.  Landmark draws are nested across m for a
    fixed seed, so per-seed errors are directly comparable along the sweep.
    """
    sys, ds = duffing_training_data(seed=data_seed)
    T = int(round(horizon_s / sys.dt))
    U = _square_wave_controls(T, sys.dt)

    def one(seed: int):
        rng_ic = derived_rng("test-ic", seed)
        x0 = UniformBall(1.0).sample(rng_ic, 2)
        truth = rollout_open_loop(sys, x0, U)
        true_states = truth.states[1:]
        rng_centers = derived_rng("tp-centers", seed)
        centers_pool = np.array([UniformBall(1.0).sample(rng_centers, 2) for _ in range(max(m_list))])
        row = {}
        for m in m_list:
            model = fit_nystrom(ds, m, seed, gamma)
            try:
                pred = forecast(model, x0, U)
                ny = metric_rmse_pct(true_states, pred)
            except ForecastDivergence:
                ny = math.inf
            tp_model = fit(ds, ThinPlateLift(centers_pool[:m]), gamma=gamma, lam=gamma)
            try:
                pred = forecast(tp_model, x0, U)
                tp = metric_rmse_pct(true_states, pred)
            except ForecastDivergence:
                tp = math.inf
            row[m] = (ny, tp)
        return row

    per_seed = seed_map(one, range(n_seeds), workers)
    results: dict = {
        "m_list": list(m_list),
        "nystrom": {m: [row[m][0] for row in per_seed] for m in m_list},
        "thinplate": {m: [row[m][1] for row in per_seed] for m in m_list},
    }
    results["nystrom_diverged"] = sum(
        1 for m in m_list for v in results["nystrom"][m] if not math.isfinite(v)
    )
    results["thinplate_diverged"] = sum(
        1 for m in m_list for v in results["thinplate"][m] if not math.isfinite(v)
    )
    return results


# ---------------------------------------------------------------------------
# Rate-study fixtures and sweeps
# ---------------------------------------------------------------------------


def fixture_dataset(n: int = 500, seed: int = 7) -> tuple[SystemSpec, Dataset]:
    """Fixed cubic-system dataset with exactly n pairs for the rate studies."""
    sys = cubic_system(dt=0.01)
    per_traj = 50
    protocol = CollectionProtocol(
        n_traj=n // per_traj,
        duration=per_traj * sys.dt,
        input_law=UniformIID(-1.0, 1.0),
        init_law=UniformBox(-1.0, 1.0),
        seed=seed,
    )
    ds = build_pairs(collect_training_data(sys, protocol))
    if ds.n != n:
        raise RuntimeError(f"fixture produced {ds.n} pairs, expected {n}")
    return sys, ds


def gap_sweep(
    ds: Dataset,
    m_list=(10, 20, 40, 80, 160),
    n_seeds: int = 50,
    gamma: float = 1e-6,
    delta: float = 0.05,
    kernel: KernelSpec = MATERN_UNIT,
    tol: RankTolerance = RankTolerance(),
    workers: int = 1,
) -> tuple[list[theory.BoundReport], float]:
    """Measured operator gaps across landmark draws, next to the m-rate bound.

    Returns the sweep rows and the norm of the uncompressed operator (the
    yardstick for deciding whether the bound is informative).
    """
    G = theory.build_exact_operator(ds, kernel, gamma)
    norm_G = theory.operator_norm(G, tol)
    rows = []
    for m in m_list:
        bound = theory.nystrom_gap_bound(kernel.kappa, gamma, m, delta)

        def one(seed: int) -> theory.BoundReport:
            lm = sample_landmarks(ds, m, LandmarkStrategy.IndependentUniform, seed=seed)
            G_ny = theory.build_nystrom_operator(ds, kernel, gamma, lm, tol)
            gap = theory.operator_gap_norm(G, G_ny, tol)
            return theory.BoundReport(
                m=m,
                seed=seed,
                gamma=gamma,
                delta=delta,
                kappa=kernel.kappa,
                empirical_gap=gap,
                gap_bound=bound,
                proj_in=theory.projection_error(ds, "input", kernel, lm, tol),
                proj_out=theory.projection_error(ds, "output", kernel, lm, tol),
                norm_G=norm_G,
            )

        rows.extend(seed_map(one, range(n_seeds), workers))
    return rows, norm_G


def riccati_objective_sweep(
    ds: Dataset,
    m_list=(10, 20, 40, 80, 160),
    n_seeds: int = 20,
    gamma: float = 1e-6,
    delta: float = 0.05,
    x0: float = 0.9,
    kernel: KernelSpec = MATERN_UNIT,
    tol: RankTolerance = RankTolerance(),
    workers: int = 1,
) -> list[theory.BoundReport]:
    """Riccati-solution and certainty-equivalence objective gaps across seeds.

    The compressed model's regulator is synthesized against the exact
    surrogate's state weight transported into its coordinates, so both Riccati
    equations weigh the same operator on the lifted space.
    """
    R = np.eye(1)
    G = theory.build_exact_operator(ds, kernel, gamma)
    norm_G = theory.operator_norm(G, tol)
    exact_model = fit_exact(ds, gamma, kernel)
    Q_exact = exact_model.C.T @ exact_model.C
    exact_sol = solve_model_dare(exact_model, np.eye(ds.d), R, rho_cap=0.9995)
    norms = theory.exact_model_norms(G, exact_model, exact_sol, tol)
    rows = []
    for m in m_list:
        bound = theory.nystrom_gap_bound(kernel.kappa, gamma, m, delta)

        def one(seed: int) -> theory.BoundReport:
            lm = sample_landmarks(ds, m, LandmarkStrategy.IndependentUniform, seed=seed)
            G_ny = theory.build_nystrom_operator(ds, kernel, gamma, lm, tol)
            eps = theory.operator_gap_norm(G, G_ny, tol)
            ny_model = fit(ds, NystromLift(kernel, lm), gamma=gamma, lam=gamma)
            Q_ny = theory.transport_weights(exact_model, Q_exact, ny_model)
            ny_sol = solve_model_dare(ny_model, weights=LqrWeights(Q_ny, R), rho_cap=0.9995)
            ric = theory.riccati_gap(exact_model, exact_sol, ny_model, ny_sol, norms, R, eps, tol)
            obj = theory.objective_gap(
                exact_model,
                exact_sol,
                ny_model,
                ny_sol,
                norms,
                Q_exact,
                R,
                np.array([x0]),
                g_eps=ric.bound,
                riccati_precondition_ok=ric.precondition_ok,
            )
            return theory.BoundReport(
                m=m,
                seed=seed,
                gamma=gamma,
                delta=delta,
                kappa=kernel.kappa,
                empirical_gap=eps,
                gap_bound=bound,
                proj_in=theory.projection_error(ds, "input", kernel, lm, tol),
                proj_out=theory.projection_error(ds, "output", kernel, lm, tol),
                riccati_gap=ric.gap,
                riccati_bound=ric.bound,
                riccati_precondition=ric.precondition_ok,
                objective_gap=obj.gap,
                objective_bound=obj.bound,
                objective_precondition=obj.precondition_ok,
                Gamma=obj.Gamma,
                tau=norms.tau,
                zeta=norms.zeta,
                sigma_min_P=norms.sigma_min_P,
                norm_G=norm_G,
            )

        rows.extend(seed_map(one, range(n_seeds), workers))
    return rows
