"""One function per experiment kind.

Each function receives a validated :class:`ExperimentConfig` and a
:class:`Context` and returns an :class:`Outcome`: the reports plus the
tables to write.  Every table row starts with the provenance columns
``n, h, method, seed, path_index``.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import default_method, simulate_coupled, simulate_exits, simulate_grids
from ..errors import ConfigError
from ..exits import method_code, records_from_batch
from ..models import constant_model, get_model, get_observable
from ..reference import (exact_two_point, load_reference, sample_stopped_sigma_bm,
                         save_reference)
from ..rng import StreamKey, derive_seed
from ..scaling import (integrand_scale, remainder_sup_batch, scaled_sup_batch,
                       scaled_values_batch, scaling_identity_holds, truncated_martingale_batch)
from ..stats import (TestReport, chi2_sphere_uniformity, ks_point_mass, ks_two_sample,
                     mean_with_ci, tightness_diagnostic, wasserstein)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

@dataclass
class Table:
    """Column-oriented CSV table; ``columns`` maps header to a 1-d array."""

    columns: dict = field(default_factory=dict)

    def extend(self, other: "Table"):
        if not self.columns:
            self.columns = {k: [v] for k, v in other.columns.items()}
            return
        if list(self.columns) != list(other.columns):
            raise ValueError("table headers differ")
        for k, v in other.columns.items():
            self.columns[k].append(v)

    def finish(self):
        return {k: np.concatenate([np.atleast_1d(x) for x in v]) if isinstance(v, list)
                else np.atleast_1d(v) for k, v in self.columns.items()}


@dataclass
class Outcome:
    reports: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)   # file name -> Table


@dataclass
class Context:
    out_dir: Path
    workers: int = 1
    backend: str = None


class Setup:
    """Catalog objects and derived settings shared by the experiments."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = get_model(cfg.model)
        self.obs = get_observable(cfg.observable, self.model.dimension)
        self.d = self.model.dimension
        self.method = cfg.method or default_method(self.d)
        method_code(self.method, self.d)

    def seed(self, tag):
        return derive_seed(self.cfg.master_seed, f"{self.cfg.experiment}/{tag}")

    def step(self, n):
        return self.cfg.h0 / n

    def meta(self, n, h, seed, method=None, **extra):
        out = {"n": int(n), "h": float(h), "method": method or self.method, "seed": int(seed)}
        out.update(extra)
        return out

    def simulate(self, n, ctx, retain=False):
        r = 1.0 / math.sqrt(n)
        h = self.step(n)
        seed = self.seed(f"n={n}")
        log.info("%s: n=%d h=%g paths=%d", self.cfg.experiment, n, h, self.cfg.paths)
        batch = simulate_exits(self.model, self.model.initial, r, h, self.method, seed,
                               np.arange(self.cfg.paths), refine=self.cfg.refine,
                               retain=retain, workers=ctx.workers, backend=ctx.backend, n=n)
        return batch, r, h, seed

    def provenance(self, n, h, seed, paths, method=None):
        k = len(paths)
        return {
            "n": np.full(k, int(n)),
            "h": np.full(k, float(h)),
            "method": np.full(k, method or self.method, dtype=object),
            "seed": np.full(k, int(seed), dtype=np.uint64),
            "path_index": np.asarray(paths, dtype=np.int64),
        }

    def sigma_x(self):
        return np.asarray(self.model.diffusion(self.model.initial[None, :]))[0]

    def jacobian_x(self):
        j = np.asarray(self.obs.jacobian(self.model.initial[None, :]))[0]
        return j.reshape(self.obs.codomain, self.d)

    def limit_reference(self, ctx):
        """Draws of ``J_f(x) sigma(x) W`` at the unit-ball exit of ``sigma(x) W``.

        In d = 1 the exit position of ``sigma(x) W`` is a fair sign, so the
        exact two-point law is used; otherwise a fine-step simulation.
        """
        cfg = self.cfg
        seed = self.seed("reference")
        if self.d == 1:
            ref = exact_two_point(cfg.reference_paths, StreamKey(seed, 0))
        else:
            ref = self.stopped_reference(ctx)
        return ref.values @ self.jacobian_x().T, seed

    def stopped_reference(self, ctx):
        cfg = self.cfg
        seed = self.seed("reference")
        sig = self.sigma_x()
        tag = hashlib.blake2b(
            repr((sig.tolist(), cfg.reference_paths, cfg.reference_step, seed)).encode(),
            digest_size=6).hexdigest()
        path = ctx.out_dir / f"reference_stopped_sigma_bm_{tag}.csv"
        if path.exists():
            return load_reference(path)
        log.info("reference: %d draws at h=%g", cfg.reference_paths, cfg.reference_step)
        ref = sample_stopped_sigma_bm(sig, cfg.reference_paths, cfg.reference_step,
                                      StreamKey(seed, 0), workers=ctx.workers,
                                      backend=ctx.backend)
        save_reference(ref, path)
        return ref


def _max_increase(values):
    v = np.asarray(values, dtype=float)
    return float(np.max(np.diff(v))) if len(v) > 1 else 0.0


def _exit_values(setup, n, batch):
    fx = np.asarray(setup.obs(setup.model.initial)).reshape(-1)
    return math.sqrt(n) * (np.asarray(setup.obs(batch.exit_state)).reshape(len(batch), -1) - fx)


# -- experiments ---------------------------------------------------------------

def run_example1(cfg, ctx):
    s = Setup(cfg)
    out = Outcome()
    rows = Table()
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx)
        ev = _exit_values(s, n, batch)[:, 0]
        meta = s.meta(n, h, seed)
        out.reports.append(TestReport("sign_fraction", np.mean(ev > 0), None, cfg.sign_tol,
                                      "within", (len(ev), 0), meta, target=0.5))
        out.reports.append(TestReport("mean_abs_exit_value", np.mean(np.abs(ev)), None,
                                      cfg.abs_tol, "within", (len(ev), 0), meta, target=1.0))
        cols = s.provenance(n, h, seed, batch.paths)
        cols.update(exit_time=batch.exit_time, exit_time_scaled=n * batch.exit_time,
                    exit_value=ev)
        rows.extend(Table(cols))
    out.tables["paths.csv"] = rows
    return out


def _oracle_mean(setup):
    ks = setup.model.kernel
    if ks is None or ks.kind != 0 or ks.kappa != 0.0:
        raise ConfigError("the exit-time mean oracle needs a driftless constant-diffusion model",
                          field="mean_oracle")
    return 1.0 / float(np.trace(ks.sigma @ ks.sigma.T))


def run_exit_time_law(cfg, ctx):
    s = Setup(cfg)
    out = Outcome()
    rows = Table()
    ref = s.stopped_reference(ctx) if cfg.reference_paths > 0 else None
    target = _oracle_mean(s) if cfg.mean_oracle else None
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx, retain=cfg.check_identity)
        scaled = n * batch.exit_time
        meta = s.meta(n, h, seed)
        if ref is not None:
            out.reports.append(ks_two_sample(
                scaled, ref.times, cfg.ks_p, dict(meta, reference_step=cfg.reference_step),
                name="ks_scaled_exit_time"))
        cols = s.provenance(n, h, seed, batch.paths)
        cols.update(exit_time=batch.exit_time, exit_time_scaled=scaled)
        if cfg.check_identity:
            recs = records_from_batch(batch, s.model.initial, r, s.method)
            ok = np.array([scaling_identity_holds(n, rec) for rec in recs])
            out.reports.append(TestReport("scaling_identity_violations",
                                          np.count_nonzero(~ok), None, 0.0, "stat_at_most",
                                          (len(ok), 0), meta))
            cols["identity_ok"] = ok.astype(np.int64)
        if target is not None:
            mean, half = mean_with_ci(scaled)
            out.reports.append(TestReport("mean_scaled_exit_time", mean, None,
                                          cfg.mean_rtol * target, "within", (len(scaled), 0),
                                          dict(meta, ci95_half_width=half), target=target))
        rows.extend(Table(cols))
    out.tables["paths.csv"] = rows
    return out


def run_fdd_grid(cfg, ctx):
    s = Setup(cfg)
    if not cfg.times:
        raise ConfigError("fdd_grid needs a time grid", field="times")
    out = Outcome()
    rows = Table()
    ref, ref_seed = s.limit_reference(ctx)
    dist = {}
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx, retain=True)
        vals, ev, scaled = scaled_values_batch(n, s.obs, batch, s.model.initial, cfg.times)
        cols = s.provenance(n, h, seed, batch.paths)
        cols["exit_time_scaled"] = scaled
        for j, t in enumerate(cfg.times):
            for k in range(vals.shape[2]):
                meta = s.meta(n, h, seed, t=t, component=k, reference_seed=ref_seed)
                rep = ks_two_sample(vals[:, j, k], ref[:, k], cfg.ks_p, meta, name="ks_fdd")
                rep.declared = False
                out.reports.append(rep)
                out.reports.append(wasserstein(vals[:, j, k], ref[:, k], cfg.ks_max, meta,
                                               name="wasserstein_fdd"))
                dist.setdefault((j, k), []).append(rep.statistic)
                cols[f"y{j}_{k}"] = vals[:, j, k]
        for k in range(ev.shape[1]):
            cols[f"exit_value_{k}"] = ev[:, k]
        rows.extend(Table(cols))
    last = cfg.n_grid[-1]
    for (j, k), ds in sorted(dist.items()):
        meta = {"n": list(cfg.n_grid), "h": [cfg.h0 / n for n in cfg.n_grid],
                "method": s.method, "seed": cfg.master_seed, "t": cfg.times[j], "component": k}
        out.reports.append(TestReport("fdd_ks_monotone", _max_increase(ds), None, 0.0,
                                      "stat_at_most", (cfg.paths, cfg.reference_paths), meta))
        out.reports.append(TestReport("fdd_ks_final", ds[-1], None, cfg.ks_max, "stat_at_most",
                                      (cfg.paths, cfg.reference_paths),
                                      dict(meta, n=last, h=cfg.h0 / last)))
    out.tables["paths.csv"] = rows
    return out


def run_non_tightness(cfg, ctx):
    s = Setup(cfg)
    out = Outcome()
    rows = Table()
    times = cfg.times if cfg.times else [0.0]
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx, retain=True)
        vals, _, scaled = scaled_values_batch(n, s.obs, batch, s.model.initial, times)
        y0, _, _ = scaled_values_batch(n, s.obs, batch, s.model.initial, [0.0])
        meta = s.meta(n, h, seed, delta=cfg.delta)
        out.reports.append(TestReport("y0_nonzero_paths", np.count_nonzero(np.any(y0 != 0, axis=(1, 2))),
                                      None, 0.0, "stat_at_most", (len(batch), 0), meta))
        sups = scaled_sup_batch(n, s.obs, s.model, batch, cfg.delta)
        out.reports.append(tightness_diagnostic(sups, cfg.eps, cfg.exceed_min, "at_least", meta,
                                                name="exceedance_stopped_scaled"))
        cols = s.provenance(n, h, seed, batch.paths)
        cols["exit_time_scaled"] = scaled
        for j in range(len(times)):
            for k in range(vals.shape[2]):
                cols[f"y{j}_{k}"] = vals[:, j, k]
        cols["sup_delta"] = sups
        rows.extend(Table(cols))
    out.tables["paths.csv"] = rows
    if cfg.control_paths > 0:
        bm = constant_model(np.eye(s.d), name=f"bm{s.d}")
        seed = s.seed("control")
        states, _ = simulate_grids(bm, cfg.control_delta, cfg.control_step, seed,
                                   np.arange(cfg.control_paths), workers=ctx.workers,
                                   backend=ctx.backend)
        sups = np.max(np.linalg.norm(states, axis=2), axis=1)
        meta = {"n": 1, "h": cfg.control_step, "method": "grid", "seed": seed,
                "delta": cfg.control_delta}
        out.reports.append(tightness_diagnostic(sups, cfg.eps, cfg.control_max, "at_most", meta,
                                                name="exceedance_unstopped_control"))
        cols = {"n": np.ones(len(sups), dtype=np.int64),
                "h": np.full(len(sups), cfg.control_step),
                "method": np.full(len(sups), "grid", dtype=object),
                "seed": np.full(len(sups), seed, dtype=np.uint64),
                "path_index": np.arange(len(sups)), "sup_delta": sups}
        out.tables["control.csv"] = Table(cols)
    return out


def run_sphere_uniformity(cfg, ctx):
    s = Setup(cfg)
    if s.d != 2:
        raise ConfigError("sphere_uniformity is implemented for d = 2", field="model")
    out = Outcome()
    rows = Table()
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx)
        z = math.sqrt(n) * (batch.exit_state - s.model.initial)
        norms = np.linalg.norm(z, axis=1)
        meta = s.meta(n, h, seed)
        out.reports.append(chi2_sphere_uniformity(z, cfg.chi2_bins, cfg.chi2_p, metadata=meta))
        out.reports.append(ks_point_mass(norms, 1.0, 1e-9, cfg.ks_max, meta, name="ks_norm_vs_one"))
        cols = s.provenance(n, h, seed, batch.paths)
        cols.update(exit_time_scaled=n * batch.exit_time, z0=z[:, 0], z1=z[:, 1], norm=norms)
        rows.extend(Table(cols))
    out.tables["paths.csv"] = rows
    return out


def run_remainder_ucp(cfg, ctx):
    s = Setup(cfg)
    out = Outcome()
    rows = Table()
    fractions = []
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx, retain=True)
        sups = remainder_sup_batch(n, s.obs, s.model, batch, cfg.horizon)
        frac = float(np.mean(sups > cfg.remainder_eps))
        fractions.append(frac)
        meta = s.meta(n, h, seed, eps=cfg.remainder_eps, horizon=cfg.horizon,
                      max_sup=float(sups.max()))
        rep = TestReport("remainder_exceedance", frac, None, cfg.remainder_max, "stat_at_most",
                         (len(sups), 0), meta)
        rep.declared = n == cfg.n_grid[-1]
        out.reports.append(rep)
        cols = s.provenance(n, h, seed, batch.paths)
        cols.update(exit_time_scaled=n * batch.exit_time, remainder_sup=sups)
        rows.extend(Table(cols))
    meta = {"n": list(cfg.n_grid), "h": [cfg.h0 / n for n in cfg.n_grid], "method": s.method,
            "seed": cfg.master_seed}
    out.reports.append(TestReport("remainder_exceedance_monotone", _max_increase(fractions), None,
                                  0.0, "stat_at_most", (cfg.paths, 0), meta))
    out.tables["paths.csv"] = rows
    return out


def run_bias_study(cfg, ctx):
    s = Setup(cfg)
    if s.d != 1:
        raise ConfigError("bias_study couples coarse tracks in d = 1 only", field="model")
    n = cfg.n_grid[0]
    r = 1.0 / math.sqrt(n)
    steps = np.array(sorted(cfg.steps, reverse=True))
    h_fine = steps[-1] / cfg.fine_factor
    factors = np.rint(steps / h_fine).astype(np.int64)
    if np.any(np.abs(factors * h_fine - steps) > 1e-9 * steps):
        raise ConfigError("every step must be an integer multiple of the finest step / "
                          "fine_factor", field="steps")
    factors = np.concatenate([[1], factors])
    seed = s.seed(f"n={n}")
    log.info("bias_study: h_fine=%g factors=%s paths=%d", h_fine, factors.tolist(), cfg.paths)
    cb = simulate_coupled(s.model, s.model.initial, r, h_fine, factors, seed,
                          np.arange(cfg.paths), workers=ctx.workers, backend=ctx.backend)
    truth = cb.corrected[:, 0]
    out = Outcome()
    rows = Table()
    summary = Table()
    naive_bias, corr_bias = [], []
    for j, f in enumerate(factors):
        hj = float(h_fine * f)
        for name, col in (("naive", cb.naive[:, j]), ("bridge_corrected", cb.corrected[:, j])):
            cols = s.provenance(n, hj, seed, cb.paths, method=name)
            cols["exit_time"] = col
            rows.extend(Table(cols))
        if j == 0:
            continue
        dn = cb.naive[:, j] - truth
        dc = cb.corrected[:, j] - truth
        naive_bias.append(dn.mean())
        corr_bias.append(dc.mean())
        root = math.sqrt(len(dn))
        summary.extend(Table({"n": np.array([n]), "h": np.array([hj]),
                              "method": np.array(["naive+bridge_corrected"], dtype=object),
                              "seed": np.array([seed], dtype=np.uint64),
                              "reference_h": np.array([h_fine]),
                              "naive_bias": np.array([dn.mean()]),
                              "naive_stderr": np.array([dn.std(ddof=1) / root]),
                              "corrected_bias": np.array([dc.mean()]),
                              "corrected_stderr": np.array([dc.std(ddof=1) / root])}))
    naive_bias = np.array(naive_bias)
    corr_bias = np.array(corr_bias)
    meta = {"n": n, "h": steps.tolist(), "method": "naive", "seed": seed, "reference_h": h_fine}
    if np.all(naive_bias > 0):
        slope = float(np.polyfit(np.log(steps), np.log(naive_bias), 1)[0])
    else:
        slope = float("nan")
    out.reports.append(TestReport("naive_bias_loglog_slope", slope, None, cfg.slope_tol, "within",
                                  (cfg.paths, cfg.paths), meta, target=cfg.slope_target))
    # corrected bias at the middle step against naive bias at the finest step
    mid = len(steps) // 2
    meta = {"n": n, "h": [float(steps[mid]), float(steps[-1])],
            "method": "bridge_corrected/naive", "seed": seed, "reference_h": h_fine,
            "corrected_bias": float(corr_bias[mid]), "naive_bias": float(naive_bias[-1])}
    out.reports.append(TestReport("corrected_minus_naive_bias",
                                  abs(corr_bias[mid]) - naive_bias[-1], None, 0.0,
                                  "stat_at_most", (cfg.paths, cfg.paths), meta))
    out.tables["paths.csv"] = rows
    out.tables["bias.csv"] = summary
    return out


def run_martingale_horizon(cfg, ctx):
    s = Setup(cfg)
    out = Outcome()
    rows = Table()
    ref, ref_seed = s.limit_reference(ctx)
    horizons = np.array(sorted(cfg.horizons), dtype=float)
    for n in cfg.n_grid:
        batch, r, h, seed = s.simulate(n, ctx, retain=True)
        F = truncated_martingale_batch(n, 0, s.obs, s.model, batch,
                                       np.concatenate([horizons, [np.inf]]))
        V = F[:, -1]
        gaps = np.mean(np.abs(F[:, :-1] - V[:, None]), axis=0)
        tail = np.array([np.mean(batch.exit_time > a) for a in horizons])
        scale = integrand_scale(s.obs, s.model, r)
        bound = 2.0 * scale * tail
        meta = s.meta(n, h, seed, horizons=horizons.tolist(), gaps=gaps.tolist(),
                      bounds=bound.tolist(), scale=scale)
        out.reports.append(TestReport("martingale_gap_monotone", _max_increase(gaps), None, 0.0,
                                      "stat_at_most", (len(V), 0), meta))
        out.reports.append(TestReport("martingale_gap_minus_bound", float(np.max(gaps - bound)),
                                      None, 0.0, "stat_at_most", (len(V), 0), meta))
        rep = ks_two_sample(V, ref[:, 0], cfg.ks_p, s.meta(n, h, seed, reference_seed=ref_seed),
                            name="ks_terminal_martingale")
        rep.declared = n == cfg.n_grid[-1]
        out.reports.append(rep)
        out.reports.append(wasserstein(V, ref[:, 0], cfg.ks_max,
                                       s.meta(n, h, seed, reference_seed=ref_seed),
                                       name="wasserstein_terminal_martingale"))
        cols = s.provenance(n, h, seed, batch.paths)
        cols["exit_time"] = batch.exit_time
        for i in range(len(horizons)):
            cols[f"F{i}"] = F[:, i]
        cols["V"] = V
        rows.extend(Table(cols))
    out.tables["paths.csv"] = rows
    return out


RUNNERS = {
    "example1": run_example1,
    "fdd_grid": run_fdd_grid,
    "exit_time_law": run_exit_time_law,
    "sphere_uniformity": run_sphere_uniformity,
    "non_tightness": run_non_tightness,
    "remainder_ucp": run_remainder_ucp,
    "bias_study": run_bias_study,
    "martingale_horizon": run_martingale_horizon,
}
