"""Synthetic cohort generator with exact ground-truth computation.

The structural model follows the study design the estimators target: race
and demographics feed socioeconomic and clinical covariates, baseline
pressure selects the cohort, a binary treatment-intensification decision is
made from race and clinical state, and follow-up pressure defines the
outcome. A shared latent term correlates the two pressure measurements but
never enters the treatment equation, which is what makes conditional
exchangeability hold in the generator by construction.

Ground truth comes from two independent routes: ``discretize_to_joint``
integrates the structural equations into an exact ``FiniteJoint`` over
binned pressure, and ``true_counterfactual`` simulates the intervention
directly inside the model. Their agreement is itself a test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr

from .cohort import CohortTable
from .errors import InfeasibleCohortError, SchemaError, ValidationError
from .joint import FiniteJoint, VariableSpec
from .partition import Standardization

BINARY = ("0", "1")
_GH_NODES = 48
_GL_NODES = 64
_TAIL_SD = 10.0

# fixed per-variable substream ids: replacing one equation never disturbs
# the draws of upstream columns
_STREAMS = {"race": 0, "age": 1, "sex": 2, "edu": 3, "ins": 4, "dia": 5,
            "u0": 6, "l1": 7, "m1": 8, "l2": 9}
_CHUNK_RAW = 65536


@dataclass(frozen=True)
class LogitBlock:
    """Bernoulli structural equation: logit-linear in named parents.

    ``race`` is the coefficient on the marginalized-group indicator;
    ``u0`` (optional) loads the shared latent onto this equation, which is
    the variant where unmeasured factors also touch a covariate.
    """

    intercept: float
    race: float = 0.0
    coef: dict = field(default_factory=dict)
    u0: float = 0.0

    def eta(self, r, columns, u0=0.0):
        out = self.intercept + self.race * r
        for name, c in self.coef.items():
            out = out + c * columns[name]
        return out + self.u0 * u0


@dataclass(frozen=True)
class TargetBlock:
    """Treatment-intensification equation: logit in race, covariates, and
    baseline pressure through an optional linear term and step terms."""

    intercept: float
    race: float = 0.0
    coef: dict = field(default_factory=dict)
    l1_linear: float = 0.0
    l1_step_edges: tuple = ()
    l1_step_coefs: tuple = ()

    def eta(self, r, columns, l1):
        out = self.intercept + self.race * r + self.l1_linear * l1
        for name, c in self.coef.items():
            out = out + c * columns[name]
        for edge, c in zip(self.l1_step_edges, self.l1_step_coefs):
            out = out + c * (l1 >= edge)
        return out


@dataclass(frozen=True)
class PressureBlock:
    """Gaussian structural equation for a pressure measurement."""

    intercept: float
    race: float = 0.0
    coef: dict = field(default_factory=dict)
    l1: float = 0.0
    m1: float = 0.0
    u0_loading: float = 1.0
    noise_sd: float = 8.0

    def mean(self, r, columns, l1=0.0, m1=0.0):
        out = self.intercept + self.race * r + self.l1 * l1 + self.m1 * m1
        for name, c in self.coef.items():
            out = out + c * columns[name]
        return out

    def __post_init__(self):
        if self.noise_sd <= 0:
            raise ValidationError("pressure noise scale must be positive")


@dataclass(frozen=True)
class ScmConfig:
    seed: int
    race_prevalence: float
    p_age: float
    p_sex: float
    edu: LogitBlock
    ins: LogitBlock
    dia: LogitBlock
    l1: PressureBlock
    m1: TargetBlock
    l2: PressureBlock
    u0_sd: float
    threshold: float = 140.0
    selection: bool = True
    race_levels: tuple = ("marg", "priv")
    l1_group_edges: tuple = ()

    def __post_init__(self):
        for p, what in ((self.race_prevalence, "race prevalence"),
                        (self.p_age, "age probability"), (self.p_sex, "sex probability")):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{what} {p!r} outside [0, 1]")
        if self.u0_sd <= 0:
            raise ValidationError("latent scale must be positive")


def reference_config(seed=20240901, confounded_covariates=False):
    """The committed reference model used across the test suite.

    The treatment equation depends on baseline pressure only through the
    committed group edge, so the exported pressure-group column is a valid
    adjustment variable for it. ``confounded_covariates`` adds the optional
    latent loading on the diabetes equation.
    """
    dia_u0 = 0.04 if confounded_covariates else 0.0
    return ScmConfig(
        seed=seed,
        race_prevalence=0.5,
        p_age=0.5,
        p_sex=0.5,
        edu=LogitBlock(intercept=0.6, race=-1.2),
        ins=LogitBlock(intercept=-0.4, race=-0.7, coef={"edu": 1.5}),
        dia=LogitBlock(intercept=-1.0, race=0.6, coef={"edu": -0.4, "ins": -0.3}, u0=dia_u0),
        l1=PressureBlock(
            intercept=134.0, race=3.0,
            coef={"age": 4.0, "sex": 1.0, "edu": -2.0, "ins": -2.0, "dia": 5.0},
            u0_loading=1.0, noise_sd=8.0,
        ),
        m1=TargetBlock(
            intercept=-0.2, race=-0.9,
            coef={"age": 0.3, "sex": 0.1, "dia": 0.5},
            l1_step_edges=(150.0,), l1_step_coefs=(0.8,),
        ),
        l2=PressureBlock(
            intercept=22.0,
            coef={"age": 1.0, "sex": 0.5, "edu": -1.0, "ins": -1.0, "dia": 2.0},
            l1=0.85, m1=-7.0, u0_loading=1.0, noise_sd=7.0,
        ),
        u0_sd=6.0,
        threshold=140.0,
        selection=True,
        l1_group_edges=(150.0,),
    )


def scm_config_to_dict(config):
    """Plain-dict form of a ``ScmConfig`` (YAML/JSON friendly)."""
    import dataclasses

    return dataclasses.asdict(config)


def scm_config_from_dict(payload):
    """Rebuild a ``ScmConfig`` from ``scm_config_to_dict`` output."""
    payload = dict(payload)

    def block(cls, value):
        value = dict(value)
        if "coef" in value:
            value["coef"] = dict(value["coef"])
        for key in ("l1_step_edges", "l1_step_coefs"):
            if key in value:
                value[key] = tuple(value[key])
        return cls(**value)

    payload["edu"] = block(LogitBlock, payload["edu"])
    payload["ins"] = block(LogitBlock, payload["ins"])
    payload["dia"] = block(LogitBlock, payload["dia"])
    payload["l1"] = block(PressureBlock, payload["l1"])
    payload["m1"] = block(TargetBlock, payload["m1"])
    payload["l2"] = block(PressureBlock, payload["l2"])
    payload["race_levels"] = tuple(payload.get("race_levels", ("marg", "priv")))
    payload["l1_group_edges"] = tuple(payload.get("l1_group_edges", ()))
    return ScmConfig(**payload)


# ---------------------------------------------------------------------------
# simulation


def _rng(config, chunk, stream):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=(int(config.seed), int(chunk), _STREAMS[stream]))
    )


def _simulate_chunk(config, chunk, n_raw, keep_latents=False):
    cols = {}
    r = (_rng(config, chunk, "race").random(n_raw) < config.race_prevalence).astype(float)
    cols["age"] = (_rng(config, chunk, "age").random(n_raw) < config.p_age).astype(float)
    cols["sex"] = (_rng(config, chunk, "sex").random(n_raw) < config.p_sex).astype(float)
    u0 = _rng(config, chunk, "u0").normal(0.0, config.u0_sd, n_raw)
    cols["edu"] = (
        _rng(config, chunk, "edu").random(n_raw) < expit(config.edu.eta(r, cols, u0))
    ).astype(float)
    cols["ins"] = (
        _rng(config, chunk, "ins").random(n_raw) < expit(config.ins.eta(r, cols, u0))
    ).astype(float)
    cols["dia"] = (
        _rng(config, chunk, "dia").random(n_raw) < expit(config.dia.eta(r, cols, u0))
    ).astype(float)
    l1 = (
        config.l1.mean(r, cols)
        + config.l1.u0_loading * u0
        + _rng(config, chunk, "l1").normal(0.0, config.l1.noise_sd, n_raw)
    )
    m1 = (
        _rng(config, chunk, "m1").random(n_raw) < expit(config.m1.eta(r, cols, l1))
    ).astype(float)
    eps2 = _rng(config, chunk, "l2").normal(0.0, config.l2.noise_sd, n_raw)
    l2 = config.l2.mean(r, cols, l1=l1, m1=m1) + config.l2.u0_loading * u0 + eps2
    out = {
        "race": r, "age": cols["age"], "sex": cols["sex"], "edu": cols["edu"],
        "ins": cols["ins"], "dia": cols["dia"], "l1": l1, "m1": m1, "l2": l2,
    }
    if keep_latents:
        out["u0"] = u0
        out["eps2"] = eps2
    return out


def _raw_to_table(config, raw, include_y1):
    thr = config.threshold
    marg, priv = config.race_levels
    race_labels = np.where(raw["race"] > 0, marg, priv)
    data = {
        "race": race_labels,
        "age": raw["age"].astype(int),
        "sex": raw["sex"].astype(int),
        "edu": raw["edu"].astype(int),
        "ins": raw["ins"].astype(int),
        "dia": raw["dia"].astype(int),
        "l1": raw["l1"],
        "m1": raw["m1"].astype(int),
        "l2": raw["l2"],
        "y2": (raw["l2"] >= thr).astype(int),
    }
    if config.l1_group_edges:
        data["l1_grp"] = np.digitize(raw["l1"], config.l1_group_edges).astype(int)
    if include_y1:
        data["y1"] = (raw["l1"] >= thr).astype(int)
    categorical = {
        "race": (marg, priv), "age": BINARY, "sex": BINARY, "edu": BINARY,
        "ins": BINARY, "dia": BINARY, "m1": BINARY, "y2": BINARY,
    }
    if config.l1_group_edges:
        categorical["l1_grp"] = tuple(str(i) for i in range(len(config.l1_group_edges) + 1))
    if include_y1:
        categorical["y1"] = BINARY
    return CohortTable(data, categorical=categorical)


def generate(config, n):
    """Draw ``n`` cohort rows (after selection, when enabled) from the model.

    Chunked with per-(seed, chunk, variable) substreams: the same config and
    seed always give the same table, and altering one structural equation
    never changes the draws of upstream columns.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    p_sel = selection_probability(config) if config.selection else 1.0
    if p_sel < 1e-4:
        raise InfeasibleCohortError(
            f"cohort selection probability {p_sel:.2e} below 1e-4; "
            "the configuration cannot feasibly fill a cohort"
        )
    pieces = []
    have = 0
    chunk = 0
    while have < n:
        raw = _simulate_chunk(config, chunk, _CHUNK_RAW)
        if config.selection:
            keep = raw["l1"] >= config.threshold
            raw = {k: v[keep] for k, v in raw.items()}
        pieces.append(raw)
        have += len(raw["l1"])
        chunk += 1
    merged = {k: np.concatenate([p[k] for p in pieces])[:n] for k in pieces[0]}
    return _raw_to_table(config, merged, include_y1=not config.selection)


# ---------------------------------------------------------------------------
# exact integration

_COVARIATES = ("age", "sex", "edu", "ins", "dia")


def _strata(config):
    """All (race, age, sex, edu, ins, dia) combinations with exact masses.

    Returns (r, columns, p_x) arrays of length 64, marginalizing the latent
    out of any covariate equation that loads on it by quadrature.
    """
    combos = np.array(list(itertools.product((0, 1), repeat=6)), dtype=float)
    r = combos[:, 0]
    cols = {name: combos[:, i + 1] for i, name in enumerate(_COVARIATES)}
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(_GH_NODES)
    gh_w = gh_w / math.sqrt(2.0 * math.pi)

    def bern(p_event, indicator):
        return np.where(indicator > 0, p_event, 1.0 - p_event)

    p_race = np.where(r > 0, config.race_prevalence, 1.0 - config.race_prevalence)
    p_age = bern(config.p_age, cols["age"])
    p_sex = bern(config.p_sex, cols["sex"])

    # With a latent loading on a covariate the factors stop being
    # unconditionally independent; condition on the latent throughout instead.
    if config.edu.u0 == 0.0 and config.ins.u0 == 0.0 and config.dia.u0 == 0.0:
        p_x = (
            p_race * p_age * p_sex
            * bern(expit(config.edu.eta(r, cols)), cols["edu"])
            * bern(expit(config.ins.eta(r, cols)), cols["ins"])
            * bern(expit(config.dia.eta(r, cols)), cols["dia"])
        )
        return r, cols, p_x, None
    scaled = config.u0_sd * gh_x  # (G,)
    cond = np.ones((_GH_NODES, len(combos)))
    for block, name in ((config.edu, "edu"), (config.ins, "ins"), (config.dia, "dia")):
        p_event = expit(block.eta(r, cols)[None, :] + block.u0 * scaled[:, None])
        cond *= np.where(cols[name][None, :] > 0, p_event, 1.0 - p_event)
    p_x_given_u0 = p_race * p_age * p_sex * cond  # (G, 64)
    p_x = (gh_w[:, None] * p_x_given_u0).sum(axis=0)
    posterior = gh_w[:, None] * p_x_given_u0 / p_x  # P(u0 node | stratum)
    return r, cols, p_x, (scaled, posterior)


def _segment_edges(config, edges):
    """Absolute integration boundaries per pressure bin, split at step edges."""
    thr = config.threshold
    edges = tuple(float(e) for e in edges)
    if any(e2 <= e1 for e1, e2 in zip(edges, edges[1:])):
        raise ValidationError("bin edges must be strictly increasing")
    if config.selection:
        if any(e <= thr for e in edges):
            raise ValidationError(
                f"with cohort selection on, bin edges must exceed the threshold {thr}"
            )
        bounds = (thr,) + edges + (math.inf,)
    else:
        if thr not in edges:
            raise ValidationError(
                f"bin edges must include the selection threshold {thr} so diagnosis "
                "is a function of the bin"
            )
        bounds = (-math.inf,) + edges + (math.inf,)
    cuts = sorted(set(e for e in config.m1.l1_step_edges))
    segmented = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        inner = [c for c in cuts if lo < c < hi]
        pts = [lo] + inner + [hi]
        segmented.append(list(zip(pts[:-1], pts[1:])))
    return segmented


def discretize_to_joint(config, edges=None, k=8):
    """Exact joint over (race, covariates, pressure bin, target, outcome).

    ``edges`` are interior bin boundaries for baseline pressure; by default
    ``k`` equal-probability bins within the selected cohort are used. With
    selection on, the joint is conditional on cohort membership. Total mass
    is certified to 1 within 1e-9 before normalization rounds it exact.
    """
    if edges is None:
        edges = equal_probability_edges(config, k)
    r, cols, p_x, latent = _strata(config)
    thr = config.threshold
    gl_x, gl_w = np.polynomial.legendre.leggauss(_GL_NODES)
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(_GH_NODES)
    gh_w = gh_w / math.sqrt(2.0 * math.pi)
    u0_nodes = config.u0_sd * gh_x  # (G,)
    if latent is None:
        u0_post = np.broadcast_to(gh_w[:, None], (_GH_NODES, len(r)))
    else:
        u0_nodes, u0_post = latent

    mu1 = config.l1.mean(r, cols)  # (64,)
    s1 = config.l1.noise_sd
    lam1 = config.l1.u0_loading
    span = abs(lam1) * config.u0_sd * 3 + _TAIL_SD * s1
    far = float(np.max(mu1) + span)
    low = float(np.min(mu1) - span)

    segments = _segment_edges(config, edges)
    n_bins = len(segments)
    # cell accumulator over (stratum, bin, m, y2)
    cells = np.zeros((len(r), n_bins, 2, 2))
    for b, segs in enumerate(segments):
        pieces = []
        for lo, hi in segs:
            lo_f = max(lo, low) if math.isfinite(lo) else low
            hi_f = min(hi, far) if math.isfinite(hi) else far
            if hi_f <= lo_f:
                continue
            # cap segment width so fixed-order quadrature stays sharp
            parts = max(1, int(math.ceil((hi_f - lo_f) / (5.0 * s1))))
            cuts = np.linspace(lo_f, hi_f, parts + 1)
            pieces.extend(zip(cuts[:-1], cuts[1:]))
        for lo_f, hi_f in pieces:
            half = 0.5 * (hi_f - lo_f)
            mid = 0.5 * (hi_f + lo_f)
            l1_nodes = mid + half * gl_x  # (L,)
            lw = gl_w * half
            # density of l1 at nodes given stratum and u0 node: (G, L, 64)
            zmu = mu1[None, None, :] + lam1 * u0_nodes[:, None, None]
            dens = np.exp(-0.5 * ((l1_nodes[None, :, None] - zmu) / s1) ** 2) / (
                s1 * math.sqrt(2.0 * math.pi)
            )
            w_glh = u0_post[:, None, :] * dens * lw[None, :, None]  # (G, L, 64)
            eta_m = config.m1.eta(
                r[None, :], {k2: v[None, :] for k2, v in cols.items()}, l1_nodes[:, None]
            )  # (L, 64)
            pm1 = expit(eta_m)[None, :, :]
            mu2_m0 = config.l2.mean(r[None, :], {k2: v[None, :] for k2, v in cols.items()},
                                    l1=l1_nodes[:, None], m1=0.0)
            mu2_m1 = mu2_m0 + config.l2.m1
            s2 = config.l2.noise_sd
            lam2 = config.l2.u0_loading
            py2_m0 = 1.0 - ndtr((thr - mu2_m0[None, :, :] - lam2 * u0_nodes[:, None, None]) / s2)
            py2_m1 = 1.0 - ndtr((thr - mu2_m1[None, :, :] - lam2 * u0_nodes[:, None, None]) / s2)
            cells[:, b, 1, 1] += np.einsum("glx,glx,glx->x", w_glh, pm1, py2_m1)
            cells[:, b, 1, 0] += np.einsum("glx,glx,glx->x", w_glh, pm1, 1.0 - py2_m1)
            cells[:, b, 0, 1] += np.einsum("glx,glx,glx->x", w_glh, 1.0 - pm1, py2_m0)
            cells[:, b, 0, 0] += np.einsum("glx,glx,glx->x", w_glh, 1.0 - pm1, 1.0 - py2_m0)
    cells = cells * p_x[:, None, None, None]
    total = float(cells.sum())
    expected = selection_probability(config) if config.selection else 1.0
    if abs(total - expected) > 1e-9:
        raise SchemaError(
            f"integration mass {total!r} differs from expected {expected!r} by more "
            "than 1e-9; refine the bin edges"
        )
    marg, priv = config.race_levels
    variables = (
        VariableSpec("race", (marg, priv)),
        VariableSpec("age", BINARY), VariableSpec("sex", BINARY),
        VariableSpec("edu", BINARY), VariableSpec("ins", BINARY),
        VariableSpec("dia", BINARY),
        VariableSpec("l1_grp", tuple(str(i) for i in range(n_bins))),
        VariableSpec("m1", BINARY), VariableSpec("y2", BINARY),
    )
    probs = np.zeros(tuple(len(v.levels) for v in variables))
    combos = np.array(list(itertools.product((0, 1), repeat=6)), dtype=int)
    # race level index: marginalized is listed first but coded r=1 in strata
    race_idx = np.where(combos[:, 0] > 0, 0, 1)
    probs[race_idx, combos[:, 1], combos[:, 2], combos[:, 3], combos[:, 4], combos[:, 5]] = (
        cells / total
    )
    return FiniteJoint(variables, probs)


def selection_probability(config):
    """Exact P(baseline pressure >= threshold) under the model."""
    r, cols, p_x, latent = _strata(config)
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(_GH_NODES)
    gh_w = gh_w / math.sqrt(2.0 * math.pi)
    if latent is None:
        u0_nodes = config.u0_sd * gh_x
        post = np.broadcast_to(gh_w[:, None], (_GH_NODES, len(r)))
    else:
        u0_nodes, post = latent
    mu1 = config.l1.mean(r, cols)
    z = (config.threshold - mu1[None, :] - config.l1.u0_loading * u0_nodes[:, None]) / config.l1.noise_sd
    p_sel_given = 1.0 - ndtr(z)
    return float((p_x * (post * p_sel_given).sum(axis=0)).sum())


def cohort_pressure_cdf(config, t):
    """Exact P(L1 <= t | cohort) for the selected cohort."""
    r, cols, p_x, latent = _strata(config)
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(_GH_NODES)
    gh_w = gh_w / math.sqrt(2.0 * math.pi)
    if latent is None:
        u0_nodes = config.u0_sd * gh_x
        post = np.broadcast_to(gh_w[:, None], (_GH_NODES, len(r)))
    else:
        u0_nodes, post = latent
    mu = config.l1.mean(r, cols)[None, :] + config.l1.u0_loading * u0_nodes[:, None]
    s1 = config.l1.noise_sd
    upper = ndtr((t - mu) / s1)
    lower = ndtr((config.threshold - mu) / s1)
    num = float((p_x * (post * np.maximum(upper - lower, 0.0)).sum(axis=0)).sum())
    return num / selection_probability(config)


def cohort_pressure_quantile(config, q):
    """Exact in-cohort baseline-pressure quantile (root of the cohort CDF)."""
    if not 0.0 < q < 1.0:
        raise ValidationError("quantile must be in (0, 1)")
    hi = config.threshold + 60.0
    while cohort_pressure_cdf(config, hi) < max(q, 1.0 - 1e-9):
        hi += 60.0
    return float(brentq(lambda t: cohort_pressure_cdf(config, t) - q,
                        config.threshold, hi, xtol=1e-10))


def equal_probability_edges(config, k):
    """Interior edges giving ``k`` equal-probability pressure bins in-cohort."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not config.selection:
        raise ValidationError("equal-probability default bins assume cohort selection")
    return tuple(cohort_pressure_quantile(config, i / k) for i in range(1, k))


# ---------------------------------------------------------------------------
# simulated ground truth


def true_counterfactual(config, partition, std=Standardization.POOLED,
                        draws=200000, seed=0):
    """Simulated post-intervention mean, independent of any estimator.

    Marginalized-group units keep their own latent and noise draws; only the
    target is re-assigned, from the privileged group's exact conditional law
    given the target-allowable covariates (computed by integration, not
    fitted). The result is standardized over the exact covariate standard.
    """
    allow = sorted(set(partition.outcome_allowable) | set(partition.target_allowable_extra))
    for name in allow + sorted(partition.non_allowable):
        if name in ("l1", "l2"):
            raise SchemaError(
                f"partition references continuous column {name!r}; use the binned "
                "pressure group for exact ground truth"
            )
    joint = discretize_to_joint(
        config, edges=config.l1_group_edges if config.l1_group_edges else None
    )
    marg, priv = config.race_levels
    law = joint.cond_table(["m1"], allow + ["race"])[joint.slice_level("race", priv)]
    ay = sorted(partition.outcome_allowable)
    if std is Standardization.POOLED:
        S = joint.table(ay)
    elif std is Standardization.R0:
        S = joint.cond_table(ay, ["race"])[joint.slice_level("race", marg)]
    else:
        S = joint.cond_table(ay, ["race"])[joint.slice_level("race", priv)]

    # the intervention law P(m1 = 1 | privileged, target-allowables), dense
    lookup = np.broadcast_to(
        law[joint.slice_level("m1", "1")],
        tuple(len(v.levels) if v.name in allow else 1 for v in joint.variables),
    )
    ay_dims = {name: len(joint.variable(name).levels) for name in ay}

    have = 0
    chunk = 0
    y_sum = {}
    n_sum = {}
    while have < draws:
        # offset the chunk counter so truth draws never reuse cohort draws
        raw = _simulate_chunk(config, chunk + 10_000_019, _CHUNK_RAW, keep_latents=True)
        if config.selection:
            keep = raw["l1"] >= config.threshold
            raw = {k2: v[keep] for k2, v in raw.items()}
        keep = raw["race"] > 0
        raw = {k2: v[keep] for k2, v in raw.items()}
        table = _raw_to_table(config, raw, include_y1=False)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), chunk)))

        sel = [0] * lookup.ndim
        for name in allow:
            sel[joint.axis(name)] = table.codes(name)
        p1_rows = lookup[tuple(sel)]
        if np.any(np.isnan(p1_rows)):
            raise SchemaError(
                "the privileged group has zero mass in a target-allowable stratum; "
                "the intervention law is undefined there"
            )
        m_star = (rng.random(table.n) < p1_rows).astype(float)
        cols = {name: raw[name] for name in _COVARIATES}
        l2_star = (
            config.l2.mean(raw["race"], cols, l1=raw["l1"], m1=m_star)
            + config.l2.u0_loading * raw["u0"]
            + raw["eps2"]
        )
        y_star = (l2_star >= config.threshold).astype(float)

        ay_code = np.zeros(table.n, dtype=np.int64)
        for name in ay:
            ay_code = ay_code * ay_dims[name] + table.codes(name)
        for code in np.unique(ay_code):
            mask = ay_code == code
            y_sum[int(code)] = y_sum.get(int(code), 0.0) + float(y_star[mask].sum())
            n_sum[int(code)] = n_sum.get(int(code), 0) + int(mask.sum())
        have += table.n
        chunk += 1

    total = 0.0
    s_total = 0.0
    s_grid = np.broadcast_to(S, tuple(
        len(v.levels) if v.name in ay else 1 for v in joint.variables
    ))
    for code in sorted(y_sum):
        digits = {}
        c = code
        for name in reversed(ay):
            digits[name] = c % ay_dims[name]
            c //= ay_dims[name]
        sel = [0] * s_grid.ndim
        for name in ay:
            sel[joint.axis(name)] = digits[name]
        mass = float(s_grid[tuple(sel)])
        s_total += mass
        total += mass * (y_sum[code] / n_sum[code])
    if abs(s_total - 1.0) > 1e-9:
        raise SchemaError(
            "simulation left standard strata unvisited (covered mass "
            f"{s_total!r}); increase draws"
        )
    return total
