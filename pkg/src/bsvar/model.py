"""Model specification: data, restrictions, priors and parameter containers.

Storage is time-in-columns: ``Y`` is ``N x T`` and ``X`` is ``K x T`` with
``K = N p + D`` so that per-period operations slice contiguous columns of
Fortran-ordered arrays. Regressor column ``t`` stacks
``[y_{t-1}', ..., y_{t-p}', d_t']'`` with the constant as the first
deterministic entry.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np


class SpecificationError(ValueError):
    """Raised when a model specification violates its invariants."""


class Family(str, enum.Enum):
    HOMO = "homo"
    SV_NONCENTRED = "sv"
    SV_CENTRED = "sv-centred"
    MSH = "msh"
    MSH_SPARSE = "msh-sparse"
    MIX = "mix"
    MIX_SPARSE = "mix-sparse"
    T = "t"

    @property
    def is_regime(self) -> bool:
        return self in (Family.MSH, Family.MSH_SPARSE, Family.MIX, Family.MIX_SPARSE)

    @property
    def is_sparse(self) -> bool:
        return self in (Family.MSH_SPARSE, Family.MIX_SPARSE)

    @property
    def is_markov(self) -> bool:
        return self in (Family.MSH, Family.MSH_SPARSE)

    @property
    def is_sv(self) -> bool:
        return self in (Family.SV_NONCENTRED, Family.SV_CENTRED)

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "sv-noncentred": cls.SV_NONCENTRED,
            "sv-non-centred": cls.SV_NONCENTRED,
            "sv-noncentered": cls.SV_NONCENTRED,
            "sv-centered": cls.SV_CENTRED,
            "student-t": cls.T,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise SpecificationError(f"unknown family {value!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class TimeSeriesData:
    raw: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    p: int
    deterministic: np.ndarray
    names: tuple = ()

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def D(self) -> int:
        return self.deterministic.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[0]


def build_design_matrices(
    raw, p: int, deterministic=None, names: Sequence[str] = ()
) -> TimeSeriesData:
    """Build the dependent and regressor matrices of a VAR with ``p`` lags.

    Parameters
    ----------
    raw : array, shape (T0, N)
        Observations in time order.
    p : int
        Lag order, at least 1.
    deterministic : array, shape (D, T0), optional
        Deterministic terms aligned with ``raw``. A constant row is put first
        when no row of ones is present.

    Returns
    -------
    TimeSeriesData
        With ``Y`` of shape (N, T0 - p) and ``X`` of shape (N p + D, T0 - p).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.ndim != 2:
        raise SpecificationError("raw data must be a T0 x N matrix")
    if int(p) != p or p < 1:
        raise SpecificationError("lag order must be ≥ 1")
    p = int(p)
    T0, N = raw.shape
    if not np.all(np.isfinite(raw)):
        raise SpecificationError("data contain non-finite values")

    const = np.ones((1, T0))
    if deterministic is None:
        det = const
    else:
        det = np.atleast_2d(np.asarray(deterministic, dtype=float))
        if det.shape[1] != T0:
            raise SpecificationError(
                f"deterministic terms have {det.shape[1]} columns, data have {T0} rows"
            )
        if not np.all(np.isfinite(det)):
            raise SpecificationError("deterministic terms contain non-finite values")
        ones = np.all(det == 1.0, axis=1)
        if ones.any():
            first = int(np.argmax(ones))
            det = np.vstack([det[first : first + 1], np.delete(det, first, axis=0)])
        else:
            det = np.vstack([const, det])
    D = det.shape[0]
    K = N * p + D
    if T0 <= K + p:
        raise SpecificationError(
            f"insufficient observations: T0 = {T0} must exceed N p + D + p = {K + p}"
        )

    T = T0 - p
    Y = np.asfortranarray(raw[p:].T)
    X = np.empty((K, T), order="F")
    for lag in range(1, p + 1):
        X[(lag - 1) * N : lag * N] = raw[p - lag : T0 - lag].T
    X[N * p :] = det[:, p:]
    names = tuple(names) if names else tuple(f"y{i + 1}" for i in range(N))
    return TimeSeriesData(raw=raw, Y=Y, X=X, p=p, deterministic=det, names=names)


# ---------------------------------------------------------------------------
# Restrictions
# ---------------------------------------------------------------------------


def _selection_from_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    V = np.zeros((idx.size, mask.size))
    V[np.arange(idx.size), idx] = 1.0
    return V


@dataclass(frozen=True)
class RestrictionPattern:
    """Selection matrices placing the free elements of each row of A and B0.

    ``V_A[n]`` is ``r_A[n] x K`` and ``V_B[n]`` is ``r_B[n] x N``; each row has
    exactly one unit entry.
    """

    V_A: tuple
    V_B: tuple

    @property
    def r_A(self) -> list:
        return [v.shape[0] for v in self.V_A]

    @property
    def r_B(self) -> list:
        return [v.shape[0] for v in self.V_B]

    @property
    def mask_A(self) -> np.ndarray:
        return np.vstack([v.sum(axis=0) > 0 for v in self.V_A])

    @property
    def mask_B(self) -> np.ndarray:
        return np.vstack([v.sum(axis=0) > 0 for v in self.V_B])

    @classmethod
    def from_masks(cls, mask_B, mask_A) -> "RestrictionPattern":
        mask_B = np.atleast_2d(np.asarray(mask_B, dtype=bool))
        mask_A = np.atleast_2d(np.asarray(mask_A, dtype=bool))
        return cls(
            V_A=tuple(_selection_from_mask(row) for row in mask_A),
            V_B=tuple(_selection_from_mask(row) for row in mask_B),
        )


def default_restrictions(N: int, K: int) -> RestrictionPattern:
    """Lower-triangular B0 and unrestricted A."""
    if N < 1:
        raise SpecificationError("N must be at least 1")
    mask_B = np.tril(np.ones((N, N), dtype=bool))
    mask_A = np.ones((N, K), dtype=bool)
    return RestrictionPattern.from_masks(mask_B, mask_A)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def minnesota_prior_defaults(N: int, p: int, D: int, unit_root_flags=None):
    """Prior mean and scale of the autoregressive rows.

    Returns ``m_A`` of shape (K, N) whose column ``n`` has a one at the own
    first lag of a unit-root variable, and the diagonal scale ``Omega_A``
    with ``1 / lag**2`` on every lag block and 100 on deterministic terms.
    """
    K = N * p + D
    flags = np.ones(N, dtype=bool) if unit_root_flags is None else np.asarray(unit_root_flags, bool)
    if flags.shape != (N,):
        raise SpecificationError(f"unit_root_flags must have length {N}")
    m_A = np.zeros((K, N))
    m_A[np.arange(N), np.arange(N)] = flags.astype(float)
    lags = np.arange(1, p + 1, dtype=float)
    diag = np.concatenate([np.repeat(lags**-2.0, N), np.full(D, 100.0)])
    return m_A, np.diag(diag)


@dataclass
class PriorSpec:
    m_A: np.ndarray
    Omega_A: np.ndarray
    Omega_B: tuple
    nu_A: float = 10.0
    a_A: float = 10.0
    s_sA: float = 10.0
    nu_sA: float = 10.0
    nu_B: float = 0.0
    nu_b: float = 10.0
    a_B: float = 10.0
    s_sB: float = 1.0
    nu_sB: float = 100.0
    # stochastic volatility
    a_v: float = 1.0
    a_sigma: float = 1.0
    s_sv: float = 0.1
    nu_sv: float = 1.0
    # regime families
    e_sigma: float = 1.0
    e: float = 1.0
    e0: float = 1.0
    s_e: float = 1.0
    nu_e: float = 10.0

    SCALARS = (
        "nu_A", "a_A", "s_sA", "nu_sA", "nu_B", "nu_b", "a_B", "s_sB", "nu_sB",
        "a_v", "a_sigma", "s_sv", "nu_sv", "e_sigma", "e", "e0", "s_e", "nu_e",
    )

    def with_overrides(self, **overrides) -> "PriorSpec":
        unknown = set(overrides) - set(self.SCALARS) - {"m_A", "Omega_A", "Omega_B"}
        if unknown:
            raise SpecificationError(f"unknown prior settings: {sorted(unknown)}")
        return replace(self, **overrides)


def default_prior(N: int, p: int, D: int, restrictions: RestrictionPattern, unit_root_flags=None):
    m_A, Omega_A = minnesota_prior_defaults(N, p, D, unit_root_flags)
    Omega_B = tuple(np.eye(r) for r in restrictions.r_B)
    return PriorSpec(m_A=m_A, Omega_A=Omega_A, Omega_B=Omega_B, nu_B=float(N))


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


@dataclass
class ModelSpec:
    data: TimeSeriesData
    restrictions: RestrictionPattern
    prior: PriorSpec
    family: Family = Family.HOMO
    M: Optional[int] = None
    unit_root_flags: Optional[np.ndarray] = None
    sample_hyper: bool = True
    min_regime_occurrences: Optional[int] = None
    max_retries: int = 100

    @property
    def N(self) -> int:
        return self.data.N

    @property
    def K(self) -> int:
        return self.data.K

    @property
    def T(self) -> int:
        return self.data.T

    @property
    def min_occupancy(self) -> int:
        """Minimum regime occurrences imposed on label paths (0 when unconstrained)."""
        if not self.family.is_regime or self.family.is_sparse:
            return 0
        if self.min_regime_occurrences is not None:
            return int(self.min_regime_occurrences)
        return 2 if self.family.is_markov else 1


def specify(
    raw,
    p: int = 1,
    family="homo",
    M: Optional[int] = None,
    deterministic=None,
    restrictions: Optional[RestrictionPattern] = None,
    unit_root_flags=None,
    names: Sequence[str] = (),
    prior_overrides: Optional[dict] = None,
    **options,
) -> ModelSpec:
    """Assemble and validate a :class:`ModelSpec` from raw observations."""
    family = Family.parse(family)
    data = build_design_matrices(raw, p, deterministic, names)
    if restrictions is None:
        restrictions = default_restrictions(data.N, data.K)
    flags = np.ones(data.N, dtype=bool) if unit_root_flags is None else np.asarray(unit_root_flags, bool)
    prior = default_prior(data.N, data.p, data.D, restrictions, flags)
    if prior_overrides:
        prior = prior.with_overrides(**prior_overrides)
    if family.is_regime and M is None:
        M = 20 if family.is_sparse else 2
    spec = ModelSpec(
        data=data,
        restrictions=restrictions,
        prior=prior,
        family=family,
        M=M,
        unit_root_flags=flags,
        **options,
    )
    return validate_specification(spec)


def _check_selection(V, width, label):
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[1] != width:
        raise SpecificationError(f"{label} must have {width} columns")
    if V.shape[0] < 1:
        raise SpecificationError(f"{label} must select at least one element")
    if not np.all((V == 0) | (V == 1)) or not np.all(V.sum(axis=1) == 1):
        raise SpecificationError(f"{label}: every row must contain exactly one 1")
    if np.any(V.sum(axis=0) > 1):
        raise SpecificationError(f"{label}: rows must be distinct")


def validate_specification(spec: ModelSpec) -> ModelSpec:
    """Check every invariant of ``spec`` and return it unchanged."""
    N, K = spec.N, spec.K
    R = spec.restrictions
    if len(R.V_A) != N or len(R.V_B) != N:
        raise SpecificationError("restriction pattern must have one entry per equation")
    for n in range(N):
        _check_selection(R.V_A[n], K, f"V_A[{n}]")
        _check_selection(R.V_B[n], N, f"V_B[{n}]")

    pr = spec.prior
    if pr.m_A.shape != (K, N):
        raise SpecificationError(f"m_A must be {K} x {N}")
    if pr.Omega_A.shape != (K, K):
        raise SpecificationError(f"Omega_A must be {K} x {K}")
    if not np.allclose(pr.Omega_A, np.diag(np.diag(pr.Omega_A))) or np.any(np.diag(pr.Omega_A) <= 0):
        raise SpecificationError("Omega_A must be diagonal with positive entries")
    if len(pr.Omega_B) != N:
        raise SpecificationError("Omega_B needs one scale matrix per equation")
    for n, (om, r) in enumerate(zip(pr.Omega_B, R.r_B)):
        om = np.asarray(om)
        if om.shape != (r, r):
            raise SpecificationError(f"Omega_B[{n}] must be {r} x {r}")
        try:
            np.linalg.cholesky(om)
        except np.linalg.LinAlgError:
            raise SpecificationError(f"Omega_B[{n}] must be positive definite") from None
    if pr.nu_B < N:
        raise SpecificationError(
            f"shape parameter nu_B = {pr.nu_B} violates the bound nu_B ≥ N = {N}"
        )
    for name in PriorSpec.SCALARS:
        if name == "nu_B":
            continue
        if not getattr(pr, name) > 0:
            raise SpecificationError(f"prior constant {name} must be positive")

    fam = spec.family
    if fam.is_regime:
        if spec.M is None or int(spec.M) < 2:
            raise SpecificationError(f"family {fam.value} needs M ≥ 2 regimes")
        if not fam.is_sparse:
            if spec.min_occupancy * spec.M > spec.T:
                raise SpecificationError("sample too short for the minimum regime occurrences")
    elif spec.M is not None:
        raise SpecificationError(f"M is only meaningful for regime families, not {fam.value}")
    if spec.unit_root_flags is not None and np.shape(spec.unit_root_flags) != (N,):
        raise SpecificationError("unit_root_flags must have length N")
    if spec.T < K + 1:
        raise SpecificationError("insufficient observations for the regressor dimension")
    return spec


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ParameterState:
    """One full draw of the model parameters and latent variables."""

    A: np.ndarray
    B0: np.ndarray
    gamma_A: np.ndarray
    s_An: np.ndarray
    s_A: float
    gamma_B: np.ndarray
    s_Bn: np.ndarray
    s_B: float
    sigma2: np.ndarray
    # stochastic volatility
    h: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    sigma2_omega: Optional[np.ndarray] = None
    sigma_v2: Optional[np.ndarray] = None
    s_v: Optional[np.ndarray] = None
    s_sigma: Optional[float] = None
    sv_indicators: Optional[np.ndarray] = None
    # regimes
    regime: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    pi0: Optional[np.ndarray] = None
    sigma2_regime: Optional[np.ndarray] = None
    e: Optional[float] = None
    # Student-t
    nu: Optional[np.ndarray] = None
    nu_step: Optional[np.ndarray] = None
    nu_accepted: Optional[np.ndarray] = None
    sweep: int = 0

    def copy(self) -> "ParameterState":
        return copy.deepcopy(self)

    def present(self) -> dict:
        """Map of field name to value for every populated field."""
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def reconstruct_rows(free, V) -> np.ndarray:
    """Place free row elements into full rows: ``[M]_n = free_n V_n``."""
    return np.vstack([np.asarray(f) @ v for f, v in zip(free, V)])


def check_state(state: ParameterState, spec: ModelSpec, tol: float = 1e-10) -> None:
    """Raise ``AssertionError`` when ``state`` breaks a parameter invariant."""
    R = spec.restrictions
    if np.any(state.B0[~R.mask_B] != 0.0):
        raise AssertionError("B0 violates its exclusion restrictions")
    if np.any(state.A[~R.mask_A] != 0.0):
        raise AssertionError("A violates its exclusion restrictions")
    if not np.all(state.sigma2 > 0):
        raise AssertionError("conditional variances must be positive")
    for name in ("gamma_A", "s_An", "gamma_B", "s_Bn"):
        if not np.all(np.asarray(getattr(state, name)) > 0):
            raise AssertionError(f"{name} must be positive")
    if state.rho is not None and not np.all(np.abs(state.rho) < 1):
        raise AssertionError("|rho| must be below one")
    if state.P is not None and not np.allclose(state.P.sum(axis=1), 1.0, atol=tol):
        raise AssertionError("transition matrix rows must sum to one")
    if state.pi0 is not None and abs(state.pi0.sum() - 1.0) > tol:
        raise AssertionError("pi0 must sum to one")
    if state.sigma2_regime is not None:
        M = state.sigma2_regime.shape[1]
        if not np.allclose(state.sigma2_regime.sum(axis=1), M, rtol=0, atol=1e-12 * M):
            raise AssertionError("regime variances must sum to M in every equation")
    if state.nu is not None and not np.all(state.nu > 2):
        raise AssertionError("degrees of freedom must exceed 2")


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------

CORE_FIELDS = ("A", "B0", "gamma_A", "s_An", "s_A", "gamma_B", "s_Bn", "s_B")


def stored_fields(family: Family) -> tuple:
    """Names of the state fields kept for every retained draw of ``family``."""
    if family is Family.HOMO:
        return CORE_FIELDS
    extra = {
        Family.SV_NONCENTRED: ("h", "rho", "omega", "sigma2_omega", "s_sigma", "sv_indicators"),
        Family.SV_CENTRED: ("h", "rho", "sigma_v2", "s_v", "s_sigma", "sv_indicators"),
        Family.T: ("nu",),
    }.get(family)
    if extra is None:
        extra = ("regime", "P", "pi0", "sigma2_regime") + (("e",) if family.is_sparse else ())
    return CORE_FIELDS + ("sigma2",) + extra


@dataclass
class PosteriorDraws:
    """Retained draws of a model as arrays with the draw index first.

    ``draws[name]`` has shape ``(S,) + shape_of_field``. Conditional variances
    of the homoskedastic family are not stored; :meth:`get` returns ones.
    """

    spec: ModelSpec
    draws: dict
    last_state: ParameterState
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self) < 1:
            raise ValueError("posterior draws need at least one retained draw")

    def __len__(self) -> int:
        return int(next(iter(self.draws.values())).shape[0]) if self.draws else 0

    @property
    def S(self) -> int:
        return len(self)

    def get(self, name: str) -> np.ndarray:
        if name == "sigma2" and name not in self.draws:
            return np.ones((len(self), self.spec.N, self.spec.T))
        return self.draws[name]

    def state(self, i: int) -> ParameterState:
        values = {k: np.array(v[i]) for k, v in self.draws.items()}
        for k in ("s_A", "s_B", "s_sigma", "e"):
            if k in values:
                values[k] = float(values[k])
        values.setdefault("sigma2", np.ones((self.spec.N, self.spec.T)))
        return ParameterState(**values)

    def __getitem__(self, i: int) -> ParameterState:
        return self.state(i)

    def __iter__(self):
        return (self.state(i) for i in range(len(self)))

    def subset(self, index) -> "PosteriorDraws":
        """Draws at ``index`` (slice or integer array), sharing spec and state."""
        return PosteriorDraws(
            self.spec, {k: v[index] for k, v in self.draws.items()}, self.last_state, dict(self.meta)
        )
