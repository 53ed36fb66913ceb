import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from .config import Config
from .exceptions import DataError, ModelError


logger = logging.getLogger(__name__)


class IccForm(str, Enum):
    CONSISTENCY = 'consistency'
    ONE_WAY = 'one-way'

    @classmethod
    def parse(cls, text: str) -> 'IccForm':
        for form in cls:
            if form.value == text.strip().lower():
                return form
        raise ValueError(f"Unknown ICC form {text!r}; expected consistency or one-way")


@dataclass(frozen=True, eq=False)
class PairedObservations:
    """Baseline (group 0) and task (group 1) values keyed by participant."""

    participant_ids: np.ndarray
    groups: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        ids = np.asarray(self.participant_ids).astype(str)
        groups = np.asarray(self.groups, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if not ids.shape == groups.shape == values.shape or ids.ndim != 1:
            raise DataError("Participant, group and value arrays must have equal length")
        if not np.isin(groups, (0, 1)).all():
            raise DataError("Groups must be 0 (baseline) or 1 (task)")
        if not np.all(np.isfinite(values)):
            raise DataError("Observations must be finite")
        object.__setattr__(self, 'participant_ids', ids)
        object.__setattr__(self, 'groups', groups)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[str, int, float]]) -> 'PairedObservations':
        if not rows:
            return cls(np.array([], dtype=str), np.array([], dtype=int), np.array([]))
        ids, groups, values = zip(*rows)
        return cls(np.array(ids), np.array(groups), np.array(values))

    @classmethod
    def from_groups(
        cls,
        baseline: Dict[str, Sequence[float]],
        task: Dict[str, Sequence[float]]
    ) -> 'PairedObservations':
        rows = [(p, 0, v) for p in sorted(baseline) for v in baseline[p]]
        rows += [(p, 1, v) for p in sorted(task) for v in task[p]]
        return cls.from_rows(rows)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def participants(self) -> List[str]:
        return sorted(set(self.participant_ids.tolist()))

    @property
    def n_participants(self) -> int:
        return len(self.participants)

    def group_values(self, group: int) -> np.ndarray:
        return self.values[self.groups == group]

    def complete_participants(self) -> List[str]:
        """Participants with at least one row in each group."""
        return [
            p for p in self.participants
            if set(self.groups[self.participant_ids == p].tolist()) == {0, 1}
        ]

    def participant_means(self) -> np.ndarray:
        """(participant, [mean baseline, mean task]) matrix over complete participants."""
        rows = []
        for p in self.complete_participants():
            mine = self.participant_ids == p
            rows.append([
                self.values[mine & (self.groups == 0)].mean(),
                self.values[mine & (self.groups == 1)].mean(),
            ])
        return np.array(rows, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class LmmFit:
    beta0: float
    beta1: float
    sigma_u2: float
    sigma_e2: float
    se_beta1: float
    p_value: float
    converged: bool
    variance_ratio: float = 0.0
    reml_objective: float = float('nan')
    n_obs: int = 0
    n_participants: int = 0
    objective_trace: Tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.sigma_u2 < 0:
            raise ValueError(f"Random-intercept variance must be >= 0, got {self.sigma_u2}")
        if not self.sigma_e2 > 0:
            raise ValueError(f"Residual variance must be positive, got {self.sigma_e2}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value outside [0, 1]: {self.p_value}")


class _RandomInterceptModel:
    """Sufficient statistics of the random-intercept model per participant."""

    def __init__(self, obs: PairedObservations):
        if obs.n_participants < 2:
            raise ModelError(f"LMM needs at least 2 participants, got {obs.n_participants}")
        if obs.group_values(0).size == 0 or obs.group_values(1).size == 0:
            raise ModelError("Singular design: baseline or task group is empty")
        missing = set(obs.participants) - set(obs.complete_participants())
        if missing:
            logger.debug(f"Participants missing a group: {sorted(missing)}")

        codes = np.unique(obs.participant_ids, return_inverse=True)[1]
        self.X = np.column_stack([np.ones(len(obs)), obs.groups.astype(float)])
        self.y = obs.values
        self.n, self.p = self.X.shape
        self.counts = np.bincount(codes).astype(float)
        n_groups = self.counts.size
        self.sum_x = np.zeros((n_groups, self.p))
        np.add.at(self.sum_x, codes, self.X)
        self.sum_y = np.bincount(codes, weights=self.y, minlength=n_groups)
        self.xtx = self.X.T @ self.X
        self.xty = self.X.T @ self.y
        self.yty = float(self.y @ self.y)

        if np.linalg.matrix_rank(self.xtx) < self.p:
            raise ModelError("Singular design matrix")

    def solve(self, lam: float) -> Dict[str, float]:
        # H_i^-1 = I - c_i * 11', c_i = lam / (1 + lam * n_i)
        c = lam / (1.0 + lam * self.counts)
        xhx = self.xtx - (self.sum_x * c[:, None]).T @ self.sum_x
        xhy = self.xty - (self.sum_x * c[:, None]).T @ self.sum_y
        yhy = self.yty - float(np.sum(c * self.sum_y ** 2))

        try:
            xhx_inv = np.linalg.inv(xhx)
        except np.linalg.LinAlgError:
            raise ModelError(f"GLS normal equations singular at variance ratio {lam:g}")
        beta = xhx_inv @ xhy
        quad = max(yhy - float(beta @ xhy), 0.0)
        dof = self.n - self.p
        sign, logdet_xhx = np.linalg.slogdet(xhx)
        if quad <= 0 or sign <= 0:
            objective = float('-inf') if quad <= 0 else float('inf')
        else:
            objective = (
                dof * np.log(quad)
                + float(np.sum(np.log1p(lam * self.counts)))
                + logdet_xhx
            )
        return {
            'beta0': float(beta[0]),
            'beta1': float(beta[1]),
            'quad': quad,
            'sigma_e2': quad / dof if dof > 0 else float('nan'),
            'var_beta1': float(xhx_inv[1, 1]),
            'objective': float(objective),
        }


def _wald_p_value(estimate: float, se: float) -> float:
    if se <= 0:
        return 0.0 if estimate != 0 else 1.0
    return float(min(1.0, 2.0 * stats.norm.sf(abs(estimate / se))))


def _fit_from_solution(
    model: _RandomInterceptModel,
    lam: float,
    solution: Dict[str, float],
    converged: bool,
    trace: Tuple[float, ...] = ()
) -> LmmFit:
    sigma_e2 = solution['sigma_e2']
    if not sigma_e2 > 0:
        raise ModelError("Residual variance is zero; the model is degenerate")
    se = float(np.sqrt(sigma_e2 * solution['var_beta1']))
    return LmmFit(
        beta0=solution['beta0'],
        beta1=solution['beta1'],
        sigma_u2=lam * sigma_e2,
        sigma_e2=sigma_e2,
        se_beta1=se,
        p_value=_wald_p_value(solution['beta1'], se),
        converged=converged,
        variance_ratio=lam,
        reml_objective=solution['objective'],
        n_obs=model.n,
        n_participants=int(model.counts.size),
        objective_trace=trace,
    )


def fit_lmm_at(obs: PairedObservations, lam: float) -> LmmFit:
    """GLS fit with the variance ratio ``sigma_u2 / sigma_e2`` held at ``lam``."""
    if lam < 0:
        raise ModelError(f"Variance ratio must be >= 0, got {lam}")
    model = _RandomInterceptModel(obs)
    return _fit_from_solution(model, lam, model.solve(lam), converged=True)


def fit_lmm(obs: PairedObservations, config: Optional[Config] = None) -> LmmFit:
    config = config or Config()
    model = _RandomInterceptModel(obs)
    low, high = config.lmm_lambda_bounds

    evaluations: List[float] = []

    def objective(lam: float) -> float:
        value = model.solve(lam)['objective']
        evaluations.append(value)
        return value

    result = optimize.minimize_scalar(
        objective,
        bounds=(low, high),
        method='bounded',
        options={'xatol': config.lmm_tolerance, 'maxiter': config.lmm_max_iterations},
    )
    lam = float(result.x)
    converged = bool(result.success)

    # Bounded Brent never evaluates the endpoints themselves
    for edge in (low, high):
        if model.solve(edge)['objective'] <= model.solve(lam)['objective']:
            lam = edge

    trace = tuple(np.minimum.accumulate(evaluations)) if evaluations else ()
    if not converged:
        logger.warning(
            f"REML search did not converge after {result.nfev} evaluations; "
            f"using best iterate lambda={lam:g}"
        )
    fit = _fit_from_solution(model, lam, model.solve(lam), converged, trace)
    logger.debug(
        f"LMM: b1={fit.beta1:.4g} se={fit.se_beta1:.3g} p={fit.p_value:.3g} "
        f"su2={fit.sigma_u2:.3g} se2={fit.sigma_e2:.3g} lambda={lam:.4g}"
    )
    return fit


def cohens_d(fit: LmmFit) -> float:
    if not fit.converged:
        raise ModelError("Cohen's d requires a converged LMM fit")
    total = fit.sigma_u2 + fit.sigma_e2
    if not total > 0:
        raise ModelError("Total variance is zero")
    return fit.beta1 / float(np.sqrt(total))


def significance_stars(p_value: float, config: Optional[Config] = None) -> str:
    config = config or Config()
    if not np.isfinite(p_value):
        return ''
    for threshold, stars in config.significance_levels:
        if p_value < threshold:
            return stars
    return ''


def auc(values_0: Sequence[float], values_1: Sequence[float]) -> float:
    """P(X1 > X0) + P(X1 = X0) / 2 from the Mann-Whitney U statistic."""
    x0 = np.asarray(values_0, dtype=float)
    x1 = np.asarray(values_1, dtype=float)
    if x0.size == 0 or x1.size == 0:
        raise DataError("AUC needs at least one value on each side")
    # Midranks give ties half weight
    ranks = stats.rankdata(np.concatenate([x0, x1]))
    u1 = float(ranks[x0.size:].sum()) - x1.size * (x1.size + 1) / 2.0
    return u1 / (x0.size * x1.size)


def balance_rows(rows: Sequence[Sequence[float]]) -> np.ndarray:
    """Truncate ragged repeated measures to the smallest common count."""
    counts = [len(r) for r in rows]
    if not counts:
        raise DataError("ICC needs at least one participant")
    k = min(counts)
    if k != max(counts):
        logger.warning(
            f"Unequal repeated-measure counts {sorted(set(counts))}; "
            f"truncating every participant to {k}"
        )
    return np.array([list(r)[:k] for r in rows], dtype=float).reshape(len(rows), k)


def _anova_mean_squares(matrix: np.ndarray) -> Dict[str, float]:
    n, k = matrix.shape
    grand = matrix.mean()
    ss_total = float(((matrix - grand) ** 2).sum())
    ss_rows = k * float(((matrix.mean(axis=1) - grand) ** 2).sum())
    ss_cols = n * float(((matrix.mean(axis=0) - grand) ** 2).sum())
    ss_error = max(ss_total - ss_rows - ss_cols, 0.0)
    return {
        'ms_rows': ss_rows / (n - 1),
        'ms_error': ss_error / ((n - 1) * (k - 1)),
        'ms_within': max(ss_total - ss_rows, 0.0) / (n * (k - 1)),
    }


def icc(
    matrix: Sequence[Sequence[float]],
    form: IccForm = IccForm.CONSISTENCY
) -> float:
    """
    Single-measure intraclass correlation of a participants x measures matrix.

    ``consistency`` is ICC(3,1), two-way mixed; ``one-way`` is ICC(1,1),
    one-way random. Ragged rows are truncated to the shortest.
    """
    data = matrix if isinstance(matrix, np.ndarray) else balance_rows(matrix)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DataError(f"ICC needs at least 2 participants, got shape {data.shape}")
    if data.shape[1] < 2:
        raise DataError(f"ICC needs at least 2 measures per participant, got {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise DataError("ICC matrix contains non-finite values")

    k = data.shape[1]
    ms = _anova_mean_squares(data)
    error = ms['ms_error'] if form == IccForm.CONSISTENCY else ms['ms_within']
    denominator = ms['ms_rows'] + (k - 1) * error
    if not denominator > 0:
        raise DataError("ICC undefined for a matrix with no variance")
    return (ms['ms_rows'] - error) / denominator


def icc_both(matrix: Sequence[Sequence[float]]) -> Dict[IccForm, float]:
    data = matrix if isinstance(matrix, np.ndarray) else balance_rows(matrix)
    return {form: icc(data, form) for form in IccForm}
