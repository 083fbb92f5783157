"""Balanced-panel data model, within transformation, and first-step estimation.

The first step of every estimator in this package is the same: demean each
individual's series, run pooled least squares on the demeaned data, and back
out the individual intercepts. Its residuals and within-transformed regressors
feed the bias and covariance machinery downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import PanelDataError, PanelTooShort, SingularDesign

Array = np.ndarray


@dataclass
class PanelData:
    """A balanced panel: responses ``y`` (N x T) and regressors ``x`` (N x T x d).

    Every cell must be present and finite; N >= 2, T >= 2, d >= 1. The design
    row [1, x_it'] used by second-step regressions is formed on demand, never
    stored.
    """

    y: Array
    x: Array

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.y.ndim != 2:
            raise PanelDataError(f"y must be N x T, got shape {self.y.shape}")
        if self.x.ndim != 3:
            raise PanelDataError(f"x must be N x T x d, got shape {self.x.shape}")
        if self.x.shape[:2] != self.y.shape:
            raise PanelDataError(
                f"x leading dims {self.x.shape[:2]} do not match y shape {self.y.shape}"
            )
        n, t = self.y.shape
        d = self.x.shape[2]
        if n < 2 or t < 2 or d < 1:
            raise PanelDataError(
                f"panel requires N >= 2, T >= 2, d >= 1; got N={n}, T={t}, d={d}"
            )
        if not np.isfinite(self.y).all() or not np.isfinite(self.x).all():
            raise PanelDataError("panel contains non-finite values")

    @property
    def n_individuals(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_regressors(self) -> int:
        return self.x.shape[2]


@dataclass
class FirstStepFit:
    """Output of the first-step fixed-effects regression.

    ``eps_hat[i, t] = y[i, t] - theta_hat . x[i, t] - alpha_hat[i]`` holds to
    machine precision, ``b_matrix`` is the within Gram matrix divided by NT,
    and the within-transformed regressors are retained for covariance work.
    """

    theta_hat: Array   # (d,)
    alpha_hat: Array   # (N,)
    eps_hat: Array     # (N, T)
    b_matrix: Array    # (d, d)
    x_bar: Array       # (N, d)
    x_within: Array    # (N, T, d)


def within_transform(panel: PanelData):
    """Remove per-individual time means from responses and regressors.

    Returns (x_within, y_within, x_bar, y_bar). Per individual the demeaned
    columns sum to zero.
    """
    y_bar = panel.y.mean(axis=1)
    x_bar = panel.x.mean(axis=1)
    y_within = panel.y - y_bar[:, None]
    x_within = panel.x - x_bar[:, None, :]
    return x_within, y_within, x_bar, y_bar


def fixed_effects_fit(panel: PanelData, rcond_threshold: float = 1e-12) -> FirstStepFit:
    """Pooled within estimator of the common slopes plus individual intercepts.

    Solves the within normal equations with a symmetric positive-definite
    factorization. Raises SingularDesign when the within Gram matrix has
    reciprocal condition number below ``rcond_threshold`` (collinear or
    time-invariant regressors).
    """
    x_within, y_within, x_bar, y_bar = within_transform(panel)
    gram = np.einsum("itj,itk->jk", x_within, x_within)
    gram = 0.5 * (gram + gram.T)
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[-1] <= 0.0 or eigvals[0] <= eigvals[-1] * rcond_threshold:
        raise SingularDesign(
            "within Gram matrix is numerically singular "
            f"(eigenvalue range [{eigvals[0]:.3e}, {eigvals[-1]:.3e}])"
        )
    rhs = np.einsum("itj,it->j", x_within, y_within)
    theta_hat = np.linalg.solve(gram, rhs)
    alpha_hat = y_bar - x_bar @ theta_hat
    eps_hat = panel.y - panel.x @ theta_hat - alpha_hat[:, None]
    nt = panel.n_individuals * panel.n_periods
    return FirstStepFit(
        theta_hat=theta_hat,
        alpha_hat=alpha_hat,
        eps_hat=eps_hat,
        b_matrix=gram / nt,
        x_bar=x_bar,
        x_within=x_within,
    )


def split_halves(panel: PanelData):
    """Split the panel into two period-contiguous halves.

    The first half holds periods 1..floor(T/2), the second the rest;
    individuals are unchanged. Requires T >= 4.
    """
    t = panel.n_periods
    if t < 4:
        raise PanelTooShort(f"splitting requires T >= 4, got T={t}")
    half = t // 2
    first = PanelData(y=panel.y[:, :half].copy(), x=panel.x[:, :half].copy())
    second = PanelData(y=panel.y[:, half:].copy(), x=panel.x[:, half:].copy())
    return first, second


def pooled_design(panel: PanelData):
    """Stacked second-step data: responses (NT,) and design rows [1, x'] (NT, d+1).

    Rows are ordered individual-major: row i*T + t holds cell (i, t).
    """
    n, t, d = panel.x.shape
    w = np.empty((n * t, d + 1))
    w[:, 0] = 1.0
    w[:, 1:] = panel.x.reshape(n * t, d)
    return panel.y.reshape(n * t), w


def _sort_tokens(tokens):
    # numeric sort when every token parses as a number, else lexicographic,
    # so "t=2" precedes "t=10" in the common all-numeric case
    try:
        return sorted(tokens, key=float)
    except ValueError:
        return sorted(tokens)


def load_panel_csv(path) -> PanelData:
    """Read a balanced panel from long-format CSV.

    Expects a header ``id,t,y,x1,...,xd``; rows may come in any order. The id
    and t tokens are mapped to dense indices (sorted numerically when all
    tokens are numeric, lexicographically otherwise). Rejects duplicate or
    missing (id, t) cells, naming the offenders.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelDataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or header[0] != "id" or header[1] != "t" or header[2] != "y":
            raise PanelDataError(
                f"{path}: header must be id,t,y,x1,...,xd; got {','.join(header)}"
            )
        d = len(header) - 3
        expected_x = [f"x{j + 1}" for j in range(d)]
        if header[3:] != expected_x:
            raise PanelDataError(
                f"{path}: regressor columns must be {','.join(expected_x)}; "
                f"got {','.join(header[3:])}"
            )
        rows = {}
        duplicates = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelDataError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                )
            key = (row[0].strip(), row[1].strip())
            if key in rows:
                duplicates.append(key)
                continue
            try:
                values = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise PanelDataError(f"{path}: line {lineno}: {exc}") from None
            rows[key] = values
    if duplicates:
        shown = ", ".join(f"({i},{t})" for i, t in duplicates[:10])
        raise PanelDataError(f"{path}: duplicate (id,t) cells: {shown}")
    if not rows:
        raise PanelDataError(f"{path}: no data rows")

    ids = _sort_tokens({key[0] for key in rows})
    ts = _sort_tokens({key[1] for key in rows})
    missing = [(i, t) for i in ids for t in ts if (i, t) not in rows]
    if missing:
        shown = ", ".join(f"({i},{t})" for i, t in missing[:10])
        more = "" if len(missing) <= 10 else f" (and {len(missing) - 10} more)"
        raise PanelDataError(f"{path}: unbalanced panel; missing cells: {shown}{more}")

    n, t = len(ids), len(ts)
    y = np.empty((n, t))
    x = np.empty((n, t, d))
    for a, i in enumerate(ids):
        for b, s in enumerate(ts):
            vals = rows[(i, s)]
            y[a, b] = vals[0]
            x[a, b, :] = vals[1:]
    return PanelData(y=y, x=x)
