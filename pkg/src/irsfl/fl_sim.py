"""Synthetic federated training on a regularized least-squares task.

Per-sample loss on device k: ``f_i(w) = 0.5 (x_i^T w - y_i)^2 + mu/(2 D_k) |w|^2``.
The global loss is the sample average, ``F = (1/D) sum_k D_k F_k``, so its
Hessian ``H = (X^T X + K mu I) / D`` gives ``L = lambda_max(H)`` and
``delta = lambda_min(H)`` exactly, and ``F*`` is available in closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .system import Schedule


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    X: tuple
    y: tuple
    mu: float = 0.1

    @classmethod
    def generate(
        cls, samples: Sequence[int], d: int = 5, mu: float = 0.1, noise: float = 0.5, seed: int = 0
    ) -> "SyntheticTask":
        """Per-device Gaussian features with device-specific means, noisy linear targets."""
        rng = np.random.default_rng(seed)
        w_true = rng.standard_normal(d)
        X, y = [], []
        for n in samples:
            shift = rng.standard_normal(d)
            Xk = rng.standard_normal((int(n), d)) + shift
            X.append(Xk)
            y.append(Xk @ w_true + noise * rng.standard_normal(int(n)))
        return cls(tuple(X), tuple(y), mu)

    @property
    def K(self) -> int:
        return len(self.X)

    @property
    def d(self) -> int:
        return self.X[0].shape[1]

    @property
    def samples(self) -> np.ndarray:
        return np.array([x.shape[0] for x in self.X], dtype=float)

    @property
    def D(self) -> float:
        return float(self.samples.sum())

    def hessian(self) -> np.ndarray:
        Xa = np.vstack(self.X)
        return (Xa.T @ Xa + self.K * self.mu * np.eye(self.d)) / self.D

    def constants(self) -> tuple[float, float]:
        """(L, delta) of the global loss."""
        ev = np.linalg.eigvalsh(self.hessian())
        return float(ev[-1]), float(ev[0])

    def optimum(self) -> np.ndarray:
        Xa, ya = np.vstack(self.X), np.concatenate(self.y)
        return np.linalg.solve(Xa.T @ Xa + self.K * self.mu * np.eye(self.d), Xa.T @ ya)

    def loss(self, w) -> float:
        total = 0.0
        for Xk, yk in zip(self.X, self.y):
            r = Xk @ w - yk
            total += 0.5 * r @ r + 0.5 * self.mu * (w @ w)
        return total / self.D

    def local_grad(self, w, k: int) -> np.ndarray:
        Xk, yk = self.X[k], self.y[k]
        return (Xk.T @ (Xk @ w - yk) + self.mu * w) / Xk.shape[0]

    def global_grad(self, w) -> np.ndarray:
        n = self.samples
        return sum(n[k] * self.local_grad(w, k) for k in range(self.K)) / self.D

    def max_sample_grad_sq(self, w) -> float:
        """Largest per-sample squared gradient norm at ``w``."""
        best = 0.0
        for Xk, yk in zip(self.X, self.y):
            G = Xk * (Xk @ w - yk)[:, None] + (self.mu / Xk.shape[0]) * w[None, :]
            best = max(best, float(np.max(np.einsum("ij,ij->i", G, G))))
        return best


def local_update(task: SyntheticTask, w, k: int, eta: float) -> np.ndarray:
    """One full-batch gradient step on device ``k``'s data."""
    return w - eta * task.local_grad(w, k)


def aggregate(locals_, schedule: Schedule, D) -> np.ndarray:
    """Data-weighted average of the scheduled devices' models."""
    mask = schedule.as_array()
    if not mask.any():
        raise ValueError("cannot aggregate an empty schedule")
    D = np.asarray(D, dtype=float)
    W = np.asarray(locals_, dtype=float)
    return (D[mask] @ W[mask]) / D[mask].sum()


@dataclass(frozen=True)
class TrainingTrace:
    losses: np.ndarray
    gaps: np.ndarray
    e_norm_sq: np.ndarray
    eps_max: float
    w: np.ndarray


def run_training(task: SyntheticTask, schedules: Sequence[Schedule], eta: float | None = None, w0=None) -> TrainingTrace:
    """Run ``len(schedules)`` rounds; entry ``t`` of the loss/gap traces is after ``t`` rounds."""
    L, _ = task.constants()
    eta = 1.0 / L if eta is None else eta
    w = np.zeros(task.d) if w0 is None else np.asarray(w0, dtype=float)
    f_star = task.loss(task.optimum())
    n = task.samples
    losses, e_sq = [task.loss(w)], []
    eps = 0.0
    for sched in schedules:
        eps = max(eps, task.max_sample_grad_sq(w))
        grads = np.stack([task.local_grad(w, k) for k in range(task.K)])
        mask = sched.as_array()
        partial = (n[mask] @ grads[mask]) / n[mask].sum() if mask.any() else np.zeros(task.d)
        e = (n @ grads) / n.sum() - partial
        e_sq.append(float(e @ e))
        w = aggregate(w[None, :] - eta * grads, sched, n)
        losses.append(task.loss(w))
    losses = np.array(losses)
    return TrainingTrace(losses, losses - f_star, np.array(e_sq), eps, w)


def write_trace_csv(path, trace: TrainingTrace, bounds) -> None:
    """Columns: round, loss, gap, bound, e_norm_sq (blank for round 0)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["round", "loss", "gap", "bound", "e_norm_sq"])
        for t in range(len(trace.losses)):
            e = "" if t == 0 else "%.17g" % trace.e_norm_sq[t - 1]
            out.writerow([t, "%.17g" % trace.losses[t], "%.17g" % trace.gaps[t], "%.17g" % bounds[t], e])
