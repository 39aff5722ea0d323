"""Fusion-coefficient search: alpha grid with mirror/early termination,
random simplex search for three or more weights, and the external
evaluator protocol."""

from __future__ import annotations

import csv
import os
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fusekit.fusion import (
    FusionCoefficients,
    cosine_similarity,
    fuse_many,
    fuse_pair,
)
from fusekit.tensor_store import Checkpoint, write_archive

SIMILARITY_WARN_THRESHOLD = 0.925
KEY_DECIMALS = 10


class EvaluatorError(Exception):
    """External evaluator failed (exit code, timeout, unparsable score)."""


def _key(coeffs) -> tuple[float, ...]:
    return tuple(round(float(c), KEY_DECIMALS) for c in coeffs)


@dataclass
class Evaluator:
    """Score source for coefficient search.

    Table mode maps coefficient vectors (rounded to the grid resolution)
    to scores; command mode runs a shell command with a ``{checkpoint}``
    placeholder and parses the final stdout line as the score.
    """

    mode: str
    table: dict[tuple[float, ...], float] | None = None
    command: str | None = None
    timeout: float | None = None
    workdir: str | Path | None = None
    keep: bool = False
    fn: object | None = None

    @classmethod
    def from_table(cls, table: dict) -> "Evaluator":
        normalized = {}
        for coeffs, score in table.items():
            if isinstance(coeffs, (int, float)):
                coeffs = (float(coeffs), 1.0 - float(coeffs))
            normalized[_key(coeffs)] = float(score)
        return cls(mode="table", table=normalized)

    @classmethod
    def from_csv(cls, path: str | Path) -> "Evaluator":
        """Read ``alpha,score`` or ``c1,...,cK,score`` rows (header optional)."""
        table = {}
        with open(path, newline="") as f:
            for row in csv.reader(f):
                if not row:
                    continue
                try:
                    values = [float(cell) for cell in row]
                except ValueError:
                    continue  # header row
                if len(values) < 2:
                    raise EvaluatorError(f"table row needs at least 2 columns: {row}")
                coeffs = values[:-1]
                if len(coeffs) == 1:
                    coeffs = [coeffs[0], 1.0 - coeffs[0]]
                table[_key(coeffs)] = values[-1]
        if not table:
            raise EvaluatorError(f"no usable rows in score table {path}")
        return cls(mode="table", table=table)

    @classmethod
    def from_function(cls, fn) -> "Evaluator":
        """Score vectors with an in-process callable (testing/scripting)."""
        return cls(mode="function", fn=fn)

    @classmethod
    def from_command(
        cls,
        command: str,
        timeout: float | None = None,
        workdir: str | Path | None = None,
        keep: bool = False,
    ) -> "Evaluator":
        return cls(mode="command", command=command, timeout=timeout, workdir=workdir, keep=keep)

    def score(self, coeffs, checkpoint_factory=None) -> float:
        """Score a coefficient vector.

        checkpoint_factory() must return the fused Checkpoint; it is
        only called in command mode.
        """
        if self.mode == "table":
            key = _key(coeffs)
            if key not in self.table:
                raise EvaluatorError(f"no table entry for coefficients {key}")
            return self.table[key]
        if self.mode == "function":
            return float(self.fn(tuple(float(c) for c in coeffs)))
        if self.mode != "command":
            raise EvaluatorError(f"unknown evaluator mode {self.mode!r}")
        if checkpoint_factory is None:
            raise EvaluatorError("command mode needs checkpoints to fuse")
        ckpt = checkpoint_factory()
        workdir = Path(self.workdir) if self.workdir else Path(tempfile.gettempdir())
        workdir.mkdir(parents=True, exist_ok=True)
        tag = "_".join(f"{c:.4f}" for c in _key(coeffs))
        fused_path = workdir / f"fused_{tag}_{os.getpid()}.fta"
        write_archive(ckpt, fused_path)
        try:
            return evaluate_external(self, fused_path)
        finally:
            if not self.keep and fused_path.exists():
                fused_path.unlink()


@dataclass
class SearchResult:
    """Evaluated coefficient vectors with scores and the argmax."""

    evaluations: list[tuple[tuple[float, ...], float]]
    best: tuple[float, ...]
    best_score: float
    terminated_early: bool = False

    def to_dict(self) -> dict:
        return {
            "evaluations": [
                {"coefficients": list(c), "score": s} for c, s in self.evaluations
            ],
            "best": list(self.best),
            "best_score": self.best_score,
            "terminated_early": self.terminated_early,
        }


def evaluate_external(evaluator: Evaluator, fused_path: str | Path) -> float:
    """Run the evaluator command on a written checkpoint and parse the score.

    The ``{checkpoint}`` placeholder is substituted with the path; the
    final non-empty line of standard output must be a decimal score.
    """
    if evaluator.mode != "command" or not evaluator.command:
        raise EvaluatorError("evaluate_external requires a command-mode evaluator")
    command = evaluator.command.replace("{checkpoint}", shlex.quote(str(fused_path)))
    try:
        proc = subprocess.run(
            command,
            shell=True,
            capture_output=True,
            text=True,
            timeout=evaluator.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise EvaluatorError(f"evaluator timed out after {evaluator.timeout}s: {command}") from exc
    if proc.returncode != 0:
        raise EvaluatorError(
            f"evaluator exited with {proc.returncode}: {command}\nstderr: {proc.stderr.strip()}"
        )
    lines = [line.strip() for line in proc.stdout.splitlines() if line.strip()]
    if not lines:
        raise EvaluatorError(f"evaluator produced no output: {command}")
    try:
        return float(lines[-1])
    except ValueError as exc:
        raise EvaluatorError(f"unparsable score {lines[-1]!r} from: {command}") from exc


def _grid_alphas(step: float) -> list[float]:
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step {step!r} must divide 1")
    return [round(i / n, KEY_DECIMALS) for i in range(n + 1)]


def _pick_best(scores: dict[float, float]) -> tuple[float, float]:
    # Ties break toward alpha closest to 0.5, then the smaller alpha.
    best_score = max(scores.values())
    candidates = [a for a, s in scores.items() if s == best_score]
    best = min(candidates, key=lambda a: (abs(a - 0.5), a))
    return best, best_score


def grid_search_alpha(
    a: Checkpoint | None,
    b: Checkpoint | None,
    evaluator: Evaluator,
    step: float = 0.05,
    early_stop: bool = False,
    *,
    warn_low_similarity: bool = True,
) -> SearchResult:
    """Search alpha over {0, step, ..., 1}; endpoints are the single weights.

    With early_stop the grid is walked upward from 0 while the score
    improves; on the first non-improvement it jumps to 1 and walks
    downward, stopping when neither direction improves further. The
    returned best is the argmax over the evaluated points.
    """
    alphas = _grid_alphas(step)
    if a is not None and b is not None and warn_low_similarity:
        sim = cosine_similarity(a, b)
        if sim.cosine < SIMILARITY_WARN_THRESHOLD:
            warnings.warn(
                f"cosine similarity {sim.cosine:.4f} is below "
                f"{SIMILARITY_WARN_THRESHOLD}; fusion is unlikely to beat the single weights",
                stacklevel=2,
            )

    scores: dict[float, float] = {}
    order: list[float] = []

    def evaluate(alpha: float) -> float:
        if alpha not in scores:
            factory = None
            if a is not None and b is not None:
                factory = lambda: fuse_pair(a, b, alpha)
            scores[alpha] = evaluator.score((alpha, round(1.0 - alpha, KEY_DECIMALS)), factory)
            order.append(alpha)
        return scores[alpha]

    if not early_stop:
        for alpha in alphas:
            evaluate(alpha)
        terminated_early = False
    else:
        evaluate(alphas[0])
        evaluate(alphas[-1])
        prev = scores[alphas[0]]
        for alpha in alphas[1:-1]:
            s = evaluate(alpha)
            if s <= prev:
                break
            prev = s
        prev = scores[alphas[-1]]
        for alpha in reversed(alphas[1:-1]):
            if alpha in scores:
                break
            s = evaluate(alpha)
            if s <= prev:
                break
            prev = s
        terminated_early = len(scores) < len(alphas)

    best, best_score = _pick_best(scores)
    evaluations = [((alpha, round(1.0 - alpha, KEY_DECIMALS)), scores[alpha]) for alpha in order]
    return SearchResult(
        evaluations=evaluations,
        best=(best, round(1.0 - best, KEY_DECIMALS)),
        best_score=best_score,
        terminated_early=terminated_early,
    )


def sample_simplex(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the k-simplex via sorted uniform spacings."""
    cuts = np.sort(rng.random(k - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def random_simplex_search(
    ckpts: list[Checkpoint] | None,
    evaluator: Evaluator,
    trials: int = 50,
    seed: int = 0,
    *,
    num_weights: int | None = None,
) -> SearchResult:
    """Random search over the coefficient simplex for K >= 3 weights.

    Trial 0 is always the uniform vector (the SWA baseline); remaining
    trials draw uniformly from the simplex. Deterministic per seed.
    """
    if ckpts is not None:
        k = len(ckpts)
    elif num_weights is not None:
        k = num_weights
    else:
        raise ValueError("need checkpoints or num_weights")
    if k < 3:
        raise ValueError(f"random_simplex_search needs at least 3 weights, got {k}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    rng = np.random.default_rng(seed)
    vectors = [np.full(k, 1.0 / k)]
    for _ in range(trials - 1):
        vectors.append(sample_simplex(k, rng))

    evaluations = []
    best = None
    best_score = -np.inf
    for vec in vectors:
        coeffs = tuple(float(c) for c in vec)
        factory = None
        if ckpts is not None:
            factory = lambda v=vec: fuse_many(ckpts, FusionCoefficients(tuple(v)))
        score = evaluator.score(coeffs, factory)
        evaluations.append((coeffs, score))
        if score > best_score:
            best, best_score = coeffs, score
    return SearchResult(
        evaluations=evaluations, best=best, best_score=best_score, terminated_early=False
    )
