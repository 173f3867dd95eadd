"""Triplet losses and the adversarial (worst-case anchor perturbation) variant.

Every loss returns a :class:`LossOutput` holding the value and analytic
gradients with respect to the anchor, positive and negative embeddings.
Distances are squared Euclidean throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import SolverError, UsageError
from .linalg import Rng, as_vec, lr_sum

log = logging.getLogger(__name__)

LOSS_NAMES = ("hinge", "softplus", "ate", "gaussian-map")


@dataclass
class Triplet:
    a: np.ndarray
    p: np.ndarray
    n: np.ndarray
    src: tuple[int, int, int] = (0, 0, 0)
    labels: tuple[int, int, int] | None = None

    def __post_init__(self):
        self.a, self.p, self.n = as_vec(self.a), as_vec(self.p), as_vec(self.n)
        if not self.a.shape == self.p.shape == self.n.shape:
            raise UsageError("triplet members must share a dimension")
        if self.labels is not None:
            ya, yp, yn = self.labels
            if not (ya == yp and yp != yn):
                raise UsageError(f"triplet labels {self.labels} violate y_a == y_p != y_n")


@dataclass(frozen=True)
class PerturbationConfig:
    epsilon_a: float = 1e-2
    # what to do when p == n and the worst-case direction is undefined
    degenerate_policy: str = "zero"

    def __post_init__(self):
        if not self.epsilon_a >= 0:
            raise UsageError("epsilon_a must be >= 0")
        if self.degenerate_policy not in ("zero", "raise"):
            raise UsageError(f"unknown degenerate_policy {self.degenerate_policy!r}")


@dataclass(frozen=True)
class GaussianMapConfig:
    sigma_a: float = 1.0
    inner_steps: int = 50
    # None means 0.1 * sigma_a**2
    inner_step_size: float | None = None
    # stop once the inner gradient norm falls to this
    tol: float = 1e-10

    def __post_init__(self):
        if not self.sigma_a > 0:
            raise UsageError("sigma_a must be > 0")
        if self.inner_steps < 1:
            raise UsageError("inner_steps must be >= 1")
        if self.inner_step_size is not None and not self.inner_step_size > 0:
            raise UsageError("inner_step_size must be > 0")


@dataclass
class LossOutput:
    value: float
    grad_a: np.ndarray
    grad_p: np.ndarray
    grad_n: np.ndarray


def softplus(z: float) -> float:
    """ln(1 + e^z) without overflow."""
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _margin_term(t: Triplet) -> tuple[float, np.ndarray, np.ndarray]:
    """Return d_ap - d_an, a - p, a - n."""
    ap = t.a - t.p
    an = t.a - t.n
    return float(lr_sum(ap * ap)) - float(lr_sum(an * an)), ap, an


def triplet_probability(t: Triplet) -> float:
    """Probability that the triplet is correctly ranked: 1 / (1 + e^(d_ap - d_an))."""
    z, _, _ = _margin_term(t)
    return sigmoid(-z)


def _softplus_output(z: float, ap: np.ndarray, an: np.ndarray) -> LossOutput:
    w = sigmoid(z)
    # dz/da = 2(a-p) - 2(a-n), dz/dp = -2(a-p), dz/dn = 2(a-n)
    return LossOutput(softplus(z), w * 2.0 * (ap - an), -w * 2.0 * ap, w * 2.0 * an)


def softplus_triplet_loss(t: Triplet) -> LossOutput:
    z, ap, an = _margin_term(t)
    return _softplus_output(z, ap, an)


def hinge_triplet_loss(t: Triplet, margin: float = 0.3) -> LossOutput:
    """max(0, d_ap - d_an + margin); zero subgradient at the kink."""
    if margin < 0:
        raise UsageError("margin must be >= 0")
    z, ap, an = _margin_term(t)
    h = z + margin
    if h <= 0:
        zero = np.zeros_like(t.a)
        return LossOutput(0.0, zero, zero.copy(), zero.copy())
    return LossOutput(h, 2.0 * (ap - an), -2.0 * ap, 2.0 * an)


def worst_case_perturbation(t: Triplet, c: PerturbationConfig) -> np.ndarray:
    """Anchor shift of norm epsilon_a that maximises the softplus loss.

    Points from p toward n. When p == n every direction is equally bad and
    the zero vector is returned (or UsageError under policy "raise").
    """
    d = t.n - t.p
    norm = float(np.sqrt(lr_sum(d * d)))
    if c.epsilon_a == 0.0:
        return np.zeros_like(t.a)
    if norm == 0.0:
        if c.degenerate_policy == "raise":
            raise UsageError("worst-case direction undefined: positive equals negative")
        log.debug("degenerate triplet (p == n), src=%s: zero perturbation", t.src)
        return np.zeros_like(t.a)
    return c.epsilon_a * (d / norm)


def ate_loss(t: Triplet, c: PerturbationConfig) -> LossOutput:
    """Softplus loss at the worst-case perturbed anchor, in closed form.

    value = ln(1 + exp(d_ap - d_an + 2 eps ||n - p||)). The perturbation
    direction is held constant; the adaptive-margin term 2 eps ||n - p|| is
    differentiated with respect to p and n.
    """
    z, ap, an = _margin_term(t)
    d = t.n - t.p
    norm = float(np.sqrt(lr_sum(d * d)))
    if c.epsilon_a * norm == 0.0:
        if norm == 0.0 and c.epsilon_a > 0.0:
            worst_case_perturbation(t, c)  # applies the degenerate policy
        return _softplus_output(z, ap, an)
    out = _softplus_output(z + 2.0 * c.epsilon_a * norm, ap, an)
    w = sigmoid(z + 2.0 * c.epsilon_a * norm)
    u = d / norm
    out.grad_p = out.grad_p - w * 2.0 * c.epsilon_a * u
    out.grad_n = out.grad_n + w * 2.0 * c.epsilon_a * u
    return out


def _inner_objective(x: np.ndarray, t: Triplet, inv_var: float) -> tuple[float, float]:
    xp = x - t.p
    xn = x - t.n
    xa = t.a - x
    z = float(lr_sum(xp * xp)) - float(lr_sum(xn * xn))
    return softplus(z) + 0.5 * inv_var * float(lr_sum(xa * xa)), z


def gaussian_map_triplet_loss(t: Triplet, g: GaussianMapConfig) -> LossOutput:
    """min over x of softplus(d(x,p) - d(x,n)) + ||a - x||^2 / (2 sigma^2).

    Solved by gradient descent from x = a. Gradients are taken at the inner
    optimum with x held fixed.
    """
    inv_var = 1.0 / (g.sigma_a * g.sigma_a)
    d = t.n - t.p
    # gradient of the inner objective is Lipschitz with constant 1/sigma^2 + ||n-p||^2
    lipschitz = inv_var + float(lr_sum(d * d))
    step = 0.1 * g.sigma_a ** 2 if g.inner_step_size is None else g.inner_step_size
    step = min(step, 1.0 / lipschitz)

    x = t.a.copy()
    f, z = _inner_objective(x, t, inv_var)
    rises = 0
    history = [f]
    for _ in range(g.inner_steps):
        grad = sigmoid(z) * 2.0 * d + inv_var * (x - t.a)
        # the inner objective is strongly convex, so a small gradient here
        # bounds the error of the envelope gradients returned below
        if float(np.sqrt(lr_sum(grad * grad))) <= g.tol:
            break
        x_new = x - step * grad
        if np.array_equal(x_new, x):
            break
        f_new, z_new = _inner_objective(x_new, t, inv_var)
        history.append(f_new)
        if not math.isfinite(f_new):
            raise SolverError("inner solve produced a non-finite objective",
                              {"src": t.src, "history": history})
        # changes within a few ulps of f are roundoff, not divergence
        noise = 4 * np.finfo(float).eps * max(1.0, abs(f))
        if f_new - f > noise:
            rises += 1
            if rises >= 3:
                raise SolverError("inner solve diverged (objective rose 3 steps running)",
                                  {"src": t.src, "step": step, "history": history})
        else:
            rises = 0
        x, f, z = x_new, f_new, z_new

    w = sigmoid(z)
    return LossOutput(f, inv_var * (t.a - x), -w * 2.0 * (x - t.p), w * 2.0 * (x - t.n))


def select_loss(name: str, *, perturbation: PerturbationConfig | None = None,
                gaussian: GaussianMapConfig | None = None,
                margin: float = 0.3) -> Callable[[Triplet], LossOutput]:
    """Map a loss name to a per-triplet callable."""
    if name == "softplus":
        return softplus_triplet_loss
    if name == "hinge":
        return lambda t: hinge_triplet_loss(t, margin)
    if name == "ate":
        c = perturbation or PerturbationConfig()
        return lambda t: ate_loss(t, c)
    if name == "gaussian-map":
        gc = gaussian or GaussianMapConfig()
        return lambda t: gaussian_map_triplet_loss(t, gc)
    raise UsageError(f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}")


@dataclass
class BatchLoss:
    value: float
    grad_embeddings: np.ndarray
    per_triplet: list[float] = field(default_factory=list)


def batch_loss(embeddings: np.ndarray, triplets: Sequence[tuple[int, int, int]],
               loss_fn: Callable[[Triplet], LossOutput]) -> BatchLoss:
    """Mean loss over index triplets into ``embeddings`` (shape (B, d)).

    Per-triplet gradients are scattered back onto the rows they came from,
    scaled by 1/len(triplets).
    """
    if len(triplets) == 0:
        raise UsageError("batch_loss needs at least one triplet")
    emb = np.asarray(embeddings, dtype=np.float64)
    grad = np.zeros_like(emb)
    values = []
    for ia, ip, ineg in triplets:
        out = loss_fn(Triplet(emb[ia], emb[ip], emb[ineg], src=(ia, ip, ineg)))
        values.append(out.value)
        grad[ia] += out.grad_a
        grad[ip] += out.grad_p
        grad[ineg] += out.grad_n
    n = len(values)
    return BatchLoss(sum(values) / n, grad / n, values)


# -- oracles -----------------------------------------------------------------

def sample_ball(rng: Rng, dim: int, radius: float, n: int) -> np.ndarray:
    """n points uniformly distributed in the closed ball of the given radius."""
    g = rng.gaussian((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(n) ** (1.0 / dim)
    return g * r[:, None]


def perturbed_softplus_values(t: Triplet, deltas: np.ndarray) -> np.ndarray:
    """Softplus loss at anchors a + delta for each row of ``deltas``, by direct distances."""
    anchors = t.a[None, :] + deltas
    dp = anchors - t.p
    dn = anchors - t.n
    z = np.einsum("ij,ij->i", dp, dp) - np.einsum("ij,ij->i", dn, dn)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def projected_gradient_ascent(t: Triplet, epsilon: float, rng: Rng,
                              steps: int = 200, restarts: int = 3) -> tuple[float, np.ndarray]:
    """Maximise the perturbed softplus loss over the epsilon-ball by PGA.

    Uses only the loss gradient and Euclidean projection; knows nothing about
    the closed-form maximiser.
    """
    if epsilon == 0.0:
        z, _, _ = _margin_term(t)
        return softplus(z), np.zeros_like(t.a)
    best_val, best_delta = -math.inf, None
    starts = sample_ball(rng, t.a.size, epsilon, restarts)
    for delta in starts:
        for _ in range(steps):
            x = t.a + delta
            xp, xn = x - t.p, x - t.n
            z = float(np.dot(xp, xp)) - float(np.dot(xn, xn))
            grad = sigmoid(z) * 2.0 * (xp - xn)
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0:
                break
            # normalised step of size epsilon, then project back onto the ball
            cand = delta + epsilon * grad / gnorm
            cnorm = float(np.linalg.norm(cand))
            if cnorm > epsilon:
                cand = cand * (epsilon / cnorm)
            if np.array_equal(cand, delta):
                break
            delta = cand
        val = float(perturbed_softplus_values(t, delta[None, :])[0])
        if val > best_val:
            best_val, best_delta = val, delta
    return best_val, best_delta


@dataclass
class EquivalenceReport:
    closed_form: float
    sampled_max: float
    pga_max: float
    closed_ge_sampled: bool
    pga_rel_error: float

    @property
    def ok(self) -> bool:
        return self.closed_ge_sampled and self.pga_rel_error <= 1e-6


def adversarial_loss_equivalence_oracle(t: Triplet, c: PerturbationConfig, n_samples: int,
                                        rng: Rng | None = None) -> EquivalenceReport:
    """Compare the closed-form adversarial loss with brute-force maximisation.

    Monte-Carlo sampling of the ball gives a lower bound on the true maximum;
    projected gradient ascent should reach it.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    rng = rng or Rng(0)
    closed = ate_loss(t, c).value
    deltas = sample_ball(rng, t.a.size, c.epsilon_a, n_samples)
    sampled = float(perturbed_softplus_values(t, deltas).max())
    pga, _ = projected_gradient_ascent(t, c.epsilon_a, rng)
    rel = abs(pga - closed) / max(abs(closed), 1e-300)
    return EquivalenceReport(closed, sampled, pga, closed >= sampled, rel)
