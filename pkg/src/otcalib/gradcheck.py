"""Central finite-difference checks for potentials and dual-loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from otcalib.picnn import PicnnPotential, dual_losses, forward, loss_gradients


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def _gate_pattern(pot: PicnnPotential, hidden) -> np.ndarray:
    # gates depend on the context only, so any y will do
    hidden = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    _, _, cache = forward(pot, np.zeros(hidden.shape[0]), hidden)
    parts = [rec["q"] > 0 for rec in cache["layers"] if "q" in rec]
    return np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0, dtype=bool)


@dataclass
class GradCheckResult:
    which: str
    max_rel_error: float
    worst_param: str
    n_entries: int
    kink_crossed: bool

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def check_loss_gradients(pot_g: PicnnPotential, pot_f: PicnnPotential, x, y, hidden,
                         which: str, eps: float = 1e-3) -> GradCheckResult:
    """Compare every analytic gradient entry of ``which`` to a central difference.

    ``kink_crossed`` flags perturbations that flip a ReLU gate, where the
    difference quotient is not a valid oracle.
    """
    _, grads = loss_gradients(pot_g, pot_f, x, y, hidden, which)
    player = pot_g if which == "loss_g" else pot_f
    idx = 1 if which == "loss_g" else 0
    base_gates = _gate_pattern(player, hidden)
    worst, worst_name, count, kink = 0.0, "", 0, False
    for name, arr in player.params.items():
        moves_gates = name.startswith(("embed.", "ctx.")) or ".gate_" in name
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for delta in (eps, -eps):
                flat[i] = orig + delta
                vals.append(dual_losses(pot_g, pot_f, x, y, hidden)[idx])
                if moves_gates and not kink:
                    kink = not np.array_equal(_gate_pattern(player, hidden), base_gates)
            flat[i] = orig
            err = relative_error(float(grads[name].reshape(-1)[i]), (vals[0] - vals[1]) / (2 * eps))
            count += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(which, worst, worst_name, count, kink)


def check_dy(pot: PicnnPotential, y, hidden, eps: float = 1e-3) -> float:
    """Largest ``|dy - FD| / max(1, |dy|)`` over a batch of points."""
    y = np.asarray(y, dtype=np.float64)
    _, dy, _ = forward(pot, y, hidden)
    vp, _, _ = forward(pot, y + eps, hidden)
    vm, _, _ = forward(pot, y - eps, hidden)
    return float(np.max(np.abs(dy - (vp - vm) / (2 * eps)) / np.maximum(1.0, np.abs(dy))))
