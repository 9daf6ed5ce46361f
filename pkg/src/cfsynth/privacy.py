"""Gaussian-mechanism calibration and Renyi-DP accounting.

Every release of private information goes through an :class:`RdpLedger`.
The ledger accumulates per-order RDP costs; training never touches it, which
is how the post-processing guarantee shows up in code.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArtifact, InvalidParameter, PrivacyBudgetError

ORDERS = (1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0)


def calibrate_classic(epsilon: float, delta: float) -> float:
    """Noise multiplier sqrt(2 ln(1.25/delta)) / epsilon."""
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise InvalidParameter(f"epsilon must be finite and > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_rdp(order, sensitivity: float, noise_std: float):
    return np.asarray(order) * sensitivity**2 / (2.0 * noise_std**2)


@dataclass
class RdpLedger:
    orders: np.ndarray = field(default_factory=lambda: np.array(ORDERS))
    costs: np.ndarray | None = None
    events: list = field(default_factory=list)
    # per-charge cost curves; summed with fsum so the order of charges cannot change a bit
    _terms: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.orders = np.asarray(self.orders, dtype=np.float64)
        if np.any(np.diff(self.orders) <= 0) or np.any(self.orders <= 1):
            raise InvalidParameter("orders must be strictly ascending and > 1")
        if self.costs is None:
            self.costs = np.zeros_like(self.orders)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        self._terms = [self.costs.copy()]

    @property
    def nonprivate(self) -> bool:
        return any(ev["noise_std"] == 0 for ev in self.events)

    def charge_gaussian(self, sensitivity: float, noise_std: float, label: str) -> int:
        """Compose one Gaussian mechanism into the ledger; returns the event id."""
        if not sensitivity > 0:
            raise InvalidParameter(f"sensitivity must be > 0, got {sensitivity}")
        if not noise_std > 0:
            raise InvalidParameter(f"noise_std must be > 0, got {noise_std}")
        self._terms.append(gaussian_rdp(self.orders, sensitivity, noise_std))
        self.costs = np.array([math.fsum(col) for col in zip(*self._terms)])
        return self._log(label, sensitivity, noise_std)

    def charge_nonprivate(self, sensitivity: float, label: str) -> int:
        """Record a noiseless release. The ledger reports epsilon = inf from then on."""
        self.costs = np.full_like(self.costs, np.inf)
        self._terms.append(self.costs.copy())
        return self._log(label, sensitivity, 0.0)

    def _log(self, label, sensitivity, noise_std) -> int:
        event_id = len(self.events)
        self.events.append({"id": event_id, "label": label,
                            "sensitivity": float(sensitivity), "noise_std": float(noise_std)})
        return event_id

    def copy(self) -> "RdpLedger":
        clone = RdpLedger(self.orders.copy(), self.costs.copy(), [dict(e) for e in self.events])
        clone._terms = [t.copy() for t in self._terms]
        return clone

    def epsilon(self, delta: float, conversion: str = "improved") -> float:
        return to_eps_delta(self, delta, conversion=conversion)

    def to_dict(self, delta: float | None = None) -> dict:
        doc = {
            "orders": self.orders.tolist(),
            "costs": [_json_real(c) for c in self.costs],
            "events": [dict(e) for e in self.events],
        }
        if delta is not None:
            doc["converted"] = {"delta": float(delta), "epsilon": _json_real(self.epsilon(delta))}
        return doc

    def dumps(self, delta: float | None = None) -> str:
        return json.dumps(self.to_dict(delta), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RdpLedger":
        try:
            ledger = cls(
                np.asarray(doc["orders"], dtype=np.float64),
                np.asarray([_parse_real(c) for c in doc["costs"]], dtype=np.float64),
                [dict(e) for e in doc["events"]],
            )
            for ev in ledger.events:
                ev["noise_std"] = float(ev["noise_std"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArtifact(f"malformed ledger: {exc}") from exc
        if ledger.costs.shape != ledger.orders.shape or np.any(ledger.costs < 0):
            raise InvalidArtifact("ledger costs must be nonnegative, one per order")
        return ledger


def _json_real(x):
    return "inf" if x == math.inf else float(x)


def _parse_real(x):
    return math.inf if x == "inf" else float(x)


def to_eps_delta(ledger: RdpLedger, delta: float, conversion: str = "improved") -> float:
    """Convert accumulated RDP costs into epsilon at the given delta.

    ``conversion="standard"`` uses eps_rdp + ln(1/delta)/(order-1).
    ``conversion="improved"`` (default) uses the tighter, equally valid bound
    eps_rdp + ln((order-1)/order) - (ln delta + ln order)/(order-1).
    The minimum over the order grid is returned.
    """
    if not 0 < delta < 1:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    if not ledger.events:
        warnings.warn("empty privacy ledger: epsilon is 0", stacklevel=2)
        return 0.0
    if ledger.nonprivate:
        return math.inf
    a = ledger.orders
    if conversion == "standard":
        eps = ledger.costs + math.log(1.0 / delta) / (a - 1.0)
    elif conversion == "improved":
        eps = ledger.costs + np.log1p(-1.0 / a) - (math.log(delta) + np.log(a)) / (a - 1.0)
    else:
        raise InvalidParameter(f"unknown conversion {conversion!r}")
    return float(max(0.0, np.min(eps)))


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float
    split: float = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameter(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidParameter(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.split < 1:
            raise InvalidParameter(f"split must lie in (0, 1), got {self.split}")


@dataclass(frozen=True)
class BudgetPlan:
    sigma_cf: float
    sigma_aux: float
    n_aux: int
    projected_epsilon: float


def split_budget(budget: DpBudget, n_aux: int = 1) -> BudgetPlan:
    """Calibrate noise for the CF release and each auxiliary release, then
    verify the composed cost before any data is touched.

    The CF release gets ``(eps * split, delta / 2)``. The auxiliary share
    ``(eps * (1 - split), delta / 2)`` is divided evenly across ``n_aux``
    releases. Raises :class:`PrivacyBudgetError` if the RDP-composed epsilon
    at ``budget.delta`` exceeds ``budget.epsilon``.
    """
    if n_aux < 1:
        raise InvalidParameter(f"n_aux must be >= 1, got {n_aux}")
    sigma_cf = calibrate_classic(budget.epsilon * budget.split, budget.delta / 2)
    sigma_aux = calibrate_classic(budget.epsilon * (1 - budget.split) / n_aux, budget.delta / (2 * n_aux))

    preview = RdpLedger()
    # sensitivity cancels against noise_std = sensitivity * sigma
    preview.charge_gaussian(1.0, sigma_cf, "preflight-cf")
    for i in range(n_aux):
        preview.charge_gaussian(1.0, sigma_aux, f"preflight-aux-{i}")
    projected = to_eps_delta(preview, budget.delta)
    if projected > budget.epsilon:
        raise PrivacyBudgetError(
            f"pre-flight check failed: composed epsilon {projected:.6g} exceeds budget "
            f"{budget.epsilon:.6g} at delta={budget.delta:g} (sigma_cf={sigma_cf:.6g}, "
            f"sigma_aux={sigma_aux:.6g}, n_aux={n_aux})"
        )
    return BudgetPlan(sigma_cf, sigma_aux, n_aux, projected)
