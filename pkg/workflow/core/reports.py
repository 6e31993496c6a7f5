"""
Pass/fail reports produced by the verifiers. Verifiers never raise; every check
lands here with the measured value and the tolerance it was held to.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"passed": self.passed}
        if self.value is not None:
            payload["value"] = self.value
        if self.tolerance is not None:
            payload["tolerance"] = self.tolerance
        if self.detail:
            payload["detail"] = self.detail
        return payload


@dataclass
class VerificationReport:
    subject: str
    checks: Dict[str, CheckResult] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    extras: Dict[str, Any] = field(default_factory=dict)

    def add(self, name: str, passed: bool, value: Optional[float] = None,
            tolerance: Optional[float] = None, detail: Optional[str] = None) -> CheckResult:
        check = CheckResult(name=name, passed=bool(passed), value=value, tolerance=tolerance, detail=detail)
        self.checks[name] = check
        return check

    def fail(self, name: str, error: Exception) -> CheckResult:
        return self.add(name, False, detail=f"{type(error).__name__}: {error}")

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    def failed_checks(self) -> List[str]:
        return [name for name, check in self.checks.items() if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "subject": self.subject,
            "passed": self.passed,
            "checks": {name: check.to_dict() for name, check in self.checks.items()},
        }
        if self.notes:
            payload["notes"] = list(self.notes)
        if self.extras:
            payload.update(self.extras)
        return payload
