from pathlib import Path
from typing import Any, Dict, List

from .models import ValidationResult
from .scenario import SCENARIO_REGISTRY

# Accepted keys and their types; every key is optional and falls back to a default
CONFIG_SCHEMA: Dict[str, Any] = {
    "seed": int,
    "runs": int,
    "scenario": {"name": str},
    "filter": {"max_hypotheses": int, "prune_threshold": float, "reduction": str, "gate_probability": float,
               "split_births": bool},
    "smoother": {"particles": int, "murty_m": int, "gate_probability": float, "birth_mode": str},
    "evaluation": {"gospa_c": float, "gospa_p": float, "switch_cutoff": float},
}

REDUCTION_MODES = ("marginal", "best")
BIRTH_MODES = ("model", "undetected")
MAX_SEED = 2 ** 64


def _type_ok(value: Any, expected: type) -> bool:
    if isinstance(value, bool):
        return expected is bool
    if expected is float:
        return isinstance(value, (int, float))
    return isinstance(value, expected)


class ExperimentConfigValidator:
    """Validates a parsed experiment config document"""

    def validate(self, document: Dict[str, Any]) -> ValidationResult:
        errors: List[str] = []
        warnings: List[str] = []
        suggestions: List[str] = []

        errors.extend(self._validate_keys(document))
        if not errors:
            issues = self._validate_values(document)
            errors.extend(issues["errors"])
            warnings.extend(issues["warnings"])
            suggestions.extend(issues["suggestions"])

        return ValidationResult(
            is_valid=len(errors) == 0,
            errors=errors,
            warnings=warnings,
            suggestions=suggestions
        )

    def _validate_keys(self, document: Dict[str, Any]) -> List[str]:
        """Unknown keys and wrong types, reported with their dotted path"""
        errors = []
        for key, value in document.items():
            if key not in CONFIG_SCHEMA:
                errors.append(f"unknown key '{key}'")
                continue
            expected = CONFIG_SCHEMA[key]
            if isinstance(expected, dict):
                if not isinstance(value, dict):
                    errors.append(f"[{key}] must be a table")
                    continue
                for field_name, field_value in value.items():
                    if field_name not in expected:
                        errors.append(f"unknown key '{key}.{field_name}'")
                    elif not _type_ok(field_value, expected[field_name]):
                        errors.append(f"{key}.{field_name} must be {expected[field_name].__name__}, "
                                      f"got {type(field_value).__name__}")
            elif not _type_ok(value, expected):
                errors.append(f"{key} must be {expected.__name__}, got {type(value).__name__}")
        return errors

    def _validate_values(self, document: Dict[str, Any]) -> dict:
        errors, warnings, suggestions = [], [], []
        seed = document.get("seed", 0)
        if not 0 <= seed < MAX_SEED:
            errors.append(f"seed must lie in [0, 2^64), got {seed}")
        runs = document.get("runs", 1)
        if runs < 1:
            errors.append(f"runs must be >= 1, got {runs}")

        name = document.get("scenario", {}).get("name")
        if name is not None and name not in SCENARIO_REGISTRY and not Path(name).is_file():
            errors.append(f"scenario.name '{name}' is neither a shipped scenario "
                          f"({', '.join(SCENARIO_REGISTRY)}) nor a file")

        filt = document.get("filter", {})
        if filt.get("max_hypotheses", 1) < 1:
            errors.append(f"filter.max_hypotheses must be >= 1, got {filt['max_hypotheses']}")
        if not 0.0 <= filt.get("prune_threshold", 0.0) < 1.0:
            errors.append(f"filter.prune_threshold must lie in [0, 1), got {filt['prune_threshold']}")
        if filt.get("reduction", "marginal") not in REDUCTION_MODES:
            errors.append(f"filter.reduction must be one of {', '.join(REDUCTION_MODES)}, got '{filt['reduction']}'")
        if not 0.0 < filt.get("gate_probability", 0.5) <= 1.0:
            errors.append(f"filter.gate_probability must lie in (0, 1], got {filt['gate_probability']}")

        smoother = document.get("smoother", {})
        if smoother.get("particles", 1) < 1:
            errors.append(f"smoother.particles must be >= 1, got {smoother['particles']}")
        elif smoother.get("particles", 300) < 100:
            warnings.append(f"only {smoother['particles']} particles; the smoother estimate will be noisy")
        if smoother.get("murty_m", 1) < 1:
            errors.append(f"smoother.murty_m must be >= 1, got {smoother['murty_m']}")
        elif smoother.get("murty_m", 30) > 100:
            suggestions.append("murty_m above 100 slows every backward step with little gain")
        if not 0.0 < smoother.get("gate_probability", 0.5) < 1.0:
            errors.append(f"smoother.gate_probability must lie in (0, 1), got {smoother['gate_probability']}")
        if smoother.get("birth_mode", "model") not in BIRTH_MODES:
            errors.append(f"smoother.birth_mode must be one of {', '.join(BIRTH_MODES)}, "
                          f"got '{smoother['birth_mode']}'")

        evaluation = document.get("evaluation", {})
        for key in ("gospa_c", "switch_cutoff"):
            if evaluation.get(key, 1.0) <= 0.0:
                errors.append(f"evaluation.{key} must be > 0, got {evaluation[key]}")
        if evaluation.get("gospa_p", 1.0) < 1.0:
            errors.append(f"evaluation.gospa_p must be >= 1, got {evaluation['gospa_p']}")

        if runs == 1 and not errors:
            suggestions.append("a single run gives no Monte Carlo average; raise runs for comparisons")
        return {"errors": errors, "warnings": warnings, "suggestions": suggestions}
