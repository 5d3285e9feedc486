"""
Validators - parsing and validation of command-line literals
"""
import json
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

# A distribution literal must normalise to 1 within this tolerance
LITERAL_SUM_TOL = 1e-6


def parse_value(text: str) -> Any:
    """
    Interpret an override value: JSON when it parses, plain string otherwise

    ``3`` -> 3, ``0.75`` -> 0.75, ``true`` -> True, ``soft`` -> "soft"
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_override(text: str) -> Tuple[Optional[Tuple[str, Any]], Optional[str]]:
    """
    Parse ``section.key=value``

    Returns:
        ((key, value), None) or (None, error_message)
    """
    if "=" not in text:
        return None, f"override '{text}' must look like section.key=value"
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        return None, f"override '{text}' has an empty key"
    return (key, parse_value(raw.strip())), None


def parse_overrides(items: Optional[Sequence[str]]) -> Tuple[Dict[str, Any], Optional[str]]:
    overrides: Dict[str, Any] = {}
    for item in items or []:
        parsed, error = parse_override(item)
        if error:
            return {}, error
        key, value = parsed
        overrides[key] = value
    return overrides, None


def parse_axis(text: str) -> Tuple[Optional[Tuple[str, List[Any]]], Optional[str]]:
    """
    Parse ``NAME=v1,v2,...``

    Returns:
        ((name, values), None) or (None, error_message)
    """
    if "=" not in text:
        return None, f"axis '{text}' must look like NAME=v1,v2,..."
    name, raw = text.split("=", 1)
    name = name.strip()
    values = [parse_value(v.strip()) for v in raw.split(",") if v.strip()]
    if not name:
        return None, f"axis '{text}' has an empty name"
    if not values:
        return None, f"axis '{name}' has no values"
    return (name, values), None


def parse_distribution(text: str) -> Tuple[Optional[np.ndarray], Optional[str]]:
    """
    Parse a comma-separated probability vector such as ``0.9,0.05,0.03,0.02``

    Returns:
        (vector renormalised to sum exactly 1, None) or (None, error_message)
    """
    if not text or not text.strip():
        return None, "distribution cannot be empty"
    try:
        values = np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        return None, f"distribution '{text}' is not a comma-separated list of numbers"

    if not np.all(np.isfinite(values)):
        return None, "distribution has non-finite entries"
    if np.any(values < 0):
        return None, "distribution has negative entries"
    total = float(values.sum())
    if abs(total - 1.0) > LITERAL_SUM_TOL:
        return None, f"distribution sums to {total:.6g}, expected 1 within {LITERAL_SUM_TOL}"

    return values / total, None
