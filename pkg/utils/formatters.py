"""
Formatters - human-readable renderings printed by the CLI
"""
from typing import Dict

from services.routing import RouterDecision


def format_weights(weights, selected) -> str:
    return ", ".join(f"{i}: {weights[i]:.4f}" for i in selected)


def format_decision(decision: RouterDecision) -> str:
    """Multi-line summary of one routing decision"""
    lines = [
        f"strategy:     {decision.strategy.value}",
        f"entropy_norm: {decision.entropy_norm:.6f}",
        f"selected:     {{{', '.join(str(i) for i in decision.selected)}}}",
        f"weights:      {format_weights(decision.weights, decision.selected)}",
    ]
    return "\n".join(lines)


def format_mix(mix: Dict[str, float]) -> str:
    """``Soft 25.0% / TopP 75.0%``"""
    return " / ".join(f"{name} {fraction:.1%}" for name, fraction in mix.items())


def format_gradcheck(report, tolerance: float) -> str:
    verdict = "PASS" if report.passed(tolerance) else "FAIL"
    lines = [
        f"{verdict}: max scaled error {report.max_error:.3e} (tolerance {tolerance:.1e})",
        f"worst parameter: {report.worst_parameter}{list(report.worst_index or ())}",
        f"checked entries: {report.checked}",
        f"skipped at selection boundaries: {len(report.skipped)}",
    ]
    for name, index in report.skipped:
        lines.append(f"  skipped {name}{list(index)}")
    return "\n".join(lines)
