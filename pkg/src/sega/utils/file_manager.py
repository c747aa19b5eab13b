"""File management utilities for numbered run directories and their outputs."""

import json
import re
from pathlib import Path
from typing import Any, Tuple

RUNS_DIR = Path("runs")


def _run_number(run_dir: Path) -> int:
    match = re.match(r"^(\d+)-", run_dir.name)
    return int(match.group(1)) if match else 0


def get_next_run_number(runs_dir: Path = RUNS_DIR) -> int:
    """Get the next available run number.

    Args:
        runs_dir: Directory containing runs

    Returns:
        Next available run number (e.g., 1, 2, 3...)
    """
    if not runs_dir.exists():
        return 1

    # Extract numbers from directory names like "001-contrastive-default"
    numbers = [_run_number(d) for d in runs_dir.iterdir() if d.is_dir()]
    numbers = [n for n in numbers if n]
    return max(numbers) + 1 if numbers else 1


def slugify(text: str) -> str:
    """Convert text to a filesystem-friendly slug.

    Args:
        text: Text to convert

    Returns:
        Slugified text (e.g., "Contrastive Default" -> "contrastive-default")
    """
    text = text.lower()
    text = re.sub(r"[\s_]+", "-", text)
    text = re.sub(r"[^a-z0-9-]", "", text)
    text = re.sub(r"-+", "-", text)
    return text.strip("-")[:50]


def create_run_directory(name: str, runs_dir: Path = RUNS_DIR) -> Tuple[Path, int]:
    """Create a new run directory.

    Args:
        name: Human-readable run description
        runs_dir: Base runs directory

    Returns:
        Tuple of (run_directory_path, run_number)
    """
    runs_dir.mkdir(parents=True, exist_ok=True)

    run_number = get_next_run_number(runs_dir)
    run_path = runs_dir / f"{run_number:03d}-{slugify(name) or 'run'}"
    run_path.mkdir(parents=True, exist_ok=True)

    return run_path, run_number


def save_text(content: str, file_path: Path) -> Path:
    """Save text content to a file, creating parent directories."""
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(content, encoding="utf-8")
    return file_path


def save_json(data: Any, file_path: Path) -> Path:
    """Save ``data`` as indented JSON with sorted keys."""
    return save_text(json.dumps(data, indent=2, sort_keys=True) + "\n", file_path)


def find_latest_run(runs_dir: Path = RUNS_DIR) -> Path | None:
    """Find the most recently created run directory.

    Args:
        runs_dir: Directory containing runs

    Returns:
        Path to latest run directory, or None if no runs exist
    """
    if not runs_dir.exists():
        return None

    existing = [d for d in runs_dir.iterdir() if d.is_dir() and _run_number(d)]
    if not existing:
        return None
    return max(existing, key=_run_number)
