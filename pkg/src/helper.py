from pathlib import Path
from typing import Optional

from loguru import logger
import toml


def find_pyproject(start: Optional[Path] = None) -> Optional[Path]:
    """
    Traverse upwards from ``start`` (default: this file) to the first pyproject.toml.
    """
    if start is None:
        start = Path(__file__).resolve() if '__file__' in globals() else Path.cwd().resolve()
    for parent in [start] + list(start.parents):
        candidate = parent / "pyproject.toml"
        if candidate.exists():
            return candidate
    return None


def read_project_metadata(pyproject_path: Optional[Path] = None) -> dict:
    """
    Reads name and version from pyproject.toml if available.
    Falls back to defaults if not found.
    """
    metadata = {"name": "soliton-stability-lab", "version": "0.0.0"}
    if pyproject_path is None:
        pyproject_path = find_pyproject()
    if pyproject_path and pyproject_path.exists():
        try:
            data = toml.load(pyproject_path)
            # PEP 621 style first, then poetry
            table = data.get("project") or data.get("tool", {}).get("poetry", {})
            metadata["name"] = table.get("name", metadata["name"])
            metadata["version"] = table.get("version", metadata["version"])
        except (toml.TomlDecodeError, OSError) as e:
            logger.warning(f"Could not read {pyproject_path}: {e}")
    return metadata


_METADATA = read_project_metadata()
PROJECT_NAME = _METADATA["name"]
PROJECT_VERSION = _METADATA["version"]


def get_project_root() -> Path:
    """
    Returns the absolute path to the project root.

    The root is the directory holding pyproject.toml, found by traversing
    upwards from this file; the current working directory is the fallback
    when the sources are used outside a checkout.

    Returns:
        Path: The absolute path to the project folder.
    """
    pyproject = find_pyproject()
    if pyproject is not None:
        return pyproject.parent
    return Path.cwd().resolve()


PROJECT_ROOT = get_project_root()
logger.debug(f"Project root path: {PROJECT_ROOT}")
