"""version string recorded in benchmark manifests"""
import subprocess
from pathlib import Path

import editlab

GIT_TIMEOUT = 5.0


def git_describe(path=None):
    """``git describe --always --tags --dirty`` of the checkout holding ``path``

    Parameters
    ----------
    path: str or Path, default directory of the editlab package

    Returns
    -------
    description: str, or None when git is missing, fails or the package is not in a checkout
    """
    cwd = Path(path) if path is not None else Path(editlab.__file__).resolve().parent
    try:
        result = subprocess.run(["git", "describe", "--always", "--tags", "--dirty"], cwd=cwd,
                                capture_output=True, text=True, timeout=GIT_TIMEOUT, check=False)
    except (OSError, subprocess.SubprocessError):
        return None
    desc = result.stdout.strip()
    if result.returncode != 0 or not desc:
        return None
    return desc


def get_editlab_version():
    """``git <description>`` inside a checkout, the installed package version otherwise"""
    desc = git_describe()
    if desc is not None:
        return f"git {desc}"
    return getattr(editlab, "__version__", None) or "unknown"
