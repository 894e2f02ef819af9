"""
fbcool Version Information
"""

import os
import subprocess

# Version information
VERSION = "0.1.0"
VERSION_NAME = "fbcool"

# Cache for git date to avoid repeated calls
_git_date_cache = None


def get_git_commit_date():
    """Get the date of the latest git commit (cached)"""
    global _git_date_cache

    if _git_date_cache is not None:
        return _git_date_cache

    try:
        result = subprocess.run(
            ["git", "show", "-s", "--format=%ad", "--date=short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=2,
            cwd=os.path.dirname(__file__),
        )
        _git_date_cache = result.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        _git_date_cache = "unknown"
    return _git_date_cache


def get_version_string():
    """Get formatted version string for display"""
    return f"{VERSION_NAME} v{VERSION}"


def get_code_version():
    """Version tag recorded in run manifests (version plus build date)."""
    return f"{VERSION}+{get_git_commit_date()}"
