"""
Commit sources: local git repositories and newline-delimited commit dumps.
"""
import json
import logging
import os
import shutil
import subprocess
from pathlib import Path
from typing import Iterator, Optional, Union

from pydantic import ValidationError
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from services.errors import DatasetError
from services.records import CommitRecord

logger = logging.getLogger(__name__)

_COMMIT_MARK = "\x00\x01commit\x00"


class GitClient:
    """Reads commits with whole-function diff context from a local repository."""

    def __init__(self, repo_path: str, project: Optional[str] = None):
        self.repo_path = str(repo_path)
        self.project = project or Path(repo_path).resolve().name
        if shutil.which("git") is None:
            raise DatasetError("git executable not found on PATH")
        if not os.path.isdir(os.path.join(self.repo_path, ".git")) and not self.repo_path.endswith(".git"):
            raise DatasetError(f"{self.repo_path} is not a git repository")
        self.skipped = 0

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_fixed(1),
        retry=retry_if_exception_type(subprocess.CalledProcessError),
        reraise=True,
    )
    def _run(self, args: list[str]) -> str:
        cmd = ["git", "-C", self.repo_path, "-c", "core.quotepath=off"] + args
        result = subprocess.run(cmd, capture_output=True, text=True, encoding="utf-8",
                                errors="replace", check=True)
        return result.stdout

    def iter_commits(self, rev: str = "HEAD", limit: Optional[int] = None) -> Iterator[CommitRecord]:
        """Oldest-first commits touching C sources, with `-W` hunks."""
        args = [
            "log", "--reverse", "--no-merges", "--no-color", "--no-ext-diff",
            "-p", "-W", "--format=%x00%x01commit%x00%H%x00%B%x00",
        ]
        if limit:
            args.append(f"--max-count={limit}")
        args += [rev, "--", "*.c", "*.h"]
        try:
            output = self._run(args)
        except subprocess.CalledProcessError as e:
            raise DatasetError(f"git log failed in {self.repo_path}: {e.stderr.strip()[:200]}") from e

        count = 0
        for chunk in output.split(_COMMIT_MARK)[1:]:
            parts = chunk.split("\x00", 2)
            if len(parts) < 3:
                self.skipped += 1
                logger.warning(f"Skipping unparsable git log chunk in {self.project}")
                continue
            sha, message, diff = parts
            count += 1
            yield CommitRecord(project=self.project, sha=sha.strip(), message=message.strip(),
                               diff=diff.lstrip("\n"))
        logger.info(f"Read {count} commits from {self.project}")

    def __iter__(self) -> Iterator[CommitRecord]:
        return self.iter_commits()


class CommitDumpReader:
    """One JSON object per line with project, sha, message and diff."""

    def __init__(self, path: str):
        self.path = Path(path)
        if not self.path.is_file():
            raise DatasetError(f"commit dump not found: {self.path}")
        self.skipped = 0

    def iter_commits(self) -> Iterator[CommitRecord]:
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield CommitRecord.model_validate(json.loads(line))
                except (json.JSONDecodeError, ValidationError) as e:
                    self.skipped += 1
                    logger.warning(f"{self.path.name}:{lineno}: skipping bad commit record ({str(e)[:80]})")

    def __iter__(self) -> Iterator[CommitRecord]:
        return self.iter_commits()


def open_commit_source(path: str) -> Union[GitClient, CommitDumpReader]:
    """Directory -> git repository, file -> commit dump. Both iterate CommitRecords and count `skipped` input."""
    if os.path.isdir(path):
        return GitClient(path)
    return CommitDumpReader(path)
