"""Minimal background-job registry for the long-running operations
(train, roar, correlate, verify-theory).

One worker thread executes jobs in submission order; training is
single-threaded by design, so serializing jobs keeps runs deterministic and
the machine responsive.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

from .backend import classify_error


@dataclass
class Job:
    job_id: str
    kind: str
    state: str = "queued"
    result: Optional[dict] = None
    error: Optional[str] = None
    error_kind: Optional[str] = None


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=1)

    def submit(self, kind: str, fn: Callable[[], dict]) -> str:
        job = Job(uuid.uuid4().hex[:12], kind)
        with self._lock:
            self._jobs[job.job_id] = job

        def run():
            with self._lock:
                job.state = "running"
            try:
                result = fn()
            except Exception as exc:  # report, never crash the worker
                kind_, _ = classify_error(exc)
                with self._lock:
                    job.state = "error"
                    job.error = str(exc)
                    job.error_kind = kind_
            else:
                with self._lock:
                    job.state = "done"
                    job.result = result

        self._executor.submit(run)
        return job.job_id

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())

    def wait(self, job_id: str, timeout: Optional[float] = None) -> Optional[Job]:
        """Block until the job leaves the queued/running states (test helper;
        HTTP clients poll instead)."""
        import time
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            job = self.get(job_id)
            if job is None or job.state in ("done", "error"):
                return job
            if deadline is not None and time.monotonic() > deadline:
                return job
            time.sleep(0.02)
