"""In-memory job store with a single worker thread.

Experiments are one-per-process by contract, so jobs execute strictly
sequentially; `wait=True` submissions block until their job finishes.
"""

from __future__ import annotations

import itertools
import queue
import threading

from ..config import ConfigError
from ..experiment import NumericFailure


class Job:
    def __init__(self, job_id, kind):
        self.job_id = job_id
        self.kind = kind
        self.state = "queued"
        self.result = None
        self.error = None
        self.checkpoint_path = None
        self.done = threading.Event()


class JobStore:
    def __init__(self):
        self._jobs = {}
        self._lock = threading.Lock()
        self._queue = queue.Queue()
        self._counter = itertools.count(1)
        self._worker = threading.Thread(target=self._run_worker, daemon=True)
        self._worker.start()

    def submit(self, kind, fn, wait):
        with self._lock:
            job = Job(f"{kind}-{next(self._counter):04d}", kind)
            self._jobs[job.job_id] = job
        self._queue.put((job, fn))
        if wait:
            job.done.wait()
        return job

    def get(self, job_id):
        with self._lock:
            return self._jobs.get(job_id)

    def list(self):
        with self._lock:
            return list(self._jobs.values())

    def _run_worker(self):
        while True:
            job, fn = self._queue.get()
            job.state = "running"
            try:
                job.result = fn()
                job.state = "succeeded"
            except ConfigError as exc:
                job.state = "failed_config"
                job.error = str(exc)
            except NumericFailure as exc:
                job.state = "failed_numeric"
                job.error = str(exc)
                job.checkpoint_path = exc.checkpoint_path
            except Exception as exc:  # surface anything else as a plain failure
                job.state = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
            finally:
                job.done.set()
