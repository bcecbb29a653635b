"""Fan independent jobs out over worker threads.

Results come back in job order regardless of which worker finishes first, so
batch output never depends on scheduling.
"""
from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable, Optional, Sequence

from pinchflow.exceptions import PinchflowException

logger = logging.getLogger(__name__)


class JobStatus:
    NULL = "null"
    IN_PROGRESS = "in-progress"
    DONE = "done"
    FAILED = "failed"


class JobResult:
    def __init__(self, index: int, name: str):
        self.index = index
        self.name = name
        self.value: Any = None
        self.error: Optional[BaseException] = None

    def __repr__(self):
        return f"<JobResult index={self.index} name={self.name:s}>"

    @property
    def failed(self) -> bool:
        return self.error is not None


class BatchContext:
    def __init__(self, size: int):
        self.results: list[Optional[JobResult]] = [None] * size
        self.result_lock = threading.Lock()

    @property
    def done(self) -> bool:
        return all(result is not None for result in self.results)

    def job_finished(self, result: JobResult) -> None:
        with self.result_lock:
            self.results[result.index] = result


class JobAgent(threading.Thread):
    def __init__(self, index: int, name: str, job: Callable[[], Any], context: BatchContext):
        super().__init__(name=f"pinchflow-job-{index}")
        self.index = index
        self.job_name = name
        self.job = job
        self.context = context
        self.status = JobStatus.NULL

    def __repr__(self):
        return f"<JobAgent job={self.job_name:s}>"

    def run(self):
        self.status = JobStatus.IN_PROGRESS
        result = JobResult(self.index, self.job_name)
        try:
            result.value = self.job()
        except PinchflowException as exc:
            result.error = exc
            self.status = JobStatus.FAILED
            logger.error("Job %s failed: %s", self.job_name, exc)
        except Exception as exc:  # pylint: disable=broad-except
            result.error = exc
            self.status = JobStatus.FAILED
            logger.exception("Unexpected error in job %s", self.job_name)
        else:
            self.status = JobStatus.DONE
        self.context.job_finished(result)


def run_batch(
    jobs: Sequence[Callable[[], Any]],
    workers: int = 1,
    names: Optional[Sequence[str]] = None,
) -> list[JobResult]:
    if workers < 1:
        raise PinchflowException(f"Number of workers must be positive, got {workers}")
    names = list(names) if names is not None else [f"job-{i}" for i in range(len(jobs))]
    context = BatchContext(len(jobs))
    if workers == 1:
        for index, job in enumerate(jobs):
            JobAgent(index, names[index], job, context).run()
        return list(context.results)
    pending = [
        JobAgent(index, names[index], job, context) for index, job in enumerate(jobs)
    ]
    running: list[JobAgent] = []
    while not context.done:
        running = [agent for agent in running if agent.is_alive()]
        while pending and len(running) < workers:
            agent = pending.pop(0)
            agent.start()
            running.append(agent)
        time.sleep(0.01)
    logger.debug("Batch of %d jobs finished on %d workers", len(jobs), workers)
    return list(context.results)
