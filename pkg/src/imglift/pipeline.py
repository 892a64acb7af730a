"""Three-stage lift pipeline under a bounded-concurrency queue.

Each job runs preprocess (decode, stretch to the model input square,
normalize) -> inference -> postprocess (denormalize, resize to target
dims), with per-stage timings. A fixed pool of worker threads bounds
the number of jobs mid-pipeline; admission is FIFO and failures are
per-job, never aborting the queue.
"""

from __future__ import annotations

import itertools
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from enum import Enum
from queue import Queue

import numpy as np

from . import metrics as quality
from .engine import LoadedModel, infer, resolve_model, validate
from .errors import ShutdownError
from .image import ImageBuffer, Tensor, decode, from_tensor, resize_bilinear, to_tensor
from .telemetry import KIND_LIFT, LiftMetrics, TelemetryCollector


class JobState(str, Enum):
    QUEUED = "queued"
    PREPROCESSING = "preprocessing"
    INFERRING = "inferring"
    POSTPROCESSING = "postprocessing"
    DONE = "done"
    FAILED = "failed"


_NEXT = {
    None: {JobState.QUEUED},
    JobState.QUEUED: {JobState.PREPROCESSING, JobState.FAILED},
    JobState.PREPROCESSING: {JobState.INFERRING, JobState.FAILED},
    JobState.INFERRING: {JobState.POSTPROCESSING, JobState.FAILED},
    JobState.POSTPROCESSING: {JobState.DONE, JobState.FAILED},
}


@dataclass
class PipelineConfig:
    max_concurrent: int = 2
    model: str = "bilinear_x4"
    input_side: int = 128
    evaluation_mode: bool = False
    # test/benchmark knob: sleep this long at the start of every stage
    synthetic_stage_delay_ms: float = 0.0

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.input_side < 1:
            raise ValueError("input_side must be >= 1")


@dataclass
class LiftJob:
    job_id: str
    source: bytes
    target_dims: tuple[int, int] | None  # (width, height) display size
    model_name: str
    state: JobState | None = None
    error: Exception | None = None
    source_dims: tuple[int, int] | None = None
    reference: ImageBuffer | None = None
    alpha: np.ndarray | None = None
    grayscale: bool = False


@dataclass
class LiftResult:
    job: LiftJob
    image: ImageBuffer | None = None
    metrics: LiftMetrics | None = None

    @property
    def ok(self) -> bool:
        return self.job.state is JobState.DONE


class TransitionLog:
    """Thread-safe (job_id, state, t_mono) event log."""

    def __init__(self):
        self._events: list[tuple[str, JobState, float]] = []
        self._lock = threading.Lock()

    def append(self, job_id: str, state: JobState):
        with self._lock:
            self._events.append((job_id, state, time.perf_counter()))

    def events(self) -> list[tuple[str, JobState, float]]:
        with self._lock:
            return list(self._events)

    def peak_in_flight(self) -> int:
        """Max simultaneous jobs in a mid-pipeline (working) state."""
        working = {JobState.PREPROCESSING, JobState.INFERRING, JobState.POSTPROCESSING}
        active: set[str] = set()
        peak = 0
        for job_id, state, _ in self.events():
            if state in working:
                active.add(job_id)
            else:
                active.discard(job_id)
            peak = max(peak, len(active))
        return peak


class LiftPipeline:
    """Owns worker threads; public API is safe from any thread."""

    def __init__(self, model: LoadedModel | None = None,
                 config: PipelineConfig | None = None,
                 collector: TelemetryCollector | None = None):
        self.config = config or PipelineConfig()
        self.model = model if model is not None else resolve_model(self.config.model)
        side = self.config.input_side
        validate(self.model, (1, 3, side, side))
        self.collector = collector
        self.log = TransitionLog()
        self._queue: Queue = Queue()
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._closed = False
        self._pending: list[Future] = []
        self._workers = [
            threading.Thread(target=self._worker, name=f"imglift-worker-{i}", daemon=True)
            for i in range(self.config.max_concurrent)
        ]
        for w in self._workers:
            w.start()

    # -- lifecycle ---------------------------------------------------------

    def close(self, wait: bool = True):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        for _ in self._workers:
            self._queue.put(None)
        if wait:
            for w in self._workers:
                w.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- submission --------------------------------------------------------

    def submit(self, source: bytes, target_dims: tuple[int, int] | None = None,
               reference: ImageBuffer | None = None, job_id: str | None = None) -> Future:
        """FIFO admission; returns a Future resolving to a LiftResult."""
        with self._lock:
            if self._closed:
                raise ShutdownError("pipeline is shut down")
            jid = job_id or f"job-{next(self._ids)}"
            fut: Future = Future()
            job = LiftJob(jid, source, target_dims, self.model.name, reference=reference)
            self._transition(job, JobState.QUEUED)
            self._pending.append(fut)
            self._queue.put((job, fut))
            return fut

    def drain(self) -> list[LiftResult]:
        """Wait for everything submitted so far; returns results in order."""
        with self._lock:
            pending = list(self._pending)
        return [f.result() for f in pending]

    # -- stages ------------------------------------------------------------

    def _transition(self, job: LiftJob, state: JobState):
        allowed = _NEXT.get(job.state, set())
        if state not in allowed:
            raise RuntimeError(f"illegal transition {job.state} -> {state}")
        job.state = state
        self.log.append(job.job_id, state)

    def _stage_delay(self):
        if self.config.synthetic_stage_delay_ms > 0:
            time.sleep(self.config.synthetic_stage_delay_ms / 1000.0)

    def preprocess(self, job: LiftJob) -> Tensor:
        """Decode and stretch to the model input square, values in [0,1].

        Alpha is split off for separate bilinear scaling; grayscale is
        replicated to three channels.
        """
        self._stage_delay()
        img = decode(job.source)
        job.source_dims = (img.width, img.height)
        data = img.data
        if img.channels == 4:
            job.alpha = data[:, :, 3]
            data = np.ascontiguousarray(data[:, :, :3])
        elif img.channels == 1:
            job.grayscale = True
            data = np.repeat(data, 3, axis=2)
        side = self.config.input_side
        buf = resize_bilinear(ImageBuffer(data), side, side)
        return to_tensor(buf, layout="nchw", normalize=True)

    def postprocess(self, t: Tensor, job: LiftJob) -> ImageBuffer:
        """Denormalize and resize to the job's target display dims."""
        self._stage_delay()
        img = from_tensor(t)
        tw, th = self._target_dims(job)
        if (img.width, img.height) != (tw, th):
            img = resize_bilinear(img, tw, th)
        if job.alpha is not None:
            a = resize_bilinear(ImageBuffer(job.alpha[:, :, None]), tw, th)
            img = ImageBuffer(np.dstack([img.data, a.data[:, :, 0]]))
        return img

    def _target_dims(self, job: LiftJob) -> tuple[int, int]:
        if job.target_dims is not None:
            return job.target_dims
        sw, sh = job.source_dims
        r = self.model.scale_factor
        return (sw * r, sh * r)

    def evaluate(self, result: LiftResult, reference: ImageBuffer) -> quality.QualityScore:
        """Attach PSNR/SSIM against a reference to the result's metrics.

        A reference with different dims is resized to the output first
        and the metrics are flagged as adjusted.
        """
        out = result.image
        if out is None:
            raise ValueError("cannot evaluate a failed lift")
        adjusted = False
        if (reference.width, reference.height) != (out.width, out.height):
            reference = resize_bilinear(reference, out.width, out.height)
            adjusted = True
        if reference.channels != out.channels:
            ra, oa = reference.data, out.data
            ch = min(reference.channels, out.channels, 3)
            reference, out = ImageBuffer(np.ascontiguousarray(ra[:, :, :ch])), \
                ImageBuffer(np.ascontiguousarray(oa[:, :, :ch]))
            adjusted = True
        s = quality.score(reference, out)
        if result.metrics is not None:
            result.metrics.psnr = s.psnr
            result.metrics.ssim = s.ssim
            result.metrics.reference_adjusted = adjusted
        return s

    # -- worker ------------------------------------------------------------

    def _worker(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            job, fut = item
            result = LiftResult(job)
            t0 = time.perf_counter()
            try:
                self._transition(job, JobState.PREPROCESSING)
                tensor = self.preprocess(job)
                t1 = time.perf_counter()

                self._transition(job, JobState.INFERRING)
                self._stage_delay()
                lifted = infer(self.model, tensor)
                t2 = time.perf_counter()

                self._transition(job, JobState.POSTPROCESSING)
                result.image = self.postprocess(lifted, job)
                t3 = time.perf_counter()

                result.metrics = LiftMetrics(
                    job_id=job.job_id,
                    model=self.model.name,
                    preprocess_ms=(t1 - t0) * 1000.0,
                    inference_ms=(t2 - t1) * 1000.0,
                    postprocess_ms=(t3 - t2) * 1000.0,
                    total_ms=(t3 - t0) * 1000.0,
                    input_bytes=len(job.source),
                    output_pixels=result.image.width * result.image.height,
                )
                if self.config.evaluation_mode and job.reference is not None:
                    self.evaluate(result, job.reference)
                self._transition(job, JobState.DONE)
                if self.collector is not None:
                    self.collector.record(KIND_LIFT, result.metrics)
            except Exception as exc:  # per-job isolation; the queue keeps going
                job.error = exc
                self._transition(job, JobState.FAILED)
            fut.set_result(result)


def lift_image(source: bytes, model: LoadedModel | None = None,
               target_dims: tuple[int, int] | None = None,
               config: PipelineConfig | None = None) -> LiftResult:
    """One-shot convenience: run a single image through a fresh pipeline."""
    with LiftPipeline(model=model, config=config) as pipe:
        fut = pipe.submit(source, target_dims=target_dims)
        return fut.result()
