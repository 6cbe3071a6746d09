"""
Closed-loop simulator
Runs the asynchronous inference / execution protocol against the toy plant,
either on a virtual clock (discrete-event) or on the wall clock with a real
executor thread and inference worker.

Per executor tick, in order: complete a ready inference (swap), launch a new
request, complete a zero-latency request in the same tick, then execute one
action or stall on the last one.
"""
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .chunk_schedule import (
    DelayQueue,
    ExecutionState,
    FusionPlan,
    build_action_prior,
    estimate_delay,
    plan_fusion,
    steps_of_delay,
)
from .errors import ConfigError, WamRuntimeError
from .schemas import FusionMode, LaunchPolicy, Metrics, PipelineOrder, SimConfig, SimMode
from .signal_pipeline import ActionChunk, freq_interpolate, interpolated_length, render_chunk, smooth_chunk
from .toy_world_model import (
    ToyPlant,
    ToyPolicy,
    goal_trajectory,
    latency_of,
    pd_control,
    plant_step,
    sample_delay,
    worst_case_delay,
)
from .trace import (
    ErrorEvent,
    FusionEvent,
    HeaderEvent,
    InferFinishEvent,
    InferStartEvent,
    SimTrace,
    StallEvent,
    TickEvent,
    ViolationEvent,
    compute_metrics,
)

logger = logging.getLogger(__name__)

POSITION_EPSILON = 1e-9
VIOLATION_EPSILON = 1e-12
WORKER_POLL_S = 0.05


class SimResult(NamedTuple):
    trace: SimTrace
    metrics: Metrics
    error: Optional[str] = None


@dataclass(frozen=True, eq=False)
class Request:
    """Everything the inference side needs, captured by the executor at launch"""
    req: int
    k: int
    t: float
    position: int
    s: int
    observation: np.ndarray
    old_chunk: ActionChunk
    old_id: int
    old_time: float


@dataclass(frozen=True, eq=False)
class Prepared:
    request: Request
    d_hat: int
    cold: bool
    plan: FusionPlan
    rendered: ActionChunk
    chunk_time: float


@dataclass(frozen=True, eq=False)
class Completion:
    prepared: Prepared
    delta: float
    ready_tick: int
    finish_t: float
    violation: Optional[ViolationEvent]


@dataclass(frozen=True)
class WorkerFailure:
    message: str
    t: float


def check_horizon(cfg: SimConfig):
    """A chunk must last at least as long as the worst-case inference delay"""
    chunk_s = cfg.horizon_H / cfg.model_hz
    worst = worst_case_delay(cfg.latency)
    if chunk_s < worst:
        raise ConfigError(
            f"horizon bound violated: H/model_hz = {chunk_s:.4f} s is shorter than "
            f"worst-case inference delay {worst:.4f} s"
        )


class InferencePipeline:
    def __init__(self, cfg: SimConfig, policy: Optional[ToyPolicy] = None):
        """Inference side: owns the delay queue and turns requests into fused, rendered chunks"""
        self.cfg = cfg
        self.policy = policy or ToyPolicy(cfg.policy, cfg.sampler, cfg.horizon_H, cfg.model_hz, cfg.seed)
        cold = cfg.fusion.cold_start_delay
        if cold is None:
            cold = latency_of(cfg.latency).latency_s
        self.delays = DelayQueue(cfg.fusion.queue_capacity, cold)

    def bootstrap(self, observation: np.ndarray) -> ActionChunk:
        return self.policy.generate(observation, 0.0, 0)

    def render(self, chunk: ActionChunk) -> ActionChunk:
        if self.cfg.pipeline_order == PipelineOrder.SMOOTH_FIRST:
            return freq_interpolate(chunk, self.cfg.control_hz)
        return render_chunk(chunk, self.cfg.smoothing, self.cfg.control_hz).chunk

    def prepare(self, request: Request) -> Prepared:
        cfg = self.cfg
        cold = len(self.delays) == 0
        d_hat = steps_of_delay(estimate_delay(self.delays), cfg.fusion_period)
        state = ExecutionState(request.old_chunk, request.s)
        chunk_time = request.old_time + request.s / cfg.model_hz

        prior = None
        if cfg.fusion.enabled and cfg.fusion.mode == FusionMode.PER_STEP:
            prior = build_action_prior(state, d_hat, cfg.fusion, cfg.horizon_H)
        fresh = self.policy.generate(request.observation, chunk_time, request.req, prior=prior)

        if cfg.pipeline_order == PipelineOrder.SMOOTH_FIRST:
            fresh = smooth_chunk(fresh, cfg.smoothing).chunk
        plan = plan_fusion(state, fresh, d_hat, cfg.fusion)
        if prior is not None:
            plan = plan._replace(chunk=fresh)

        return Prepared(request, d_hat, cold, plan, self.render(plan.chunk), chunk_time)

    def complete(self, prepared: Prepared, delta: float, finish_t: float) -> Completion:
        """Record the measured delay and classify a frozen-prefix overrun"""
        cfg = self.cfg
        request = prepared.request
        self.delays.push(delta)
        ready_tick = request.k + steps_of_delay(delta, cfg.control_period)

        budget = prepared.d_hat * cfg.fusion_period
        violation = None
        if cfg.fusion.enabled and delta > budget + VIOLATION_EPSILON:
            cause = "cold_start" if prepared.cold else "spike"
            violation = ViolationEvent(finish_t, request.req, cause, delta, budget)
            logger.debug("Request %d: delay %.4f s exceeds frozen prefix %.4f s (%s)",
                         request.req, delta, budget, cause)
        return Completion(prepared, delta, ready_tick, finish_t, violation)


class Executor:
    def __init__(self, cfg: SimConfig, trace: SimTrace, bootstrap: ActionChunk, rendered: ActionChunk):
        """Executor side: plant, active chunk and control-rate playback position"""
        self.cfg = cfg
        self.trace = trace
        self.plant = ToyPlant.at_rest(goal_trajectory(0.0)[0], cfg.control_period)
        self.n_render = interpolated_length(cfg.horizon_H, cfg.model_hz, cfg.control_hz)
        self.stride = (cfg.horizon_H - 1) / (self.n_render - 1) if self.n_render > 1 else 0.0

        self.model_chunk = bootstrap
        self.rendered = rendered
        # chunk id that produced each rendered sample
        self.sources = np.zeros(rendered.horizon, dtype=np.int64)
        self.chunk_id = 0
        self.chunk_time = 0.0
        self.position = 0
        self.last_action = rendered.actions[0]
        self.last_source = 0
        self.next_request = 1
        self.next_launch_t = 0.0

    def executed_model_steps(self, position: int) -> int:
        """s: model-rate steps whose time has passed when playback sits at `position`"""
        if position <= 0:
            return 0
        return min(self.cfg.horizon_H, int(math.floor(position * self.stride + POSITION_EPSILON)))

    def frozen_samples(self, weights, position: int) -> int:
        """Rendered samples from `position` on whose source time lies in the w=1 prefix"""
        is_one = np.asarray(weights) == 1.0
        frozen = is_one.size if is_one.all() else int(np.argmin(is_one))
        if frozen == 0 or self.stride <= 0:
            return 0
        # model index m covers source positions [m, m + 1)
        end = int(math.ceil(frozen / self.stride - POSITION_EPSILON))
        return max(0, min(end, self.n_render) - position)

    def launch_due(self, t: float) -> bool:
        if self.cfg.launch_policy == LaunchPolicy.MAX_RATE:
            return True
        return t + POSITION_EPSILON >= self.next_launch_t

    def launch(self, k: int, t: float) -> Request:
        if self.cfg.launch_policy == LaunchPolicy.FIXED_PERIOD:
            while self.next_launch_t <= t + POSITION_EPSILON:
                self.next_launch_t += self.cfg.launch_period
        s = self.executed_model_steps(self.position)
        request = Request(
            req=self.next_request, k=k, t=t, position=self.position, s=s,
            observation=self.plant.position.copy(), old_chunk=self.model_chunk,
            old_id=self.chunk_id, old_time=self.chunk_time,
        )
        self.next_request += 1
        self.trace.append(InferStartEvent(t, request.req, k, s))
        return request

    def swap(self, completion: Completion, k: int, t: float):
        """Atomically replace the active chunk and realign the playback position"""
        prepared = completion.prepared
        request = prepared.request
        plan = prepared.plan

        self.trace.append(InferFinishEvent(completion.finish_t, request.req, completion.delta))
        if completion.violation is not None:
            self.trace.append(completion.violation)
        self.trace.append(FusionEvent(t, request.old_id, request.req, plan.s, plan.d, plan.L,
                                      tuple(float(w) for w in plan.weights)))

        position = 0
        if self.stride > 0:
            p_new = (request.position + (k - request.k)) * self.stride - request.s
            position = max(0, math.ceil(p_new / self.stride - POSITION_EPSILON))
        position = min(position, self.n_render)

        # frozen samples keep playing the outgoing stream bit-for-bit
        actions = np.array(prepared.rendered.actions)
        sources = np.full(actions.shape[0], request.req, dtype=np.int64)
        hold = min(self.frozen_samples(plan.weights, position),
                   self.rendered.horizon - self.position, actions.shape[0] - position)
        if hold > 0:
            actions[position:position + hold] = self.rendered.actions[self.position:self.position + hold]
            sources[position:position + hold] = self.sources[self.position:self.position + hold]

        self.position = position
        self.model_chunk = plan.chunk
        self.rendered = ActionChunk(actions, prepared.rendered.model_hz)
        self.sources = sources
        self.chunk_id = request.req
        self.chunk_time = prepared.chunk_time

    def execute(self, k: int, t: float):
        stall = self.position >= self.rendered.horizon
        if stall:
            action = self.last_action
            self.trace.append(StallEvent(t, k))
        else:
            action = self.rendered.actions[self.position]
            self.last_source = int(self.sources[self.position])
            self.position += 1
        self.last_action = action

        u = pd_control(self.plant, action, self.cfg.plant_kp, self.cfg.plant_kd)
        self.plant = plant_step(self.plant, u)
        err = float(np.linalg.norm(self.plant.position - goal_trajectory(k / self.cfg.control_hz)[0]))
        self.trace.append(TickEvent(t, k, self.last_source, self.position - (0 if stall else 1), stall, err,
                                    tuple(float(a) for a in action)))


def _start(cfg: SimConfig, policy: Optional[ToyPolicy]):
    check_horizon(cfg)
    trace = SimTrace()
    trace.append(HeaderEvent(cfg.control_hz, cfg.model_hz, cfg.horizon_H, cfg.seed, cfg.mode.value))
    pipeline = InferencePipeline(cfg, policy)
    start = goal_trajectory(0.0)[0]
    bootstrap = pipeline.bootstrap(start)
    if cfg.pipeline_order == PipelineOrder.SMOOTH_FIRST:
        bootstrap = smooth_chunk(bootstrap, cfg.smoothing).chunk
    executor = Executor(cfg, trace, bootstrap, pipeline.render(bootstrap))
    return trace, pipeline, executor


def _n_ticks(cfg: SimConfig) -> int:
    return int(math.floor(cfg.duration * cfg.control_hz + 0.5))


def run_discrete_event(cfg: SimConfig, delays: Optional[Sequence[float]] = None,
                       policy: Optional[ToyPolicy] = None) -> SimResult:
    """
    Virtual-clock run, bit-reproducible from (config, seed).

    `delays` replays measured inference delays in request order; launches stop
    when they run out.
    """
    trace, pipeline, executor = _start(cfg, policy)
    rng = np.random.default_rng([cfg.seed, 1])
    inflight: Optional[Completion] = None
    logger.info("Discrete-event run: %d ticks, seed %d", _n_ticks(cfg), cfg.seed)

    for k in range(_n_ticks(cfg)):
        t = k / cfg.control_hz
        if inflight is not None and inflight.ready_tick <= k:
            executor.swap(inflight, k, t)
            inflight = None

        if inflight is None and executor.launch_due(t):
            index = executor.next_request - 1
            if delays is None or index < len(delays):
                request = executor.launch(k, t)
                delta = float(delays[index]) if delays is not None else sample_delay(cfg.latency, rng)
                prepared = pipeline.prepare(request)
                inflight = pipeline.complete(prepared, delta, t + delta)
                if inflight.ready_tick <= k:
                    executor.swap(inflight, k, t)
                    inflight = None

        executor.execute(k, t)

    metrics = compute_metrics(trace)
    logger.info("Run finished: %d swaps, %d stalls, %d bound violations",
                metrics.swap_count, metrics.stall_count, metrics.bound_violations)
    return SimResult(trace, metrics)


class InferenceWorker(threading.Thread):
    def __init__(self, cfg: SimConfig, pipeline: InferencePipeline, t0: float,
                 requests: "queue.Queue", results: "queue.Queue", shutdown_event: threading.Event):
        """Real-time inference actor; the only thread touching the delay queue"""
        super().__init__(name="inference-worker", daemon=True)
        self.cfg = cfg
        self.pipeline = pipeline
        self.t0 = t0
        self.requests = requests
        self.results = results
        self.shutdown_event = shutdown_event
        self.rng = np.random.default_rng([cfg.seed, 1])

    def run(self):
        dt = self.cfg.control_period
        margin = self.cfg.handoff_margin * dt
        while not self.shutdown_event.is_set():
            try:
                request = self.requests.get(timeout=WORKER_POLL_S)
            except queue.Empty:
                continue
            try:
                nominal = sample_delay(self.cfg.latency, self.rng)
                prepared = self.pipeline.prepare(request)
                scheduled = self.t0 + request.k * dt
                remaining = scheduled + nominal - time.perf_counter()
                if remaining > 0:
                    self.shutdown_event.wait(remaining)
                finish = time.perf_counter()
                delta = finish - scheduled + margin
                completion = self.pipeline.complete(prepared, delta, finish - self.t0)
            except Exception as e:
                logger.exception("Inference worker failed on request %d", request.req)
                self.results.put_nowait(WorkerFailure(f"{type(e).__name__}: {e}", time.perf_counter() - self.t0))
                return
            self.results.put_nowait(completion)


def run_real_time(cfg: SimConfig, policy: Optional[ToyPolicy] = None) -> SimResult:
    """
    Wall-clock run with a concurrent executor (this thread) and inference worker.

    The executor only uses non-blocking handoffs; a worker failure ends the run
    with a partial trace and an error event.
    """
    trace, pipeline, executor = _start(cfg, policy)
    dt = cfg.control_period
    requests: "queue.Queue[Request]" = queue.Queue(maxsize=1)
    results: "queue.Queue" = queue.Queue(maxsize=1)
    shutdown_event = threading.Event()

    t0 = time.perf_counter() + dt
    worker = InferenceWorker(cfg, pipeline, t0, requests, results, shutdown_event)
    worker.start()
    logger.info("Real-time run: %d ticks at %.1f Hz", _n_ticks(cfg), cfg.control_hz)

    inflight = False
    pending: Optional[Completion] = None
    error = None
    try:
        for k in range(_n_ticks(cfg)):
            wait = t0 + k * dt - time.perf_counter()
            if wait > 0:
                time.sleep(wait)

            if inflight and pending is None:
                try:
                    item = results.get_nowait()
                except queue.Empty:
                    item = None
                if isinstance(item, WorkerFailure):
                    error = item.message
                    trace.append(ErrorEvent(item.t, item.message))
                    break
                pending = item

            if pending is not None and k >= pending.ready_tick:
                if k > pending.ready_tick:
                    logger.warning("Late handoff for request %d: ready at tick %d, swapped at %d",
                                   pending.prepared.request.req, pending.ready_tick, k)
                executor.swap(pending, k, time.perf_counter() - t0)
                pending = None
                inflight = False

            now = time.perf_counter() - t0
            if not inflight and executor.launch_due(k * dt):
                requests.put_nowait(executor.launch(k, now))
                inflight = True

            executor.execute(k, time.perf_counter() - t0)
    finally:
        shutdown_event.set()
        worker.join(timeout=5.0)
        if worker.is_alive():
            logger.warning("Inference worker did not stop within 5 s")

    header, body = trace.events[0], trace.events[1:]
    body.sort(key=lambda e: e.t)
    trace.events = [header] + body

    metrics = compute_metrics(trace)
    if error is not None:
        logger.error("Real-time run aborted: %s", error)
    return SimResult(trace, metrics, error)


def run_simulation(cfg: SimConfig, policy: Optional[ToyPolicy] = None) -> SimResult:
    if cfg.mode == SimMode.REAL_TIME:
        return run_real_time(cfg, policy)
    return run_discrete_event(cfg, policy=policy)


def fusion_decisions(trace: SimTrace) -> List[tuple]:
    return [e.decision() for e in trace.fusions()]


def replay_matches(live: SimTrace, replay: SimTrace) -> bool:
    """Fusion decisions of a replay equal the live ones for every finished request"""
    live_decisions = fusion_decisions(live)
    return live_decisions == fusion_decisions(replay)[:len(live_decisions)]
