"""Pipeline-parallel execution over double-buffered feature-map channels.

One worker thread per stage. Stage ``i`` reads the ping slot of channel
``i`` while stage ``i - 1`` writes the pong slot; a channel swaps only
once both its producer and its consumer have finished the current phase.
Every stage runs ``len(batch) + n_stages - 1`` phases, idling (passing
``None``) while the pipeline fills and drains. Each stage waits on its
input channel before its output channel, so the waits are ordered and
cannot deadlock.
"""
import os
import threading

from .layers import check_model, layer_step, stage_params
from .bitcore import FixedTensor


class DoubleBuffer:
    """Two-slot channel between a producer stage and a consumer stage."""

    def __init__(self):
        self._slots = [None, None]
        self._write = 0
        self._barrier = threading.Barrier(2, action=self._swap)
        self.swaps = 0

    def _swap(self):
        self._write ^= 1
        self._slots[self._write] = None
        self.swaps += 1

    def write(self, value):
        self._slots[self._write] = value

    def read(self):
        return self._slots[self._write ^ 1]

    def phase_done(self, timeout=None):
        self._barrier.wait(timeout)

    def abort(self):
        self._barrier.abort()


def max_workers():
    """Worker cap from ``BINFER_THREADS``; None means uncapped."""
    raw = os.environ.get("BINFER_THREADS", "").strip()
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("BINFER_THREADS must be >= 1")
    return n


def group_layers(n_layers, n_stages):
    """Split ``range(n_layers)`` into ``n_stages`` contiguous, near-equal groups."""
    n_stages = max(1, min(n_stages, n_layers))
    base, extra = divmod(n_layers, n_stages)
    groups, start = [], 0
    for s in range(n_stages):
        size = base + (s < extra)
        groups.append(range(start, start + size))
        start += size
    return groups


def run_streaming(spec, weights, thresholds, images, output_bn=None, delay=None,
                  workers=None, timeout=None):
    """Classify a batch through the stage pipeline.

    Returns ``[(prediction, scores), ...]`` in input order, identical to
    :func:`layers.run_batch`. ``delay(stage, phase)`` is called inside each
    stage's phase before it computes (used to perturb the schedule).
    ``workers`` caps the stage count; layers are then grouped.
    """
    images = list(images)
    if not images:
        raise ValueError("batch must contain at least one image")
    check_model(spec, weights, thresholds, output_bn)
    images = [im if isinstance(im, FixedTensor) else FixedTensor(im) for im in images]
    if workers is None:
        workers = max_workers() or len(spec)
    groups = group_layers(len(spec), workers)
    params = stage_params(thresholds, output_bn, spec)
    n_stages = len(groups)
    n_phases = len(images) + n_stages - 1
    channels = [DoubleBuffer() for _ in range(n_stages - 1)]
    results = [None] * len(images)
    errors = []

    def compute(group, x):
        for i in group:
            x = layer_step(spec.layers[i], weights[i], params[i], x)
        return x

    def worker(s):
        src = channels[s - 1] if s > 0 else None
        dst = channels[s] if s < n_stages - 1 else None
        try:
            for phase in range(n_phases):
                k = phase - s  # image index this stage handles now
                if s == 0:
                    x = images[k] if k < len(images) else None
                else:
                    x = src.read()
                if delay is not None:
                    delay(s, phase)
                y = compute(groups[s], x) if x is not None else None
                if dst is not None:
                    dst.write(y)
                elif y is not None:
                    results[k] = y
                if src is not None:
                    src.phase_done(timeout)
                if dst is not None:
                    dst.phase_done(timeout)
        except threading.BrokenBarrierError:
            pass
        except BaseException as e:  # surface it and unblock the neighbours
            errors.append((s, e))
            for ch in channels:
                ch.abort()

    threads = [threading.Thread(target=worker, args=(s,), name=f"binfer-stage{s}", daemon=True)
               for s in range(n_stages)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        s, e = min(errors, key=lambda se: se[0])
        raise e
    if any(r is None for r in results):
        raise RuntimeError("pipeline finished with missing results")
    return results
