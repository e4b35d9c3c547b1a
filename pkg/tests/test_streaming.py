import threading
import time

import numpy as np
import pytest

from binfer import layers
from binfer.formats import reference_spec
from binfer.streaming import DoubleBuffer, group_layers, max_workers, run_streaming
from binfer.verify import random_image, random_instance


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(7)
    spec = reference_spec("toy")
    inst = random_instance(rng, spec)
    images = [random_image(rng, spec) for _ in range(16)]
    seq = layers.run_batch(spec, inst.weights, inst.thresholds, images, inst.output_bn)
    return spec, inst, images, seq


def same(a, b):
    assert len(a) == len(b)
    for (pa, sa), (pb, sb) in zip(a, b):
        assert pa == pb
        np.testing.assert_array_equal(sa, sb)


def test_batch_of_16(toy):
    spec, inst, images, seq = toy
    same(run_streaming(spec, inst.weights, inst.thresholds, images, inst.output_bn), seq)


def test_batch_of_1(toy):
    spec, inst, images, seq = toy
    out = run_streaming(spec, inst.weights, inst.thresholds, images[:1], inst.output_bn)
    assert out[0][0] == layers.run_network(spec, inst.weights, inst.thresholds, images[0],
                                           inst.output_bn)


@pytest.mark.parametrize("seed", range(5))
def test_random_stage_delays(toy, seed):
    spec, inst, images, seq = toy
    r = np.random.default_rng(seed)
    lock = threading.Lock()

    def delay(stage, phase):
        with lock:
            t = r.uniform(0, 0.003)
        time.sleep(t)

    same(run_streaming(spec, inst.weights, inst.thresholds, images, inst.output_bn, delay=delay),
         seq)


@pytest.mark.parametrize("workers", [1, 2, 3])
def test_grouped_stages(toy, workers):
    spec, inst, images, seq = toy
    same(run_streaming(spec, inst.weights, inst.thresholds, images, inst.output_bn,
                       workers=workers), seq)


def test_stage_error_propagates(toy):
    spec, inst, images, _ = toy

    def delay(stage, phase):
        if stage == 2 and phase == 4:
            raise RuntimeError("boom")

    t0 = time.perf_counter()
    with pytest.raises(RuntimeError, match="boom"):
        run_streaming(spec, inst.weights, inst.thresholds, images, inst.output_bn, delay=delay,
                      timeout=30)
    assert time.perf_counter() - t0 < 10


def test_empty_batch(toy):
    spec, inst, _, _ = toy
    with pytest.raises(ValueError):
        run_streaming(spec, inst.weights, inst.thresholds, [], inst.output_bn)


def test_group_layers():
    assert [list(g) for g in group_layers(9, 4)] == [[0, 1, 2], [3, 4], [5, 6], [7, 8]]
    assert len(group_layers(3, 10)) == 3
    assert [list(g) for g in group_layers(4, 1)] == [[0, 1, 2, 3]]


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("BINFER_THREADS", "2")
    assert max_workers() == 2
    monkeypatch.delenv("BINFER_THREADS")
    assert max_workers() is None
    monkeypatch.setenv("BINFER_THREADS", "0")
    with pytest.raises(ValueError):
        max_workers()


def test_double_buffer_swaps_only_when_both_done():
    ch = DoubleBuffer()
    got = []

    def producer():
        for v in range(3):
            ch.write(v)
            ch.phase_done(5)

    def consumer():
        for _ in range(3):
            got.append(ch.read())
            time.sleep(0.01)  # a slow consumer holds the swap back
            ch.phase_done(5)

    threads = [threading.Thread(target=producer), threading.Thread(target=consumer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # the consumer sees the previous phase's value: a one-phase lag, nothing lost or skipped
    assert got == [None, 0, 1]
    assert ch.swaps == 3
    assert ch.read() == 2
