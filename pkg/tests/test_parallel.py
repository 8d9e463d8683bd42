import threading

import pytest

from robustprop.parallel import THREADS_ENV, n_workers, ordered_map


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert n_workers() == 1
    monkeypatch.setenv(THREADS_ENV, "6")
    assert n_workers() == 6
    assert n_workers(2) == 2
    assert n_workers(0) == 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ValueError, match=THREADS_ENV):
        n_workers()


def test_ordered_map_keeps_order_on_a_pool(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "4")
    seen = set()

    def fn(i):
        seen.add(threading.get_ident())
        return i * i

    assert ordered_map(fn, range(200)) == [i * i for i in range(200)]
    assert ordered_map(fn, []) == []
