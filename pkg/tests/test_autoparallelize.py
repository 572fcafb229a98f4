import os

import numpy as np
import pytest

from editlab.autoparallelize import autoparallelize, AutoparaInfo
from editlab.autoparallelize.pool import do_in_pool, NUM_SUBPROCESSES_ENV_VAR
from editlab.autoparallelize.utils import grouper


def _square_autopara_wrappable(inputs, offset=0):
    return [x * x + offset for x in inputs]


def square(*args, **kwargs):
    return autoparallelize(_square_autopara_wrappable, *args, default_autopara_info={"num_inputs_per_python_subprocess": 3},
                           **kwargs)


def _draw_autopara_wrappable(inputs, _autopara_per_item_info=None):
    return [(info["item_i"], float(info["rng"].random())) for _, info in zip(inputs, _autopara_per_item_info)]


def draw(*args, **kwargs):
    return autoparallelize(_draw_autopara_wrappable, *args, **kwargs)


def _drop_odd_autopara_wrappable(inputs):
    return [x if x % 2 == 0 else None for x in inputs]


def test_env_sets_default():
    assert int(os.environ[NUM_SUBPROCESSES_ENV_VAR]) > 0


def test_empty_iterable():
    assert square([]) == []


def test_order_preserved():
    inputs = list(range(23))
    assert square(inputs, offset=1) == [x * x + 1 for x in inputs]


def test_serial_matches_parallel():
    inputs = list(range(17))
    serial = square(inputs, autopara_info={"num_python_subprocesses": 0})
    parallel = square(inputs, autopara_info=AutoparaInfo(num_python_subprocesses=2, num_inputs_per_python_subprocess=2))
    assert serial == parallel


def test_inputs_keyword():
    assert square(inputs=[1, 2, 3], autopara_info={"num_python_subprocesses": 0}) == [1, 4, 9]


def test_per_item_rng_independent_of_grouping():
    inputs = list(range(10))
    a = draw(inputs, rng=np.random.default_rng(3), autopara_info={"num_inputs_per_python_subprocess": 1})
    b = draw(inputs, rng=np.random.default_rng(3),
             autopara_info={"num_inputs_per_python_subprocess": 4, "num_python_subprocesses": 0})
    assert a == b
    assert [i for i, _ in a] == inputs
    assert len({v for _, v in a}) == len(inputs)


def test_rng_advances_between_calls():
    rng = np.random.default_rng(3)
    first = draw(list(range(4)), rng=rng)
    second = draw(list(range(4)), rng=rng)
    assert first != second


def test_skip_failed():
    out = do_in_pool(0, 2, range(7), _drop_odd_autopara_wrappable, skip_failed=True)
    assert out == [0, 2, 4, 6]
    out = do_in_pool(0, 2, range(3), _drop_odd_autopara_wrappable)
    assert out == [0, None, 2]


def test_autopara_info_errors():
    with pytest.raises(ValueError):
        AutoparaInfo(num_workers=3)
    info = AutoparaInfo()
    with pytest.raises(ValueError):
        info.update_defaults({"bogus": 1})


def test_grouper():
    assert list(grouper(3, range(7))) == [(0, 1, 2), (3, 4, 5), (6,)]
