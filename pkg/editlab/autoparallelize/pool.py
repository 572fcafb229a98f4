import sys
import os
import inspect
import functools

from multiprocessing.pool import Pool

from .utils import items_inputs_generator, set_autopara_per_item_info

NUM_SUBPROCESSES_ENV_VAR = "EDITLAB_NUM_PYTHON_SUBPROCESSES"


def _wrapped_autopara_wrappable(op, iterable_arg, args, kwargs, item_inputs):
    """Call op on one group of items

    Parameters:
    -----------
        op: callable
            function to call
        iterable_arg: int/str
            where to put the list of items. If int, place in positional args,
                or if str, key in kwargs
        args: list
            list of positional args
        kwargs: dict
            dict of keyword args
        item_inputs: iterable(3-tuples)
            (item, item_i, item_rng) for each item

    Returns:
    -------
        list of (output, item_i) pairs
    """
    kwargs = kwargs.copy()
    item_list = [item_input[0] for item_input in item_inputs]
    item_i_list = [item_input[1] for item_input in item_inputs]
    rng_list = [item_input[2] for item_input in item_inputs]

    set_autopara_per_item_info(kwargs, op, rng_list, item_i_list)

    if isinstance(iterable_arg, int):
        u_args = tuple(args[0:iterable_arg]) + (item_list,) + tuple(args[iterable_arg:])
    else:
        u_args = args
        kwargs[iterable_arg] = item_list

    outputs = op(*u_args, **kwargs)
    if outputs is None:
        outputs = [None] * len(item_list)
    if len(outputs) != len(item_list):
        raise RuntimeError(f"{op.__name__} returned {len(outputs)} outputs for {len(item_list)} inputs")
    return list(zip(outputs, item_i_list))


def do_in_pool(num_python_subprocesses=None, num_inputs_per_python_subprocess=1, iterable=None, op=None,
               iterable_arg=0, skip_failed=False, initializer=(None, []), rng=None, args=[], kwargs={}):
    """parallelize some operation over an iterable

    Parameters
    ----------
    num_python_subprocesses: int, default os.environ['EDITLAB_NUM_PYTHON_SUBPROCESSES']
        number of processes to parallelize over, 0 for running in serial
    num_inputs_per_python_subprocess: int, default 1
        number of items from iterable to pass to each invocation of operation
    iterable: iterable, default None
        iterable to loop over
    op: callable
        function to call with each chunk
    iterable_arg: itr or str, default 0
        positional argument or keyword argument to place iterable items in when calling op
    skip_failed: bool, default False
        drop outputs that are None
    initializer: (callable, list), default (None, [])
        function to call at beginning of each subprocess and its positional args
    rng: numpy.random.Generator, default None
        generator to spawn per-item generators from
    args: list
        positional arguments to op
    kwargs: dict
        keyword arguments to op

    Returns
    -------
    list of outputs, in input order
    """
    assert len(initializer) == 2, f"Bad initializer {initializer}"

    if num_python_subprocesses is None:
        num_python_subprocesses = int(os.environ.get(NUM_SUBPROCESSES_ENV_VAR, 0))

    items_inputs = items_inputs_generator(iterable, num_inputs_per_python_subprocess, rng)

    results = []
    if num_python_subprocesses > 0:
        op_full_name = inspect.getmodule(op).__name__ + "." + op.__name__
        sys.stderr.write(f'Running {op_full_name} with num_python_subprocesses={num_python_subprocesses}, '
                         f'num_inputs_per_python_subprocess={num_inputs_per_python_subprocess}\n')
        if initializer[0] is not None:
            initializer_args = {'initializer': initializer[0], 'initargs': initializer[1]}
        else:
            initializer_args = {}
        pool = Pool(num_python_subprocesses, **initializer_args)

        # imap preserves input order
        for result_group in pool.imap(functools.partial(_wrapped_autopara_wrappable, op, iterable_arg,
                                                        args, kwargs), items_inputs):
            results.extend(result_group)

        pool.close()
        # join prevents pytest-cov deadlock
        pool.join()
    else:
        if initializer[0] is not None:
            initializer[0](*initializer[1])
        for items_inputs_group in items_inputs:
            results.extend(_wrapped_autopara_wrappable(op, iterable_arg, args, kwargs, items_inputs_group))

    outputs = [out for out, _ in sorted(results, key=lambda r: r[1])]
    if skip_failed:
        outputs = [out for out in outputs if out is not None]
    return outputs
