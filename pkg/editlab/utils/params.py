from editlab.errors import ConfigError


class Params:
    """read-only access to nested dicts by slash separated path, e.g. ``get("model/d_model")``"""

    def __init__(self, params_dict):
        self.d = params_dict

    def get(self, item_path, default=None):
        if item_path.startswith('/'):
            item_path = item_path.replace('/', '', 1)
        path_comps = item_path.split('/', 1)
        leading_comp = path_comps[0]

        if leading_comp not in self.d:
            if len(path_comps) > 1:
                raise ValueError('Failed to find path component \'{}\''.format(leading_comp))
            return default

        result = self.d[leading_comp]
        if len(path_comps) > 1:
            if not isinstance(result, dict):
                raise ValueError('Path component \'{}\' is not a section'.format(leading_comp))
            result = Params(result).get(path_comps[1], default=default)

        return result

    def __getitem__(self, item_path):
        sentinel = object()
        val = self.get(item_path, default=sentinel)
        if val is sentinel:
            raise KeyError(item_path)
        return val


def merge_with_defaults(user, defaults, path="", open_sections=()):
    """recursively fill user dict from defaults, rejecting keys that defaults do not know

    Parameters
    ----------
    user: dict
        user supplied values
    defaults: dict
        complete set of keys with default values
    path: str
        slash path of this level, for error messages
    open_sections: iterable(str)
        slash paths whose keys are not checked against defaults

    Returns
    -------
    merged: dict
    """
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError(f"config section '{path or '/'}' must be a mapping, got {type(user).__name__}")

    merged = {}
    for k, v in user.items():
        sub_path = f"{path}/{k}" if path else k
        if k not in defaults and path not in open_sections:
            raise ConfigError(f"unknown config key '{sub_path}'")
        merged[k] = v

    for k, default in defaults.items():
        sub_path = f"{path}/{k}" if path else k
        if isinstance(default, dict):
            merged[k] = merge_with_defaults(merged.get(k), default, sub_path, open_sections)
        elif k not in merged:
            merged[k] = default

    return merged
