"""JSON documents for problems, estimates and reports.

Floats are written with 17 significant digits so documents round-trip
exactly. A problem document looks like::

    {"transition": [[...], ...], "mean_reward": [...], "discount": 0.9,
     "features": [[...], ...],
     "reward_noise": {"kind": "gaussian", "std": [...]},      # optional
     "episodic": {"termination": [...], "start": 0}}          # optional

With ``episodic`` present, ``transition`` holds the non-terminal block and
``[transition | termination]`` must be row-stochastic.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, InvalidModel
from .mrp import EpisodicMrp, FeatureMap, Mrp, RewardNoise


def _format_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _encode(obj, indent, level):
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    elif isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return _wrap("{", "}", items, indent, level)
    if isinstance(obj, (list, tuple)):
        items = [_encode(v, indent, level + 1) for v in obj]
        # keep numeric rows on one line
        flat = all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj)
        return _wrap("[", "]", items, None if flat else indent, level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _wrap(open_, close, items, indent, level):
    if not items:
        return open_ + close
    if indent is None:
        return open_ + ", ".join(items) + close
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    return open_ + "\n" + ",\n".join(pad + it for it in items) + "\n" + end + close


def dumps(obj, indent=None):
    """JSON text with every float printed to 17 significant digits."""
    return _encode(obj, indent, 0)


@dataclass(frozen=True, eq=False)
class Problem:
    """A feature map together with either a continuing or an episodic MRP."""

    fmap: FeatureMap
    mrp: Mrp | None = None
    episodic: EpisodicMrp | None = None

    def __post_init__(self):
        if (self.mrp is None) == (self.episodic is None):
            raise InvalidModel("a problem holds exactly one of mrp / episodic")
        model = self.mrp if self.mrp is not None else self.episodic
        self.fmap.check_states(model.n_states)

    @property
    def is_episodic(self):
        return self.episodic is not None


def problem_to_dict(problem):
    fmap = problem.fmap
    if problem.mrp is not None:
        m = problem.mrp
        doc = {"transition": m.transition, "mean_reward": m.mean_reward,
               "discount": m.discount, "features": fmap.phi}
        noise = m.reward_noise
    else:
        e = problem.episodic
        n = e.n_states
        doc = {"transition": e.transition_t[:, :n], "mean_reward": e.mean_reward,
               "discount": e.discount, "features": fmap.phi,
               "episodic": {"termination": e.transition_t[:, n], "start": e.start_state}}
        noise = e.reward_noise
    if noise.kind != "none":
        doc["reward_noise"] = noise.to_dict()
    return doc


def _field(doc, key, where="problem"):
    if key not in doc:
        raise ConfigError(f"{where}: missing field '{key}'")
    return doc[key]


def _array(doc, key, ndim, where="problem"):
    try:
        arr = np.asarray(_field(doc, key, where), dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a numeric array ({exc})") from None
    if arr.ndim != ndim:
        raise ConfigError(f"{where}.{key}: expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def _noise_from_dict(d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: must be an object")
    kind = d.get("kind", "none")
    try:
        if kind == "gaussian":
            return RewardNoise("gaussian", std=_array(d, "std", 1, where))
        if kind == "discrete":
            return RewardNoise("discrete", values=np.atleast_2d(d.get("values")),
                               probs=np.atleast_2d(d.get("probs")))
        return RewardNoise(kind)
    except InvalidModel as exc:
        raise ConfigError(f"{where}: {exc}") from None


def problem_from_dict(doc, where="problem"):
    """Parse a problem document; errors name the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: must be a JSON object")
    known = {"transition", "mean_reward", "discount", "features", "reward_noise", "episodic"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    p = _array(doc, "transition", 2, where)
    r = _array(doc, "mean_reward", 1, where)
    phi = _array(doc, "features", 2, where)
    try:
        gamma = float(_field(doc, "discount", where))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.discount: not a number") from None
    noise = RewardNoise()
    if "reward_noise" in doc:
        noise = _noise_from_dict(doc["reward_noise"], f"{where}.reward_noise")
    try:
        fmap = FeatureMap(phi)
        if "episodic" in doc:
            ep = doc["episodic"]
            sub = f"{where}.episodic"
            if not isinstance(ep, dict):
                raise ConfigError(f"{sub}: must be an object")
            term = _array(ep, "termination", 1, sub)
            if term.shape[0] != p.shape[0]:
                raise ConfigError(f"{sub}.termination: length must equal the number of states")
            emrp = EpisodicMrp(np.column_stack([p, term]), r, gamma,
                               int(ep.get("start", 0)), noise)
            return Problem(fmap, episodic=emrp)
        return Problem(fmap, mrp=Mrp(p, r, gamma, noise))
    except InvalidModel as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_json(path):
    """Read a JSON file, reporting syntax errors with line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_problem(path):
    return problem_from_dict(load_json(path), where=str(path))


def dump_problem(problem, path=None):
    text = dumps(problem_to_dict(problem), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
