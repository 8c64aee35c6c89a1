"""Run configuration: strict JSON parsing, defaults, overrides, validation."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

from .ensemble import EnsembleConfig
from .errors import ConfigError
from .noise import FAMILIES, NoiseModel
from .scheme import SchemeConfig

_REQUIRED = object()


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _opt(check):
    return lambda v: v is None or check(v)


def _num_list(v):
    return isinstance(v, list) and all(_num(x) for x in v)


def _int_list(v):
    return isinstance(v, list) and all(_int(x) for x in v)


def _pair(v):
    return isinstance(v, list) and len(v) == 2 and all(_num(x) for x in v)


def _probes(v):
    return isinstance(v, list) and all(
        isinstance(p, list) and len(p) == 2 and _num(p[0]) and _num_list(p[1]) for p in v
    )


def _modes(v):
    return isinstance(v, list) and all(
        isinstance(p, list) and len(p) == 2 and _int_list(p[0]) and _num_list(p[1]) for p in v
    )


# section -> key -> (check, default, description used in messages)
SCHEMA = {
    "lattice": {
        "dim": (_int, _REQUIRED, "2 or 3"),
        "n": (_int, _REQUIRED, "positive integer"),
        "grid": (_int, 0, "integer (0 = 3n+1 rounded to a fast size)"),
    },
    "scheme": {
        "m": (_opt(_int), None, "integer or null"),
        "eps": (_opt(_num), None, "number or null"),
        "eps_law": (_opt(_pair), None, "[coefficient, exponent] or null"),
        "dt": (_num, 0.01, "number"),
        "T": (_num, 1.0, "number"),
        "integrator": (lambda v: isinstance(v, str), "euler_maruyama", "string"),
        "convection": (lambda v: isinstance(v, str), "dealiased_pseudospectral", "string"),
    },
    "noise": {
        "family": (lambda v: v in FAMILIES, "zero", f"one of {FAMILIES}"),
        "K": (_int, 8, "integer"),
        "alphas": (_opt(_num_list), None, "list of numbers or null"),
        "amplitude": (_num, 0.1, "number"),
        "decay": (_num, 2.0, "number"),
        "D0": (_opt(_num), None, "number or null"),
        "D1": (_opt(_num), None, "number or null"),
        "modes": (_opt(_modes), None, "list of [[q...], [e...]] or null"),
    },
    "initial": {
        "preset": (lambda v: isinstance(v, str), "taylor_green", "string"),
        "params": (lambda v: isinstance(v, dict), {}, "object"),
    },
    "observers": {
        "energy_stride": (_int, 1, "integer"),
        "snapshot_stride": (_int, 0, "integer (0 = off)"),
        "checkpoint_every": (_int, 0, "integer (0 = off)"),
        "probes": (_probes, [], "list of [t, [x...]]"),
    },
    "ensemble": {
        "M": (_int, 16, "integer"),
        "ladder": (_int_list, [8, 16, 32, 64], "list of integers"),
        "coupled": (lambda v: isinstance(v, bool), True, "boolean"),
        "histogram_bins": (_int, 20, "integer"),
        "batch_size": (_int, 32, "integer"),
    },
    "experiment": {
        "dts": (_num_list, [0.01, 0.005, 0.0025], "list of numbers"),
        "p": (_num, 2.0, "number"),
        "phi": (lambda v: isinstance(v, dict), {"preset": "random_divfree", "seed": 11, "kmax": 64, "slope": 3.0},
                "preset object"),
        "cutoffs": (_int_list, [8, 16, 32], "list of integers"),
        "n_ref": (_int, 128, "integer"),
        "ref_factor": (_int, 4, "integer"),
        "samples": (_int, 10, "integer"),
        "slack": (_num, 0.2, "number"),
        "members": (_int, 1, "integer"),
    },
}
TOP_LEVEL = {"seed": (_int, 0, "integer"), "output": (lambda v: isinstance(v, str), "out", "string"),
             "threads": (_int, 1, "integer")}
# keys that do not change results; excluded from the run hash
NON_RESULT_KEYS = ("output", "threads")


def _fill(raw: dict, problems: list, type_errors: list) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    data = {}
    for key in raw:
        if key not in SCHEMA and key not in TOP_LEVEL:
            problems.append(f"unknown key {key!r}")
    for key, (check, default, desc) in TOP_LEVEL.items():
        val = raw.get(key, default)
        if not check(val):
            type_errors.append(f"{key} must be {desc}, got {val!r}")
        data[key] = val
    for section, keys in SCHEMA.items():
        block = raw.get(section, {})
        if not isinstance(block, dict):
            type_errors.append(f"section {section!r} must be an object")
            block = {}
        for key in block:
            if key not in keys:
                problems.append(f"unknown key {section}.{key}")
        out = {}
        for key, (check, default, desc) in keys.items():
            if key not in block:
                if default is _REQUIRED:
                    type_errors.append(f"missing required key {section}.{key}")
                    continue
                out[key] = copy.deepcopy(default)
                continue
            if not check(block[key]):
                type_errors.append(f"{section}.{key} must be {desc}, got {block[key]!r}")
            out[key] = block[key]
        data[section] = out
    return data


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` holds every key with defaults filled."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and canonical(self.data) == canonical(other.data)

    def __hash__(self):
        return hash(canonical(self.data))

    def section(self, name: str) -> dict:
        return self.data[name]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def output(self) -> str:
        return os.environ.get("SVMEULER_OUTPUT", self.data["output"])

    @property
    def threads(self) -> int:
        env = os.environ.get("SVMEULER_THREADS")
        return int(env) if env else self.data["threads"]

    def noise_model(self) -> NoiseModel:
        nz = self.data["noise"]
        if nz["alphas"] is not None:
            alphas = tuple(nz["alphas"])
        else:
            alphas = tuple(nz["amplitude"] * k ** (-nz["decay"]) for k in range(1, nz["K"] + 1))
        modes = tuple((tuple(q), tuple(e)) for q, e in (nz["modes"] or ()))
        return NoiseModel(nz["family"], alphas, nz["D0"], nz["D1"], modes)

    def scheme_config(self) -> SchemeConfig:
        lat, sc = self.data["lattice"], self.data["scheme"]
        return SchemeConfig(
            n=lat["n"], dim=lat["dim"], grid=lat["grid"], m=sc["m"], eps=sc["eps"],
            eps_law=None if sc["eps_law"] is None else tuple(sc["eps_law"]),
            dt=sc["dt"], T=sc["T"], integrator=sc["integrator"], noise=self.noise_model(),
            convection=sc["convection"],
        )

    def ensemble_config(self) -> EnsembleConfig:
        e = self.data["ensemble"]
        probes = tuple((float(t), tuple(x)) for t, x in self.data["observers"]["probes"])
        return EnsembleConfig(M=e["M"], master_seed=self.seed, ladder=tuple(e["ladder"]),
                              coupled=e["coupled"], probes=probes, histogram_bins=e["histogram_bins"],
                              batch_size=e["batch_size"])

    def initial(self) -> dict:
        ini = self.data["initial"]
        return {"preset": ini["preset"], **ini["params"]}

    def run_hash(self) -> str:
        d = {k: v for k, v in self.data.items() if k not in NON_RESULT_KEYS}
        return hashlib.sha256(canonical(d).encode()).hexdigest()


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _validate(data: dict, problems: list) -> None:
    cfg = RunConfig(data)
    for build in (cfg.noise_model, cfg.scheme_config, cfg.ensemble_config):
        try:
            build()
        except ConfigError as exc:
            problems.extend(exc.problems)
        except (TypeError, ValueError) as exc:
            problems.append(str(exc))
    try:
        sc = cfg.scheme_config()
        cfg.ensemble_config().validate_against(sc)
    except ConfigError as exc:
        problems.extend(p for p in exc.problems if p not in problems)
    nz = data["noise"]
    if nz["alphas"] is not None and len(nz["alphas"]) != nz["K"]:
        problems.append(f"noise.alphas has {len(nz['alphas'])} entries but noise.K = {nz['K']}")
    if nz["family"] == "additive_modes" and nz["modes"] is not None and len(nz["modes"]) != nz["K"]:
        problems.append(f"noise.modes has {len(nz['modes'])} entries but noise.K = {nz['K']}")
    if data["initial"]["preset"] not in ("taylor_green", "shear", "random_divfree", "file"):
        problems.append(f"initial.preset {data['initial']['preset']!r} is not a known preset")
    for key in ("energy_stride", "snapshot_stride", "checkpoint_every"):
        if data["observers"][key] < 0:
            problems.append(f"observers.{key} must be >= 0")
    if data["threads"] < 1:
        problems.append("threads must be >= 1")


def set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p} is not a section")
    node[parts[-1]] = value


def parse_override(item: str):
    """``key=value`` with the value read as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse JSON text, apply ``key=value`` overrides and validate everything.

    Raises ConfigError listing every violation found.
    """
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_dotted(raw, key, value)
    problems: list = []
    type_errors: list = []
    data = _fill(raw, problems, type_errors)
    problems.extend(type_errors)
    if not type_errors:  # cross-field checks would only cascade from type errors
        _validate(data, problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(data)


def serialize(cfg: RunConfig) -> str:
    return json.dumps(cfg.data, sort_keys=True, indent=2) + "\n"


DEFAULT_TEXT = '{"lattice": {"dim": 2, "n": 16}}'


def load_config(path=None, overrides=()) -> RunConfig:
    if path is None:
        return parse_config(DEFAULT_TEXT, overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)
