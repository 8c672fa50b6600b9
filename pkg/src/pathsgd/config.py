"""Run configuration, checkpoint files, and metrics output.

Configs are flat ``key = value`` text.  Precedence, lowest to highest:
built-in defaults, config file, the PATHSGD_OUT_DIR environment variable
(for out_dir only), then command-line overrides.  Checkpoints are plain text
with 17-significant-digit floats, which round-trip doubles exactly, so a
resumed run continues bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import GraphError, SharedWeightNet
from .optim import OPTIMIZERS, OptimizerState
from .pathnorm import KAPPA_MODES

TASKS = ("addition", "seqclass", "charlm", "linreg")
INIT_SCHEMES = ("uniform", "identity")
OUT_DIR_ENV = "PATHSGD_OUT_DIR"
CHECKPOINT_MAGIC = "pathsgd checkpoint v1"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # task and data
    task: str = "addition"
    seq_len: int = 40               # unroll length (and charlm window)
    hidden: tuple[int, ...] = (32,)
    bias: bool = False
    corpus: str = ""                # charlm text path; empty uses the bundled corpus
    num_classes: int = 4
    image_size: int = 8
    data_size: int = 1024
    test_frac: float = 0.25
    eval_size: int = 512
    data_seed: int = 1
    slope: float = 1.7
    # optimizer
    optimizer: str = "path_sgd"
    lr: float = 1e-3
    kappa_mode: str = "k1"
    kappa_every: int = 1
    epsilon: float = 1e-8
    init: str = "uniform"
    init_range: float = 0.1
    init_ranges: str = ""           # per-block overrides, e.g. "rec1:0.3 out:0.05"
    # loop
    batch_size: int = 32
    steps: int = 1000
    eval_interval: int = 100
    seed: int = 0
    target_loss: float | None = None
    target_test_metric: float | None = None
    record_kappa_ratio: bool = False
    timing: bool = False
    # output
    out_dir: str = "runs/out"
    checkpoint_interval: int = 0    # 0 writes a checkpoint at the end only

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.kappa_mode not in KAPPA_MODES:
            raise ConfigError(f"unknown kappa_mode {self.kappa_mode!r}")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init {self.init!r}; choose from {INIT_SCHEMES}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden must list positive layer widths")
        if self.seq_len < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ConfigError("seq_len, batch_size and eval_interval must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.lr <= 0 or self.epsilon <= 0 or self.init_range <= 0:
            raise ConfigError("lr, epsilon and init_range must be positive")
        if self.kappa_every < 1:
            raise ConfigError("kappa_every must be >= 1")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        if self.checkpoint_interval:
            if self.checkpoint_interval % self.eval_interval != 0:
                raise ConfigError("checkpoint_interval must be a multiple of eval_interval")
            if self.kappa_every != 1 and self.checkpoint_interval % self.kappa_every != 0:
                raise ConfigError("checkpoint_interval must be a multiple of kappa_every")
        if self.task == "linreg" and self.init == "identity":
            raise ConfigError("identity init needs a recurrent network")
        if self.init_ranges:
            ranges = parse_block_ranges(self.init_ranges)
            if self.init != "uniform":
                raise ConfigError("init_ranges only applies to the uniform init")
            if any(r <= 0 for r in ranges.values()):
                raise ConfigError("init_ranges values must be positive")


def parse_block_ranges(s: str) -> dict[str, float]:
    """``name:value`` pairs separated by spaces or commas."""
    out: dict[str, float] = {}
    for tok in s.replace(",", " ").split():
        if ":" not in tok:
            raise ConfigError(f"bad init_ranges entry {tok!r}; expected name:value")
        name, raw = tok.split(":", 1)
        try:
            out[name] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad init_ranges value {tok!r}") from exc
    return out


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_hidden(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in s.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad hidden spec {s!r}") from exc


def _parse_opt_float(s: str) -> float | None:
    if s.strip().lower() in ("", "none"):
        return None
    return float(s)


def _field_value(cfg: RunConfig, key: str, raw: str):
    kind = {f.name: f.type for f in dataclasses.fields(RunConfig)}.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key == "hidden":
            return _parse_hidden(raw)
        if kind == "bool":
            return _parse_bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return _parse_opt_float(raw)
        return raw
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_kv_text(text: str) -> dict[str, str]:
    """``key = value`` per line; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = body.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file, then PATHSGD_OUT_DIR, then overrides."""
    cfg = RunConfig()
    if path is not None:
        for key, raw in parse_kv_text(Path(path).read_text()).items():
            setattr(cfg, key, _field_value(cfg, key, raw))
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        cfg.out_dir = env_out
    for key, raw in (overrides or {}).items():
        setattr(cfg, key, _field_value(cfg, key, raw))
    cfg.validate()
    return cfg


def config_text(cfg: RunConfig) -> str:
    """The resolved config in the same key = value grammar."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "hidden":
            val = ",".join(str(h) for h in val)
        elif val is None:
            val = "none"
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def describe_net(net: SharedWeightNet) -> str:
    if net.rnn is not None:
        s = net.rnn.spec
        hid = ",".join(str(h) for h in s.hidden_dims)
        return (f"rnn in={s.input_dim} hidden={hid} out={s.output_dim} "
                f"T={s.length} bias={int(s.bias)}")
    return f"graph nodes={net.num_nodes} edges={net.num_edges} m={net.num_params}"


def save_checkpoint(path, step: int, net: SharedWeightNet, p: np.ndarray,
                    opt: OptimizerState) -> None:
    lines = [CHECKPOINT_MAGIC,
             f"net {describe_net(net)}",
             f"step {step}",
             f"kind {opt.kind}",
             f"eta {_fmt(opt.eta)}",
             f"kappa_mode {opt.kappa_mode}",
             f"eps {_fmt(opt.eps)}",
             f"beta1 {_fmt(opt.beta1)}",
             f"beta2 {_fmt(opt.beta2)}",
             f"eps_adam {_fmt(opt.eps_adam)}",
             f"t {opt.t}",
             f"m {len(p)}"]
    lines.extend(_fmt(x) for x in p)
    if opt.m1 is not None:
        lines.append("moments")
        lines.extend(_fmt(x) for x in opt.m1)
        lines.extend(_fmt(x) for x in opt.m2)
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path, net: SharedWeightNet | None = None):
    """Returns (step, p, OptimizerState).  If a net is given, its description
    must match the one stored at save time."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    head: dict[str, str] = {}
    i = 1
    while i < len(lines) and " " in lines[i] and not lines[i].startswith("moments"):
        key, val = lines[i].split(" ", 1)
        head[key] = val
        i += 1
        if key == "m":
            break
    if net is not None and head.get("net") != describe_net(net):
        raise ConfigError(
            f"{path}: checkpoint is for net [{head.get('net')}], "
            f"current net is [{describe_net(net)}]")
    try:
        m = int(head["m"])
        step = int(head["step"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing header field {exc.args[0]!r}") from exc
    p = np.array([float(x) for x in lines[i:i + m]])
    if len(p) != m:
        raise ConfigError(f"{path}: truncated parameter block")
    i += m
    m1 = m2 = None
    if i < len(lines) and lines[i] == "moments":
        i += 1
        m1 = np.array([float(x) for x in lines[i:i + m]])
        m2 = np.array([float(x) for x in lines[i + m:i + 2 * m]])
        if len(m1) != m or len(m2) != m:
            raise ConfigError(f"{path}: truncated moment block")
        i += 2 * m
    if i >= len(lines) or lines[i] != "end":
        raise ConfigError(f"{path}: missing end marker")
    try:
        opt = OptimizerState(kind=head["kind"], eta=float(head["eta"]),
                             kappa_mode=head["kappa_mode"], eps=float(head["eps"]),
                             beta1=float(head["beta1"]), beta2=float(head["beta2"]),
                             eps_adam=float(head["eps_adam"]), t=int(head["t"]),
                             m1=m1, m2=m2)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad optimizer header ({exc})") from exc
    return step, p, opt


# ---------------------------------------------------------------------------
# metrics

def metrics_header(record_kappa_ratio: bool) -> str:
    cols = ["step", "train_loss", "train_metric", "test_metric"]
    if record_kappa_ratio:
        cols.append("kappa_ratio")
    cols.append("wall_ms")
    return ",".join(cols)


def metrics_row(row: dict, record_kappa_ratio: bool) -> str:
    cols = [str(row["step"]), repr(float(row["train_loss"])),
            repr(float(row["train_metric"])), repr(float(row["test_metric"]))]
    if record_kappa_ratio:
        cols.append(repr(float(row["kappa_ratio"])))
    cols.append(repr(float(row["wall_ms"])))
    return ",".join(cols)


def write_metrics(path, history: list[dict], record_kappa_ratio: bool) -> None:
    lines = [metrics_header(record_kappa_ratio)]
    lines.extend(metrics_row(r, record_kappa_ratio) for r in history)
    Path(path).write_text("\n".join(lines) + "\n")
