"""Text file formats: circuits, batch manifests, and config files.

Circuit files are UTF-8 with LF endings, one gate per line after a header:

    qubits <n> shots <s>
    X90 q<i>
    VZ q<i> <radians>
    CZ q<i> q<j>
    MEAS q<i>
    DELAY q<i> <ns>
    PREQ q<i>

``#`` starts a comment.  Phases are written with ``repr`` so parsing returns
the identical double and re-encoding is byte-stable.

Batch spec configs are ``key = value`` lines; list-valued keys separate
per-width groups with ``|`` and elements with ``,``:

    kind = RB
    widths = 0 | 0,1
    depths = 2,4 | 2,4      # one group, or one per width
    randomizations = 30     # int, or per-width groups for CB
    shots = 100
    seed = 7

Experiment configs use the same syntax with keys: batch, mode, seed, shots,
reset_ns, out, socket.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .circuits import Circuit, Gate, GateKind, cz, delay, measure, param_request, vz, x90
from .errors import ConfigError, DecodeError
from .generators import BatchSpec, CircuitBatch, Label

MANIFEST_NAME = "manifest.txt"
CIRCUIT_DIR = "circuits"


def circuit_to_text(c: Circuit) -> str:
    lines = [f"qubits {c.n_qubits} shots {c.shots}"]
    for g in c.gates:
        if g.kind is GateKind.X90:
            lines.append(f"X90 q{g.qubits[0]}")
        elif g.kind is GateKind.VIRTUAL_Z:
            lines.append(f"VZ q{g.qubits[0]} {g.phase!r}")
        elif g.kind is GateKind.TWO_QUBIT:
            lines.append(f"{g.two_qubit_name} q{g.qubits[0]} q{g.qubits[1]}")
        elif g.kind is GateKind.MEASURE:
            lines.append(f"MEAS q{g.qubits[0]}")
        elif g.kind is GateKind.DELAY:
            lines.append(f"DELAY q{g.qubits[0]} {g.duration_ns}")
        elif g.kind is GateKind.PARAM_REQUEST:
            lines.append(f"PREQ q{g.qubits[0]}")
        else:
            raise ConfigError(f"cannot serialize gate kind {g.kind!r}")
    return "\n".join(lines) + "\n"


def _parse_qubit(token: str, line_no: int) -> int:
    if not token.startswith("q") or not token[1:].isdigit():
        raise ConfigError(f"line {line_no}: expected qubit token like 'q0', got {token!r}")
    return int(token[1:])


def circuit_from_text(text: str) -> Circuit:
    gates: list[Gate] = []
    n_qubits = shots = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if n_qubits is None:
            if len(tokens) != 4 or tokens[0] != "qubits" or tokens[2] != "shots":
                raise ConfigError(f"line {line_no}: expected header 'qubits <n> shots <s>'")
            try:
                n_qubits, shots = int(tokens[1]), int(tokens[3])
            except ValueError:
                raise ConfigError(f"line {line_no}: non-integer header field") from None
            continue
        op = tokens[0]
        try:
            if op == "X90" and len(tokens) == 2:
                gates.append(x90(_parse_qubit(tokens[1], line_no)))
            elif op == "VZ" and len(tokens) == 3:
                gates.append(vz(_parse_qubit(tokens[1], line_no), float(tokens[2])))
            elif op == "CZ" and len(tokens) == 3:
                gates.append(cz(_parse_qubit(tokens[1], line_no), _parse_qubit(tokens[2], line_no)))
            elif op == "MEAS" and len(tokens) == 2:
                gates.append(measure(_parse_qubit(tokens[1], line_no)))
            elif op == "DELAY" and len(tokens) == 3:
                gates.append(delay(_parse_qubit(tokens[1], line_no), int(tokens[2])))
            elif op == "PREQ" and len(tokens) == 2:
                gates.append(param_request(_parse_qubit(tokens[1], line_no)))
            else:
                raise ConfigError(f"line {line_no}: unrecognized gate line {line!r}")
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: {exc}") from None
    if n_qubits is None:
        raise ConfigError("circuit file has no header line")
    return Circuit(tuple(gates), n_qubits, shots)


def _width_str(width: tuple[int, ...]) -> str:
    return ",".join(str(q) for q in width)


def _parse_width(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"bad width {text!r}") from None


def batch_hash(batch: CircuitBatch) -> str:
    h = hashlib.sha256()
    for c in batch.circuits:
        h.update(circuit_to_text(c).encode("utf-8"))
    return h.hexdigest()


def write_batch(batch: CircuitBatch, outdir: str | Path) -> Path:
    """One circuit file per circuit plus a manifest listing order and labels."""
    outdir = Path(outdir)
    (outdir / CIRCUIT_DIR).mkdir(parents=True, exist_ok=True)
    h = hashlib.sha256()
    rel_paths = []
    for i, c in enumerate(batch.circuits):
        text = circuit_to_text(c)
        h.update(text.encode("utf-8"))
        rel = f"{CIRCUIT_DIR}/c{i:05d}.txt"
        (outdir / rel).write_bytes(text.encode("utf-8"))
        rel_paths.append(rel)
    spec = batch.spec
    lines = [
        "# circuit batch manifest",
        "version 1",
        f"kind {spec.kind if spec else '-'}",
        f"seed {spec.seed if spec else 0}",
        f"shots {spec.shots if spec else '-'}",
        f"count {len(batch)}",
        f"hash {h.hexdigest()}",
    ]
    for i, (rel, label) in enumerate(zip(rel_paths, batch.labels)):
        lines.append(
            f"circuit {i} {rel} width {_width_str(label.width)} "
            f"depth {label.depth} rand {label.randomization} role {label.role}"
        )
    manifest = outdir / MANIFEST_NAME
    manifest.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return manifest


def read_batch(path: str | Path) -> CircuitBatch:
    """Load a batch from a manifest file or the directory containing one."""
    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest.is_file():
        raise ConfigError(f"no manifest at {manifest}")
    root = manifest.parent
    entries: list[tuple[str, Label]] = []
    declared: dict[str, str] = {}
    for line_no, raw in enumerate(manifest.read_text("utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "circuit":
            if len(tokens) != 11 or tokens[3] != "width" or tokens[5] != "depth":
                raise ConfigError(f"{manifest}:{line_no}: malformed circuit entry")
            try:
                label = Label(
                    _parse_width(tokens[4]), int(tokens[6]), int(tokens[8]), tokens[10]
                )
            except ValueError:
                raise ConfigError(f"{manifest}:{line_no}: malformed circuit entry") from None
            entries.append((tokens[2], label))
        elif len(tokens) >= 2:
            declared[tokens[0]] = tokens[1]
    if "count" in declared and declared["count"] != str(len(entries)):
        raise ConfigError(
            f"{manifest}: declares {declared['count']} circuits, lists {len(entries)}"
        )
    circuits = []
    h = hashlib.sha256()
    for rel, _ in entries:
        data = (root / rel).read_bytes()
        h.update(data)
        circuits.append(circuit_from_text(data.decode("utf-8")))
    if "hash" in declared and declared["hash"] != h.hexdigest():
        raise DecodeError(f"{manifest}: circuit files do not match the manifest hash")
    return CircuitBatch(tuple(circuits), tuple(l for _, l in entries))


def _parse_keyvals(text: str, where: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{line_no}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_groups(text: str) -> tuple[tuple[int, ...], ...]:
    groups = []
    for part in text.split("|"):
        part = part.strip()
        if not part:
            raise ConfigError(f"empty group in {text!r}")
        try:
            groups.append(tuple(int(t.strip()) for t in part.split(",")))
        except ValueError:
            raise ConfigError(f"bad integer group {part!r}") from None
    return tuple(groups)


def parse_batchspec(text: str, where: str = "<config>") -> BatchSpec:
    kv = _parse_keyvals(text, where)
    if "preset" in kv:
        from .generators import preset_spec

        return preset_spec(kv["preset"], seed=int(kv.get("seed", 0)))
    missing = {"kind", "widths", "depths", "randomizations"} - set(kv)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    rand_groups = _parse_groups(kv["randomizations"])
    rand: int | tuple[int, ...]
    if len(rand_groups) == 1 and len(rand_groups[0]) == 1:
        rand = rand_groups[0][0]
    else:
        rand = tuple(g[0] for g in rand_groups)
    try:
        shots = int(kv.get("shots", 100))
        seed = int(kv.get("seed", 0))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return BatchSpec(
        kind=kv["kind"].upper(),
        widths=_parse_groups(kv["widths"]),
        depths=_parse_groups(kv["depths"]),
        randomizations=rand,
        shots=shots,
        seed=seed,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    batch: str
    mode: str = "baseline"
    seed: int = 0
    shots: int | None = None
    reset_ns: int = 500
    out: str | None = None
    socket: bool = False

    def __post_init__(self):
        if self.mode not in ("baseline", "pce"):
            raise ConfigError(f"mode must be 'baseline' or 'pce', got {self.mode!r}")
        if self.shots is not None and self.shots <= 0:
            raise ConfigError("shots must be positive")
        if self.reset_ns < 0:
            raise ConfigError("reset_ns must be non-negative")


def parse_experiment(text: str, where: str = "<config>") -> ExperimentConfig:
    kv = _parse_keyvals(text, where)
    if "batch" not in kv:
        raise ConfigError(f"{where}: missing 'batch' key")
    try:
        return ExperimentConfig(
            batch=kv["batch"],
            mode=kv.get("mode", "baseline"),
            seed=int(kv.get("seed", 0)),
            shots=int(kv["shots"]) if "shots" in kv else None,
            reset_ns=int(kv.get("reset_ns", 500)),
            out=kv.get("out"),
            socket=kv.get("socket", "false").lower() in ("1", "true", "yes"),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
