"""On-disk formats: dataset bundles, chain frames, traces and configs.

A dataset bundle is a directory holding ``meta.json``, ``predictors.bin``
(little-endian float64, subject-major then voxel then component),
``response.csv`` and optionally ``truth.json``.  Chains persist as
length-prefixed binary frames so an interrupted run always leaves a
readable prefix; human-facing tables are CSV.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from st2n.fields import make_grid
from st2n.model import ModelState, VectorImageDataset
from st2n.sampler import ChainRecord, block_names
from st2n.simulate import SimTruth

__all__ = [
    "BundleError",
    "write_bundle",
    "read_bundle",
    "StateLayout",
    "pack_state",
    "unpack_state",
    "ChainWriter",
    "read_chain",
    "TraceWriter",
    "parse_config_text",
]

SCHEMA_VERSION = 1


class BundleError(ValueError):
    """Malformed or inconsistent on-disk data."""


def _format_float(x: float) -> str:
    return repr(float(x))


def write_bundle(
    dirpath, data: VectorImageDataset, truth: SimTruth | None = None,
    covariate_names=None,
) -> None:
    """Write a dataset bundle; numeric payloads round-trip bit-exactly."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    names = list(covariate_names) if covariate_names else [
        f"cov_{c}" for c in range(data.n_covariates)
    ]
    if len(names) != data.n_covariates:
        raise BundleError("covariate name count does not match X")
    group_sizes = np.bincount(data.group_of, minlength=data.n_groups).tolist()
    meta = {
        "schema_version": SCHEMA_VERSION,
        "n": data.n,
        "G": data.n_groups,
        "p": data.p,
        "q": data.q,
        "d": data.grid.d,
        "dims": list(data.grid.dims),
        "group_sizes": group_sizes,
        "covariate_names": names,
        "endianness": "little",
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "predictors.bin").write_bytes(
        np.ascontiguousarray(data.D, dtype="<f8").tobytes()
    )
    lines = ["subject_id,group,y" + ("," + ",".join(names) if names else "")]
    for i in range(data.n):
        row = [str(i), str(int(data.group_of[i])), _format_float(data.y[i])]
        row += [_format_float(v) for v in data.X[i]]
        lines.append(",".join(row))
    (out / "response.csv").write_text("\n".join(lines) + "\n")
    if truth is not None:
        payload = {
            "beta0": truth.beta0.tolist(),
            "eta": truth.eta.tolist(),
            "r": truth.r.tolist(),
            "b0_true": truth.b0_true.tolist(),
            "sigma2_true": truth.sigma2_true,
            "seed": truth.seed,
        }
        (out / "truth.json").write_text(json.dumps(payload) + "\n")


def read_bundle(dirpath):
    """Read a bundle back into memory; returns ``(dataset, truth_or_None)``."""
    src = Path(dirpath)
    try:
        meta = json.loads((src / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise BundleError(f"not a dataset bundle: {src}") from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise BundleError(f"unsupported bundle schema {meta.get('schema_version')}")
    if meta.get("endianness") != "little":
        raise BundleError("bundle written with unsupported endianness")
    n, p, q = meta["n"], meta["p"], meta["q"]
    raw = (src / "predictors.bin").read_bytes()
    if len(raw) != 8 * n * p * q:
        raise BundleError(
            f"predictors.bin holds {len(raw)} bytes, expected {8 * n * p * q}"
        )
    D = np.frombuffer(raw, dtype="<f8").reshape(n, p, q).astype(float)
    lines = (src / "response.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    names = header[3:]
    if names != meta["covariate_names"]:
        raise BundleError("covariate names disagree between meta.json and response.csv")
    y = np.empty(n)
    group_of = np.empty(n, dtype=np.int64)
    X = np.empty((n, len(names)))
    if len(lines) - 1 != n:
        raise BundleError(f"response.csv holds {len(lines) - 1} rows, expected {n}")
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        group_of[i] = int(parts[1])
        y[i] = float(parts[2])
        X[i] = [float(v) for v in parts[3:]]
    grid = make_grid(meta["dims"])
    data = VectorImageDataset(
        y=y, D=D, group_of=group_of, n_groups=meta["G"], grid=grid, X=X
    )
    sizes = np.bincount(group_of, minlength=meta["G"]).tolist()
    if sizes != meta["group_sizes"]:
        raise BundleError("group sizes disagree between meta.json and response.csv")
    truth = None
    truth_path = src / "truth.json"
    if truth_path.exists():
        payload = json.loads(truth_path.read_text())
        truth = SimTruth(
            beta0=np.asarray(payload["beta0"], dtype=float),
            eta=np.asarray(payload["eta"], dtype=float),
            r=np.asarray(payload["r"], dtype=float),
            b0_true=np.asarray(payload["b0_true"], dtype=float),
            sigma2_true=float(payload["sigma2_true"]),
            seed=int(payload["seed"]),
        )
    return data, truth


# ---------------------------------------------------------------------------
# Chain frames


@dataclass(frozen=True)
class StateLayout:
    """Shape information needed to flatten and restore a model state.

    The state vector field order is: shared knot coefficients (L*q,
    row-major), each group's knot coefficients (G*L*q), the shared and
    group kernel scales (1+G), the shared and group thresholds (1+G),
    the error variance, the intercepts (G), the covariate effects (c)
    and the cross-component covariance (q*q, row-major).
    """

    L: int
    q: int
    G: int
    c: int

    @property
    def state_len(self) -> int:
        return (
            self.L * self.q * (1 + self.G)
            + 2 * (1 + self.G)
            + 1
            + self.G
            + self.c
            + self.q * self.q
        )

    @property
    def n_flags(self) -> int:
        return 3 * (1 + self.G)


def pack_state(state: ModelState) -> np.ndarray:
    parts = [
        state.beta_knots.ravel(),
        state.alpha_knots.ravel(),
        [state.a_shared],
        state.a_group,
        [state.lambda_shared],
        state.lambda_group,
        [state.sigma2],
        state.b0,
        state.b_cov,
        state.sigma_mat.ravel(),
    ]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack_state(vec: np.ndarray, layout: StateLayout) -> ModelState:
    L, q, G, c = layout.L, layout.q, layout.G, layout.c
    pos = 0

    def take(count):
        nonlocal pos
        chunk = vec[pos : pos + count]
        pos += count
        return chunk

    beta = take(L * q).reshape(L, q).copy()
    alpha = take(G * L * q).reshape(G, L, q).copy()
    a_shared = float(take(1)[0])
    a_group = take(G).copy()
    lam = float(take(1)[0])
    lam_group = take(G).copy()
    sigma2 = float(take(1)[0])
    b0 = take(G).copy()
    b_cov = take(c).copy()
    sigma_mat = take(q * q).reshape(q, q).copy()
    return ModelState(
        beta_knots=beta, alpha_knots=alpha, a_shared=a_shared, a_group=a_group,
        lambda_shared=lam, lambda_group=lam_group, sigma_mat=sigma_mat,
        sigma2=sigma2, b0=b0, b_cov=b_cov,
    )


class ChainWriter:
    """Frame-atomic writer for ``chain.bin`` files.

    Each frame is an 8-byte little-endian payload length followed by the
    payload (iteration, log posterior, acceptance flags, state vector,
    all little-endian float64 except the leading uint64 iteration); one
    ``write`` call per frame keeps any interrupted file a valid prefix.
    """

    def __init__(self, path, layout: StateLayout):
        self.layout = layout
        self._fh = open(path, "wb")

    def write(self, record: ChainRecord) -> None:
        state_vec = pack_state(record.state)
        if state_vec.size != self.layout.state_len:
            raise BundleError("state vector does not match the declared layout")
        body = (
            struct.pack("<Q", record.iteration)
            + np.asarray([record.log_posterior], dtype="<f8").tobytes()
            + np.asarray(record.accepted, dtype="<f8").tobytes()
            + state_vec.astype("<f8").tobytes()
        )
        self._fh.write(struct.pack("<Q", len(body)) + body)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_chain(path, layout: StateLayout):
    """Read chain frames; tolerates a torn final frame.

    Returns ``(records, truncated)``; with ``truncated`` True the list
    holds every frame before the tear (possibly none).
    """
    raw = Path(path).read_bytes()
    expected_body = 8 + 8 * (1 + layout.n_flags + layout.state_len)
    records: list[ChainRecord] = []
    pos = 0
    truncated = False
    while pos < len(raw):
        if pos + 8 > len(raw):
            truncated = True
            break
        (length,) = struct.unpack_from("<Q", raw, pos)
        if length != expected_body or pos + 8 + length > len(raw):
            truncated = True
            break
        body = raw[pos + 8 : pos + 8 + length]
        (iteration,) = struct.unpack_from("<Q", body, 0)
        floats = np.frombuffer(body[8:], dtype="<f8")
        log_post = float(floats[0])
        flags = floats[1 : 1 + layout.n_flags].copy()
        state = unpack_state(floats[1 + layout.n_flags :], layout)
        records.append(
            ChainRecord(
                iteration=int(iteration), state=state,
                log_posterior=log_post, accepted=flags,
            )
        )
        pos += 8 + length
    return records, truncated


class TraceWriter:
    """CSV trace with per-iteration scalars and running acceptance rates."""

    def __init__(self, path, n_groups: int):
        self.n_groups = n_groups
        names = block_names(n_groups)
        self._tries = 0
        self._accepts = np.zeros(len(names))
        cols = ["iteration", "log_posterior", "sigma2", "lambda"]
        cols += [f"lambda_{g}" for g in range(n_groups)]
        cols += ["a"] + [f"a_{g}" for g in range(n_groups)]
        cols += [f"acc_{name}" for name in names]
        self._fh = open(path, "w")
        self._fh.write(",".join(cols) + "\n")

    def write(self, record: ChainRecord) -> None:
        st = record.state
        self._tries += 1
        self._accepts += record.accepted
        rates = self._accepts / self._tries
        vals = [str(record.iteration), _format_float(record.log_posterior),
                _format_float(st.sigma2), _format_float(st.lambda_shared)]
        vals += [_format_float(v) for v in st.lambda_group]
        vals += [_format_float(st.a_shared)]
        vals += [_format_float(v) for v in st.a_group]
        vals += [_format_float(v) for v in rates]
        self._fh.write(",".join(vals) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` config with ``#`` comments."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out
