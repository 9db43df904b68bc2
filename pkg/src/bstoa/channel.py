"""Scene geometry, true delay matrices, and noisy pilot observations.

Positions are in meters, delays in seconds.  The end-to-end delay of a
subchannel is the uplink delay plus the downlink delay plus the tag
processing delay ``delta``:

    T[i, j] = delta + (|tx_i - tag| + |rx_j - tag|) / c

Monostatic scenes share one antenna array, so ``rx`` aliases ``tx`` and the
delay matrix is symmetric with diagonal ``delta + 2 |tx_i - tag| / c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .topology import Kind, Topology

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact SI value


def stream_rng(master_seed: int, stream_index: int) -> np.random.Generator:
    """Counter-based Gaussian stream, reproducible per (seed, index) pair.

    Uses a Philox generator keyed by the pair, so trial i's draws do not
    depend on how trials are scheduled across workers.
    """
    key = np.array(
        [master_seed % 2**64, stream_index % 2**64], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Scene:
    """Antenna and tag geometry plus the tag processing delay.

    For monostatic topologies ``rx`` is forced to be the same array object
    as ``tx``, so leave it as None.
    """

    topo: Topology
    tx: np.ndarray
    tag: np.ndarray
    rx: np.ndarray | None = None
    delta: float = 0.0

    def __post_init__(self) -> None:
        self.tx = np.asarray(self.tx, dtype=np.float64)
        self.tag = np.asarray(self.tag, dtype=np.float64)
        if self.topo.kind is Kind.MONOSTATIC:
            self.rx = self.tx
        else:
            if self.rx is None:
                raise DimensionMismatch("bistatic scene requires rx positions")
            self.rx = np.asarray(self.rx, dtype=np.float64)
        if self.tx.shape != (self.topo.m, 3):
            raise DimensionMismatch(
                f"tx shape {self.tx.shape} does not match m={self.topo.m}"
            )
        if self.rx.shape != (self.topo.n, 3):
            raise DimensionMismatch(
                f"rx shape {self.rx.shape} does not match n={self.topo.n}"
            )
        if self.tag.shape != (3,):
            raise DimensionMismatch(f"tag must be a 3D point, got {self.tag.shape}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    def to_text(self) -> str:
        """Flat key=value record; coordinates as comma-separated triples."""
        def triple(p: np.ndarray) -> str:
            return ",".join(repr(float(x)) for x in p)

        lines = [
            f"kind={self.topo.kind.value}",
            f"m={self.topo.m}",
            f"n={self.topo.n}",
            f"delta={float(self.delta)!r}",
        ]
        for i, p in enumerate(self.tx):
            lines.append(f"tx{i}={triple(p)}")
        if self.topo.kind is Kind.BISTATIC:
            for j, p in enumerate(self.rx):
                lines.append(f"rx{j}={triple(p)}")
        lines.append(f"tag={triple(self.tag)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scene":
        fields: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        kind = Kind(fields["kind"])
        m, n = int(fields["m"]), int(fields["n"])
        topo = Topology(kind, m, n)

        def triple(key: str) -> list[float]:
            return [float(x) for x in fields[key].split(",")]

        tx = np.array([triple(f"tx{i}") for i in range(m)])
        rx = None
        if kind is Kind.BISTATIC:
            rx = np.array([triple(f"rx{j}") for j in range(n)])
        return cls(
            topo=topo,
            tx=tx,
            rx=rx,
            tag=np.array(triple("tag")),
            delta=float(fields.get("delta", "0.0")),
        )


@dataclass
class ObservationBlock:
    """Stacked pilot observations: L rows per transmitter, one column per
    receiver, so ``y`` has shape (pilot_len * m, n)."""

    y: np.ndarray
    pilot_len: int
    sigma: float | None = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.pilot_len < 1:
            raise ValueError(f"pilot_len must be >= 1, got {self.pilot_len}")
        if self.y.ndim != 2 or self.y.shape[0] % self.pilot_len != 0:
            raise DimensionMismatch(
                f"observation shape {self.y.shape} is not (L*m, n) with L={self.pilot_len}"
            )


def random_scene(
    topo: Topology, cube_side: float, rng: np.random.Generator
) -> Scene:
    """Draw antenna and tag coordinates uniformly in [0, cube_side]^3.

    The tag delay defaults to zero.  Coincident points are legal: they only
    produce zero delays.
    """
    if cube_side <= 0.0:
        raise ValueError(f"cube_side must be > 0, got {cube_side}")
    tx = rng.uniform(0.0, cube_side, size=(topo.m, 3))
    rx = None
    if topo.kind is Kind.BISTATIC:
        rx = rng.uniform(0.0, cube_side, size=(topo.n, 3))
    tag = rng.uniform(0.0, cube_side, size=3)
    return Scene(topo=topo, tx=tx, rx=rx, tag=tag, delta=0.0)


def true_delays(scene: Scene) -> np.ndarray:
    """True delay matrix of the scene, in seconds."""
    up = np.linalg.norm(scene.tx - scene.tag, axis=1)
    down = np.linalg.norm(scene.rx - scene.tag, axis=1)
    return scene.delta + (up[:, None] + down[None, :]) / SPEED_OF_LIGHT


def synth_observations(
    t: np.ndarray,
    pilot_len: int,
    sigma: float,
    rng: np.random.Generator,
) -> ObservationBlock:
    """Generate noisy pilot observations for a delay matrix.

    Each of the m delay rows is observed pilot_len times with iid Gaussian
    measurement error of standard deviation ``sigma`` seconds; sigma == 0
    reproduces the delays exactly.
    """
    t = np.asarray(t, dtype=np.float64)
    if pilot_len < 1:
        raise ValueError(f"pilot_len must be >= 1, got {pilot_len}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    y = np.repeat(t, pilot_len, axis=0)
    if sigma > 0.0:
        y = y + rng.normal(0.0, sigma, size=y.shape)
    return ObservationBlock(y=y, pilot_len=pilot_len, sigma=sigma)
