"""Network description, traffic specification and random scenario generation.

A network is a directed connected graph of wireless transceivers with a full
matrix of channel power gains (interference has no range cutoff, only data
links are range limited), receiver noise powers, per-node self-interference
factors, peak power budgets and a common spreading (processing) gain.
Traffic is classified by destination: one commodity per destination set,
with i.i.d. per-slot Poisson bit arrivals at each source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCENARIO_FORMAT = "bpsim-scenario"
SCENARIO_VERSION = 1

# Minimum node separation accepted by the generator; d**-4 blows up below it.
MIN_NODE_DISTANCE = 1e-9
MAX_CONNECTIVITY_RETRIES = 100


@dataclass(frozen=True)
class NetworkModel:
    """Static radio network: topology, gains, noise, power budgets.

    ``gain`` is a full (n, n) matrix of linear power gains with a zero
    diagonal; every transmitter interferes at every receiver except itself.
    ``links`` are the ordered pairs that may carry data.
    """

    gain: np.ndarray            # (n, n), gain[i][j] from tx i to rx j, diag 0
    noise: np.ndarray           # (n,) receiver noise power
    theta: np.ndarray           # (n,) self-interference factor in [0, 1]
    power_cap: np.ndarray       # (n,) peak total transmit power, > 1
    processing_gain: float
    links: tuple[tuple[int, int], ...]

    # Derived link indexing, filled in __post_init__.
    src: np.ndarray = field(init=False, repr=False)
    dst: np.ndarray = field(init=False, repr=False)
    out_links: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    in_links: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=float)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "noise", np.asarray(self.noise, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "power_cap", np.asarray(self.power_cap, dtype=float))
        links = tuple((int(i), int(j)) for i, j in self.links)
        object.__setattr__(self, "links", links)
        n = self.n
        src = np.array([l[0] for l in links], dtype=np.intp)
        dst = np.array([l[1] for l in links], dtype=np.intp)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        out = [[] for _ in range(n)]
        inn = [[] for _ in range(n)]
        for idx, (i, j) in enumerate(links):
            out[i].append(idx)
            inn[j].append(idx)
        object.__setattr__(self, "out_links", tuple(tuple(v) for v in out))
        object.__setattr__(self, "in_links", tuple(tuple(v) for v in inn))

    @property
    def n(self) -> int:
        return self.gain.shape[0]

    @property
    def n_links(self) -> int:
        return len(self.links)

    def link_index(self) -> dict[tuple[int, int], int]:
        return {link: idx for idx, link in enumerate(self.links)}


@dataclass(frozen=True)
class Commodity:
    """One traffic class, identified by the set of nodes where it exits."""

    id: int
    destinations: frozenset[int]


@dataclass(frozen=True)
class TrafficSpec:
    """Commodities plus per (node, commodity) Poisson arrival means in bits/slot."""

    commodities: tuple[Commodity, ...]
    arrival_mean: np.ndarray    # (n, K)

    def __post_init__(self):
        object.__setattr__(self, "arrival_mean", np.asarray(self.arrival_mean, dtype=float))

    @property
    def n_commodities(self) -> int:
        return len(self.commodities)

    def queue_mask(self, n: int) -> np.ndarray:
        """Boolean (n, K): True where node i keeps a buffer for commodity k."""
        mask = np.ones((n, self.n_commodities), dtype=bool)
        for k, com in enumerate(self.commodities):
            for d in com.destinations:
                mask[d, k] = False
        return mask

    def second_moments(self) -> np.ndarray:
        """(n, K) second moments of the Poisson arrival counts, mean + mean**2."""
        a = self.arrival_mean
        return a + a * a


@dataclass(frozen=True)
class Scenario:
    """A concrete experiment instance: network, traffic and provenance."""

    model: NetworkModel
    traffic: TrafficSpec
    positions: np.ndarray       # (n, 2) coordinates in the unit disc
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))


def link_radius(n: int) -> float:
    """Data-link range for an n-node disc deployment, 2.5 / sqrt(n)."""
    return 2.5 / np.sqrt(n)


def _gains_from_positions(positions: np.ndarray) -> np.ndarray:
    """Fourth-power path loss between every ordered pair, zero on the diagonal."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    with np.errstate(divide="ignore"):
        gain = dist ** -4.0
    np.fill_diagonal(gain, 0.0)
    return gain


def _links_from_positions(positions: np.ndarray, radius: float) -> list[tuple[int, int]]:
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    links = []
    for i in range(n):
        for j in range(n):
            if i != j and dist[i, j] < radius:
                links.append((i, j))
    return links


def _connected(n: int, links: list[tuple[int, int]]) -> bool:
    """Connectivity of the undirected view of the link set."""
    if n == 0:
        return False
    adj = [[] for _ in range(n)]
    for i, j in links:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    return all(seen)


def generate_scenario(n: int, arrival_mean: float, seed: int) -> Scenario:
    """Random disc scenario: n uniform nodes, range-limited links, one session per node.

    Deterministic in (n, arrival_mean, seed).  Positions are resampled (up to
    a bounded number of retries) until the induced graph is connected and no
    two nodes coincide.
    """
    if n < 2:
        raise ConfigError(f"need at least 2 nodes, got {n}")
    if arrival_mean < 0:
        raise ConfigError(f"arrival mean must be nonnegative, got {arrival_mean}")
    rng = np.random.default_rng(seed)
    radius = link_radius(n)
    positions = None
    links: list[tuple[int, int]] = []
    for _ in range(MAX_CONNECTIVITY_RETRIES):
        r = np.sqrt(rng.random(n))
        phi = rng.random(n) * 2.0 * np.pi
        cand = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        diff = cand[:, None, :] - cand[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() < MIN_NODE_DISTANCE:
            continue
        cand_links = _links_from_positions(cand, radius)
        if _connected(n, cand_links):
            positions = cand
            links = cand_links
            break
    if positions is None:
        raise ConfigError(
            f"could not generate a connected {n}-node scenario in "
            f"{MAX_CONNECTIVITY_RETRIES} attempts (seed {seed})"
        )

    model = NetworkModel(
        gain=_gains_from_positions(positions),
        noise=np.full(n, 0.1),
        theta=np.full(n, 0.25),
        power_cap=np.full(n, 100.0),
        processing_gain=1e5,
        links=tuple(links),
    )
    commodities = []
    arrivals = np.zeros((n, n))
    for i in range(n):
        dest = int(rng.integers(0, n - 1))
        if dest >= i:
            dest += 1
        commodities.append(Commodity(id=i, destinations=frozenset({dest})))
        arrivals[i, i] = arrival_mean
    traffic = TrafficSpec(commodities=tuple(commodities), arrival_mean=arrivals)
    return Scenario(model=model, traffic=traffic, positions=positions, seed=seed)


def validate_model(model: NetworkModel) -> list[str]:
    """Check structural invariants; returns one message per violation."""
    out: list[str] = []
    n = model.n
    if model.gain.shape != (n, n):
        out.append(f"gain matrix must be ({n}, {n}), got {model.gain.shape}")
        return out
    if np.any(np.diag(model.gain) != 0.0):
        out.append("gain diagonal must be zero (no self-gain)")
    for i, j in model.links:
        if not (0 <= i < n and 0 <= j < n):
            out.append(f"link ({i}, {j}) references an unknown node")
        elif i == j:
            out.append(f"link ({i}, {j}) is a self-loop")
        elif model.gain[i, j] <= 0:
            out.append(f"gain must be positive on link ({i}, {j})")
    offdiag = model.gain[~np.eye(n, dtype=bool)]
    if np.any(offdiag < 0):
        out.append("gains must be nonnegative")
    if np.any(~np.isfinite(model.gain)):
        out.append("gains must be finite")
    for j in range(n):
        if not model.noise[j] > 0:
            out.append(f"noise must be positive (node {j})")
    for i in range(n):
        if not model.power_cap[i] > 1:
            out.append(f"powerCap must exceed 1 (node {i})")
        if not (0.0 <= model.theta[i] <= 1.0):
            out.append(f"selfInterference must lie in [0, 1] (node {i})")
    if not model.processing_gain > 0:
        out.append("processingGain must be positive")
    if not _connected(n, list(model.links)):
        out.append("graph not connected")
    return out


def validate_traffic(traffic: TrafficSpec, n: int) -> list[str]:
    out: list[str] = []
    if traffic.arrival_mean.shape != (n, traffic.n_commodities):
        out.append(
            f"arrival_mean must be ({n}, {traffic.n_commodities}), "
            f"got {traffic.arrival_mean.shape}"
        )
        return out
    if np.any(~np.isfinite(traffic.arrival_mean)) or np.any(traffic.arrival_mean < 0):
        out.append("arrival means must be finite and nonnegative")
    for k, com in enumerate(traffic.commodities):
        if not com.destinations:
            out.append(f"commodity {com.id} has no destination")
        for d in com.destinations:
            if not (0 <= d < n):
                out.append(f"commodity {com.id} destination {d} is not a node")
            elif traffic.arrival_mean[d, k] > 0:
                out.append(
                    f"commodity {com.id} has arrivals at its own destination {d}"
                )
    return out


def validate_scenario(scenario: Scenario) -> list[str]:
    return validate_model(scenario.model) + validate_traffic(
        scenario.traffic, scenario.model.n
    )


def scenario_to_json(scenario: Scenario) -> str:
    """Serialize to the versioned plain-text scenario format."""
    m = scenario.model
    t = scenario.traffic
    doc = {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "seed": scenario.seed,
        "n": m.n,
        "positions": scenario.positions.tolist(),
        "links": [list(l) for l in m.links],
        "gain": m.gain.tolist(),
        "noise": m.noise.tolist(),
        "theta": m.theta.tolist(),
        "power_cap": m.power_cap.tolist(),
        "processing_gain": m.processing_gain,
        "commodities": [
            {"id": c.id, "destinations": sorted(c.destinations)} for c in t.commodities
        ],
        "arrival_mean": t.arrival_mean.tolist(),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
    if doc.get("format") != SCENARIO_FORMAT:
        raise ConfigError(f"unknown scenario format {doc.get('format')!r}")
    if doc.get("version") != SCENARIO_VERSION:
        raise ConfigError(f"unsupported scenario version {doc.get('version')!r}")
    try:
        model = NetworkModel(
            gain=np.array(doc["gain"], dtype=float),
            noise=np.array(doc["noise"], dtype=float),
            theta=np.array(doc["theta"], dtype=float),
            power_cap=np.array(doc["power_cap"], dtype=float),
            processing_gain=float(doc["processing_gain"]),
            links=tuple(tuple(l) for l in doc["links"]),
        )
        commodities = tuple(
            Commodity(id=int(c["id"]), destinations=frozenset(int(d) for d in c["destinations"]))
            for c in doc["commodities"]
        )
        traffic = TrafficSpec(
            commodities=commodities,
            arrival_mean=np.array(doc["arrival_mean"], dtype=float),
        )
        scenario = Scenario(
            model=model,
            traffic=traffic,
            positions=np.array(doc["positions"], dtype=float),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from exc
    problems = validate_scenario(scenario)
    if problems:
        raise ConfigError("invalid scenario: " + "; ".join(problems))
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_json(fh.read())


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(scenario_to_json(scenario))
        fh.write("\n")
