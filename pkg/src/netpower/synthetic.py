"""Random ownership networks shaped like national sector snapshots.

Used for benchmarks and property tests; the layout is a few sector firms held
by holding companies and a long tail of investors, with preferential
attachment so a handful of institutional investors appear on many registers.
"""

from __future__ import annotations

import numpy as np

from .graph import FIRM, MUNICIPAL, PRIVATE, STATE, NodeRecord, OwnershipGraph


def synthetic_sector_graph(
    n_nodes: int = 420,
    n_edges: int = 865,
    n_firms: int = 13,
    n_holdcos: int = 40,
    cross_holdings: int = 3,
    coverage: tuple[float, float] = (0.55, 0.95),
    seed: int = 0,
    year: int = 2024,
) -> OwnershipGraph:
    """Build a random, partially covered ownership graph.

    Registers are deliberately incomplete (total held between the two
    ``coverage`` bounds) so the result needs imputation before simulation.
    ``cross_holdings`` small reciprocal stakes between sector firms give the
    graph directed cycles.
    """
    rng = np.random.default_rng(seed)
    n_investors = n_nodes - n_firms - n_holdcos
    if n_investors < 1:
        raise ValueError("n_nodes too small for the requested firms and holding companies")

    firms = [f"F{k:02d}" for k in range(n_firms)]
    holdcos = [f"H{k:03d}" for k in range(n_holdcos)]
    investors = [f"I{k:03d}" for k in range(n_investors)]
    kinds = rng.choice([PRIVATE, STATE, MUNICIPAL], size=n_investors, p=[0.85, 0.05, 0.10])
    nodes = [NodeRecord(f, f"Firm {f}", FIRM, "IT") for f in firms]
    nodes += [NodeRecord(h, f"Holding {h}", FIRM, "IT") for h in holdcos]
    nodes += [
        NodeRecord(i, f"Investor {i}", str(kind), str(rng.choice(["IT", "US", "GB", "FR", "NO"])))
        for i, kind in zip(investors, kinds)
    ]

    # Zipf-like popularity so a few investors become hubs.
    popularity = 1.0 / np.arange(1, n_investors + 1) ** 0.9
    popularity /= popularity.sum()

    held = firms + holdcos
    budget = n_edges - cross_holdings
    # Firms carry long registers, holding companies short ones.
    share = np.array([8.0] * n_firms + [1.0] * n_holdcos)
    sizes = np.maximum(1, np.floor(share / share.sum() * budget)).astype(int)
    k = 0
    while sizes.sum() < budget:
        sizes[k % len(sizes)] += 1
        k += 1
    while sizes.sum() > budget:
        big = int(np.argmax(sizes))
        sizes[big] -= 1

    edges: list[tuple[str, str, float]] = []
    for pos, (node, size) in enumerate(zip(held, sizes)):
        if node in firms:
            pool_hold = holdcos
        else:
            pool_hold = holdcos[: holdcos.index(node)]
        n_hold = min(len(pool_hold), int(rng.integers(0, 4)), size)
        chosen = list(rng.choice(pool_hold, size=n_hold, replace=False)) if n_hold else []
        n_inv = min(size - len(chosen), n_investors)
        chosen += list(rng.choice(investors, size=n_inv, replace=False, p=popularity))
        weights = rng.dirichlet(np.full(len(chosen), 0.4))
        total = rng.uniform(*coverage)
        for holder, w in zip(chosen, weights):
            frac = float(w * total)
            if frac > 0.0:
                edges.append((str(holder), node, frac))

    for c in range(cross_holdings):
        a, b = firms[c % n_firms], firms[(c + 1) % n_firms]
        # Small stake, scaled down from the target's remaining headroom.
        known = sum(f for h, j, f in edges if j == b)
        edges.append((a, b, max(1e-4, (1.0 - known) * 0.05)))
    return OwnershipGraph.build(nodes, edges, year)
