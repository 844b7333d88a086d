import numpy as np

from graphs.knn_graph import PatchGraph

MIN_DISTANCE = 0.01


def spring_layout(g: PatchGraph, iterations: int = 50, seed: int = 0) -> np.ndarray:
    """
    Fruchterman-Reingold force-directed layout of the undirected support of g

    Args:
        g (PatchGraph): Graph to lay out
        iterations (int): Number of force/cooling rounds
        seed (int): Seed for the uniform initial positions in the unit square

    Returns:
        [N×2] node positions
    """
    n = g.num_nodes
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 2))
    if n <= 1:
        return pos

    adjacency = np.zeros((n, n))
    off_diagonal = g.edges[g.edges[:, 0] != g.edges[:, 1]]
    adjacency[off_diagonal[:, 0], off_diagonal[:, 1]] = 1.0
    adjacency = np.maximum(adjacency, adjacency.T)

    ideal = 1.0 / np.sqrt(n)
    temperature = 0.1
    cooling = temperature / (iterations + 1)

    for _ in range(iterations):
        delta = pos[:, None, :] - pos[None, :, :]
        distance = np.maximum(np.linalg.norm(delta, axis=-1), MIN_DISTANCE)
        # Repulsion k^2/d between all pairs, attraction d^2/k along edges
        magnitude = ideal * ideal / distance ** 2 - adjacency * distance / ideal
        np.fill_diagonal(magnitude, 0.0)
        displacement = np.einsum('ijk,ij->ik', delta, magnitude)

        length = np.maximum(np.linalg.norm(displacement, axis=-1), MIN_DISTANCE)
        pos = pos + displacement * (temperature / length)[:, None]
        temperature -= cooling

    return pos
