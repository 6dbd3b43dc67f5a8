"""Sum-of-trees surrogate for the log precision surface.

Backfitting MCMC over an ensemble of hard-split regression trees. Each
sweep updates one tree at a time: a structural Metropolis move (grow,
prune, or change) evaluated with leaf means integrated out, then a
conjugate redraw of that tree's leaf values, and finally a conjugate
redraw of the residual variance. The response is centered and scaled to
[-0.5, 0.5] internally; all reported predictions are on the original
scale.

Cutpoints for each variable sit on a fixed grid strictly inside the
observed training range, and proposals that would create an empty leaf
are rejected, so every leaf always covers at least one training point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ConfigError
from .seeds import child_seed

GROW, PRUNE, CHANGE = 0, 1, 2
MIN_ROWS = 10


@dataclass(frozen=True)
class BartConfig:
    trees: int = 50
    iterations: int = 2500
    burnin: int = 500
    thin: int = 5
    split_alpha: float = 0.95
    split_beta: float = 2.0
    k_leaf: float = 2.0
    nu: float = 3.0
    q_sigma: float = 0.90
    cutpoints: int = 100
    move_probs: tuple[float, float, float] = (0.4, 0.4, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.trees < 1:
            raise ConfigError("need at least one tree")
        if not 0 <= self.burnin < self.iterations:
            raise ConfigError("burnin must lie inside the iteration count")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 < self.split_alpha < 1 or self.split_beta < 0:
            raise ConfigError("split prior needs alpha in (0,1) and beta >= 0")
        if self.k_leaf <= 0 or self.nu <= 0 or not 0 < self.q_sigma < 1:
            raise ConfigError("bad leaf or variance prior settings")
        if self.cutpoints < 1:
            raise ConfigError("need at least one cutpoint per variable")
        mp = self.move_probs
        if len(mp) != 3 or any(v < 0 for v in mp) or abs(sum(mp) - 1.0) > 1e-9:
            raise ConfigError("move probabilities must be three nonnegative values summing to 1")


class _Node:
    __slots__ = ("var", "cut", "left", "right", "value")

    def __init__(self, value: float = 0.0):
        self.var = None
        self.cut = 0.0
        self.left = None
        self.right = None
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.var is None


def _copy_tree(node: _Node) -> _Node:
    out = _Node(node.value)
    if not node.is_leaf:
        out.var = node.var
        out.cut = node.cut
        out.left = _copy_tree(node.left)
        out.right = _copy_tree(node.right)
    return out


def _collect(node: _Node, depth: int, leaves, internals, nogs) -> None:
    if node.is_leaf:
        leaves.append((node, depth))
        return
    internals.append((node, depth))
    if node.left.is_leaf and node.right.is_leaf:
        nogs.append((node, depth))
    _collect(node.left, depth + 1, leaves, internals, nogs)
    _collect(node.right, depth + 1, leaves, internals, nogs)


def _assign(node: _Node, x: np.ndarray, idx: np.ndarray, labels: np.ndarray, count: list) -> None:
    if node.is_leaf:
        labels[idx] = count[0]
        count[0] += 1
        return
    mask = x[idx, node.var] <= node.cut
    _assign(node.left, x, idx[mask], labels, count)
    _assign(node.right, x, idx[~mask], labels, count)


def _labels_for(node: _Node, x: np.ndarray) -> tuple[np.ndarray, int]:
    labels = np.empty(x.shape[0], dtype=np.intp)
    count = [0]
    _assign(node, x, np.arange(x.shape[0]), labels, count)
    return labels, count[0]


def _predict_tree(node: _Node, x: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[idx] = node.value
        return
    mask = x[idx, node.var] <= node.cut
    _predict_tree(node.left, x, idx[mask], out)
    _predict_tree(node.right, x, idx[~mask], out)


def _depth(node: _Node) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _split_counts(node: _Node, out: np.ndarray) -> None:
    if node.is_leaf:
        return
    out[node.var] += 1
    _split_counts(node.left, out)
    _split_counts(node.right, out)


class _TreePrior:
    def __init__(self, config: BartConfig, grids: list[np.ndarray]):
        self.alpha = config.split_alpha
        self.beta = config.split_beta
        self.p = len(grids)
        self.grids = grids
        self.log_p = np.log(self.p)

    def log_p_split(self, depth: int) -> float:
        return float(np.log(self.alpha) - self.beta * np.log1p(depth))

    def log_p_leaf(self, depth: int) -> float:
        return float(np.log1p(-self.alpha * (1.0 + depth) ** -self.beta))

    def log_rule(self, var: int) -> float:
        return float(-self.log_p - np.log(len(self.grids[var])))

    def log_tree(self, node: _Node, depth: int = 0) -> float:
        if node.is_leaf:
            return self.log_p_leaf(depth)
        return (
            self.log_p_split(depth)
            + self.log_rule(node.var)
            + self.log_tree(node.left, depth + 1)
            + self.log_tree(node.right, depth + 1)
        )


def _leaf_stats(labels: np.ndarray, n_leaves: int, r: np.ndarray):
    counts = np.bincount(labels, minlength=n_leaves).astype(float)
    s = np.bincount(labels, weights=r, minlength=n_leaves)
    ssr = np.bincount(labels, weights=r * r, minlength=n_leaves)
    return counts, s, ssr


def _log_marginal(counts, s, ssr, sigma2: float, smu2: float) -> float:
    # leaf means integrated out under N(0, smu2)
    denom = sigma2 + counts * smu2
    terms = (
        -0.5 * counts * np.log(2.0 * np.pi * sigma2)
        + 0.5 * (np.log(sigma2) - np.log(denom))
        - 0.5 * ssr / sigma2
        + 0.5 * smu2 * s * s / (sigma2 * denom)
    )
    return float(terms.sum())


@dataclass
class BartPosterior:
    """Kept ensemble states plus everything needed to reuse them."""

    config: BartConfig
    x_names: tuple[str, ...]
    center: float
    scale: float
    train_lower: np.ndarray
    train_upper: np.ndarray
    states: list  # [(sigma_norm, [root, ...]), ...]
    var_split_counts: np.ndarray  # (n_states, p)
    avg_depth: np.ndarray  # (n_states,)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def sigma(self) -> np.ndarray:
        """Residual sd draws on the original response scale."""
        return np.array([s for s, _ in self.states]) * self.scale

    def state_indices(self, max_states: Optional[int]) -> np.ndarray:
        if max_states is None or max_states >= self.n_states:
            return np.arange(self.n_states)
        return np.unique(np.linspace(0, self.n_states - 1, max_states).round().astype(int))


def bart_fit(
    x: np.ndarray,
    y: np.ndarray,
    config: Optional[BartConfig] = None,
    x_names: Optional[Sequence[str]] = None,
) -> BartPosterior:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < MIN_ROWS:
        raise ConfigError(f"need at least {MIN_ROWS} training points, got {x.shape[0]}")
    return _fit_core(x, y, config, x_names)


def _fit_core(
    x: np.ndarray,
    y: np.ndarray,
    config: Optional[BartConfig] = None,
    x_names: Optional[Sequence[str]] = None,
) -> BartPosterior:
    config = config if config is not None else BartConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise ConfigError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
    if x.shape[0] < 2:
        raise ConfigError("need at least two training points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ConfigError("training data must be finite")
    n, p = x.shape
    names = tuple(x_names) if x_names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise ConfigError("x_names length must match the number of columns")

    lo = x.min(axis=0)
    hi = x.max(axis=0)
    center = float((y.min() + y.max()) / 2.0)
    spread = float(y.max() - y.min())
    scale = spread if spread > 0 else 1.0
    ynorm = (y - center) / scale

    grids = []
    for j in range(p):
        if hi[j] > lo[j]:
            grids.append(np.linspace(lo[j], hi[j], config.cutpoints + 2)[1:-1])
        else:
            grids.append(np.empty(0))

    s_norm = float(np.std(ynorm, ddof=1)) if n > 1 else 0.0
    if not np.isfinite(s_norm) or s_norm <= 0:
        s_norm = 1e-6
    lam_sig = s_norm**2 * sps.chi2.ppf(1.0 - config.q_sigma, config.nu) / config.nu
    smu = 0.5 / (config.k_leaf * np.sqrt(config.trees))
    smu2 = smu * smu

    prior = _TreePrior(config, grids)
    rng = np.random.default_rng(config.seed)
    m = config.trees
    trees = [_Node(0.0) for _ in range(m)]
    labels_cache = [(np.zeros(n, dtype=np.intp), 1) for _ in range(m)]
    fits = np.zeros((m, n))
    total = np.zeros(n)
    sigma2 = s_norm**2

    states = []
    split_counts = []
    depths = []

    for it in range(config.iterations):
        for j in range(m):
            r = ynorm - (total - fits[j])
            tree = trees[j]
            labels, n_leaves = labels_cache[j]
            tree, labels, n_leaves = _structure_move(
                tree, labels, n_leaves, x, r, sigma2, smu2, prior, config, rng
            )
            counts, s, _ = _leaf_stats(labels, n_leaves, r)
            post_var = 1.0 / (counts / sigma2 + 1.0 / smu2)
            post_mean = (s / sigma2) * post_var
            values = post_mean + np.sqrt(post_var) * rng.standard_normal(n_leaves)
            _set_leaf_values(tree, values, [0])
            g = values[labels]
            total += g - fits[j]
            fits[j] = g
            trees[j] = tree
            labels_cache[j] = (labels, n_leaves)

        resid = ynorm - total
        sigma2 = (config.nu * lam_sig + float(resid @ resid)) / rng.chisquare(config.nu + n)

        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            states.append((float(np.sqrt(sigma2)), [_copy_tree(t) for t in trees]))
            vc = np.zeros(p, dtype=np.int64)
            for t in trees:
                _split_counts(t, vc)
            split_counts.append(vc)
            depths.append(float(np.mean([_depth(t) for t in trees])))

    return BartPosterior(
        config=config,
        x_names=names,
        center=center,
        scale=scale,
        train_lower=lo,
        train_upper=hi,
        states=states,
        var_split_counts=np.array(split_counts),
        avg_depth=np.array(depths),
    )


def _set_leaf_values(node: _Node, values: np.ndarray, count: list) -> None:
    if node.is_leaf:
        node.value = float(values[count[0]])
        count[0] += 1
        return
    _set_leaf_values(node.left, values, count)
    _set_leaf_values(node.right, values, count)


def _structure_move(tree, labels, n_leaves, x, r, sigma2, smu2, prior, config, rng):
    """One Metropolis step on the tree shape. Returns the (possibly new)
    tree with its training-point assignment."""
    counts, s, ssr = _leaf_stats(labels, n_leaves, r)
    log_m_cur = _log_marginal(counts, s, ssr, sigma2, smu2)
    log_p_cur = prior.log_tree(tree)

    leaves, internals, nogs = [], [], []
    _collect(tree, 0, leaves, internals, nogs)

    u = rng.random()
    pg, pp, _ = config.move_probs
    if u < pg:
        proposal = _propose_grow(tree, leaves, prior, config, rng)
    elif u < pg + pp:
        proposal = _propose_prune(tree, nogs, prior, config, rng)
    else:
        proposal = _propose_change(tree, internals, prior, rng)
    if proposal is None:
        return tree, labels, n_leaves

    new_tree, log_q_fwd, log_q_rev = proposal
    new_labels, new_n_leaves = _labels_for(new_tree, x)
    new_counts, new_s, new_ssr = _leaf_stats(new_labels, new_n_leaves, r)
    if np.any(new_counts == 0):
        return tree, labels, n_leaves

    log_m_new = _log_marginal(new_counts, new_s, new_ssr, sigma2, smu2)
    log_p_new = prior.log_tree(new_tree)
    log_acc = (log_m_new + log_p_new) - (log_m_cur + log_p_cur) + log_q_rev - log_q_fwd
    if np.log(rng.random()) < log_acc:
        return new_tree, new_labels, new_n_leaves
    return tree, labels, n_leaves


def _propose_grow(tree, leaves, prior, config, rng):
    pg, pp, _ = config.move_probs
    ix = int(rng.integers(len(leaves)))
    var = int(rng.integers(prior.p))
    grid = prior.grids[var]
    if grid.size == 0:
        return None
    cut = float(grid[int(rng.integers(grid.size))])

    new_tree = _copy_tree(tree)
    target = _nth_leaf(new_tree, ix, [0])
    target.var = var
    target.cut = cut
    target.left = _Node(0.0)
    target.right = _Node(0.0)

    new_nogs = []
    _collect(new_tree, 0, [], [], new_nogs)
    log_q_fwd = float(np.log(pg) - np.log(len(leaves)) - prior.log_p - np.log(grid.size))
    log_q_rev = float(np.log(pp) - np.log(len(new_nogs)))
    return new_tree, log_q_fwd, log_q_rev


def _propose_prune(tree, nogs, prior, config, rng):
    if not nogs:
        return None
    pg, pp, _ = config.move_probs
    ix = int(rng.integers(len(nogs)))

    new_tree = _copy_tree(tree)
    new_nogs = []
    _collect(new_tree, 0, [], [], new_nogs)
    target = new_nogs[ix][0]
    pruned_var = target.var
    n_grid = prior.grids[pruned_var].size
    target.var = None
    target.left = None
    target.right = None
    target.value = 0.0

    new_leaves = []
    _collect(new_tree, 0, new_leaves, [], [])
    log_q_fwd = float(np.log(pp) - np.log(len(nogs)))
    log_q_rev = float(np.log(pg) - np.log(len(new_leaves)) - prior.log_p - np.log(n_grid))
    return new_tree, log_q_fwd, log_q_rev


def _propose_change(tree, internals, prior, rng):
    if not internals:
        return None
    ix = int(rng.integers(len(internals)))
    var = int(rng.integers(prior.p))
    grid = prior.grids[var]
    if grid.size == 0:
        return None
    cut = float(grid[int(rng.integers(grid.size))])

    new_tree = _copy_tree(tree)
    new_internals = []
    _collect(new_tree, 0, [], new_internals, [])
    target = new_internals[ix][0]
    old_var = target.var
    target.var = var
    target.cut = cut
    # uniform picks both ways; only the cut grid sizes differ
    log_q_fwd = float(-np.log(grid.size))
    log_q_rev = float(-np.log(prior.grids[old_var].size))
    return new_tree, log_q_fwd, log_q_rev


def _nth_leaf(node: _Node, ix: int, count: list) -> Optional[_Node]:
    if node.is_leaf:
        if count[0] == ix:
            return node
        count[0] += 1
        return None
    found = _nth_leaf(node.left, ix, count)
    if found is not None:
        return found
    return _nth_leaf(node.right, ix, count)


def bart_predict(
    post: BartPosterior, x: np.ndarray, max_states: Optional[int] = None
) -> np.ndarray:
    """Draws of the regression function at new points, original scale,
    shaped (states, rows). Empty input gives an empty matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.ndim != 2 or (x.shape[1] != len(post.x_names) and x.shape[0] > 0):
        if x.size == 0:
            x = x.reshape(0, len(post.x_names))
        else:
            raise ConfigError(
                f"prediction input has {x.shape[1]} columns, expected {len(post.x_names)}"
            )
    keep = post.state_indices(max_states)
    rows = x.shape[0]
    out = np.zeros((keep.size, rows))
    if rows == 0:
        return out
    idx = np.arange(rows)
    buf = np.empty(rows)
    for si, state_ix in enumerate(keep):
        _, trees = post.states[state_ix]
        acc = np.zeros(rows)
        for t in trees:
            _predict_tree(t, x, idx, buf)
            acc += buf
        out[si] = acc
    return out * post.scale + post.center


def predict_summary(
    post: BartPosterior, x: np.ndarray, level: float = 0.95
) -> dict:
    draws = bart_predict(post, x)
    a = (1.0 - level) / 2.0
    return {
        "mean": draws.mean(axis=0),
        "lower": np.quantile(draws, a, axis=0),
        "upper": np.quantile(draws, 1.0 - a, axis=0),
    }


def loocv(
    x: np.ndarray,
    y: np.ndarray,
    config: Optional[BartConfig] = None,
    x_names: Optional[Sequence[str]] = None,
    noise_se: Optional[np.ndarray] = None,
    threads: int = 1,
) -> dict:
    """Leave one out refits. Each held-out point gets the posterior mean
    and central 95% interval of the regression function at its location;
    when per-point noise standard errors are given, a second coverage
    figure widens the intervals by that noise in quadrature."""
    config = config if config is not None else BartConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    if n < MIN_ROWS:
        raise ConfigError(f"leave one out needs at least {MIN_ROWS} points, got {n}")

    def one(i: int):
        keep = np.arange(n) != i
        seed_i = int(child_seed(config.seed, 7, i).generate_state(1)[0])
        post = _fit_core(x[keep], y[keep], replace(config, seed=seed_i), x_names)
        summ = predict_summary(post, x[i : i + 1])
        return float(summ["mean"][0]), float(summ["lower"][0]), float(summ["upper"][0])

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(n)))
    else:
        rows = [one(i) for i in range(n)]

    mean = np.array([r[0] for r in rows])
    lower = np.array([r[1] for r in rows])
    upper = np.array([r[2] for r in rows])
    err = mean - y
    out = {
        "mean": mean,
        "lower": lower,
        "upper": upper,
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
        "coverage": float(np.mean((y >= lower) & (y <= upper))),
    }
    if noise_se is not None:
        se = np.asarray(noise_se, dtype=float).ravel()
        if se.shape[0] != n:
            raise ConfigError("noise_se length must match the training points")
        z = sps.norm.ppf(0.975)
        lo2 = mean - np.sqrt((mean - lower) ** 2 + (z * se) ** 2)
        hi2 = mean + np.sqrt((upper - mean) ** 2 + (z * se) ** 2)
        out["coverage_noise"] = float(np.mean((y >= lo2) & (y <= hi2)))
        out["lower_noise"] = lo2
        out["upper_noise"] = hi2
    return out


def partial_dependence(
    post: BartPosterior, x_ref: np.ndarray, var: int, grid: np.ndarray
) -> np.ndarray:
    """Posterior mean prediction averaged over reference rows with one
    coordinate pinned to each grid value."""
    x_ref = np.atleast_2d(np.asarray(x_ref, dtype=float))
    if not 0 <= var < len(post.x_names):
        raise ConfigError(f"variable index {var} out of range")
    out = np.empty(len(grid))
    for i, g in enumerate(np.asarray(grid, dtype=float)):
        xg = x_ref.copy()
        xg[:, var] = g
        out[i] = float(bart_predict(post, xg).mean())
    return out


def _tree_to_obj(node: _Node):
    if node.is_leaf:
        return [node.value]
    return [int(node.var), float(node.cut), _tree_to_obj(node.left), _tree_to_obj(node.right)]


def _tree_from_obj(obj) -> _Node:
    if len(obj) == 1:
        node = _Node(float(obj[0]))
        return node
    if len(obj) != 4:
        raise ConfigError(f"malformed tree node of length {len(obj)}")
    node = _Node()
    node.var = int(obj[0])
    node.cut = float(obj[1])
    node.left = _tree_from_obj(obj[2])
    node.right = _tree_from_obj(obj[3])
    return node


def bart_to_json(post: BartPosterior) -> dict:
    cfg = post.config
    return {
        "format": "seqoc-bart",
        "version": 1,
        "config": {
            "trees": cfg.trees,
            "iterations": cfg.iterations,
            "burnin": cfg.burnin,
            "thin": cfg.thin,
            "split_alpha": cfg.split_alpha,
            "split_beta": cfg.split_beta,
            "k_leaf": cfg.k_leaf,
            "nu": cfg.nu,
            "q_sigma": cfg.q_sigma,
            "cutpoints": cfg.cutpoints,
            "move_probs": list(cfg.move_probs),
            "seed": cfg.seed,
        },
        "x_names": list(post.x_names),
        "center": post.center,
        "scale": post.scale,
        "train_lower": post.train_lower.tolist(),
        "train_upper": post.train_upper.tolist(),
        "states": [
            {"sigma": sig, "trees": [_tree_to_obj(t) for t in trees]}
            for sig, trees in post.states
        ],
        "var_split_counts": post.var_split_counts.tolist(),
        "avg_depth": post.avg_depth.tolist(),
    }


def bart_from_json(obj: dict) -> BartPosterior:
    if not isinstance(obj, dict) or obj.get("format") != "seqoc-bart":
        raise ConfigError("not a saved ensemble")
    if obj.get("version") != 1:
        raise ConfigError(f"unsupported ensemble version {obj.get('version')!r}")
    c = obj["config"]
    config = BartConfig(
        trees=c["trees"],
        iterations=c["iterations"],
        burnin=c["burnin"],
        thin=c["thin"],
        split_alpha=c["split_alpha"],
        split_beta=c["split_beta"],
        k_leaf=c["k_leaf"],
        nu=c["nu"],
        q_sigma=c["q_sigma"],
        cutpoints=c["cutpoints"],
        move_probs=tuple(c["move_probs"]),
        seed=c["seed"],
    )
    states = [
        (float(st["sigma"]), [_tree_from_obj(t) for t in st["trees"]])
        for st in obj["states"]
    ]
    return BartPosterior(
        config=config,
        x_names=tuple(obj["x_names"]),
        center=float(obj["center"]),
        scale=float(obj["scale"]),
        train_lower=np.asarray(obj["train_lower"], dtype=float),
        train_upper=np.asarray(obj["train_upper"], dtype=float),
        states=states,
        var_split_counts=np.asarray(obj["var_split_counts"], dtype=np.int64),
        avg_depth=np.asarray(obj.get("avg_depth", []), dtype=float),
    )


def save_bart(post: BartPosterior, path) -> None:
    with open(path, "w") as fh:
        json.dump(bart_to_json(post), fh, sort_keys=True)
        fh.write("\n")


def load_bart(path) -> BartPosterior:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return bart_from_json(obj)
