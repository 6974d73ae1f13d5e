"""Interaction ingestion, splitting, adjacency construction, triplet sampling.

Raw interaction files are TSV with one ``user<TAB>item`` pair per line (extra
columns ignored, any interaction counts as an implicit positive). Users and
items get dense indices in order of first appearance; the 7:1:2 split is done
per user with a seeded shuffle so the same seed always yields the same split.
"""

from __future__ import annotations

import dataclasses
import logging
import os

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class ParseError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class NegativeSaturationError(DataError):
    """A user interacts with (nearly) every item; rejection sampling gave up."""


def load_interactions(path, fmt: str = "tsv"):
    """Read a raw interaction file into a deduplicated list of (user, item) pairs.

    Pairs keep the file order of their first occurrence. Lines must carry at
    least two whitespace-separated tokens; blank lines are skipped.
    """
    if fmt != "tsv":
        raise DataError(f"unsupported format {fmt!r}")
    if not os.path.isfile(path):
        raise DataError(f"no such interaction file: {path}")
    edges = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 2:
                raise ParseError(f"{path}:{lineno}: expected at least 2 columns, "
                                 f"got {line.rstrip()!r}")
            pair = (tokens[0], tokens[1])
            if pair not in seen:
                seen.add(pair)
                edges.append(pair)
    if not edges:
        raise EmptyDatasetError(f"{path}: no interactions found")
    return edges


@dataclasses.dataclass
class Dataset:
    """ID-mapped interactions with disjoint train/valid/test edge sets."""

    user_count: int
    item_count: int
    train_edges: np.ndarray   # [n, 2] of (user_index, item_index)
    valid_edges: np.ndarray
    test_edges: np.ndarray
    user_id_map: dict
    item_id_map: dict

    def __post_init__(self):
        self._train_items = None
        self._valid_items = None
        self._test_items = None
        self._train_sets = None

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count

    def _group(self, edges: np.ndarray):
        out = [np.empty(0, dtype=np.int64) for _ in range(self.user_count)]
        if len(edges):
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            e = edges[order]
            users, starts = np.unique(e[:, 0], return_index=True)
            bounds = np.append(starts, len(e))
            for u, lo, hi in zip(users, bounds[:-1], bounds[1:]):
                out[u] = e[lo:hi, 1].copy()
        return out

    def train_items_by_user(self):
        if self._train_items is None:
            self._train_items = self._group(self.train_edges)
        return self._train_items

    def valid_items_by_user(self):
        if self._valid_items is None:
            self._valid_items = self._group(self.valid_edges)
        return self._valid_items

    def test_items_by_user(self):
        if self._test_items is None:
            self._test_items = self._group(self.test_edges)
        return self._test_items

    def train_sets_by_user(self):
        if self._train_sets is None:
            self._train_sets = [set(items.tolist()) for items in self.train_items_by_user()]
        return self._train_sets


def split_dataset(edges, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> Dataset:
    """Per-user shuffled split of raw (user, item) pairs into train/valid/test.

    Valid and test sizes round down (floor of ratio * n); the remainder goes
    to train, so every user keeps at least one train interaction. Same
    (edges, seed) always produces an identical split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise DataError(f"need three nonnegative ratios, got {ratios}")
    if not edges:
        raise EmptyDatasetError("no interactions to split")

    user_id_map: dict = {}
    item_id_map: dict = {}
    pairs = np.empty((len(edges), 2), dtype=np.int64)
    for k, (u_raw, i_raw) in enumerate(edges):
        u = user_id_map.setdefault(u_raw, len(user_id_map))
        i = item_id_map.setdefault(i_raw, len(item_id_map))
        pairs[k] = (u, i)

    n_users = len(user_id_map)
    items_of: list = [[] for _ in range(n_users)]
    for u, i in pairs:
        items_of[u].append(i)

    excluded = sum(1 for its in items_of if not its)
    if excluded:
        log.info("excluded %d users with no interactions", excluded)

    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for u in range(n_users):
        items = np.asarray(items_of[u], dtype=np.int64)
        rng.shuffle(items)
        n = len(items)
        n_valid = int(ratios[1] * n)
        n_test = int(ratios[2] * n)
        n_train = n - n_valid - n_test
        for buf, chunk in ((train, items[:n_train]),
                           (valid, items[n_train:n_train + n_valid]),
                           (test, items[n_train + n_valid:])):
            buf.extend((u, i) for i in chunk)

    def as_array(rows):
        return (np.asarray(rows, dtype=np.int64).reshape(-1, 2)
                if rows else np.empty((0, 2), dtype=np.int64))

    return Dataset(
        user_count=n_users,
        item_count=len(item_id_map),
        train_edges=as_array(train),
        valid_edges=as_array(valid),
        test_edges=as_array(test),
        user_id_map=user_id_map,
        item_id_map=item_id_map,
    )


@dataclasses.dataclass
class NormalizedAdjacency:
    """Symmetrically normalized bipartite adjacency over users + items.

    Entry (r, c) holds 1/sqrt(deg(r) * deg(c)) for every train edge; rows and
    columns index users first, then items offset by user_count. Stored CSR
    with sorted indices, so entry order is (row, col) lexicographic.
    """

    node_count: int
    matrix: sp.csr_matrix
    degrees: np.ndarray

    def propagate_once(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def build_adjacency(dataset: Dataset, dtype=np.float32) -> NormalizedAdjacency:
    if len(dataset.train_edges) == 0:
        raise DataError("cannot build adjacency without train edges")
    n = dataset.node_count
    u = dataset.train_edges[:, 0]
    v = dataset.train_edges[:, 1] + dataset.user_count
    deg = np.zeros(n, dtype=np.int64)
    np.add.at(deg, u, 1)
    np.add.at(deg, v, 1)
    # Isolated nodes keep degree 0 and simply contribute no entries.
    inv_sqrt = np.zeros(n, dtype=np.float64)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    vals = inv_sqrt[u] * inv_sqrt[v]
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    data = np.concatenate([vals, vals]).astype(dtype)
    mat = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    mat.sort_indices()
    return NormalizedAdjacency(node_count=n, matrix=mat, degrees=deg)


@dataclasses.dataclass
class TripletBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


def sample_triplets(dataset: Dataset, batch_size: int, rng,
                    max_attempts: int = 100) -> TripletBatch:
    """Uniform (user, positive) draws over train edges with rejection-sampled
    negatives; resampling is capped per triplet."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    edges = dataset.train_edges
    if len(edges) == 0:
        raise DataError("cannot sample triplets without train edges")
    pick = rng.integers(0, len(edges), size=batch_size)
    users = edges[pick, 0]
    pos = edges[pick, 1]
    train_sets = dataset.train_sets_by_user()
    neg = rng.integers(0, dataset.item_count, size=batch_size)
    bad = np.array([neg[k] in train_sets[users[k]] for k in range(batch_size)])
    attempts = 1
    while bad.any():
        if attempts >= max_attempts:
            stuck = users[bad][0]
            raise NegativeSaturationError(
                f"no negative found for user {stuck} after {max_attempts} attempts "
                f"(user interacts with {len(train_sets[stuck])}/{dataset.item_count} items)")
        idx = np.nonzero(bad)[0]
        neg[idx] = rng.integers(0, dataset.item_count, size=len(idx))
        bad[idx] = [neg[k] in train_sets[users[k]] for k in idx]
        attempts += 1
    return TripletBatch(users=users, pos_items=pos, neg_items=neg)


# -- split persistence (the prepare/train/eval file contract) ---------


def save_split(dataset: Dataset, out_dir) -> list:
    """Write train/valid/test TSVs of dense pairs plus the two ID-map TSVs."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, arr in (("train.tsv", dataset.train_edges),
                      ("valid.tsv", dataset.valid_edges),
                      ("test.tsv", dataset.test_edges)):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            for u, i in arr:
                fh.write(f"{u}\t{i}\n")
        written.append(path)
    for name, mapping in (("user_map.tsv", dataset.user_id_map),
                          ("item_map.tsv", dataset.item_id_map)):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            for raw, dense in mapping.items():
                fh.write(f"{raw}\t{dense}\n")
        written.append(path)
    return written


def load_split(data_dir) -> Dataset:
    def read_edges(name):
        path = os.path.join(data_dir, name)
        if not os.path.isfile(path):
            raise DataError(f"missing split file: {path}")
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                tokens = line.split()
                if not tokens:
                    continue
                if len(tokens) != 2:
                    raise ParseError(f"{path}:{lineno}: expected 2 columns")
                rows.append((int(tokens[0]), int(tokens[1])))
        return (np.asarray(rows, dtype=np.int64).reshape(-1, 2)
                if rows else np.empty((0, 2), dtype=np.int64))

    def read_map(name):
        path = os.path.join(data_dir, name)
        if not os.path.isfile(path):
            raise DataError(f"missing ID map: {path}")
        mapping = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                tokens = line.rstrip("\n").split("\t")
                if len(tokens) == 2:
                    mapping[tokens[0]] = int(tokens[1])
        return mapping

    user_map = read_map("user_map.tsv")
    item_map = read_map("item_map.tsv")
    return Dataset(
        user_count=len(user_map),
        item_count=len(item_map),
        train_edges=read_edges("train.tsv"),
        valid_edges=read_edges("valid.tsv"),
        test_edges=read_edges("test.tsv"),
        user_id_map=user_map,
        item_id_map=item_map,
    )
