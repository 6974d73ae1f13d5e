"""Top-K ranking metrics, stratified analyses, and embedding uniformity.

Scores are inner products of user and item final embeddings. A user's train
items (and valid items, when evaluating on test) are masked before ranking;
ties break toward the lower item index. Both metrics are macro averages over
users that own at least one ground-truth item.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from scone.data import Dataset

GROUP_NAMES = ("low", "mid", "top")


@dataclasses.dataclass
class RankingResult:
    recall_at_k: float
    ndcg_at_k: float
    k: int
    users: np.ndarray
    per_user_recall: np.ndarray
    per_user_ndcg: np.ndarray
    n_users: int = 0

    def __post_init__(self):
        self.n_users = len(self.users)


def topk_for_users(final_embeddings: np.ndarray, dataset: Dataset, users,
                   k: int, exclude_valid: bool = False,
                   chunk: int = 1024) -> np.ndarray:
    """Top-k item indices per user, -1 padded where fewer than k candidates
    survive the masking."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    users = np.asarray(users, dtype=np.int64)
    u_emb = final_embeddings[:dataset.user_count]
    i_emb = final_embeddings[dataset.user_count:]
    train = dataset.train_items_by_user()
    valid = dataset.valid_items_by_user() if exclude_valid else None
    out = np.full((len(users), k), -1, dtype=np.int64)
    for lo in range(0, len(users), chunk):
        batch = users[lo:lo + chunk]
        scores = u_emb[batch] @ i_emb.T
        scores = scores.astype(np.float64, copy=False)
        for r, u in enumerate(batch):
            scores[r, train[u]] = -np.inf
            if valid is not None:
                scores[r, valid[u]] = -np.inf
        # stable sort on negated scores: equal scores keep ascending item index
        top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        picked = np.take_along_axis(scores, top, axis=1)
        top[~np.isfinite(picked)] = -1
        out[lo:lo + len(batch)] = top
    return out


def rank_items(user: int, final_embeddings: np.ndarray, dataset: Dataset,
               k: int, exclude_valid: bool = False) -> np.ndarray:
    """Top-k list for a single user (masked entries dropped)."""
    row = topk_for_users(final_embeddings, dataset, [user], k, exclude_valid)[0]
    return row[row >= 0]


def _idcg_table(k: int) -> np.ndarray:
    gains = 1.0 / np.log2(np.arange(2, k + 2, dtype=np.float64))
    return np.concatenate([[0.0], np.cumsum(gains)])


def recall_ndcg(topk_lists: np.ndarray, truth_items_by_user, users,
                k: int) -> RankingResult:
    """Macro Recall@k and NDCG@k over users with at least one truth item.

    DCG uses binary gains 1/log2(rank+1); IDCG places min(k, |truth|) hits at
    the top ranks.
    """
    users = np.asarray(users, dtype=np.int64)
    idcg = _idcg_table(k)
    discounts = 1.0 / np.log2(np.arange(2, k + 2, dtype=np.float64))
    kept_users = []
    recalls = []
    ndcgs = []
    for row, u in zip(topk_lists, users):
        truth = truth_items_by_user[u]
        if len(truth) == 0:
            continue
        truth_set = set(truth.tolist())
        hit = np.array([item in truth_set and item >= 0 for item in row])
        recalls.append(hit.sum() / len(truth))
        dcg = discounts[: len(row)][hit].sum()
        ndcgs.append(dcg / idcg[min(k, len(truth))])
        kept_users.append(u)
    if not kept_users:
        raise ValueError("no user has truth items to evaluate")
    per_recall = np.asarray(recalls)
    per_ndcg = np.asarray(ndcgs)
    return RankingResult(
        recall_at_k=float(per_recall.mean()),
        ndcg_at_k=float(per_ndcg.mean()),
        k=k,
        users=np.asarray(kept_users, dtype=np.int64),
        per_user_recall=per_recall,
        per_user_ndcg=per_ndcg,
    )


def strata_assign(counts, boundaries=(0.80, 0.95)) -> np.ndarray:
    """Partition entities into low/mid/top groups by interaction count.

    Sizes are floor(0.80 n) / next 15% / remainder; ties in count break by
    ascending entity index so the partition is deterministic.
    """
    counts = np.asarray(counts)
    n = len(counts)
    if n == 0:
        return np.empty(0, dtype=np.int8)
    order = np.lexsort((np.arange(n), counts))
    cut_low = int(boundaries[0] * n)
    cut_mid = int(boundaries[1] * n)
    labels = np.empty(n, dtype=np.int8)
    labels[order[:cut_low]] = 0
    labels[order[cut_low:cut_mid]] = 1
    labels[order[cut_mid:]] = 2
    return labels


def train_counts(dataset: Dataset):
    """Per-user and per-item train interaction counts."""
    u_counts = np.zeros(dataset.user_count, dtype=np.int64)
    i_counts = np.zeros(dataset.item_count, dtype=np.int64)
    np.add.at(u_counts, dataset.train_edges[:, 0], 1)
    np.add.at(i_counts, dataset.train_edges[:, 1], 1)
    return u_counts, i_counts


def stratified_user_eval(result: RankingResult, user_labels: np.ndarray) -> dict:
    """Per-group macro metrics; empty groups are absent from the dict."""
    out = {}
    labels = user_labels[result.users]
    for g, name in enumerate(GROUP_NAMES):
        mask = labels == g
        if not mask.any():
            continue
        out[name] = RankingResult(
            recall_at_k=float(result.per_user_recall[mask].mean()),
            ndcg_at_k=float(result.per_user_ndcg[mask].mean()),
            k=result.k,
            users=result.users[mask],
            per_user_recall=result.per_user_recall[mask],
            per_user_ndcg=result.per_user_ndcg[mask],
        )
    return out


def decomposed_recall(topk_lists: np.ndarray, truth_items_by_user, users,
                      item_labels: np.ndarray, k: int) -> dict:
    """Recall@k credited per item-popularity group.

    Each hit counts toward its item's group; per user the group contributions
    are hits_in_group / |truth|, so the three groups sum to the user's
    Recall@k and the macro averages sum to total Recall@k exactly.
    """
    users = np.asarray(users, dtype=np.int64)
    sums = np.zeros(3, dtype=np.float64)
    n_eval = 0
    for row, u in zip(topk_lists, users):
        truth = truth_items_by_user[u]
        if len(truth) == 0:
            continue
        truth_set = set(truth.tolist())
        n_eval += 1
        for item in row:
            if item >= 0 and item in truth_set:
                sums[item_labels[item]] += 1.0 / len(truth)
    if n_eval == 0:
        raise ValueError("no user has truth items to evaluate")
    contributions = sums / n_eval
    return {name: float(contributions[g]) for g, name in enumerate(GROUP_NAMES)}


def uniformity(embeddings: np.ndarray, rng=None, exact_threshold: int = 5000,
               n_pairs: int = 10 ** 6) -> float:
    """log mean exp(-2 ||g(u) - g(v)||^2) over distinct pairs of normalized
    embeddings; all pairs when the pool is small, sampled pairs otherwise."""
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if n < 2:
        raise ValueError("uniformity needs at least 2 embeddings")
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm embedding: cannot normalize")
    g = emb / norms
    if n <= exact_threshold:
        gram = g @ g.T
        sq = np.clip(2.0 - 2.0 * gram, 0.0, None)
        iu = np.triu_indices(n, k=1)
        vals = np.exp(-2.0 * sq[iu])
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        left = rng.integers(0, n, size=n_pairs)
        right = rng.integers(0, n, size=n_pairs)
        keep = left != right
        left, right = left[keep], right[keep]
        diff = g[left] - g[right]
        vals = np.exp(-2.0 * (diff * diff).sum(axis=1))
    return float(np.log(vals.mean()))


def metric_rows_to_csv(rows) -> str:
    """Render (metric, group, value) rows as the eval CSV (stable formatting)."""
    lines = ["metric,group,value"]
    for metric, group, value in rows:
        lines.append(f"{metric},{group},{value:.10g}")
    return "\n".join(lines) + "\n"


def strata_to_tsv(labels) -> str:
    """Render group labels as an `entity_index<TAB>group` manifest."""
    lines = [f"{idx}\t{GROUP_NAMES[g]}" for idx, g in enumerate(labels)]
    return "\n".join(lines) + "\n"
