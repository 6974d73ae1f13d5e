"""Joint training of the graph encoder and the score network.

Each step: propagate the current embedding table, synthesize contrastive
views and hard negatives from the final embeddings, then update the encoder
from the ranking + contrastive loss and the score network from the denoising
loss. The two losses are strictly separated: sampled views and hard negatives
enter the encoder loss as constants (only the forward-perturbation noise path
keeps an encoder gradient), and the denoising loss sees final embeddings
detached from the encoder.

Determinism: every epoch draws from a generator seeded by (seed, epoch), so
a run can be stopped, reloaded, and continued bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from scone.autodiff import Tensor
from scone import checkpoint as ckpt
from scone.config import SdeSchedule, TrainConfig
from scone.data import Dataset, NormalizedAdjacency, build_adjacency, sample_triplets
from scone.encoder import (GraphEncoder, backward_through_propagation, finalize,
                           propagate, uniform_alphas)
from scone.evaluation import recall_ndcg, topk_for_users
from scone.losses import bpr_loss, infonce_loss
from scone.optim import Adam
from scone.sampler import generate_hard_negatives, generate_views
from scone.score_model import ScoreNet, dsm_loss


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch


@dataclasses.dataclass
class LossReport:
    epoch: int
    bpr_loss: float
    cl_loss: float
    sgm_loss: float
    l2_term: float
    total_encoder_loss: float


@dataclasses.dataclass
class StepAux:
    """Synthesized inputs for one encoder step, all constant w.r.t. theta
    except the forward-perturbation noise, which re-enters reparameterized."""
    hard_negs: np.ndarray | None
    user_nodes: np.ndarray | None   # distinct users in the batch
    item_nodes: np.ndarray | None   # distinct positive items (node indices)
    noise_u: np.ndarray | None      # z for the users' forward perturbation
    noise_i: np.ndarray | None
    view_b_u: np.ndarray | None     # reverse-generated views (constants)
    view_b_i: np.ndarray | None


def build_step_aux(final: np.ndarray, batch, dataset: Dataset, cfg: TrainConfig,
                   net: ScoreNet, schedule: SdeSchedule, rng) -> StepAux:
    """Run the stochastic generators for one batch against fixed embeddings."""
    uc = dataset.user_count
    hard = None
    if cfg.use_hard_neg:
        hard = generate_hard_negatives(final[uc + batch.pos_items],
                                       final[uc + batch.neg_items],
                                       cfg.w, net, schedule, rng)
    if not cfg.use_cl:
        return StepAux(hard, None, None, None, None, None, None)
    users = np.unique(batch.users)
    items = np.unique(batch.pos_items) + uc
    nodes = np.concatenate([users, items])
    pair = generate_views(final[nodes], net, schedule, rng, return_noise=True)
    nu = len(users)
    return StepAux(
        hard_negs=hard,
        user_nodes=users,
        item_nodes=items,
        noise_u=pair.noise[:nu],
        noise_i=pair.noise[nu:],
        view_b_u=pair.view_b[:nu],
        view_b_i=pair.view_b[nu:],
    )


def encoder_loss_and_grads(theta_arr: np.ndarray, adjacency: NormalizedAdjacency,
                           dataset: Dataset, batch, cfg: TrainConfig,
                           schedule: SdeSchedule, aux: StepAux, alphas=None):
    """Encoder loss with its exact theta gradient, treating aux as constants.

    Pure in theta_arr, which is what makes the whole thing checkable by
    finite differences: freeze aux, perturb theta entries, re-evaluate.
    """
    if alphas is None:
        alphas = uniform_alphas(cfg.n_layers)
    uc = dataset.user_count
    layers = propagate(theta_arr, adjacency, cfg.n_layers)
    final = finalize(layers, alphas)

    u_leaf = Tensor(final[batch.users], requires_grad=True)
    pos_leaf = Tensor(final[uc + batch.pos_items], requires_grad=True)
    if cfg.use_hard_neg:
        neg_leaf = Tensor(aux.hard_negs)
    else:
        neg_leaf = Tensor(final[uc + batch.neg_items], requires_grad=True)

    theta_leaf = None
    l2_val = 0.0
    if cfg.lambda2 > 0 and cfg.l2_mode == "batch":
        touched = np.concatenate([batch.users, uc + batch.pos_items,
                                  uc + batch.neg_items])
        theta_leaf = Tensor(theta_arr[touched], requires_grad=True)
    total_t, rank_t, l2_t = bpr_loss(u_leaf, pos_leaf, neg_leaf,
                                     cfg.lambda2 if theta_leaf is not None else 0.0,
                                     theta_leaf)
    if cfg.lambda2 > 0 and cfg.l2_mode == "full":
        l2_val = float((theta_arr.astype(np.float64) ** 2).sum())

    cl_val = 0.0
    node_leaf_u = node_leaf_i = None
    if cfg.use_cl and cfg.lambda1 > 0:
        std = float(np.sqrt(schedule.perturbation_var(schedule.sampling_steps)))
        node_leaf_u = Tensor(final[aux.user_nodes], requires_grad=True)
        node_leaf_i = Tensor(final[aux.item_nodes], requires_grad=True)
        va_u = node_leaf_u + std * aux.noise_u
        va_i = node_leaf_i + std * aux.noise_i
        if cfg.infonce_mode == "split":
            cl_t = (infonce_loss(va_u, Tensor(aux.view_b_u), cfg.tau)
                    + infonce_loss(va_i, Tensor(aux.view_b_i), cfg.tau))
        else:
            from scone import autodiff as ad
            va = ad.concat([va_u, va_i], axis=0)
            vb = Tensor(np.concatenate([aux.view_b_u, aux.view_b_i], axis=0))
            cl_t = infonce_loss(va, vb, cfg.tau)
        total_t = total_t + cl_t * cfg.lambda1
        cl_val = float(cl_t.data)

    total_t.backward()

    grad_final = np.zeros_like(final)
    np.add.at(grad_final, batch.users, u_leaf.grad)
    np.add.at(grad_final, uc + batch.pos_items, pos_leaf.grad)
    if not cfg.use_hard_neg and neg_leaf.grad is not None:
        np.add.at(grad_final, uc + batch.neg_items, neg_leaf.grad)
    if node_leaf_u is not None and node_leaf_u.grad is not None:
        np.add.at(grad_final, aux.user_nodes, node_leaf_u.grad)
        np.add.at(grad_final, aux.item_nodes, node_leaf_i.grad)
    grad_theta = backward_through_propagation(grad_final, adjacency, alphas)
    if theta_leaf is not None and theta_leaf.grad is not None:
        np.add.at(grad_theta, touched, theta_leaf.grad)
        l2_val = float(l2_t.data)
    elif cfg.lambda2 > 0 and cfg.l2_mode == "full":
        grad_theta += (2.0 * cfg.lambda2) * theta_arr

    report = {
        "bpr": float(rank_t.data),
        "cl": cl_val,
        "l2": l2_val,
        "total": float(rank_t.data) + cfg.lambda1 * cl_val + cfg.lambda2 * l2_val,
    }
    return report, grad_theta


class TrainState:
    """Everything mutable across epochs: parameters, optimizers, bookkeeping."""

    def __init__(self, dataset: Dataset, config: TrainConfig,
                 adjacency: NormalizedAdjacency | None = None):
        self.dataset = dataset
        self.config = config
        self.schedule = config.schedule()
        dtype = config.np_dtype()
        self.adjacency = adjacency if adjacency is not None else build_adjacency(
            dataset, dtype=dtype)
        self.encoder = GraphEncoder(
            dataset.node_count, config.embed_dim, config.n_layers,
            rng=np.random.default_rng([config.seed, 11]), dtype=dtype)
        self.net = ScoreNet(config.embed_dim,
                            rng=np.random.default_rng([config.seed, 12]),
                            dtype=dtype)
        self.theta_param = Tensor(self.encoder.theta, requires_grad=True)
        self.adam_theta = Adam({"theta": self.theta_param}, lr=config.learning_rate)
        self.adam_phi = Adam(self.net.params, lr=config.learning_rate)
        self.epoch = 0
        self.best_epoch = 0
        self.best_recall = -1.0

    @property
    def theta(self) -> np.ndarray:
        return self.theta_param.data

    def final_embeddings(self) -> np.ndarray:
        layers = propagate(self.theta, self.adjacency, self.config.n_layers)
        return finalize(layers, self.encoder.alphas)

    def _trains_phi(self) -> bool:
        # With both generators off nothing consumes the score net; training
        # it anyway would spend a third of the step budget on dead weight.
        return self.config.use_cl or self.config.use_hard_neg

    # -- persistence for stop/resume ---------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        ckpt.save_embeddings(os.path.join(directory, "theta.ckpt"), self.theta)
        ckpt.save_score_params(os.path.join(directory, "sgm.ckpt"),
                               self.net.state_dict())
        arrays = {}
        for tag, opt in (("theta", self.adam_theta), ("phi", self.adam_phi)):
            for name, buf in opt._m.items():
                arrays[f"m_{tag}_{name}"] = buf
            for name, buf in opt._v.items():
                arrays[f"v_{tag}_{name}"] = buf
        np.savez(os.path.join(directory, "optim.npz"), **arrays)
        meta = {"epoch": self.epoch, "best_epoch": self.best_epoch,
                "best_recall": self.best_recall,
                "t_theta": self.adam_theta.t, "t_phi": self.adam_phi.t}
        with open(os.path.join(directory, "state.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh)

    @classmethod
    def load(cls, directory, dataset: Dataset, config: TrainConfig) -> "TrainState":
        state = cls(dataset, config)
        theta = ckpt.load_embeddings(os.path.join(directory, "theta.ckpt"))
        if theta.shape != state.theta.shape:
            raise ckpt.CheckpointError(
                f"checkpoint embeddings {theta.shape} do not match "
                f"dataset/config shape {state.theta.shape}")
        state.theta_param.data = theta.astype(config.np_dtype())
        state.encoder.theta = state.theta_param.data
        state.net.load_state_dict(
            ckpt.load_score_params(os.path.join(directory, "sgm.ckpt")))
        blobs = np.load(os.path.join(directory, "optim.npz"))
        for tag, opt in (("theta", state.adam_theta), ("phi", state.adam_phi)):
            for name in opt._m:
                opt._m[name] = blobs[f"m_{tag}_{name}"].copy()
                opt._v[name] = blobs[f"v_{tag}_{name}"].copy()
        with open(os.path.join(directory, "state.json"), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        state.adam_theta.t = meta.get("t_theta", 0)
        state.adam_phi.t = meta.get("t_phi", 0)
        state.epoch = meta["epoch"]
        state.best_epoch = meta["best_epoch"]
        state.best_recall = meta["best_recall"]
        return state


def _phi_update(state: TrainState, final: np.ndarray, batch, rng):
    """Denoising loss and gradients on the batch nodes' detached embeddings."""
    uc = state.dataset.user_count
    nodes = np.unique(np.concatenate([
        batch.users, uc + batch.pos_items, uc + batch.neg_items]))
    return dsm_loss(state.net, final[nodes], state.schedule, rng)


def train_step(state: TrainState, batch, rng):
    """One optimization step on a triplet batch; returns the loss parts."""
    cfg = state.config
    final = state.final_embeddings()

    sgm_val = 0.0
    phi_grads = None
    if cfg.update_order == "phi_first" and state._trains_phi():
        sgm_val, phi_grads = _phi_update(state, final, batch, rng)
        state.adam_phi.step(phi_grads)
        phi_grads = None

    aux = build_step_aux(final, batch, state.dataset, cfg, state.net,
                         state.schedule, rng)
    report, grad_theta = encoder_loss_and_grads(
        state.theta, state.adjacency, state.dataset, batch, cfg,
        state.schedule, aux, state.encoder.alphas)

    if cfg.update_order == "simultaneous" and state._trains_phi():
        sgm_val, phi_grads = _phi_update(state, final, batch, rng)

    state.theta_param.grad = grad_theta.astype(state.theta.dtype, copy=False)
    state.adam_theta.step()
    state.theta_param.grad = None

    if phi_grads is not None:
        state.adam_phi.step(phi_grads)
    elif cfg.update_order == "theta_first" and state._trains_phi():
        sgm_val, grads = _phi_update(state, state.final_embeddings(), batch, rng)
        state.adam_phi.step(grads)

    report["sgm"] = sgm_val
    return report


def train_epoch(state: TrainState, rng) -> LossReport:
    cfg = state.config
    n_edges = len(state.dataset.train_edges)
    n_batches = max(1, -(-n_edges // cfg.batch_size))
    parts = np.zeros(5, dtype=np.float64)
    for b in range(n_batches):
        batch = sample_triplets(state.dataset, cfg.batch_size, rng)
        rep = train_step(state, batch, rng)
        vals = (rep["bpr"], rep["cl"], rep["sgm"], rep["l2"], rep["total"])
        if not all(np.isfinite(v) for v in vals):
            raise TrainingDiverged(state.epoch, b,
                                   f"bpr={rep['bpr']}, cl={rep['cl']}, "
                                   f"sgm={rep['sgm']}")
        parts += vals
    parts /= n_batches
    return LossReport(epoch=state.epoch, bpr_loss=parts[0], cl_loss=parts[1],
                      sgm_loss=parts[2], l2_term=parts[3],
                      total_encoder_loss=parts[4])


@dataclasses.dataclass
class FitResult:
    history: list
    valid_metrics: list
    best_epoch: int
    best_recall: float
    best_ndcg: float
    stopped_epoch: int
    out_dir: str | None


HISTORY_HEADER = "epoch,bpr_loss,cl_loss,sgm_loss,recall@{k},ndcg@{k}"


def _history_csv(history, valid_metrics, k: int) -> str:
    lines = [HISTORY_HEADER.format(k=k)]
    for rep, (recall, ndcg) in zip(history, valid_metrics):
        lines.append(f"{rep.epoch},{rep.bpr_loss:.10g},{rep.cl_loss:.10g},"
                     f"{rep.sgm_loss:.10g},{recall:.10g},{ndcg:.10g}")
    return "\n".join(lines) + "\n"


def valid_scores(state: TrainState):
    """Recall/NDCG on the validation split (only train items masked)."""
    ds = state.dataset
    final = state.final_embeddings()
    users = np.unique(ds.valid_edges[:, 0])
    if len(users) == 0:
        return 0.0, 0.0
    topk = topk_for_users(final, ds, users, state.config.eval_k, exclude_valid=False)
    res = recall_ndcg(topk, ds.valid_items_by_user(), users, state.config.eval_k)
    return res.recall_at_k, res.ndcg_at_k


def fit(dataset: Dataset, config: TrainConfig, out_dir=None,
        resume_from: TrainState | None = None, log=None) -> FitResult:
    """Train until max_epochs or until valid Recall@k stops improving.

    The best state (by valid Recall@k) is checkpointed into out_dir along
    with the loss/metric history CSV and, at the end, the last state for
    resumption.
    """
    state = resume_from if resume_from is not None else TrainState(dataset, config)
    cfg = state.config
    history = []
    valid_metrics = []
    bad_streak = 0
    best_ndcg = 0.0
    while state.epoch < cfg.max_epochs:
        state.epoch += 1
        rng = np.random.default_rng([cfg.seed, 1000 + state.epoch])
        report = train_epoch(state, rng)
        recall, ndcg = valid_scores(state)
        history.append(report)
        valid_metrics.append((recall, ndcg))
        if log is not None:
            log(f"epoch {state.epoch}: bpr={report.bpr_loss:.4f} "
                f"cl={report.cl_loss:.4f} sgm={report.sgm_loss:.4f} "
                f"recall@{cfg.eval_k}={recall:.4f} ndcg@{cfg.eval_k}={ndcg:.4f}")
        if recall > state.best_recall:
            state.best_recall = recall
            state.best_epoch = state.epoch
            best_ndcg = ndcg
            bad_streak = 0
            if out_dir is not None:
                ckpt.save_embeddings(os.path.join(out_dir, "best_theta.ckpt"),
                                     state.theta)
                ckpt.save_score_params(os.path.join(out_dir, "best_sgm.ckpt"),
                                       state.net.state_dict())
        else:
            bad_streak += 1
            if bad_streak > cfg.patience:
                break
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "history.csv"), "w", encoding="utf-8") as fh:
            fh.write(_history_csv(history, valid_metrics, cfg.eval_k))
        state.save(os.path.join(out_dir, "last"))
    return FitResult(history=history, valid_metrics=valid_metrics,
                     best_epoch=state.best_epoch, best_recall=state.best_recall,
                     best_ndcg=best_ndcg, stopped_epoch=state.epoch,
                     out_dir=out_dir)
