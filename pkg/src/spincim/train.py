"""Mini-batch training for the Bayesian binary networks."""

import logging
from dataclasses import dataclass

import numpy as np

from .dropout import scale_regularizer
from .errors import DivergenceError, DomainError, NumericError
from .rng import DOMAIN_SHUFFLE, DOMAIN_TRAIN, SeedTree
from .tensor import softmax_ce
from .vi import elbo_loss, kl_anneal

log = logging.getLogger(__name__)


@dataclass
class TrainParams:
    epochs: int = 100
    batch: int = 32
    lr: float = 0.01
    lam: float = 1e-3        # scale regularizer weight
    lam_kl: float = 1.0      # final KL weight
    kl_warmup: float = 0.3
    latent_clip: float = 1.0
    lr_decay: float = 1.0    # multiplicative per epoch


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value.data) for p in self.params]
        self.v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.value.grad
            if g is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.value.grad = None


def _snapshot(net):
    state = {k: p.value.data.copy() for k, p in net.params.items()}
    norms = {i: (st.running_mean.copy(), st.running_var.copy()) for i, st in net.norms.items()}
    return state, norms


def _restore(net, snap):
    state, norms = snap
    for k, v in state.items():
        net.params[k].value.data[...] = v
    for i, (m, var) in norms.items():
        net.norms[i].running_mean = m.copy()
        net.norms[i].running_var = var.copy()


def objective(net, logits, y, epoch, n_batches, hp):
    ce = softmax_ce(logits, y)
    if net.posteriors:
        lam_kl = kl_anneal(epoch, hp.epochs, hp.lam_kl, hp.kl_warmup)
        return elbo_loss(ce, net.kl(), lam_kl, n_batches), ce
    loss = ce
    if hp.lam > 0:
        for s in net.scale_vectors():
            loss = loss + scale_regularizer(s, hp.lam)
    return loss, ce


def fit(net, x, y, hp, seed=0, on_epoch=None):
    """Train in place. Returns the per-epoch history.

    On a non-finite loss the parameters are rolled back to the last finite
    epoch and DivergenceError is raised; the caller may still checkpoint ``net``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y):
        raise DomainError("feature and label counts differ")
    if hp.epochs < 1 or hp.batch < 1:
        raise DomainError("epochs and batch size must be positive")
    opt = Adam(net.parameters(), hp.lr)
    root = SeedTree(seed)
    n = len(x)
    n_batches = max(1, -(-n // hp.batch))
    history = []
    for epoch in range(hp.epochs):
        snap = _snapshot(net)
        order = root.child(DOMAIN_SHUFFLE, epoch).generator().permutation(n)
        total, correct = 0.0, 0
        for b in range(n_batches):
            idx = order[b * hp.batch:(b + 1) * hp.batch]
            if len(idx) < 2 and net.norms:
                continue
            try:
                logits = net.forward(x[idx], root.child(DOMAIN_TRAIN, epoch, b), train=True)
                loss, ce = objective(net, logits, y[idx], epoch, n_batches, hp)
            except NumericError as exc:
                # NaN reached a sign unit before the loss could be formed
                _restore(net, snap)
                raise DivergenceError(f"non-finite activations at epoch {epoch}, batch {b}") from exc
            if not np.isfinite(loss.data):
                _restore(net, snap)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            net.clip_latent(hp.latent_clip)
            total += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        rec = {"epoch": epoch, "loss": total / n, "train_accuracy": correct / n}
        history.append(rec)
        log.debug("epoch %d loss %.4f acc %.4f", epoch, rec["loss"], rec["train_accuracy"])
        if on_epoch is not None:
            on_epoch(rec)
        opt.lr *= hp.lr_decay
    return history
