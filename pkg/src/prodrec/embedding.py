"""Skip-gram product and user embeddings trained with negative sampling.

Three trainers over purchase sequences:

  train_product_embeddings   flat per-user product sequence, window in products
  train_bagged_embeddings    window in receipts; items of one receipt never
                             predict each other; directed by default so
                             vectors predict *future* purchases
  train_user_embeddings      joint product/user space; the user acts as a
                             global context averaged into every window, and a
                             second update predicts the user from the mean of
                             everything they bought

All trainers share the same primitive: one stochastic update of a center row
against one positive target plus `negatives` noise rows drawn from the
unigram^0.75 distribution. Matrices are float32 so the 9-significant-digit
text model format round-trips exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .corpus import Corpus, UserTable, Vocabulary, flat_products

NOISE_POWER = 0.75
INIT_SCALE = 0.5  # input rows uniform in [-INIT_SCALE/D, INIT_SCALE/D]


class TrainingDataError(ValueError):
    """Corpus has nothing the requested trainer can learn from."""


@dataclass
class TrainConfig:
    dim: int = 300
    context: int = 5            # product-level window half-size
    bag_context: int = 1        # receipt-level window half-size
    negatives: int = 10
    epochs: int = 5
    initial_lr: float = 0.025
    final_lr: float = 1e-4
    subsample_t: float = 1e-4   # 0 disables frequent-product downsampling
    directed: bool | None = None  # None: trainer default (bagged=True, others=False)
    workers: int = 1
    seed: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.context < 1 or self.bag_context < 1:
            raise ValueError("dim, context and bag_context must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.initial_lr > self.final_lr > 0:
            raise ValueError("need initial_lr > final_lr > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolve_directed(self, default: bool) -> bool:
        return default if self.directed is None else self.directed


@dataclass
class EmbeddingModel:
    vocab: Vocabulary
    input_vectors: np.ndarray   # P x D float32
    output_vectors: np.ndarray  # P x D float32
    config: TrainConfig

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __post_init__(self):
        P = len(self.vocab)
        for mat in (self.input_vectors, self.output_vectors):
            if mat.shape != (P, self.dim):
                raise ValueError("matrix shape does not match vocabulary")
            if not np.all(np.isfinite(mat)):
                raise ValueError("non-finite entries in embedding matrix")


@dataclass
class UserEmbeddingModel:
    products: EmbeddingModel
    users: UserTable
    user_input: np.ndarray   # N x D float32
    user_output: np.ndarray  # N x D float32


def init_product_model(vocab: Vocabulary, config: TrainConfig) -> EmbeddingModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    P, D = len(vocab), config.dim
    inp = ((rng.random((P, D)) - 0.5) * (2 * INIT_SCALE / D)).astype(np.float32)
    out = np.zeros((P, D), dtype=np.float32)
    return EmbeddingModel(vocab, inp, out, config)


def _init_user_matrices(num_users: int, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    D = config.dim
    inp = ((rng.random((num_users, D)) - 0.5) * (2 * INIT_SCALE / D)).astype(np.float32)
    return inp, np.zeros((num_users, D), dtype=np.float32)


# ---------------------------------------------------------------------------
# Negative-sampling primitive.  `labels` is 1 for the positive row, 0 for
# noise rows; the update ascends  sum_t [ l_t*log s(x.y_t) + (1-l_t)*log s(-x.y_t) ].
# ---------------------------------------------------------------------------

def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def ns_objective(center: np.ndarray, targets: np.ndarray, labels: np.ndarray) -> float:
    dots = targets @ center
    return float(np.sum(labels * log_sigmoid(dots) + (1.0 - labels) * log_sigmoid(-dots)))


def ns_gradients(center: np.ndarray, targets: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of ns_objective w.r.t. the center and target rows."""
    coef = labels - expit(targets @ center)
    return coef @ targets, coef[:, None] * center


def averaged_ns_gradients(
    participants: np.ndarray, targets: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients when the center is the mean of `participants` rows.

    Returns (per-participant gradient, target-row gradients); every
    participant receives grad(center)/m with m = number of participants."""
    center = participants.mean(axis=0)
    grad_center, grad_targets = ns_gradients(center, targets, labels)
    return grad_center / participants.shape[0], grad_targets


class NoiseSampler:
    """Unigram^0.75 sampler over a count vector, with rejection of excluded ids."""

    def __init__(self, counts: np.ndarray, power: float = NOISE_POWER):
        weights = np.asarray(counts, dtype=np.float64) ** power
        total = weights.sum()
        if total <= 0:
            raise ValueError("noise distribution has no mass")
        self.cumulative = np.cumsum(weights / total)
        self.cumulative[-1] = 1.0
        self.probabilities = weights / total

    def sample(self, excluded, count: int, rng: np.random.Generator) -> np.ndarray:
        draws = np.searchsorted(self.cumulative, rng.random(count), side="right")
        if excluded:
            while True:
                bad = np.fromiter((d in excluded for d in draws), dtype=bool, count=len(draws))
                n_bad = int(bad.sum())
                if n_bad == 0:
                    break
                draws[bad] = np.searchsorted(self.cumulative, rng.random(n_bad), side="right")
        return draws


def negative_sample(counts: np.ndarray, excluded, count: int, rng: np.random.Generator) -> np.ndarray:
    return NoiseSampler(counts).sample(excluded, count, rng)


# ---------------------------------------------------------------------------
# Training loops.
# ---------------------------------------------------------------------------

PairHook = Callable[[int, int, int], None]  # (center, context, offset)


class _LearningRate:
    """Linear decay over the expected total of center positions; shared
    across workers (racy reads are tolerated, workers=1 is exact)."""

    def __init__(self, config: TrainConfig, total_positions: int):
        self.initial = config.initial_lr
        self.final = config.final_lr
        self.total = max(1, total_positions)
        self.processed = 0

    def current(self) -> np.float32:
        frac = min(1.0, self.processed / self.total)
        return np.float32(self.initial - (self.initial - self.final) * frac)

    def step(self, n: int = 1) -> None:
        self.processed += n


def _keep_probabilities(vocab: Vocabulary, subsample_t: float) -> np.ndarray | None:
    if subsample_t <= 0:
        return None
    freq = vocab.counts / max(1, int(vocab.counts.sum()))
    with np.errstate(divide="ignore"):
        keep = np.sqrt(subsample_t / freq)
    return np.minimum(keep, 1.0)


def pair_update(
    inp: np.ndarray,
    out: np.ndarray,
    center: int,
    target: int,
    sampler: NoiseSampler,
    negatives: int,
    lr: np.float32,
    labels: np.ndarray,
    rng: np.random.Generator,
) -> None:
    """One negative-sampling update of (inp[center], out[target], noise rows).

    Applies lr times the ns_gradients of the pair's objective, all gradients
    taken at the pre-update values (duplicate noise draws accumulate)."""
    t_ids = np.empty(negatives + 1, dtype=np.int64)
    t_ids[0] = target
    t_ids[1:] = sampler.sample({target}, negatives, rng)
    rows = out[t_ids]
    coef = (labels - expit(rows @ inp[center])) * lr
    np.add.at(out, t_ids, coef[:, None] * inp[center])
    inp[center] += coef @ rows


def _worker_rng(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2, worker]))


def _starting_model(corpus: Corpus, config: TrainConfig, init: EmbeddingModel | None) -> EmbeddingModel:
    if len(corpus.vocab) < 2:
        raise TrainingDataError("vocabulary must contain at least 2 products")
    if init is None:
        return init_product_model(corpus.vocab, config)
    if init.input_vectors.shape != (len(corpus.vocab), config.dim):
        raise ValueError("init model does not match corpus vocabulary and dim")
    return EmbeddingModel(
        corpus.vocab, init.input_vectors.copy(), init.output_vectors.copy(), config
    )


def _run_sharded(worker_fn: Callable[[int], None], workers: int) -> None:
    if workers == 1:
        worker_fn(0)
        return
    threads = [threading.Thread(target=worker_fn, args=(w,)) for w in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def train_product_embeddings(
    corpus: Corpus,
    config: TrainConfig,
    init: EmbeddingModel | None = None,
    pair_hook: PairHook | None = None,
) -> EmbeddingModel:
    """Skip-gram over each user's flat purchase sequence.

    Every position i predicts positions i+j for j in [-c, c] \\ {0}
    (j in [1, c] when directed), one negative-sampling update per pair."""
    model = _starting_model(corpus, config, init)
    directed = config.resolve_directed(False)

    sequences = [flat_products(log, config.seed) for log in corpus.logs]
    if max((len(s) for s in sequences), default=0) < 2:
        raise TrainingDataError("no user sequence has at least 2 products")

    total = sum(len(s) for s in sequences) * config.epochs
    lr = _LearningRate(config, total)
    keep = _keep_probabilities(corpus.vocab, config.subsample_t)
    sampler = NoiseSampler(corpus.vocab.counts)
    labels = np.zeros(config.negatives + 1, dtype=np.float32)
    labels[0] = 1.0
    inp, out = model.input_vectors, model.output_vectors
    c = config.context

    def worker(w: int) -> None:
        rng = _worker_rng(config.seed, w)
        for _ in range(config.epochs):
            for seq in sequences[w :: config.workers]:
                if keep is None:
                    active = seq
                else:
                    active = [p for p in seq if rng.random() < keep[p]]
                alpha = lr.current()
                lr.step(len(seq))
                for i, center in enumerate(active):
                    lo = i + 1 if directed else max(0, i - c)
                    for j in range(lo, min(len(active), i + c + 1)):
                        if j == i:
                            continue
                        if pair_hook is not None:
                            pair_hook(center, active[j], j - i)
                        pair_update(inp, out, center, active[j], sampler,
                                    config.negatives, alpha, labels, rng)

    _run_sharded(worker, config.workers)
    return model


BaggedPairHook = Callable[[int, int, int, int], None]  # (center, context, m, m+j)


def train_bagged_embeddings(
    corpus: Corpus,
    config: TrainConfig,
    init: EmbeddingModel | None = None,
    pair_hook: BaggedPairHook | None = None,
) -> EmbeddingModel:
    """Receipt-window skip-gram: every product of receipt m predicts every
    product of receipts m+j, j in [-n, n] \\ {0} (j in [1, n] when directed,
    the default). Products never predict members of their own receipt."""
    model = _starting_model(corpus, config, init)
    directed = config.resolve_directed(True)

    per_user = [[list(r.products) for r in log.receipts] for log in corpus.logs]
    if max((len(rs) for rs in per_user), default=0) < 2:
        raise TrainingDataError("no user has at least 2 receipts")

    total = sum(sum(len(r) for r in rs) for rs in per_user) * config.epochs
    lr = _LearningRate(config, total)
    keep = _keep_probabilities(corpus.vocab, config.subsample_t)
    sampler = NoiseSampler(corpus.vocab.counts)
    labels = np.zeros(config.negatives + 1, dtype=np.float32)
    labels[0] = 1.0
    inp, out = model.input_vectors, model.output_vectors
    n = config.bag_context

    def worker(w: int) -> None:
        rng = _worker_rng(config.seed, w)
        for _ in range(config.epochs):
            for receipts in per_user[w :: config.workers]:
                if keep is None:
                    active = receipts
                else:
                    active = [[p for p in r if rng.random() < keep[p]] for r in receipts]
                alpha = lr.current()
                lr.step(sum(len(r) for r in receipts))
                for m, receipt in enumerate(active):
                    lo = m + 1 if directed else max(0, m - n)
                    for j in range(lo, min(len(active), m + n + 1)):
                        if j == m:
                            continue
                        for center in receipt:
                            for target in active[j]:
                                if pair_hook is not None:
                                    pair_hook(center, target, m, j)
                                pair_update(inp, out, center, target, sampler,
                                            config.negatives, alpha, labels, rng)

    _run_sharded(worker, config.workers)
    return model


def train_user_embeddings(corpus: Corpus, config: TrainConfig) -> UserEmbeddingModel:
    """Joint product/user embedding.

    Per user pass: (a) for every position, the mean of the user's input row
    and the surrounding product input rows (truncated windows average over
    the rows actually present) predicts the center product against product
    noise; (b) the mean of all the user's product input rows predicts the
    user against user noise. Users with no purchases are skipped."""
    if len(corpus.vocab) < 2:
        raise TrainingDataError("vocabulary must contain at least 2 products")
    directed = config.resolve_directed(False)
    prod_model = init_product_model(corpus.vocab, config)
    user_inp, user_out = _init_user_matrices(len(corpus.users), config)

    sequences = {log.user: flat_products(log, config.seed) for log in corpus.logs}
    sequences = {u: s for u, s in sequences.items() if s}
    if not sequences:
        raise TrainingDataError("no user has any purchases")
    # The user-prediction update needs other users to draw as noise.
    train_user_term = len(sequences) > 1

    user_counts = np.zeros(len(corpus.users), dtype=np.int64)
    for u, s in sequences.items():
        user_counts[u] = len(s)

    total = sum(len(s) for s in sequences.values()) * config.epochs
    lr = _LearningRate(config, total)
    keep = _keep_probabilities(corpus.vocab, config.subsample_t)
    prod_sampler = NoiseSampler(corpus.vocab.counts)
    user_sampler = NoiseSampler(user_counts)
    labels = np.zeros(config.negatives + 1, dtype=np.float32)
    labels[0] = 1.0
    inp, out = prod_model.input_vectors, prod_model.output_vectors
    c = config.context
    order = sorted(sequences)

    def worker(w: int) -> None:
        rng = _worker_rng(config.seed, w)
        t_ids = np.empty(config.negatives + 1, dtype=np.int64)
        for _ in range(config.epochs):
            for u in order[w :: config.workers]:
                seq = sequences[u]
                if keep is None:
                    active = seq
                else:
                    active = [p for p in seq if rng.random() < keep[p]]
                alpha = lr.current()
                lr.step(len(seq))
                # (a) averaged context (user included) predicts each center.
                for i, center in enumerate(active):
                    lo = i + 1 if directed else max(0, i - c)
                    window = [active[j] for j in range(lo, min(len(active), i + c + 1)) if j != i]
                    t_ids[0] = center
                    t_ids[1:] = prod_sampler.sample({center}, config.negatives, rng)
                    vbar = (user_inp[u] + inp[window].sum(axis=0)) / np.float32(1 + len(window))
                    rows = out[t_ids]
                    coef = (labels - expit(rows @ vbar)) * alpha
                    np.add.at(out, t_ids, coef[:, None] * vbar)
                    gshare = (coef @ rows) / np.float32(1 + len(window))
                    user_inp[u] += gshare
                    if window:
                        np.add.at(inp, window, gshare)
                # (b) mean of everything bought predicts the user.
                if train_user_term:
                    vbar_n = inp[seq].mean(axis=0, dtype=np.float32)
                    t_ids[0] = u
                    t_ids[1:] = user_sampler.sample({u}, config.negatives, rng)
                    rows = user_out[t_ids]
                    coef = (labels - expit(rows @ vbar_n)) * alpha
                    np.add.at(user_out, t_ids, coef[:, None] * vbar_n)
                    np.add.at(inp, seq, (coef @ rows) / np.float32(len(seq)))

    _run_sharded(worker, config.workers)
    return UserEmbeddingModel(prod_model, corpus.users, user_inp, user_out)


# ---------------------------------------------------------------------------
# Exact softmax (testing utility) and the training objective on a corpus.
# ---------------------------------------------------------------------------

def softmax_prob(model: EmbeddingModel, center: int, target: int) -> float:
    """exp(v_center . v'_target) normalized over every product; O(P*D)."""
    with np.errstate(invalid="ignore", over="ignore"):
        dots = model.output_vectors.astype(np.float64) @ model.input_vectors[center].astype(np.float64)
    if not np.all(np.isfinite(dots)):
        raise ValueError("non-finite dot products")
    dots -= dots.max()
    weights = np.exp(dots)
    return float(weights[target] / weights.sum())


def corpus_ns_objective(model: EmbeddingModel, corpus: Corpus, config: TrainConfig) -> float:
    """Mean negative-sampling objective per training pair for the flat-sequence
    model, with the noise term taken in expectation over the noise distribution
    (deterministic, so epoch-over-epoch ascent can be asserted)."""
    directed = config.resolve_directed(False)
    sampler = NoiseSampler(corpus.vocab.counts)
    noise = sampler.probabilities
    inp = model.input_vectors.astype(np.float64)
    out = model.output_vectors.astype(np.float64)
    c = config.context
    total, pairs = 0.0, 0
    for log in corpus.logs:
        seq = flat_products(log, config.seed)
        for i, center in enumerate(seq):
            lo = i + 1 if directed else max(0, i - c)
            hi = min(len(seq), i + c + 1)
            n_targets = sum(1 for j in range(lo, hi) if j != i)
            if n_targets == 0:
                continue
            dots = out @ inp[center]
            expected_noise = config.negatives * float(noise @ log_sigmoid(-dots))
            for j in range(lo, hi):
                if j == i:
                    continue
                total += float(log_sigmoid(dots[seq[j]])) + expected_noise
                pairs += 1
    if pairs == 0:
        raise TrainingDataError("no trainable pairs")
    return total / pairs


# ---------------------------------------------------------------------------
# Model file I/O.  Text format, line 1 "P D", then one line per token with D
# values at 9 significant digits (exact for float32); output vectors live in
# a parallel ".out" file, user matrices in ".users"/".users.out".
# ---------------------------------------------------------------------------

def _write_matrix(path: str, tokens: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(f"{float(v):.9g}" for v in row) + "\n")


def _read_matrix(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header")
        rows, dim = int(header[0]), int(header[1])
        tokens: list[str] = []
        matrix = np.empty((rows, dim), dtype=np.float32)
        for i in range(rows):
            parts = fh.readline().split()
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: row {i} does not match header {rows} {dim}")
            tokens.append(parts[0])
            matrix[i] = np.array([float(x) for x in parts[1:]], dtype=np.float32)
        if fh.readline().strip():
            raise ValueError(f"{path}: trailing data after {rows} rows")
    return tokens, matrix


def save_model(model: EmbeddingModel, path: str) -> None:
    _write_matrix(path, model.vocab.tokens, model.input_vectors)
    _write_matrix(path + ".out", model.vocab.tokens, model.output_vectors)


def load_model(path: str, config: TrainConfig | None = None) -> EmbeddingModel:
    tokens, inp = _read_matrix(path)
    out_tokens, out = _read_matrix(path + ".out")
    if tokens != out_tokens or inp.shape != out.shape:
        raise ValueError("input and output vector files disagree")
    vocab = Vocabulary(tokens, np.zeros(len(tokens), dtype=np.int64))
    cfg = config if config is not None else TrainConfig(dim=inp.shape[1])
    if cfg.dim != inp.shape[1]:
        cfg = replace(cfg, dim=inp.shape[1])
    return EmbeddingModel(vocab, inp, out, cfg)


def save_user_model(model: UserEmbeddingModel, path: str) -> None:
    save_model(model.products, path)
    _write_matrix(path + ".users", model.users.tokens, model.user_input)
    _write_matrix(path + ".users.out", model.users.tokens, model.user_output)


def load_user_model(path: str, config: TrainConfig | None = None) -> UserEmbeddingModel:
    products = load_model(path, config)
    tokens, user_inp = _read_matrix(path + ".users")
    out_tokens, user_out = _read_matrix(path + ".users.out")
    if tokens != out_tokens or user_inp.shape != user_out.shape:
        raise ValueError("user vector files disagree")
    if user_inp.shape[1] != products.dim:
        raise ValueError("user and product dimensions disagree")
    return UserEmbeddingModel(products, UserTable(tokens), user_inp, user_out)
