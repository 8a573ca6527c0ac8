"""Population training loop, model selection, synthesis and run artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import TrainingError
from .evolution import RISK_FLOOR, Individual, crowding_distance, non_dominated_sort, select_survivors
from .gan import (
    DISC_HIDDEN,
    GEN_HIDDEN,
    GP_COEF,
    GUMBEL_TAU,
    NOISE_DIM,
    PAC,
    AdamConfig,
    AdamState,
    Discriminator,
    Generator,
    adam_step,
    build_generator,
    clone_generator,
    condition_targets,
    discriminator_loss,
    generate,
)
from .metrics import EvaluationReport, MetricSpec, Reference, evaluation_subsample, fast_objectives, improvement_score
from .schema import Table
from .transform import MAX_MODES, CondSampler, DataTransformer
from .variation import (
    BUFFER_CAPACITY,
    EPSILON,
    GAMMA,
    Q_BATCH,
    QFunction,
    ReplayBuffer,
    VariationContext,
    smart_variation,
    train_q,
)

# per-step training log; written to <run>/train.log, echoed only if a handler is attached
run_log = logging.getLogger("evotab.run")
run_log.propagate = False

STREAMS = ("data", "noise", "gumbel", "rl", "eval")
SELECTIONS = ("improvement", "max_utility")


@dataclass
class TrainConfig:
    population_size: int = 4
    select_every: int = 8  # training steps between survivor selections
    epochs: int = 300
    batch_size: int = 500
    disc_steps: int = 1
    epsilon: float = EPSILON
    improvement_lambda: float = metrics.IMPROVEMENT_LAMBDA
    risk_floor: float = RISK_FLOOR
    n_eval: int = metrics.N_EVAL
    gen_adam: AdamConfig = field(default_factory=AdamConfig)
    disc_adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    gamma: float = GAMMA
    buffer_capacity: int = BUFFER_CAPACITY
    q_batch: int = Q_BATCH
    noise_dim: int = NOISE_DIM
    gen_hidden: tuple = GEN_HIDDEN
    disc_hidden: tuple = DISC_HIDDEN
    pac: int = PAC
    gp_coef: float = GP_COEF
    max_modes: int = MAX_MODES

    def __post_init__(self):
        if isinstance(self.gen_adam, dict):
            self.gen_adam = AdamConfig(**self.gen_adam)
        if isinstance(self.disc_adam, dict):
            self.disc_adam = AdamConfig(**self.disc_adam)
        self.gen_hidden = tuple(self.gen_hidden)
        self.disc_hidden = tuple(self.disc_hidden)
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.select_every < 1:
            raise ValueError("select_every must be >= 1")
        if self.epochs < 0 or self.disc_steps < 0:
            raise ValueError("epochs and disc_steps must be non-negative")
        if self.batch_size < 1 or self.batch_size % self.pac or self.batch_size % self.population_size:
            raise ValueError(
                f"batch_size {self.batch_size} must be divisible by pac={self.pac} "
                f"and population_size={self.population_size}"
            )
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.improvement_lambda <= 0:
            raise ValueError("improvement_lambda must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen_hidden"] = list(self.gen_hidden)
        d["disc_hidden"] = list(self.disc_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Incumbent:
    generator: Generator
    f_u: float
    f_r: float
    epoch: int
    uid: int


@dataclass
class CurveRecord:
    epoch: int
    f_u: float
    f_r: float
    improvement: float


@dataclass
class RunState:
    config: TrainConfig
    transformer: DataTransformer
    cond: CondSampler
    population: list
    disc: Discriminator
    disc_adam: AdamState
    q: QFunction
    buffer: ReplayBuffer
    rngs: dict
    incumbent: Incumbent | None = None
    max_utility: Incumbent | None = None
    epoch: int = 0
    step: int = 0
    next_uid: int = 0
    curves: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def new_uid(self) -> int:
        self.next_uid += 1
        return self.next_uid


def make_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    out = {}
    for name, ss in zip(STREAMS, children):
        if name in ("noise", "gumbel"):
            out[name] = torch.Generator().manual_seed(int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)))
        else:
            out[name] = np.random.default_rng(ss)
    return out


def rng_states(rngs: dict) -> dict:
    return {k: (v.get_state() if isinstance(v, torch.Generator) else v.bit_generator.state) for k, v in rngs.items()}


def sample_table(gen: Generator, transformer: DataTransformer, cond: CondSampler, n: int, seed: int) -> Table:
    """Draw ``n`` hard-decoded rows; conditions follow the raw category frequencies."""
    rng = np.random.default_rng(seed)
    tg = torch.Generator().manual_seed(int(seed))
    c, _ = cond.sample_original_condvec(n, rng)
    z = torch.randn(n, gen.noise_dim, generator=tg)
    with torch.no_grad():
        soft = generate(gen, z, torch.as_tensor(c, dtype=torch.float32), tg)
    return transformer.decode(soft.numpy())


def _sampler(gen, transformer, cond):
    return lambda n, seed: sample_table(gen, transformer, cond, n, seed)


def _param_norms(module) -> dict:
    return {n: float(p.detach().norm()) for n, p in module.named_parameters()}


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def init_state(original: Table, cfg: TrainConfig) -> RunState:
    torch.manual_seed(cfg.seed)
    rngs = make_streams(cfg.seed)
    transformer = DataTransformer.fit(original, cfg.max_modes, seed=cfg.seed)
    cond = CondSampler(original)
    pop = []
    for i in range(cfg.population_size):
        gen = build_generator(transformer, cfg.noise_dim, cfg.gen_hidden, GUMBEL_TAU)
        pop.append(Individual(gen, AdamState(), uid=i))
    disc = Discriminator(transformer.output_dim + transformer.cond_dim, cfg.disc_hidden, cfg.pac)
    q = QFunction()
    return RunState(
        cfg, transformer, cond, pop, disc, AdamState(), q, ReplayBuffer(cfg.buffer_capacity), rngs,
        next_uid=cfg.population_size - 1,
    )


def discriminator_step(state: RunState, encoded: torch.Tensor) -> dict:
    cfg, cond = state.config, state.cond
    n, mu = cfg.batch_size, cfg.population_size
    data = state.rngs["data"]
    c1, chosen = cond.sample_condvec(n, data)
    perm = data.permutation(n)
    idx, c2 = cond.sample_real_matching(chosen[perm], data)
    real = torch.cat([encoded[idx], torch.as_tensor(c2, dtype=torch.float32)], dim=1)
    c1 = torch.as_tensor(c1, dtype=torch.float32)
    z = torch.randn(n, cfg.noise_dim, generator=state.rngs["noise"])
    per = n // mu
    with torch.no_grad():
        fake = torch.cat(
            [generate(ind.generator, z[j * per:(j + 1) * per], c1[j * per:(j + 1) * per], state.rngs["gumbel"])
             for j, ind in enumerate(state.population)]
        )
    fake = torch.cat([fake, c1], dim=1)
    loss, parts = discriminator_loss(state.disc, real, fake, cfg.gp_coef, generator=state.rngs["noise"])
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite discriminator loss at step {state.step}: {parts}; "
            f"parameter norms {_param_norms(state.disc)}"
        )
    params = list(state.disc.parameters())
    grads = torch.autograd.grad(loss, params)
    adam_step(params, grads, cfg.disc_adam, state.disc_adam)
    return parts


def _evaluator(state: RunState, original: Table, spec: MetricSpec, seed: int):
    cfg = state.config
    reference = Reference(evaluation_subsample(original, cfg.n_eval, seed), spec)

    def evaluate_gen(gen):
        return fast_objectives(original, _sampler(gen, state.transformer, state.cond), cfg.n_eval, seed, spec, reference)

    return evaluate_gen


def training_step(state: RunState, original: Table, spec: MetricSpec, encoded: torch.Tensor) -> dict:
    """One iteration: discriminator updates, one child per generator, selection, Q update."""
    cfg = state.config
    state.step += 1
    d_parts = [discriminator_step(state, encoded) for _ in range(cfg.disc_steps)]
    evaluate_gen = _evaluator(state, original, spec, _seed_from(state.rngs["eval"]))
    # parents and children are measured on the same subsample and synthetic seed
    for ind in state.population:
        ind.f_u, ind.f_r = evaluate_gen(ind.generator)
    children = []
    for parent in state.population:
        c1, chosen = state.cond.sample_condvec(cfg.batch_size, state.rngs["data"])
        ctx = VariationContext(
            z=torch.randn(cfg.batch_size, cfg.noise_dim, generator=state.rngs["noise"]),
            c1=torch.as_tensor(c1, dtype=torch.float32),
            targets=condition_targets(state.transformer, chosen),
            adam=cfg.gen_adam,
            evaluate=evaluate_gen,
            gumbel=state.rngs["gumbel"],
        )
        try:
            child = smart_variation(state.disc, parent, ctx, state.q, state.buffer, cfg.epsilon, state.rngs["rl"], state.new_uid())
        except TrainingError as exc:
            raise TrainingError(f"step {state.step}, parent {parent.uid}: {exc}; discriminator losses {d_parts}") from exc
        children.append(child)
    selected = state.step % cfg.select_every == 0
    if selected:
        state.population = select_survivors(state.population, children, cfg.risk_floor)
    else:
        state.population = children
    q_trained = train_q(state.q, state.buffer, cfg.q_batch, cfg.gamma, state.rngs["rl"])
    actions = [c.action for c in children]
    state.actions.append(actions)
    return {
        "step": state.step,
        "actions": actions,
        "rewards": [c.reward for c in children],
        "selected": selected,
        "q_trained": q_trained,
        "disc": d_parts[-1] if d_parts else {},
    }


def _full_reference(original, spec):
    return Reference(original, spec)


def epoch_review(state: RunState, original: Table, spec: MetricSpec, reference: Reference) -> CurveRecord:
    """Full-size evaluation of the best-utility survivor and incumbent update."""
    cfg = state.config
    best = max(range(len(state.population)), key=lambda i: (state.population[i].f_u, -i))
    cand = state.population[best]
    seed = _seed_from(state.rngs["eval"])
    f_u, f_r = fast_objectives(
        original, _sampler(cand.generator, state.transformer, state.cond), len(original), seed, spec, reference
    )
    snapshot = Incumbent(clone_generator(cand.generator), f_u, f_r, state.epoch, cand.uid)
    if state.max_utility is None or f_u > state.max_utility.f_u:
        state.max_utility = snapshot
    if state.incumbent is None:
        score = math.nan
        state.incumbent = snapshot
    else:
        score = improvement_score((f_u, f_r), (state.incumbent.f_u, state.incumbent.f_r), cfg.improvement_lambda)
        if score > 0:
            state.incumbent = snapshot
    rec = CurveRecord(state.epoch, f_u, f_r, score)
    state.curves.append(rec)
    return rec


def format_curves(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "f_u", "f_r", "improvement"])
    for r in records:
        w.writerow([r.epoch, repr(float(r.f_u)), repr(float(r.f_r)), repr(float(r.improvement))])
    return buf.getvalue()


def _generator_entries(state: RunState) -> dict:
    entries = {}
    if state.incumbent is not None:
        inc = state.incumbent
        entries["incumbent"] = (inc.generator, inc.f_u, inc.f_r, {"epoch": inc.epoch, "uid": inc.uid})
    if state.max_utility is not None:
        mx = state.max_utility
        entries["max_utility"] = (mx.generator, mx.f_u, mx.f_r, {"epoch": mx.epoch, "uid": mx.uid})
    for i, ind in enumerate(state.population):
        entries[f"pop{i}"] = (
            ind.generator, ind.f_u, ind.f_r, {"uid": ind.uid, "rank": ind.rank, "crowd": _json_float(ind.crowd)}
        )
    return entries


def _json_float(x):
    if x is None or math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def write_checkpoint(state: RunState, path, population: bool = True) -> Path:
    entries = _generator_entries(state)
    if not population:
        entries = {k: v for k, v in entries.items() if not k.startswith("pop")}
    labels = [k for k in entries if k.startswith("pop")]
    adam = {"disc": state.disc_adam, "q": state.q.adam_state}
    if population:
        adam.update({f"pop{i}": ind.adam_state for i, ind in enumerate(state.population)})
    return save_checkpoint(
        path,
        state.transformer,
        state.cond.category_frequencies(),
        entries,
        labels,
        state.config.to_dict(),
        {"epoch": state.epoch, "step": state.step, "next_uid": state.next_uid},
        extra_modules={"disc": state.disc, "q": state.q},
        adam_states=adam,
        rng_states=rng_states(state.rngs),
        extra={"buffer": state.buffer.stats()},
    )


def population_summary(state: RunState, original: Table, spec: MetricSpec, reference: Reference) -> list[dict]:
    """Full-size objectives, NSGA rank/crowding and Improvement Score of every final generator."""
    cfg = state.config
    seed = _seed_from(state.rngs["eval"])
    rows = []
    points = []
    for i, ind in enumerate(state.population):
        f_u, f_r = fast_objectives(
            original, _sampler(ind.generator, state.transformer, state.cond), len(original), seed, spec, reference
        )
        points.append(Individual(ind.generator, None, f_u, f_r, uid=ind.uid))
    fronts = non_dominated_sort(points, cfg.risk_floor)
    for front in fronts:
        crowding_distance([points[i] for i in front], cfg.risk_floor)
    inc = state.incumbent
    for i, p in enumerate(points):
        rows.append({
            "index": i,
            "uid": p.uid,
            "checkpoint_label": f"pop{i}",
            "f_u": p.f_u,
            "f_r": p.f_r,
            "rank": p.rank,
            "crowd": _json_float(p.crowd),
            "improvement_score": improvement_score((p.f_u, p.f_r), (inc.f_u, inc.f_r), cfg.improvement_lambda)
            if inc else None,
        })
    return rows


def train(original: Table, cfg: TrainConfig, spec: MetricSpec, out_dir=None) -> RunState:
    """Run the full training loop; artifacts go to ``out_dir`` when given."""
    spec.validate(original.schema)
    if len(original) < cfg.n_eval:
        raise ValueError(f"table has {len(original)} rows, fewer than n_eval={cfg.n_eval}")
    out = Path(out_dir) if out_dir is not None else None
    handler = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps({"train": cfg.to_dict(), "metrics": spec.to_dict()}, indent=2) + "\n"
        )
        handler = logging.FileHandler(out / "train.log", mode="w")
        handler.setFormatter(logging.Formatter("%(message)s"))
        run_log.addHandler(handler)
        run_log.setLevel(logging.INFO)
    try:
        state = init_state(original, cfg)
        encoded = torch.as_tensor(state.transformer.encode(original, state.rngs["data"]), dtype=torch.float32)
        reference = _full_reference(original, spec)
        per_epoch = math.ceil(len(original) / cfg.batch_size)
        run_log.info("start rows=%d encoded_dim=%d cond_dim=%d iterations_per_epoch=%d",
                 len(original), state.transformer.output_dim, state.transformer.cond_dim, per_epoch)

        # epoch 0: the untrained population, measured on a subsample to pick the first incumbent
        evaluate_gen = _evaluator(state, original, spec, _seed_from(state.rngs["eval"]))
        for ind in state.population:
            ind.f_u, ind.f_r = evaluate_gen(ind.generator)
        _record(state, original, spec, reference, out)

        for epoch in range(1, cfg.epochs + 1):
            state.epoch = epoch
            for _ in range(per_epoch):
                info = training_step(state, original, spec, encoded)
                run_log.info("step=%d actions=%s rewards=%s selected=%d q=%d d_cls=%.6f d_gp=%.6f",
                         info["step"], ",".join(map(str, info["actions"])), ",".join(map(str, info["rewards"])),
                         info["selected"], info["q_trained"], info["disc"].get("classification", math.nan),
                         info["disc"].get("gradient_penalty", math.nan))
            _record(state, original, spec, reference, out)

        if out is not None:
            write_checkpoint(state, out / "checkpoints" / "final.ckpt")
            (out / "population.json").write_text(
                json.dumps(population_summary(state, original, spec, reference), indent=2) + "\n"
            )
            report = {"train": cfg.to_dict()}
            for policy in SELECTIONS:
                syn = synthesize(state, len(original), cfg.seed, policy)
                report[policy] = json.loads(metrics.evaluate(original, syn, spec).to_json())
            (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        return state
    finally:
        if handler is not None:
            run_log.removeHandler(handler)
            handler.close()


def _record(state, original, spec, reference, out) -> None:
    prev = state.incumbent
    rec = epoch_review(state, original, spec, reference)
    run_log.info("epoch=%d f_u=%.6f f_r=%.6f improvement=%s", rec.epoch, rec.f_u, rec.f_r, rec.improvement)
    if out is None:
        return
    (out / "curves.csv").write_text(format_curves(state.curves))
    if state.incumbent is not prev:
        path = out / "checkpoints" / f"incumbent-epoch{state.epoch:04d}.ckpt"
        write_checkpoint(state, path, population=False)
        state.checkpoints.append(str(path))


def _pick(source, selection) -> tuple[Generator, DataTransformer, CondSampler]:
    if isinstance(source, (str, Path)):
        source = load_checkpoint(source)
    if isinstance(source, RunState):
        if selection == "improvement":
            gen = source.incumbent.generator if source.incumbent else None
        elif selection == "max_utility":
            gen = source.max_utility.generator if source.max_utility else None
        else:
            k = _index(selection, len(source.population))
            gen = source.population[k].generator
        if gen is None:
            raise ValueError(f"run state holds no {selection!r} generator yet")
        return gen, source.transformer, source.cond
    if isinstance(source, Checkpoint):
        if selection in SELECTIONS:
            if selection == "improvement":
                label = "incumbent"
            else:
                label = "max_utility"
            if label not in source.generators:
                raise ValueError(f"checkpoint holds no {label!r} generator")
        else:
            label = source.population[_index(selection, len(source.population))]
        return source.generators[label].generator, source.transformer, source.cond_sampler()
    raise TypeError(f"cannot synthesize from {type(source).__name__}")


def _index(selection, size: int) -> int:
    try:
        k = int(selection)
    except (TypeError, ValueError):
        raise ValueError(f"selection must be one of {SELECTIONS} or a population index, got {selection!r}") from None
    if not 0 <= k < size:
        raise ValueError(f"population index {k} out of range for population of {size}")
    return k


def synthesize(source, n_rows: int, seed: int = 0, selection="improvement") -> Table:
    """Synthetic table from a RunState, Checkpoint or checkpoint path.

    ``selection`` is "improvement" (incumbent), "max_utility", or an integer
    index into the final population.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    gen, transformer, cond = _pick(source, selection)
    return sample_table(gen, transformer, cond, n_rows, seed)


def evaluate(original: Table, synthetic: Table, spec: MetricSpec) -> EvaluationReport:
    return metrics.evaluate(original, synthetic, spec)


def read_curves(path) -> list[CurveRecord]:
    with open(path, newline="") as fh:
        return [
            CurveRecord(int(r["epoch"]), float(r["f_u"]), float(r["f_r"]), float(r["improvement"]))
            for r in csv.DictReader(fh)
        ]
