"""Command line frontend.

Every subcommand reads one YAML experiment config, writes its CSV artifacts
into the output directory and finishes with ``manifest.json`` (config echo,
seed, library versions, wall time and the SHA-256 of every artifact).

Exit status is 0 on success, 1 on a runtime failure and 2 on an invalid
config; failures print ``{"category", "field", "message"}`` as JSON on
standard error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from typing import List, Literal, Optional

import numpy as np
import scipy
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .clustering import Partition, SoftPartition
from .convtrain import MaskedConvNet, TrainConfig, train
from .datasim import (
    Dataset,
    SimulizeConfig,
    block_source_classes,
    blurred_two_class,
    concat_classes,
    load_dataset,
    planted_two_class,
    save_dataset,
    simulize,
)
from .errors import ConfigError, FeatnetError
from .evaluation import CVPlan, PipelineSpec, cross_validate, grid_search_s
from .hierarchy import ClustererSpec, build_hierarchy, pool_dataset
from .io import save_model, write_hierarchy, write_loss_trace, write_matrix_csv, write_network, write_partition
from .laplacian import DEFAULT_S_GRID
from .learners import (
    SmoothnessClassifier,
    SvmBagNetwork,
    multiscale_stack,
)
from .network import (
    column_distances,
    correlation_network,
    gaussian_kernel_network,
    load_prior_network,
)

SUBCOMMANDS = ("build-network", "cluster", "hierarchy", "pool", "svm-bag", "smoothness",
               "multiscale", "regularize", "conv-train", "simulize", "cv")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeneratorConfig(_Strict):
    kind: Literal["planted", "blurred", "block-source"]
    p: int = Field(200, gt=0)
    n: int = Field(100, gt=1)
    blocks: List[int] | int = 10
    noise_sigma: float = Field(1.0, ge=0)
    shift: float = 0.1
    contrast: float = 0.05
    loading: float = 0.5
    s0: float = -1.0
    eps_rel: float = Field(0.1, gt=0)
    amplitude: float = 0.3
    block_size: int = Field(25, gt=0)
    rho: float = Field(0.5, ge=0, lt=1)


class DataConfig(_Strict):
    matrix: Optional[str] = None
    labels: Optional[str] = None
    label_column: Optional[str] = None
    generator: Optional[GeneratorConfig] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.matrix is None) == (self.generator is None):
            raise ValueError("give exactly one of 'matrix' or 'generator'")
        return self


class NetworkConfig(_Strict):
    kind: Literal["correlation", "kernel", "prior"] = "correlation"
    mode: Literal["signed", "absolute"] = "absolute"
    on_constant: Literal["raise", "isolate", "drop"] = "isolate"
    threshold: Optional[float] = Field(None, ge=0)
    sigma: float = Field(1.0, gt=0)
    prior: Optional[str] = None


class HierarchyConfig(_Strict):
    sizes: List[int] = Field(default_factory=lambda: [20])
    clusterer: Literal["ward", "spectral", "fuzzy", "community"] = "ward"
    m: float = Field(2.0, gt=1)
    restarts: int = Field(20, gt=0)


class LearnerConfig(_Strict):
    C: float = Field(1.0, gt=0)
    gamma: Optional[float] = Field(None, gt=0)
    laplacian_kind: Literal["standard", "positive", "auto"] = "positive"
    normalize_by_norm: bool = False
    n_clusters: Optional[int] = Field(None, gt=0)


class PipelineConfig(_Strict):
    name: Literal["linear-svm", "rbf-svm", "constant", "random", "1nn", "pool", "svm-bag",
                  "smoothness", "multiscale-smoothness", "regularize", "conv-train"] = "pool"
    depth: Optional[int] = Field(None, ge=0)
    s: float = 0.0
    base: Literal["linear-svm", "rbf-svm"] = "rbf-svm"


class CVConfig(_Strict):
    k: int = Field(10, ge=2)
    stratified: bool = True


class RegularizeConfig(_Strict):
    s_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_S_GRID), min_length=1)
    eps: Optional[float] = Field(None, gt=0)
    kind: Literal["standard", "positive"] = "positive"
    base: Literal["linear-svm", "rbf-svm"] = "rbf-svm"


class SimulizeSection(_Strict):
    b: float = Field(0.3, ge=0, le=1)
    n_per_class: int = Field(300, gt=0)
    p_sub: Optional[int] = Field(200, gt=0)
    jitter: float = Field(1e-8, gt=0)


class TrainSection(_Strict):
    alpha: float = Field(0.1, gt=0)
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(0, ge=0)
    init_scale: float = Field(1.0, gt=0)
    loss: Literal["squared", "logistic"] = "logistic"


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: int = Field(1, ge=1)
    out: Optional[str] = None
    data: DataConfig
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    hierarchy: HierarchyConfig = Field(default_factory=HierarchyConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    cv: CVConfig = Field(default_factory=CVConfig)
    regularize: RegularizeConfig = Field(default_factory=RegularizeConfig)
    simulize: SimulizeSection = Field(default_factory=SimulizeSection)
    train: TrainSection = Field(default_factory=TrainSection)


def load_config(path, seed=None, out=None, threads=None) -> ExperimentConfig:
    """Parse and validate a YAML config; command line flags take precedence."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key, value in (("seed", seed), ("out", out), ("threads", threads)):
        if value is not None:
            raw[key] = value
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        field = ".".join(str(part) for part in err["loc"]) or "config"
        raise ConfigError(field, err["msg"]) from None


# ---------------------------------------------------------------------------
# building blocks


def _seed(cfg, salt):
    return int(np.random.SeedSequence([cfg.seed, salt]).generate_state(1)[0])


def _dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    if d.generator is None:
        for name in ("matrix", "labels"):
            path = getattr(d, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"data.{name}", f"no such file {path!r}")
        return load_dataset(d.matrix, d.labels, d.label_column)
    g = d.generator
    seed = _seed(cfg, 1)
    if g.kind == "planted":
        return planted_two_class(g.p, g.blocks, g.noise_sigma, g.n, seed, g.shift, g.contrast,
                                 g.loading)
    if g.kind == "blurred":
        return blurred_two_class(g.p, g.n, seed, g.s0, g.eps_rel, g.amplitude)
    X_A, X_B = block_source_classes(g.p, g.n, seed, g.block_size, g.rho)
    return Dataset(np.vstack([X_A, X_B]), np.repeat([1, -1], g.n))


def _network(cfg, ds):
    n = cfg.network
    if n.kind == "correlation":
        return correlation_network(ds.X, n.mode, n.on_constant, n.threshold, ds.feature_ids)
    if n.kind == "kernel":
        return gaussian_kernel_network(column_distances(ds.X), n.sigma, n.threshold,
                                       ds.feature_ids)
    if n.prior is None:
        raise ConfigError("network.prior", "prior networks need an edge list path")
    if not os.path.exists(n.prior):
        raise ConfigError("network.prior", f"no such file {n.prior!r}")
    return load_prior_network(n.prior, ds.p, ds.feature_ids)


def _clusterer(cfg):
    h = cfg.hierarchy
    return ClustererSpec(h.clusterer, _seed(cfg, 2), h.m, h.restarts)


def _hierarchy(cfg, ds):
    return build_hierarchy(_network(cfg, ds), cfg.hierarchy.sizes, _clusterer(cfg))


def _pipeline_spec(cfg):
    pl, le, h = cfg.pipeline, cfg.learner, cfg.hierarchy
    params = {"C": le.C, "sizes": h.sizes, "clusterer": h.clusterer, "m": h.m,
              "network_mode": cfg.network.mode}
    if le.gamma is not None:
        params["gamma"] = le.gamma
    if pl.name == "pool":
        params["depth"] = pl.depth
    elif pl.name == "smoothness":
        params["laplacian_kind"] = "positive" if le.laplacian_kind == "auto" else le.laplacian_kind
        params["normalize_by_norm"] = le.normalize_by_norm
    elif pl.name == "multiscale-smoothness":
        params["laplacian_kind"] = le.laplacian_kind
        params["n_clusters"] = le.n_clusters
    elif pl.name == "regularize":
        params.update(s=pl.s, eps=cfg.regularize.eps, base=pl.base,
                      laplacian_kind=cfg.regularize.kind)
    elif pl.name == "conv-train":
        t = cfg.train
        params.update(alpha=t.alpha, epochs=t.epochs, batch_size=t.batch_size,
                      init_scale=t.init_scale)
    return PipelineSpec(pl.name, params)


# ---------------------------------------------------------------------------
# subcommands; each returns the list of artifact paths it wrote


def _cmd_build_network(cfg, ds, out):
    path = os.path.join(out, "network.csv")
    write_network(path, _network(cfg, ds))
    return [path]


def _cmd_cluster(cfg, ds, out):
    G = _network(cfg, ds)
    C = _clusterer(cfg).cluster(G, cfg.hierarchy.sizes[0])
    path = os.path.join(out, "partition.csv")
    write_partition(path, C, G.node_ids)
    return [path]


def _cmd_hierarchy(cfg, ds, out):
    return write_hierarchy(os.path.join(out, "hierarchy"), _hierarchy(cfg, ds))


def _cmd_pool(cfg, ds, out):
    H = _hierarchy(cfg, ds)
    depth = H.depth if cfg.pipeline.depth is None else cfg.pipeline.depth
    pooled = Dataset(pool_dataset(ds.X, H, depth), ds.y, H.layers[depth].node_ids, ds.sample_ids)
    paths = write_hierarchy(os.path.join(out, "hierarchy"), H)
    m, lab = os.path.join(out, "pooled.csv"), os.path.join(out, "labels.csv")
    save_dataset(pooled, m, lab)
    return paths + [m, lab]


def _cmd_svm_bag(cfg, ds, out):
    H = _hierarchy(cfg, ds)
    parts = [C.harden() if isinstance(C, SoftPartition) else C for C in H.partitions]
    net = SvmBagNetwork(parts, cfg.learner.C).fit(ds.X, ds.y)
    paths = []
    for k in range(1, len(parts) + 1):
        path = os.path.join(out, f"svm_bag.layer_{k}.csv")
        write_matrix_csv(path, net.features(ds.X, k), row_ids=ds.sample_ids,
                         row_label="sample_id")
        paths.append(path)
    path = os.path.join(out, "final.model")
    save_model(path, net.final)
    return paths + [path]


def _cmd_smoothness(cfg, ds, out):
    kind = "positive" if cfg.learner.laplacian_kind == "auto" else cfg.learner.laplacian_kind
    clf = SmoothnessClassifier(kind, cfg.learner.C, cfg.learner.normalize_by_norm)
    clf.fit(ds.X, ds.y)
    F = np.column_stack([clf.phi(ds.X), clf.decision_function(ds.X)])
    path = os.path.join(out, "smoothness.csv")
    write_matrix_csv(path, F, ["phi_A", "phi_B", "score"], ds.sample_ids, "sample_id")
    mpath = os.path.join(out, "discriminant.model")
    save_model(mpath, clf.model)
    return [path, mpath]


def _cmd_multiscale(cfg, ds, out):
    H = _hierarchy(cfg, ds)
    F = multiscale_stack(ds.X, H, cfg.learner.laplacian_kind)
    cols = [f"layer{k + 1}_{j}" for k, C in enumerate(H.partitions) for j in range(C.d)]
    path = os.path.join(out, "multiscale.csv")
    write_matrix_csv(path, F, cols, ds.sample_ids, "sample_id")
    return [path]


def _cmd_regularize(cfg, ds, out):
    r = cfg.regularize
    plan = CVPlan(cfg.cv.k, cfg.cv.stratified, _seed(cfg, 3))
    res = grid_search_s(ds, r.s_grid, r.eps, plan, r.base, r.kind, cfg.learner.C,
                        cfg.learner.gamma, cfg.threads)
    path = os.path.join(out, "grid.csv")
    with open(path, "w") as fh:
        fh.write("s,balanced_accuracy,balanced_accuracy_std,auroc,selected\n")
        for s, rep in res.reports.items():
            fh.write(f"{s!r},{rep.balanced_accuracy!r},{rep.balanced_accuracy_std!r},"
                     f"{rep.auroc!r},{int(s == res.best_s)}\n")
    print(f"selected s = {res.best_s:g}")
    return [path]


def _cmd_conv_train(cfg, ds, out):
    H = _hierarchy(cfg, ds)
    t = cfg.train
    parts = list(H.partitions)
    acts = ["sigmoid"] * len(parts)
    y = ds.y
    if t.loss == "squared":
        y = (ds.y + 1) / 2.0
    if H.layers[-1].p != 1:
        parts.append(Partition(np.zeros(H.layers[-1].p, dtype=int), 1))
        acts.append("sigmoid")
    tc = TrainConfig(t.alpha, t.epochs, t.batch_size, _seed(cfg, 4), t.init_scale)
    net = MaskedConvNet.from_partitions(parts, tc.seed, t.init_scale, acts, t.loss)
    mu, sd = ds.X.mean(axis=0), ds.X.std(axis=0)
    X = (ds.X - mu) / np.where(sd > 0, sd, 1.0)
    net, trace = train(net, X, y, tc)
    tpath, mpath = os.path.join(out, "loss_trace.csv"), os.path.join(out, "convnet.model")
    write_loss_trace(tpath, trace)
    save_model(mpath, net)
    return [tpath, mpath]


def _cmd_simulize(cfg, ds, out):
    s = cfg.simulize
    sc = SimulizeConfig(s.b, s.n_per_class, s.p_sub, _seed(cfg, 5), s.jitter)
    if sc.p_sub is not None and sc.p_sub > ds.p:
        raise ConfigError("simulize.p_sub", f"exceeds the {ds.p} available features")
    one, two = simulize(ds.class_rows(1), ds.class_rows(-1), sc)
    merged = concat_classes(one, two)
    m, lab = os.path.join(out, "simulized.csv"), os.path.join(out, "simulized_labels.csv")
    save_dataset(merged, m, lab)
    return [m, lab]


def _cmd_cv(cfg, ds, out):
    plan = CVPlan(cfg.cv.k, cfg.cv.stratified, _seed(cfg, 3))
    report = cross_validate(ds, _pipeline_spec(cfg), plan, cfg.threads)
    path = os.path.join(out, "metrics.csv")
    report.to_csv(path)
    print(report.table())
    return [path]


COMMANDS = {
    "build-network": _cmd_build_network,
    "cluster": _cmd_cluster,
    "hierarchy": _cmd_hierarchy,
    "pool": _cmd_pool,
    "svm-bag": _cmd_svm_bag,
    "smoothness": _cmd_smoothness,
    "multiscale": _cmd_multiscale,
    "regularize": _cmd_regularize,
    "conv-train": _cmd_conv_train,
    "simulize": _cmd_simulize,
    "cv": _cmd_cv,
}


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run(subcommand, cfg: ExperimentConfig, out=None):
    """Execute one subcommand and write its manifest; returns the manifest."""
    out = out or cfg.out or "."
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()
    ds = _dataset(cfg)
    paths = COMMANDS[subcommand](cfg, ds, out)
    manifest = {
        "subcommand": subcommand,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "versions": {"featnet": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_seconds": time.perf_counter() - started,
        "artifacts": {os.path.relpath(p, out): sha256(p) for p in paths},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _fail(status, category, field, message):
    json.dump({"category": category, "field": field, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="featnet", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker threads for folds and grid points")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out, args.threads)
        run(args.subcommand, cfg)
    except ConfigError as exc:
        return _fail(2, exc.category, exc.field, str(exc))
    except FeatnetError as exc:
        return _fail(1, exc.category, None, str(exc))
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        return _fail(1, "runtime", None, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
