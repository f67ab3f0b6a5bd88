from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from agu.models.gnn import Architecture
from agu.settings import get_settings


def _default(name: str):
    return lambda: getattr(get_settings(), name)


class TrainConfig(BaseModel):
    """
    Schema for initial training and for the retrain oracle.
    """
    lr: float = Field(default_factory=_default("lr"), gt=0, description="Adam learning rate")
    epochs: int = Field(default_factory=_default("train_epochs"), ge=0, description="Optimizer steps")
    weight_decay: float = Field(default_factory=_default("weight_decay"), ge=0)
    seed: int = Field(default=0, description="Initialisation and dropout seed")
    dropout: float = Field(default_factory=_default("dropout"), ge=0, lt=1, description="Training-only dropout rate")


class FilterConfig(BaseModel):
    """
    Schema for affected-neighbor identification and selection.
    """
    theta: float = Field(default_factory=_default("theta"), ge=0, description="Marginal-neighbor keep threshold")
    k_ans_fraction: float = Field(default_factory=_default("k_ans"), gt=0, le=1,
                                  description="Fraction of the pool kept as highly affected neighbors")
    probe_seed: int = Field(default=0, description="Base seed for random probe models")
    probe_seeds: int = Field(default=3, ge=1, description="Number of probe models that must agree")
    probe_tolerance: float = Field(default_factory=_default("probe_tolerance"), ge=0)
    strict_probe: bool = Field(default=False, description="Raise instead of warn when probe models disagree")
    use_marginal_filter: bool = Field(default=True, description="Filter marginal neighbors of degree-based models")
    use_selection: bool = Field(default=True, description="Keep only the top-k_ans most affected neighbors")


class UnlearnConfig(BaseModel):
    """
    Schema for one unlearning run.
    """
    alpha: float = Field(default_factory=_default("alpha"), ge=0, description="Weight of the edge term in node unlearning")
    epochs: int = Field(default_factory=_default("unlearn_epochs"), ge=1, le=1000)
    lr: float = Field(default_factory=_default("unlearn_lr"), gt=0)
    kl_cap: float = Field(default_factory=_default("kl_cap"), gt=0)
    random_pair_count: Optional[int] = Field(default=None, ge=1,
                                             description="Comparison pairs for the random-pair baseline; defaults to |deleted edges|")
    seed: int = Field(default=0)
    use_homophily_pairs: bool = Field(default=True, description="Draw comparison pairs from common neighbors")
    use_edge_term: bool = Field(default=True)
    use_feature_term: bool = Field(default=True)
    saturate_feature_term: bool = Field(
        default=True, description="Stop pushing a node once its prediction is as far from y′ as a uniform guess"
    )
    use_neighbor_term: bool = Field(default=True)
    filter: FilterConfig = Field(default_factory=FilterConfig)


class SbmSpec(BaseModel):
    """
    Schema for a planted-partition synthetic graph.
    """
    n: int = Field(default=300, ge=2)
    blocks: int = Field(default=3, ge=1)
    p_in: float = Field(default=0.1, ge=0, le=1)
    p_out: float = Field(default=0.01, ge=0, le=1)
    d: int = Field(default=16, ge=1, description="Feature dimension, at least the block count")
    signal: float = Field(default=1.0, ge=0, description="Scale of the one-hot block signal")
    seed: int = Field(default=0)
    train_fraction: float = Field(default=0.8, gt=0, lt=1)

    @model_validator(mode="after")
    def check_shape(self) -> "SbmSpec":
        if self.p_in <= self.p_out:
            raise ValueError("p_in must exceed p_out")
        if self.n % self.blocks:
            raise ValueError("n must be divisible by the block count")
        if self.d < self.blocks:
            raise ValueError("d must be at least the block count")
        return self


class TaskKind(str, Enum):
    NODE = "node"
    EDGE = "edge"
    FEATURE = "feature"
    ATTACK = "attack"


class Method(str, Enum):
    AGU = "agu"
    RETRAIN = "retrain"
    REVERSE_CE = "reverse_ce"
    DEC_BASELINE = "dec_baseline"
    VANILLA = "vanilla"
    AGU_NO_HOMO = "agu_no_homo"
    AGU_NO_EU = "agu_no_eu"
    AGU_NO_FU = "agu_no_fu"
    AGU_NO_MNF = "agu_no_mnf"
    AGU_NO_ANS = "agu_no_ans"


class ExperimentSpec(BaseModel):
    """
    Schema for a benchmark run: one dataset, several architectures and methods, repeated trials.
    """
    graph_path: Optional[str] = Field(default=None, description="graph.tsv or a directory holding it")
    sbm: Optional[SbmSpec] = None
    archs: list[Architecture] = Field(default_factory=lambda: [Architecture.GCN], min_length=1)
    task: TaskKind = TaskKind.NODE
    unlearn_ratio: float = Field(default=0.05, gt=0, lt=1)
    attack_ratio: float = Field(default=0.2, gt=0, lt=1)
    trials: int = Field(default=10, ge=1)
    seed: int = Field(default=0)
    methods: list[Method] = Field(
        default_factory=lambda: [Method.AGU, Method.RETRAIN, Method.REVERSE_CE, Method.DEC_BASELINE, Method.VANILLA],
        min_length=1,
    )
    hidden_dim: int = Field(default_factory=_default("hidden_dim"), ge=1)
    num_layers: int = Field(default_factory=_default("num_layers"), ge=1, le=3)
    train: TrainConfig = Field(default_factory=TrainConfig)
    unlearn: UnlearnConfig = Field(default_factory=UnlearnConfig)

    @model_validator(mode="after")
    def check_source(self) -> "ExperimentSpec":
        if (self.graph_path is None) == (self.sbm is None):
            raise ValueError("exactly one of graph_path and sbm must be given")
        return self
