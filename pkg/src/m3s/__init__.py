"""Graph convolutional networks with multi-stage self-training and a
DeepCluster self-check for node classification with very few labels."""
from .baselines import LabelPropagationClassifier, label_propagation
from .clustering import KMeans, kmeans
from .datasets import CitationDataset, SplitState, load_dataset, make_citation_graph, sample_split
from .gcn import GCNClassifier
from .graph import RowNormalizer, normalized_adjacency
from .training import M3SGCN, MultiStageGCN, StageConfig, m3s_train, multi_stage_train, self_training, train_gcn

__version__ = "0.1.0"
